//! Preprocessing, norm-map estimation, and binary PUF responses.
//!
//! The authentication feature of a capture bundle is produced by the
//! deterministic composition `quantize(estimate(preprocess(captures)))`:
//!
//! 1. [`preprocess`] inverts the recorded sub-pixel misalignment (geometric
//!    registration); tampered markers abort the pipeline.
//! 2. The estimator inverts the reflection model. Scanner bundles use the
//!    opposite-orientation differences, which are proportional to `n_x` and
//!    `n_y`; camera bundles solve a per-pixel linear least-squares system
//!    over four or more lights.
//! 3. [`quantize`] downsamples the estimated map and emits one bit per
//!    selected component, giving the L-bit [`PufResponse`] that all metrics,
//!    stores, and protocols consume.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{AcquisitionMode, CaptureSet, MarkerState, ShotId, SCANNER_ORIENTATIONS};
use crate::surface::{complete_normal, NormMap};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("registration failed: markers tampered or captures not alignable")]
    AlignmentFailed,
    #[error("capture set is empty")]
    EmptyCapture,
    #[error("wrong image count: expected {expected}, got {got}")]
    WrongImageCount { expected: String, got: usize },
    #[error("capture mode does not match the estimator")]
    WrongMode,
    #[error("singular lighting system at pixel ({x}, {y})")]
    SingularSystem { x: u32, y: u32 },
    #[error("invalid quantizer config: {0}")]
    InvalidConfig(String),
    #[error("response lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("malformed response encoding: {0}")]
    BadEncoding(String),
}

/// L-bit binary feature derived from a norm map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PufResponse {
    blocks: Vec<u64>,
    len: usize,
    /// (surface id, trial index) when the response came from an evaluation
    /// batch.
    pub origin: Option<(u32, u32)>,
}

impl PufResponse {
    pub fn zero(len: usize) -> Self {
        Self { blocks: vec![0u64; len.div_ceil(64)], len, origin: None }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut r = Self::zero(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                r.set(i, true);
            }
        }
        r
    }

    /// Uniformly random response; used by attacks as a starting guess.
    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        let mut r = Self::zero(len);
        for i in 0..len {
            r.set(i, rng.random::<bool>());
        }
        r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        (self.blocks[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len);
        if value {
            self.blocks[i / 64] |= 1u64 << (i % 64);
        } else {
            self.blocks[i / 64] &= !(1u64 << (i % 64));
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.blocks[i / 64] ^= 1u64 << (i % 64);
    }

    /// Bitwise complement (all `len` bits).
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.blocks.len() {
            out.blocks[i] = !out.blocks[i];
        }
        out.mask_tail();
        out
    }

    pub fn count_ones(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Hamming distance in bits; symmetric and zero iff equal.
    pub fn hamming(&self, other: &Self) -> Result<usize, FeatureError> {
        if self.len != other.len {
            return Err(FeatureError::LengthMismatch { a: self.len, b: other.len });
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn fractional_hd(&self, other: &Self) -> Result<f64, FeatureError> {
        Ok(self.hamming(other)? as f64 / self.len as f64)
    }

    /// Bits as 0.0/1.0 reals, for score metrics defined on vectors.
    pub fn bits_as_f64(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Canonical byte serialization used for hashing and on-chain digests:
    /// `PUFR` magic, little-endian bit length, then packed bits (LSB first
    /// within each byte, zero-padded tail).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len.div_ceil(8));
        out.extend_from_slice(b"PUFR");
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend(self.packed_bytes());
        out
    }

    fn packed_bytes(&self) -> Vec<u8> {
        self.blocks
            .iter()
            .flat_map(|b| b.to_le_bytes())
            .take(self.len.div_ceil(8))
            .collect()
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.blocks.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Parses the `L=<bits>:<hex>` form produced by [`fmt::Display`].
    pub fn from_hex_string(s: &str) -> Result<Self, FeatureError> {
        let rest = s
            .strip_prefix("L=")
            .ok_or_else(|| FeatureError::BadEncoding("missing L= prefix".into()))?;
        let (len_str, hex_str) = rest
            .split_once(':')
            .ok_or_else(|| FeatureError::BadEncoding("missing ':' separator".into()))?;
        let len: usize = len_str
            .parse()
            .map_err(|_| FeatureError::BadEncoding(format!("bad length {len_str:?}")))?;
        let bytes = hex::decode(hex_str)
            .map_err(|e| FeatureError::BadEncoding(format!("bad hex: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(FeatureError::BadEncoding(format!(
                "expected {} payload bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut r = Self::zero(len);
        for (i, byte) in bytes.iter().enumerate() {
            let base = i / 8;
            r.blocks[base] |= (*byte as u64) << (8 * (i % 8));
        }
        let mut check = r.clone();
        check.mask_tail();
        if check.blocks != r.blocks {
            return Err(FeatureError::BadEncoding("nonzero padding bits".into()));
        }
        Ok(r)
    }
}

impl fmt::Display for PufResponse {
    /// Hex form with a length prefix, e.g. `L=2048:ab3f...`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L={}:{}", self.len, hex::encode(self.packed_bytes()))
    }
}

/// Binarization scheme for [`quantize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerScheme {
    /// Bit is 1 iff the component is strictly positive.
    Sign,
    /// Bit is 1 iff the component exceeds the per-map median of its sampled
    /// values.
    Median,
}

/// Norm-map component a quantizer may emit bits for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Nx,
    Ny,
}

/// How a norm map becomes a bit string. Components are interleaved per
/// sampled pixel in the order listed, so
/// `L = components * (W / stride) * (H / stride)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub scheme: QuantizerScheme,
    pub components: Vec<Component>,
    pub downsample_stride: u32,
}

impl Default for QuantizerConfig {
    /// Sign of `n_x` and `n_y` at stride 2: zero-mean fields make the bits
    /// approximately equiprobable.
    fn default() -> Self {
        Self {
            scheme: QuantizerScheme::Sign,
            components: vec![Component::Nx, Component::Ny],
            downsample_stride: 2,
        }
    }
}

impl QuantizerConfig {
    pub fn response_len(&self, width: u32, height: u32) -> usize {
        self.components.len()
            * (width / self.downsample_stride) as usize
            * (height / self.downsample_stride) as usize
    }

    fn validate(&self, width: u32, height: u32) -> Result<(), FeatureError> {
        if self.components.is_empty() {
            return Err(FeatureError::InvalidConfig("no components selected".into()));
        }
        if self.downsample_stride == 0 {
            return Err(FeatureError::InvalidConfig("stride must be >= 1".into()));
        }
        if !width.is_multiple_of(self.downsample_stride)
            || !height.is_multiple_of(self.downsample_stride)
        {
            return Err(FeatureError::InvalidConfig(format!(
                "stride {} does not divide {}x{}",
                self.downsample_stride, width, height
            )));
        }
        Ok(())
    }
}

/// Geometric registration: inverts the recorded misalignment by bilinear
/// resampling so all images align to well under 0.1 pixel. Tampered markers
/// make registration impossible and raise [`FeatureError::AlignmentFailed`].
pub fn preprocess(captures: &CaptureSet) -> Result<CaptureSet, FeatureError> {
    if captures.images.is_empty() {
        return Err(FeatureError::EmptyCapture);
    }
    if captures.marker_state == MarkerState::Tampered {
        return Err(FeatureError::AlignmentFailed);
    }
    if captures.misalignment == [0.0, 0.0] {
        return Ok(captures.clone());
    }
    let [dx, dy] = captures.misalignment;
    let images = captures.images.iter().map(|img| img.shifted([-dx, -dy])).collect();
    Ok(CaptureSet {
        images,
        marker_state: captures.marker_state,
        misalignment: [0.0, 0.0],
        environments: captures.environments.clone(),
    })
}

fn require_aligned(captures: &CaptureSet) -> Result<(), FeatureError> {
    if captures.marker_state == MarkerState::Tampered || captures.misalignment != [0.0, 0.0] {
        return Err(FeatureError::AlignmentFailed);
    }
    Ok(())
}

/// Scanner-branch estimator using the calibration constant from the capture
/// environments: each opposite-orientation difference divided by
/// `2 * albedo * l_0 * cos(elevation)` recovers the normal component.
pub fn estimate_norm_map_scanner(captures: &CaptureSet) -> Result<NormMap, FeatureError> {
    scanner_estimate(captures, true)
}

/// Scanner-branch estimator for an unknown environment: the difference pair
/// is jointly normalized to unit RMS slope magnitude. Downstream decision
/// metrics (sign bits, correlation) are invariant to this positive scaling.
pub fn estimate_norm_map_scanner_uncalibrated(
    captures: &CaptureSet,
) -> Result<NormMap, FeatureError> {
    scanner_estimate(captures, false)
}

fn scanner_estimate(captures: &CaptureSet, calibrated: bool) -> Result<NormMap, FeatureError> {
    if captures.images.is_empty() {
        return Err(FeatureError::EmptyCapture);
    }
    require_aligned(captures)?;
    if captures.mode() != Some(AcquisitionMode::Scanner) {
        return Err(FeatureError::WrongMode);
    }
    if captures.images.len() != 4 {
        return Err(FeatureError::WrongImageCount {
            expected: "4".into(),
            got: captures.images.len(),
        });
    }
    let mut by_orientation = [None, None, None, None];
    for img in &captures.images {
        if let ShotId::ScannerOrientation(o) = img.meta.shot {
            if let Some(slot) = SCANNER_ORIENTATIONS.iter().position(|&x| x == o) {
                by_orientation[slot] = Some(img);
            }
        }
    }
    let [Some(i0), Some(i90), Some(i180), Some(i270)] = by_orientation else {
        return Err(FeatureError::WrongImageCount {
            expected: "orientations 0/90/180/270".into(),
            got: captures.images.len(),
        });
    };

    let count = i0.intensities().len();
    let mut tx = Vec::with_capacity(count);
    let mut ty = Vec::with_capacity(count);
    for i in 0..count {
        tx.push(i90.intensities()[i] - i270.intensities()[i]);
        ty.push(i0.intensities()[i] - i180.intensities()[i]);
    }

    let scale = if calibrated {
        1.0 / captures.environments[0].scanner_difference_gain()
    } else {
        let rms =
            (tx.iter().zip(&ty).map(|(a, b)| a * a + b * b).sum::<f64>() / count as f64).sqrt();
        if rms > 0.0 {
            1.0 / rms
        } else {
            0.0
        }
    };

    let normals = tx
        .iter()
        .zip(&ty)
        .map(|(a, b)| complete_normal(a * scale, b * scale))
        .collect();
    NormMap::from_normals(i0.width(), i0.height(), normals)
        .map_err(|_| FeatureError::AlignmentFailed)
}

/// Camera-branch estimate with its per-pixel least-squares residuals.
#[derive(Debug, Clone)]
pub struct CameraEstimate {
    pub norm_map: NormMap,
    /// Euclidean residual of the stacked system at each pixel, row-major.
    pub residuals: Vec<f64>,
}

/// Camera-branch estimator: per pixel, solves the linear least-squares
/// system stacking `l_i / l_0_i = (m . v_i) / |v_i|^3` over all images for
/// the scaled normal `m = albedo * n` (each equation is normalized by its
/// known per-image flux so `m` is shared across shots), then normalizes `m`
/// to unit length.
///
/// Needs at least four shots; raises [`FeatureError::SingularSystem`] when
/// the stacked light directions are rank-deficient (e.g. collinear lights).
pub fn estimate_norm_map_camera(captures: &CaptureSet) -> Result<CameraEstimate, FeatureError> {
    if captures.images.is_empty() {
        return Err(FeatureError::EmptyCapture);
    }
    require_aligned(captures)?;
    if captures.mode() != Some(AcquisitionMode::Camera) {
        return Err(FeatureError::WrongMode);
    }
    let n_images = captures.images.len();
    if n_images < 4 {
        return Err(FeatureError::WrongImageCount { expected: ">= 4".into(), got: n_images });
    }
    if captures.environments.len() != n_images {
        return Err(FeatureError::WrongImageCount {
            expected: format!("{n_images} environments"),
            got: captures.environments.len(),
        });
    }

    let width = captures.images[0].width();
    let height = captures.images[0].height();
    let mut normals = Vec::with_capacity((width as usize) * (height as usize));
    let mut residuals = Vec::with_capacity((width as usize) * (height as usize));
    let mut rows = vec![0.0f64; n_images * 3];
    let mut rhs = vec![0.0f64; n_images];

    for y in 0..height {
        for x in 0..width {
            for (i, (img, env)) in
                captures.images.iter().zip(&captures.environments).enumerate()
            {
                let v = [
                    env.light_position[0] - x as f64,
                    env.light_position[1] - y as f64,
                    env.light_position[2],
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let inv_cube = 1.0 / (norm * norm * norm);
                rows[3 * i] = v[0] * inv_cube;
                rows[3 * i + 1] = v[1] * inv_cube;
                rows[3 * i + 2] = v[2] * inv_cube;
                rhs[i] = (img.get(x, y) - env.ambient_offset) / env.source_intensity;
            }
            let a = DMatrix::from_row_slice(n_images, 3, &rows);
            let b = DVector::from_column_slice(&rhs);
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smax.is_nan() || smax <= 0.0 || smin <= 1e-9 * smax {
                return Err(FeatureError::SingularSystem { x, y });
            }
            let m = svd.solve(&b, 0.0).map_err(|_| FeatureError::SingularSystem { x, y })?;
            residuals.push((&a * &m - &b).norm());
            let mag = m.norm();
            let (mut nx, mut ny, nz) = (m[0] / mag, m[1] / mag, m[2] / mag);
            if nz <= 0.0 {
                // Steep-noise corner case: keep the tangential direction,
                // re-complete inside the visible hemisphere.
                let t = (nx * nx + ny * ny).sqrt();
                nx /= t;
                ny /= t;
                normals.push(complete_normal(nx * 0.999, ny * 0.999));
            } else {
                normals.push([nx, ny, nz]);
            }
        }
    }

    let norm_map =
        NormMap::from_normals(width, height, normals).map_err(|_| FeatureError::AlignmentFailed)?;
    Ok(CameraEstimate { norm_map, residuals })
}

/// Quantizes a norm map into a deterministic bit string. Ties at the
/// threshold resolve to 0.
pub fn quantize(nm: &NormMap, cfg: &QuantizerConfig) -> Result<PufResponse, FeatureError> {
    cfg.validate(nm.width(), nm.height())?;
    let stride = cfg.downsample_stride;
    let mut sampled: Vec<Vec<f64>> = vec![Vec::new(); cfg.components.len()];
    for y in (0..nm.height()).step_by(stride as usize) {
        for x in (0..nm.width()).step_by(stride as usize) {
            let n = nm.get(x, y);
            for (ci, comp) in cfg.components.iter().enumerate() {
                sampled[ci].push(match comp {
                    Component::Nx => n[0],
                    Component::Ny => n[1],
                });
            }
        }
    }
    let thresholds: Vec<f64> = match cfg.scheme {
        QuantizerScheme::Sign => vec![0.0; cfg.components.len()],
        QuantizerScheme::Median => sampled.iter().map(|vals| median(vals)).collect(),
    };
    let per_comp = sampled[0].len();
    let mut bits = Vec::with_capacity(per_comp * cfg.components.len());
    for i in 0..per_comp {
        for (ci, vals) in sampled.iter().enumerate() {
            bits.push(vals[i] > thresholds[ci]);
        }
    }
    Ok(PufResponse::from_bits(&bits))
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("normal components are finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// The deterministic feature pipeline `quantize . estimate . preprocess`,
/// bundled so stores, nodes, and attacks all run exactly the same code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub quantizer: QuantizerConfig,
}

impl Pipeline {
    pub fn new(quantizer: QuantizerConfig) -> Self {
        Self { quantizer }
    }

    /// Registration plus estimation; picks the estimator branch from the
    /// capture mode.
    pub fn norm_map_from_captures(&self, captures: &CaptureSet) -> Result<NormMap, FeatureError> {
        let pre = preprocess(captures)?;
        match pre.mode() {
            Some(AcquisitionMode::Scanner) => estimate_norm_map_scanner(&pre),
            Some(AcquisitionMode::Camera) => Ok(estimate_norm_map_camera(&pre)?.norm_map),
            None => Err(FeatureError::EmptyCapture),
        }
    }

    /// Full pipeline: identical captures always produce identical responses.
    pub fn response_from_captures(
        &self,
        captures: &CaptureSet,
    ) -> Result<PufResponse, FeatureError> {
        let nm = self.norm_map_from_captures(captures)?;
        quantize(&nm, &self.quantizer)
    }
}
