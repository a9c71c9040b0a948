//! Synthetic paper micro-surfaces.
//!
//! A paper patch is modeled as a grid of unit surface normals (a *norm map*).
//! The tangential components `(n_x, n_y)` are zero-mean correlated Gaussian
//! fields produced by smoothing white noise with an isotropic kernel, scaled
//! so the steepest slope stays below `slope_scale`; `n_z` completes the unit
//! vector. Degradations (crumple, wet, scribble, tear) are stylized signal
//! transformations that reproduce the effect physical abuse has on the
//! downstream PUF metrics.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes of the binary norm-map container.
pub const NMAP_MAGIC: &[u8; 4] = b"NMAP";
/// Container format version.
pub const NMAP_VERSION: u16 = 1;

/// Tangential magnitude a perturbed normal is rescaled to when it would
/// otherwise leave the unit hemisphere.
const CLAMP_TANGENTIAL: f64 = 0.999;

/// Largest smoothing width (pixels) used by a full-severity wet degradation.
const WET_MAX_SIGMA: f64 = 4.0;

/// Tangential amplitude added by a full-severity crumple.
const CRUMPLE_MAX_AMP: f64 = 0.3;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("region {0:?} exceeds map bounds {1}x{2}")]
    RegionOutOfBounds(Rect, u32, u32),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt norm-map container: {0}")]
    Corrupt(String),
}

/// Rectangle in pixel coordinates, `x`/`y` top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    fn fits(&self, width: u32, height: u32) -> bool {
        self.x.saturating_add(self.width) <= width && self.y.saturating_add(self.height) <= height
    }
}

/// H x W grid of unit 3D microscopic surface normals; the intrinsic
/// identifier of a paper patch.
///
/// Invariants, maintained by every operation in this module:
/// * each normal has unit length to within 1e-9;
/// * `n_z > 0` everywhere (the surface faces the sensor).
#[derive(Debug, Clone, PartialEq)]
pub struct NormMap {
    width: u32,
    height: u32,
    normals: Vec<[f64; 3]>,
}

impl NormMap {
    /// Builds a map from raw normals, renormalizing each vector.
    ///
    /// Returns an error if dimensions are zero, the buffer length does not
    /// match, or any normal points away from the sensor (`n_z <= 0`).
    pub fn from_normals(
        width: u32,
        height: u32,
        mut normals: Vec<[f64; 3]>,
    ) -> Result<Self, SurfaceError> {
        if width == 0 || height == 0 {
            return Err(SurfaceError::InvalidParams("dimensions must be nonzero".into()));
        }
        if normals.len() != (width as usize) * (height as usize) {
            return Err(SurfaceError::InvalidParams(format!(
                "expected {} normals, got {}",
                (width as usize) * (height as usize),
                normals.len()
            )));
        }
        for n in &mut normals {
            let mag = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if mag == 0.0 {
                return Err(SurfaceError::InvalidParams("zero-length normal".into()));
            }
            n[0] /= mag;
            n[1] /= mag;
            n[2] /= mag;
            if n[2] <= 0.0 {
                return Err(SurfaceError::InvalidParams("normal with n_z <= 0".into()));
            }
        }
        Ok(Self { width, height, normals })
    }

    /// Flat surface, `n = (0, 0, 1)` everywhere.
    pub fn flat(width: u32, height: u32) -> Result<Self, SurfaceError> {
        Self::from_normals(
            width,
            height,
            vec![[0.0, 0.0, 1.0]; (width as usize) * (height as usize)],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.normals[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Checks the unit-norm and orientation invariants over all pixels.
    pub fn validate(&self) -> Result<(), SurfaceError> {
        for (i, n) in self.normals.iter().enumerate() {
            let sq = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
            if (sq - 1.0).abs() > 1e-9 {
                return Err(SurfaceError::Corrupt(format!(
                    "pixel {i}: |n|^2 = {sq} deviates from 1"
                )));
            }
            if n[2] <= 0.0 {
                return Err(SurfaceError::Corrupt(format!("pixel {i}: n_z = {} <= 0", n[2])));
            }
        }
        Ok(())
    }

    /// Component plane as a flat row-major vector (0 = x, 1 = y, 2 = z).
    pub fn component(&self, idx: usize) -> Vec<f64> {
        self.normals.iter().map(|n| n[idx]).collect()
    }

    /// Serializes to the binary container: 16-byte header (magic, version,
    /// width, height, reserved), then row-major little-endian `f32`
    /// `(n_x, n_y, n_z)` triples.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SurfaceError> {
        w.write_all(NMAP_MAGIC)?;
        w.write_all(&NMAP_VERSION.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        for n in &self.normals {
            for c in n {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the binary container written by [`NormMap::write_to`].
    ///
    /// Stored components are `f32`; vectors are renormalized on load so the
    /// unit-norm invariant holds at `f64` precision.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SurfaceError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != NMAP_MAGIC {
            return Err(SurfaceError::Corrupt("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != NMAP_VERSION {
            return Err(SurfaceError::Corrupt(format!("unsupported version {version}")));
        }
        let width = u32::from_le_bytes([header[6], header[7], header[8], header[9]]);
        let height = u32::from_le_bytes([header[10], header[11], header[12], header[13]]);
        let count = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| SurfaceError::Corrupt("dimension overflow".into()))?;
        let mut data = vec![0u8; count * 12];
        r.read_exact(&mut data)?;
        let mut normals = Vec::with_capacity(count);
        for chunk in data.chunks_exact(12) {
            let nx = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            let ny = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as f64;
            let nz = f32::from_le_bytes([chunk[8], chunk[9], chunk[10], chunk[11]]) as f64;
            normals.push([nx, ny, nz]);
        }
        Self::from_normals(width, height, normals)
            .map_err(|e| SurfaceError::Corrupt(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.normals.len() * 12);
        self.write_to(&mut buf).expect("in-memory write cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SurfaceError> {
        Self::read_from(bytes)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), SurfaceError> {
        let mut f = File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, SurfaceError> {
        let f = File::open(path)?;
        Self::read_from(io::BufReader::new(f))
    }

    /// Debug dump, one `x,y,nx,ny,nz` row per pixel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SurfaceError> {
        writeln!(w, "x,y,nx,ny,nz")?;
        for y in 0..self.height {
            for x in 0..self.width {
                let n = self.get(x, y);
                writeln!(w, "{x},{y},{},{},{}", n[0], n[1], n[2])?;
            }
        }
        Ok(())
    }
}

/// Parameters of the generative surface model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    pub width: u32,
    pub height: u32,
    /// Width (pixels) of the isotropic smoothing kernel; controls how far
    /// spatial correlation reaches. Must be >= 1.
    pub correlation_length: f64,
    /// Upper bound on the tangential slope magnitude, in [0, 1). Zero yields
    /// a perfectly flat surface.
    pub slope_scale: f64,
    pub seed: u64,
}

impl SurfaceParams {
    pub fn new(width: u32, height: u32, correlation_length: f64, slope_scale: f64, seed: u64) -> Self {
        Self { width, height, correlation_length, slope_scale, seed }
    }

    fn validate(&self) -> Result<(), SurfaceError> {
        if self.width == 0 || self.height == 0 {
            return Err(SurfaceError::InvalidParams("dimensions must be nonzero".into()));
        }
        if self.correlation_length.is_nan() || self.correlation_length < 1.0 {
            return Err(SurfaceError::InvalidParams(format!(
                "correlation_length {} must be >= 1",
                self.correlation_length
            )));
        }
        if !(0.0..1.0).contains(&self.slope_scale) {
            return Err(SurfaceError::InvalidParams(format!(
                "slope_scale {} must lie in [0, 1)",
                self.slope_scale
            )));
        }
        Ok(())
    }
}

/// The physical degradation attacks of the threat model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    /// Low-frequency tangential perturbation over the region.
    Crumple,
    /// Normal field smoothed with a kernel whose width grows with severity.
    Wet,
    /// Region overwritten by an independent random field.
    Scribble,
    /// Region destroyed: normals forced to the flat marker patch.
    Tear,
}

/// One degradation to apply. `severity = 0` is the identity for every kind;
/// `region = None` means the whole map. The seed drives all randomness the
/// degradation needs (scribble replacement field, crumple perturbation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub severity: f64,
    pub region: Option<Rect>,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, severity: f64, region: Option<Rect>, seed: u64) -> Self {
        Self { kind, severity, region, seed }
    }
}

/// Generates a synthetic paper surface.
///
/// `(n_x, n_y)` are white Gaussian fields smoothed by an isotropic kernel of
/// width `correlation_length` (periodic boundaries), jointly rescaled so the
/// steepest tangential slope equals `slope_scale`; `n_z` completes each unit
/// vector. The same params produce a bit-identical map on every call.
pub fn generate_surface(params: &SurfaceParams) -> Result<NormMap, SurfaceError> {
    params.validate()?;
    let (w, h) = (params.width as usize, params.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    for i in 0..w * h {
        gx[i] = rng.sample(StandardNormal);
        gy[i] = rng.sample(StandardNormal);
    }
    smooth_periodic(&mut gx, w, h, params.correlation_length);
    smooth_periodic(&mut gy, w, h, params.correlation_length);

    let max_mag = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0f64, f64::max);
    let scale = if params.slope_scale == 0.0 || max_mag == 0.0 {
        0.0
    } else {
        params.slope_scale / max_mag
    };

    let normals = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| complete_normal(a * scale, b * scale))
        .collect();
    NormMap::from_normals(params.width, params.height, normals)
}

/// Applies a physical degradation, returning a new map; the input is
/// untouched. `severity` outside [0, 1] is rejected.
pub fn degrade_surface(nm: &NormMap, spec: &DegradationSpec) -> Result<NormMap, SurfaceError> {
    if !(0.0..=1.0).contains(&spec.severity) {
        return Err(SurfaceError::InvalidParams(format!(
            "severity {} outside [0, 1]",
            spec.severity
        )));
    }
    let region = match spec.region {
        Some(r) => {
            if !r.fits(nm.width, nm.height) {
                return Err(SurfaceError::RegionOutOfBounds(r, nm.width, nm.height));
            }
            r
        }
        None => Rect::new(0, 0, nm.width, nm.height),
    };
    if spec.severity == 0.0 {
        return Ok(nm.clone());
    }

    let mut out = nm.clone();
    match spec.kind {
        DegradationKind::Crumple => crumple(&mut out, &region, spec),
        DegradationKind::Wet => wet(&mut out, &region, spec.severity),
        DegradationKind::Scribble => scribble(&mut out, &region, spec),
        DegradationKind::Tear => tear(&mut out, &region, spec.severity),
    }
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

fn crumple(nm: &mut NormMap, region: &Rect, spec: &DegradationSpec) {
    let (w, h) = (nm.width as usize, nm.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut px = vec![0.0f64; w * h];
    let mut py = vec![0.0f64; w * h];
    for i in 0..w * h {
        px[i] = rng.sample(StandardNormal);
        py[i] = rng.sample(StandardNormal);
    }
    let sigma = (nm.width.max(nm.height) as f64 / 8.0).max(2.0);
    smooth_periodic(&mut px, w, h, sigma);
    smooth_periodic(&mut py, w, h, sigma);
    let max_mag = px
        .iter()
        .zip(&py)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0f64, f64::max);
    if max_mag == 0.0 {
        return;
    }
    let amp = spec.severity * CRUMPLE_MAX_AMP / max_mag;
    for_region(region, nm.width, |idx, _, _| {
        let n = nm.normals[idx];
        nm.normals[idx] = complete_normal(n[0] + px[idx] * amp, n[1] + py[idx] * amp);
    });
}

fn wet(nm: &mut NormMap, region: &Rect, severity: f64) {
    let (w, h) = (nm.width as usize, nm.height as usize);
    let sigma = severity * WET_MAX_SIGMA;
    let mut tx: Vec<f64> = nm.normals.iter().map(|n| n[0]).collect();
    let mut ty: Vec<f64> = nm.normals.iter().map(|n| n[1]).collect();
    smooth_periodic(&mut tx, w, h, sigma);
    smooth_periodic(&mut ty, w, h, sigma);
    for_region(region, nm.width, |idx, _, _| {
        nm.normals[idx] = complete_normal(tx[idx], ty[idx]);
    });
}

fn scribble(nm: &mut NormMap, region: &Rect, spec: &DegradationSpec) {
    // Replacement field has the generator's default correlation and the
    // input's slope budget, so scribbled pixels look statistically like
    // paper but carry none of the original's information.
    let input_max = nm
        .normals
        .iter()
        .map(|n| (n[0] * n[0] + n[1] * n[1]).sqrt())
        .fold(0.0f64, f64::max);
    let slope = if input_max > 0.0 { input_max.min(0.999) } else { 0.2 };
    let replacement = generate_surface(&SurfaceParams::new(
        nm.width,
        nm.height,
        3.0,
        slope,
        spec.seed,
    ))
    .expect("replacement params are valid by construction");
    let s = spec.severity;
    for_region(region, nm.width, |idx, _, _| {
        let n = nm.normals[idx];
        let r = replacement.normals[idx];
        nm.normals[idx] = complete_normal((1.0 - s) * n[0] + s * r[0], (1.0 - s) * n[1] + s * r[1]);
    });
}

fn tear(nm: &mut NormMap, region: &Rect, severity: f64) {
    // Severity scales the torn area: a sub-rectangle centered in the region
    // with side lengths shrunk by sqrt(severity). The destroyed patch is the
    // exactly-flat marker (0, 0, 1).
    let tw = ((region.width as f64) * severity.sqrt()).round() as u32;
    let th = ((region.height as f64) * severity.sqrt()).round() as u32;
    if tw == 0 || th == 0 {
        return;
    }
    let torn = Rect::new(
        region.x + (region.width - tw) / 2,
        region.y + (region.height - th) / 2,
        tw,
        th,
    );
    for_region(&torn, nm.width, |idx, _, _| {
        nm.normals[idx] = [0.0, 0.0, 1.0];
    });
}

/// Clamps the tangential part to stay inside the unit hemisphere and
/// completes the vector with `n_z = sqrt(1 - n_x^2 - n_y^2)`.
pub(crate) fn complete_normal(mut nx: f64, mut ny: f64) -> [f64; 3] {
    let mag_sq = nx * nx + ny * ny;
    if mag_sq >= 1.0 {
        let scale = CLAMP_TANGENTIAL / mag_sq.sqrt();
        nx *= scale;
        ny *= scale;
    }
    let nz = (1.0 - nx * nx - ny * ny).sqrt();
    [nx, ny, nz]
}

fn for_region(region: &Rect, map_width: u32, mut f: impl FnMut(usize, u32, u32)) {
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            f((y as usize) * (map_width as usize) + x as usize, x, y);
        }
    }
}

/// Separable Gaussian smoothing with periodic boundaries. `sigma = 0` leaves
/// the field untouched.
fn smooth_periodic(field: &mut [f64], width: usize, height: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-((d * d) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    // Horizontal pass.
    let mut tmp = vec![0.0f64; field.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                let sx = (x as i64 + d).rem_euclid(width as i64) as usize;
                acc += kernel[ki] * field[y * width + sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    // Vertical pass.
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, d) in (-radius..=radius).enumerate() {
                let sy = (y as i64 + d).rem_euclid(height as i64) as usize;
                acc += kernel[ki] * tmp[sy * width + x];
            }
            field[y * width + x] = acc;
        }
    }
}
