//! Optical acquisition of surface images from norm maps.
//!
//! Both acquisition modes share the fully diffused reflection model: the
//! intensity received from a pixel is `albedo * l_0 * (n . v) / |v|^3` plus
//! an ambient offset, where `v` points from the pixel to the light source.
//! Scanner mode replaces the point source with a directional lamp at a fixed
//! elevation, one image per azimuth orientation (0, 90, 180, 270 degrees),
//! which makes opposite-orientation differences directly proportional to the
//! tangential normal components. Negative diffuse terms clamp to zero
//! (self-shadowing), and all sensor noise is seeded Gaussian.
//!
//! One pixel spans one length unit; light positions and heights use the same
//! unit.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::surface::NormMap;

/// Magic bytes of the raw float image container.
pub const SIMG_MAGIC: &[u8; 4] = b"SIMG";
/// Container format version.
pub const SIMG_VERSION: u16 = 1;

/// The four legal scanner lamp orientations, degrees.
pub const SCANNER_ORIENTATIONS: [u16; 4] = [0, 90, 180, 270];

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt image container: {0}")]
    Corrupt(String),
}

/// Illumination and sensor environment for one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    /// Constant albedo of the surface (> 0).
    pub albedo: f64,
    /// Source flux (> 0).
    pub source_intensity: f64,
    /// Point-light position in pixel units, camera mode only.
    pub light_position: [f64; 3],
    /// Lamp elevation above the surface plane, radians in (0, pi/2),
    /// scanner mode only.
    pub elevation_angle: f64,
    /// Constant dark offset added to every pixel (>= 0).
    pub ambient_offset: f64,
}

impl EnvironmentModel {
    /// Scanner lamp at 45 degrees elevation, unit albedo and flux, no offset.
    pub fn scanner_default() -> Self {
        Self {
            albedo: 1.0,
            source_intensity: 1.0,
            light_position: [0.0, 0.0, 1.0],
            elevation_angle: std::f64::consts::FRAC_PI_4,
            ambient_offset: 0.0,
        }
    }

    /// Point light for camera mode. Flux defaults to `height^2` so rendered
    /// intensities stay of order one regardless of the light distance.
    pub fn camera_at(light_position: [f64; 3]) -> Self {
        Self {
            albedo: 1.0,
            source_intensity: light_position[2] * light_position[2],
            light_position,
            elevation_angle: std::f64::consts::FRAC_PI_4,
            ambient_offset: 0.0,
        }
    }

    /// Four camera lights above the image corners at the given height; the
    /// conventional multi-shot arrangement with height = image width.
    pub fn corner_lights(width: u32, height: u32, light_height: f64) -> Vec<Self> {
        let w = (width.saturating_sub(1)) as f64;
        let h = (height.saturating_sub(1)) as f64;
        vec![
            Self::camera_at([0.0, 0.0, light_height]),
            Self::camera_at([w, 0.0, light_height]),
            Self::camera_at([0.0, h, light_height]),
            Self::camera_at([w, h, light_height]),
        ]
    }

    fn validate(&self) -> Result<(), OpticsError> {
        if self.albedo.is_nan()
            || self.albedo <= 0.0
            || self.source_intensity.is_nan()
            || self.source_intensity <= 0.0
        {
            return Err(OpticsError::InvalidParams(
                "albedo and source_intensity must be positive".into(),
            ));
        }
        if self.ambient_offset < 0.0 {
            return Err(OpticsError::InvalidParams("ambient_offset must be >= 0".into()));
        }
        Ok(())
    }

    /// Calibration constant `2 * albedo * l_0 * cos(elevation)` relating
    /// opposite-orientation scanner differences to normal components.
    pub fn scanner_difference_gain(&self) -> f64 {
        2.0 * self.albedo * self.source_intensity * self.elevation_angle.cos()
    }
}

/// Which sensor produced an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMode {
    Scanner,
    Camera,
}

/// Identifies one image within a capture: the scanner lamp orientation or
/// the camera shot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotId {
    ScannerOrientation(u16),
    CameraShot(u32),
}

/// Acquisition descriptor attached to every rendered image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub mode: AcquisitionMode,
    pub shot: ShotId,
    pub noise_sigma: f64,
    pub nonce: u64,
}

/// Rendered intensity grid with its acquisition descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceImage {
    width: u32,
    height: u32,
    intensities: Vec<f64>,
    pub meta: AcquisitionMeta,
}

impl SurfaceImage {
    pub fn new(
        width: u32,
        height: u32,
        intensities: Vec<f64>,
        meta: AcquisitionMeta,
    ) -> Result<Self, OpticsError> {
        if intensities.len() != (width as usize) * (height as usize) {
            return Err(OpticsError::InvalidParams("intensity buffer size mismatch".into()));
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OpticsError::InvalidParams(
                "intensities must be finite and non-negative".into(),
            ));
        }
        Ok(Self { width, height, intensities, meta })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.intensities[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.intensities {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    /// Bilinear sample with clamp-to-edge; coordinates in pixels.
    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> f64 {
        let w = self.width as i64;
        let h = self.height as i64;
        let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1) as usize;
        let x0 = fx.floor() as i64;
        let y0 = fy.floor() as i64;
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let at =
            |xi: i64, yi: i64| self.intensities[clamp(yi, h) * self.width as usize + clamp(xi, w)];
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Image displaced by `offset`: the content moves by +offset, resampled
    /// bilinearly with edge clamping.
    pub fn shifted(&self, offset: [f64; 2]) -> Self {
        if offset == [0.0, 0.0] {
            return self.clone();
        }
        let mut out = Vec::with_capacity(self.intensities.len());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.sample_bilinear(x as f64 - offset[0], y as f64 - offset[1]));
            }
        }
        Self { width: self.width, height: self.height, intensities: out, meta: self.meta }
    }

    /// Writes a 16-bit binary PGM (P5). The linear map from stored counts
    /// back to intensities is recorded in the comment line:
    /// `intensity = count * scale + offset`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), OpticsError> {
        let (lo, hi) = self.min_max();
        let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
        writeln!(w, "P5")?;
        writeln!(w, "# papertrust scale={scale} offset={lo}")?;
        writeln!(w, "{} {}", self.width, self.height)?;
        writeln!(w, "65535")?;
        for v in &self.intensities {
            let count = ((v - lo) / scale).round().clamp(0.0, 65535.0) as u16;
            w.write_all(&count.to_be_bytes())?;
        }
        Ok(())
    }

    /// Raw float container analogous to the norm-map format: 16-byte header
    /// (magic, version, width, height, reserved) then little-endian `f32`
    /// intensities, row-major.
    pub fn write_simg<W: Write>(&self, mut w: W) -> Result<(), OpticsError> {
        w.write_all(SIMG_MAGIC)?;
        w.write_all(&SIMG_VERSION.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        for v in &self.intensities {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the container written by [`SurfaceImage::write_simg`]. The
    /// descriptor is not stored in the container; the caller supplies it.
    pub fn read_simg<R: Read>(mut r: R, meta: AcquisitionMeta) -> Result<Self, OpticsError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != SIMG_MAGIC {
            return Err(OpticsError::Corrupt("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != SIMG_VERSION {
            return Err(OpticsError::Corrupt(format!("unsupported version {version}")));
        }
        let width = u32::from_le_bytes([header[6], header[7], header[8], header[9]]);
        let height = u32::from_le_bytes([header[10], header[11], header[12], header[13]]);
        let count = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| OpticsError::Corrupt("dimension overflow".into()))?;
        let mut data = vec![0u8; count * 4];
        r.read_exact(&mut data)?;
        let intensities = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(width, height, intensities, meta).map_err(|e| OpticsError::Corrupt(e.to_string()))
    }

    /// Serialized size in bytes of the raw float container; used for
    /// bandwidth accounting.
    pub fn encoded_len(&self) -> usize {
        16 + self.intensities.len() * 4
    }
}

/// State of the geometric registration markers printed next to the patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerState {
    Intact,
    Tampered,
}

/// An ordered bundle of images from one acquisition of one surface.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSet {
    pub images: Vec<SurfaceImage>,
    pub marker_state: MarkerState,
    /// Sub-pixel offset the whole bundle is displaced by, to be inverted
    /// during preprocessing.
    pub misalignment: [f64; 2],
    pub environments: Vec<EnvironmentModel>,
}

impl CaptureSet {
    /// The acquisition nonce all images in the bundle share.
    pub fn nonce(&self) -> Option<u64> {
        self.images.first().map(|img| img.meta.nonce)
    }

    pub fn mode(&self) -> Option<AcquisitionMode> {
        self.images.first().map(|img| img.meta.mode)
    }

    /// All images share dimensions and have a matching environment entry;
    /// camera bundles need at least four shots to be solvable downstream.
    pub fn validate(&self) -> Result<(), OpticsError> {
        let first = self
            .images
            .first()
            .ok_or_else(|| OpticsError::InvalidParams("empty capture set".into()))?;
        if self
            .images
            .iter()
            .any(|i| i.width() != first.width() || i.height() != first.height())
        {
            return Err(OpticsError::InvalidParams("images differ in dimensions".into()));
        }
        if self.environments.len() != self.images.len() {
            return Err(OpticsError::InvalidParams("one environment required per image".into()));
        }
        if self.mode() == Some(AcquisitionMode::Camera) && self.images.len() < 4 {
            return Err(OpticsError::InvalidParams(
                "camera capture needs at least 4 images".into(),
            ));
        }
        Ok(())
    }

    /// Total serialized payload size; used for bandwidth accounting.
    pub fn encoded_len(&self) -> usize {
        self.images.iter().map(|i| i.encoded_len()).sum()
    }
}

fn add_noise_and_clamp(intensities: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    for v in intensities.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v = (*v + e * sigma).max(0.0);
    }
}

/// Renders one camera image under a point light.
///
/// Per pixel `p = (x, y, 0)`, with `v` pointing from `p` to the light:
/// `l_r = albedo * l_0 * max(n . v, 0) / |v|^3 + ambient + N(0, sigma)`,
/// clamped to stay non-negative.
pub fn render_camera(
    nm: &NormMap,
    env: &EnvironmentModel,
    noise_sigma: f64,
    seed: u64,
) -> Result<SurfaceImage, OpticsError> {
    env.validate()?;
    if env.light_position[2] <= 0.0 {
        return Err(OpticsError::DegenerateGeometry(format!(
            "light height {} must be positive",
            env.light_position[2]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(nm.normals().len());
    for y in 0..nm.height() {
        for x in 0..nm.width() {
            let n = nm.get(x, y);
            let v = [
                env.light_position[0] - x as f64,
                env.light_position[1] - y as f64,
                env.light_position[2],
            ];
            let dot = n[0] * v[0] + n[1] * v[1] + n[2] * v[2];
            let dist = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let diffuse = env.albedo * env.source_intensity * dot.max(0.0) / (dist * dist * dist);
            out.push(diffuse + env.ambient_offset);
        }
    }
    add_noise_and_clamp(&mut out, noise_sigma, &mut rng);
    SurfaceImage::new(
        nm.width(),
        nm.height(),
        out,
        AcquisitionMeta {
            mode: AcquisitionMode::Camera,
            shot: ShotId::CameraShot(0),
            noise_sigma,
            nonce: 0,
        },
    )
}

/// Lamp direction for a scanner orientation: azimuth 0 points along +y,
/// azimuth 90 along +x, at the environment's elevation angle.
pub fn scanner_lamp_direction(orientation: u16, elevation: f64) -> Result<[f64; 3], OpticsError> {
    let (ax, ay) = match orientation {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        other => {
            return Err(OpticsError::InvalidParams(format!(
                "scanner orientation {other} not in {{0, 90, 180, 270}}"
            )))
        }
    };
    Ok([ax * elevation.cos(), ay * elevation.cos(), elevation.sin()])
}

/// Renders one scanner image: the linear lamp acts as a directional light at
/// the environment's elevation. With no clamping, opposite orientations
/// satisfy `I_0 - I_180 = gain * n_y` and `I_90 - I_270 = gain * n_x` where
/// `gain = 2 * albedo * l_0 * cos(elevation)`; the ambient term cancels.
pub fn render_scanner(
    nm: &NormMap,
    orientation: u16,
    env: &EnvironmentModel,
    noise_sigma: f64,
    seed: u64,
) -> Result<SurfaceImage, OpticsError> {
    env.validate()?;
    if !(env.elevation_angle > 0.0 && env.elevation_angle < std::f64::consts::FRAC_PI_2) {
        return Err(OpticsError::InvalidParams(format!(
            "elevation {} must lie in (0, pi/2)",
            env.elevation_angle
        )));
    }
    let d = scanner_lamp_direction(orientation, env.elevation_angle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(nm.normals().len());
    for n in nm.normals() {
        let dot = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
        out.push(env.ambient_offset + env.albedo * env.source_intensity * dot.max(0.0));
    }
    add_noise_and_clamp(&mut out, noise_sigma, &mut rng);
    SurfaceImage::new(
        nm.width(),
        nm.height(),
        out,
        AcquisitionMeta {
            mode: AcquisitionMode::Scanner,
            shot: ShotId::ScannerOrientation(orientation),
            noise_sigma,
            nonce: 0,
        },
    )
}

/// What to render for one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanKind {
    /// One image per orientation in [`SCANNER_ORIENTATIONS`].
    Scanner { env: EnvironmentModel },
    /// One image per environment entry.
    Camera { envs: Vec<EnvironmentModel> },
}

/// Full acquisition recipe: sensing mode and environments, noise level as a
/// fraction of the bundle's noiseless dynamic range, sub-pixel misalignment,
/// marker tampering, and the seed all randomness flows from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionPlan {
    pub kind: PlanKind,
    pub noise_rel: f64,
    pub misalignment: [f64; 2],
    pub tamper_markers: bool,
    pub seed: u64,
}

impl AcquisitionPlan {
    pub fn scanner(env: EnvironmentModel, seed: u64) -> Self {
        Self {
            kind: PlanKind::Scanner { env },
            noise_rel: 0.0,
            misalignment: [0.0, 0.0],
            tamper_markers: false,
            seed,
        }
    }

    pub fn camera(envs: Vec<EnvironmentModel>, seed: u64) -> Self {
        Self {
            kind: PlanKind::Camera { envs },
            noise_rel: 0.0,
            misalignment: [0.0, 0.0],
            tamper_markers: false,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_rel: f64) -> Self {
        self.noise_rel = noise_rel;
        self
    }

    pub fn with_misalignment(mut self, misalignment: [f64; 2]) -> Self {
        self.misalignment = misalignment;
        self
    }

    pub fn with_tampered_markers(mut self) -> Self {
        self.tamper_markers = true;
        self
    }
}

/// Acquires a capture bundle: renders every planned image noiselessly,
/// displaces it by the planned misalignment, then adds Gaussian noise with
/// sigma = `noise_rel` times the bundle's noiseless dynamic range. The whole
/// bundle carries one fresh nonce drawn from the plan seed.
pub fn acquire(nm: &NormMap, plan: &AcquisitionPlan) -> Result<CaptureSet, OpticsError> {
    let (mut images, environments) = match &plan.kind {
        PlanKind::Scanner { env } => {
            let imgs = SCANNER_ORIENTATIONS
                .iter()
                .map(|&o| render_scanner(nm, o, env, 0.0, 0))
                .collect::<Result<Vec<_>, _>>()?;
            (imgs, vec![*env; SCANNER_ORIENTATIONS.len()])
        }
        PlanKind::Camera { envs } => {
            if envs.is_empty() {
                return Err(OpticsError::InvalidParams("camera plan without environments".into()));
            }
            let mut imgs = Vec::with_capacity(envs.len());
            for (i, env) in envs.iter().enumerate() {
                let mut img = render_camera(nm, env, 0.0, 0)?;
                img.meta.shot = ShotId::CameraShot(i as u32);
                imgs.push(img);
            }
            (imgs, envs.clone())
        }
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for img in &images {
        let (a, b) = img.min_max();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let sigma = if hi > lo { plan.noise_rel * (hi - lo) } else { 0.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let nonce: u64 = rng.random();
    for img in &mut images {
        if plan.misalignment != [0.0, 0.0] {
            *img = img.shifted(plan.misalignment);
        }
        add_noise_and_clamp(&mut img.intensities, sigma, &mut rng);
        img.meta.noise_sigma = sigma;
        img.meta.nonce = nonce;
    }

    Ok(CaptureSet {
        images,
        marker_state: if plan.tamper_markers { MarkerState::Tampered } else { MarkerState::Intact },
        misalignment: plan.misalignment,
        environments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{generate_surface, NormMap, SurfaceParams};

    #[test]
    fn flat_overhead_light_gives_inverse_square_law() {
        let nm = NormMap::flat(9, 9).unwrap();
        for h in [4.0, 8.0, 16.0] {
            let mut env = EnvironmentModel::camera_at([4.0, 4.0, h]);
            env.source_intensity = 1.0;
            let img = render_camera(&nm, &env, 0.0, 0).unwrap();
            let center = img.get(4, 4);
            assert!((center - 1.0 / (h * h)).abs() < 1e-15, "h={h}: {center}");
        }
    }

    #[test]
    fn camera_render_deterministic_and_noise_seeded() {
        let nm = generate_surface(&SurfaceParams::new(16, 16, 3.0, 0.2, 3)).unwrap();
        let env = EnvironmentModel::camera_at([0.0, 0.0, 16.0]);
        let a = render_camera(&nm, &env, 0.01, 5).unwrap();
        let b = render_camera(&nm, &env, 0.01, 5).unwrap();
        let c = render_camera(&nm, &env, 0.01, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Independent per-pixel scalar evaluation of the diffuse reflection
    /// formula, decoupled from the renderer.
    #[test]
    fn camera_matches_direct_formula_evaluation() {
        let nm = generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, 11)).unwrap();
        let lights =
            [[0.0, 0.0, 32.0], [31.0, 0.0, 40.0], [10.0, 25.0, 28.0], [31.0, 31.0, 32.0]];
        for light in lights {
            let mut env = EnvironmentModel::camera_at(light);
            env.albedo = 0.8;
            env.ambient_offset = 0.05;
            let img = render_camera(&nm, &env, 0.0, 0).unwrap();
            for y in 0..32u32 {
                for x in 0..32u32 {
                    let n = nm.get(x, y);
                    let vx = light[0] - x as f64;
                    let vy = light[1] - y as f64;
                    let vz = light[2];
                    let dot = n[0] * vx + n[1] * vy + n[2] * vz;
                    let norm = (vx * vx + vy * vy + vz * vz).sqrt();
                    let expected = 0.8 * env.source_intensity * dot.max(0.0) / norm.powi(3) + 0.05;
                    assert!((img.get(x, y) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn light_below_surface_is_degenerate() {
        let nm = NormMap::flat(4, 4).unwrap();
        let env = EnvironmentModel::camera_at([2.0, 2.0, -1.0]);
        assert!(matches!(
            render_camera(&nm, &env, 0.0, 0),
            Err(OpticsError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn flat_surface_scanner_images_identical_across_orientations() {
        let nm = NormMap::flat(8, 8).unwrap();
        let env = EnvironmentModel::scanner_default();
        let imgs: Vec<_> = SCANNER_ORIENTATIONS
            .iter()
            .map(|&o| render_scanner(&nm, o, &env, 0.0, 0).unwrap())
            .collect();
        for img in &imgs[1..] {
            assert_eq!(img.intensities(), imgs[0].intensities());
        }
    }

    #[test]
    fn invalid_orientation_rejected() {
        let nm = NormMap::flat(4, 4).unwrap();
        let env = EnvironmentModel::scanner_default();
        assert!(matches!(
            render_scanner(&nm, 45, &env, 0.0, 0),
            Err(OpticsError::InvalidParams(_))
        ));
    }

    /// Scanner differences against the direct formula: I_0 - I_180 equals
    /// gain * n_y per pixel, I_90 - I_270 equals gain * n_x, and the
    /// ambient offset cancels exactly.
    #[test]
    fn scanner_differences_proportional_to_normal_components() {
        let nm = generate_surface(&SurfaceParams::new(64, 64, 3.0, 0.2, 21)).unwrap();
        let mut env = EnvironmentModel::scanner_default();
        env.ambient_offset = 0.3;
        env.albedo = 1.2;
        let render = |o| render_scanner(&nm, o, &env, 0.0, 0).unwrap();
        let (i0, i90, i180, i270) = (render(0), render(90), render(180), render(270));
        let gain = env.scanner_difference_gain();
        let mut max_dev: f64 = 0.0;
        for y in 0..64u32 {
            for x in 0..64u32 {
                let n = nm.get(x, y);
                let dy = i0.get(x, y) - i180.get(x, y);
                let dx = i90.get(x, y) - i270.get(x, y);
                max_dev = max_dev.max((dy - gain * n[1]).abs());
                max_dev = max_dev.max((dx - gain * n[0]).abs());
            }
        }
        assert!(max_dev < 1e-9, "max deviation {max_dev}");
    }

    #[test]
    fn pixel_with_zero_nx_has_equal_90_270_images() {
        let normals = vec![[0.0, 0.3, (1.0f64 - 0.09).sqrt()]; 4];
        let nm = NormMap::from_normals(2, 2, normals).unwrap();
        let env = EnvironmentModel::scanner_default();
        let i90 = render_scanner(&nm, 90, &env, 0.0, 0).unwrap();
        let i270 = render_scanner(&nm, 270, &env, 0.0, 0).unwrap();
        for (a, b) in i90.intensities().iter().zip(i270.intensities()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn intensity_non_increasing_in_light_distance() {
        let nm = NormMap::flat(5, 5).unwrap();
        let mut prev = f64::INFINITY;
        for h in [3.0, 5.0, 9.0, 17.0, 33.0] {
            let mut env = EnvironmentModel::camera_at([2.0, 2.0, h]);
            env.source_intensity = 1.0;
            let img = render_camera(&nm, &env, 0.0, 0).unwrap();
            let v = img.get(2, 2);
            assert!(v < prev, "intensity must fall as the light recedes");
            prev = v;
        }
    }

    #[test]
    fn scanner_acquisition_yields_four_oriented_images() {
        let nm = generate_surface(&SurfaceParams::new(16, 16, 3.0, 0.2, 2)).unwrap();
        let plan = AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), 10);
        let set = acquire(&nm, &plan).unwrap();
        set.validate().unwrap();
        assert_eq!(set.images.len(), 4);
        for (img, &o) in set.images.iter().zip(&SCANNER_ORIENTATIONS) {
            assert_eq!(img.meta.shot, ShotId::ScannerOrientation(o));
        }
        assert_eq!(set.marker_state, MarkerState::Intact);
        assert!(set.nonce().is_some());
    }

    #[test]
    fn tampered_plan_marks_capture() {
        let nm = NormMap::flat(8, 8).unwrap();
        let plan = AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), 1)
            .with_tampered_markers();
        let set = acquire(&nm, &plan).unwrap();
        assert_eq!(set.marker_state, MarkerState::Tampered);
    }

    #[test]
    fn acquisition_deterministic_per_seed_with_fresh_nonces_across_seeds() {
        let nm = generate_surface(&SurfaceParams::new(16, 16, 3.0, 0.2, 2)).unwrap();
        let plan =
            AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), 77).with_noise(0.01);
        let a = acquire(&nm, &plan).unwrap();
        let b = acquire(&nm, &plan).unwrap();
        assert_eq!(a, b);
        let mut plan2 = plan.clone();
        plan2.seed = 78;
        let c = acquire(&nm, &plan2).unwrap();
        assert_ne!(a.nonce(), c.nonce());
        assert_ne!(a.images[0], c.images[0]);
    }

    #[test]
    fn pgm_and_simg_roundtrip() {
        let nm = generate_surface(&SurfaceParams::new(8, 8, 3.0, 0.2, 4)).unwrap();
        let img = render_scanner(&nm, 0, &EnvironmentModel::scanner_default(), 0.0, 0).unwrap();

        let mut pgm = Vec::new();
        img.write_pgm(&mut pgm).unwrap();
        let text = String::from_utf8_lossy(&pgm[..40]);
        assert!(text.starts_with("P5\n# papertrust scale="));

        let mut raw = Vec::new();
        img.write_simg(&mut raw).unwrap();
        let back = SurfaceImage::read_simg(&raw[..], img.meta).unwrap();
        for (a, b) in img.intensities().iter().zip(back.intensities()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
