//! Config file schemas for the gen/metrics/attack commands. Scenario runs
//! consume the scenario config schema from the core crate directly.

use serde::Deserialize;

use papertrust_core::features::QuantizerConfig;
use papertrust_core::population::SensorKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub width: u32,
    pub height: u32,
    pub correlation_length: f64,
    pub slope_scale: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, correlation_length: 3.0, slope_scale: 0.2 }
    }
}

/// `gen` command: write `count` norm-map containers plus a manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub count: u32,
    #[serde(default)]
    pub surface: SurfaceConfig,
    /// Also dump each surface as CSV next to its container.
    #[serde(default)]
    pub emit_csv: bool,
}

/// `metrics` command: population shape, noise, quantizer.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Number of distinct surfaces K (at least 2).
    pub surfaces: u32,
    /// Trials per surface T (at least 1).
    pub trials: u32,
    /// Trial noise as a fraction of dynamic range.
    pub noise_rel: f64,
    #[serde(default = "default_sensor")]
    pub sensor: SensorKind,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub quantizer: QuantizerConfig,
}

fn default_sensor() -> SensorKind {
    SensorKind::Scanner
}

/// `attack` command: which attacks, how many seeds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Independent repetitions; cell seeds are seed, seed+1, ...
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    /// Attack names; defaults to the full five-row matrix.
    #[serde(default)]
    pub attacks: Vec<String>,
}

fn default_seeds() -> u32 {
    1
}
