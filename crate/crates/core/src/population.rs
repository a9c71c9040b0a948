//! Synthetic populations: K surfaces evaluated T times through the full
//! acquire/preprocess/estimate/quantize pipeline.
//!
//! The ideal response of a surface is defined as the response of a
//! noiseless, perfectly aligned acquisition; trial responses add the
//! configured sensor noise. Every surface and every trial draws its
//! randomness from a stream derived from the population seed, so batches
//! replay bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, Pipeline, PufResponse, QuantizerConfig};
use crate::optics::{
    acquire, AcquisitionPlan, CaptureSet, EnvironmentModel, OpticsError, PlanKind,
};
use crate::pufmetrics::{EvaluationBatch, MetricError};
use crate::surface::{
    degrade_surface, generate_surface, DegradationSpec, NormMap, SurfaceError, SurfaceParams,
};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Acquisition sensor used for a population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Scanner,
    Camera,
}

/// Everything needed to synthesize an evaluation population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Number of distinct surfaces K.
    pub surfaces: u32,
    /// Trials per surface T.
    pub trials: u32,
    pub width: u32,
    pub height: u32,
    pub correlation_length: f64,
    pub slope_scale: f64,
    /// Trial noise, as a fraction of the capture's dynamic range.
    pub noise_rel: f64,
    pub sensor: SensorKind,
    pub quantizer: QuantizerConfig,
    pub seed: u64,
    /// Degradation applied to every surface before trial acquisition (the
    /// ideal response still comes from the pristine surface).
    pub degradation: Option<DegradationSpec>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            surfaces: 50,
            trials: 3,
            width: 64,
            height: 64,
            correlation_length: 3.0,
            slope_scale: 0.2,
            noise_rel: 0.01,
            sensor: SensorKind::Scanner,
            quantizer: QuantizerConfig::default(),
            seed: 42,
            degradation: None,
        }
    }
}

impl PopulationSpec {
    pub fn pipeline(&self) -> Pipeline {
        Pipeline::new(self.quantizer.clone())
    }

    /// Ground-truth surface of product `k`.
    pub fn surface(&self, k: u32) -> Result<NormMap, PopulationError> {
        Ok(generate_surface(&SurfaceParams::new(
            self.width,
            self.height,
            self.correlation_length,
            self.slope_scale,
            mix_seed(self.seed, k as u64, 0),
        ))?)
    }

    fn plan_kind(&self) -> PlanKind {
        match self.sensor {
            SensorKind::Scanner => PlanKind::Scanner { env: EnvironmentModel::scanner_default() },
            SensorKind::Camera => PlanKind::Camera {
                envs: EnvironmentModel::corner_lights(self.width, self.height, self.width as f64),
            },
        }
    }

    /// Noiseless, perfectly aligned acquisition of surface `k`; the source
    /// of the ideal response.
    pub fn acquire_ideal(&self, k: u32) -> Result<CaptureSet, PopulationError> {
        let nm = self.surface(k)?;
        let plan = AcquisitionPlan {
            kind: self.plan_kind(),
            noise_rel: 0.0,
            misalignment: [0.0, 0.0],
            tamper_markers: false,
            seed: mix_seed(self.seed, k as u64, 1),
        };
        Ok(acquire(&nm, &plan)?)
    }

    /// Trial acquisition `t` of surface `k` with the configured noise,
    /// following the configured degradation if any.
    pub fn acquire_trial(&self, k: u32, t: u32) -> Result<CaptureSet, PopulationError> {
        let mut nm = self.surface(k)?;
        if let Some(spec) = &self.degradation {
            let mut spec = *spec;
            spec.seed = mix_seed(self.seed, k as u64, 0xD156);
            nm = degrade_surface(&nm, &spec)?;
        }
        let plan = AcquisitionPlan {
            kind: self.plan_kind(),
            noise_rel: self.noise_rel,
            misalignment: [0.0, 0.0],
            tamper_markers: false,
            seed: mix_seed(self.seed, k as u64, 2 + t as u64),
        };
        Ok(acquire(&nm, &plan)?)
    }

    /// Runs the whole population through the pipeline.
    pub fn build_batch(&self) -> Result<EvaluationBatch, PopulationError> {
        let pipeline = self.pipeline();
        let mut ideal = Vec::with_capacity(self.surfaces as usize);
        let mut responses = Vec::with_capacity(self.surfaces as usize);
        for k in 0..self.surfaces {
            let mut r = pipeline.response_from_captures(&self.acquire_ideal(k)?)?;
            r.origin = Some((k, 0));
            ideal.push(r);
            let mut row = Vec::with_capacity(self.trials as usize);
            for t in 0..self.trials {
                let mut r = pipeline.response_from_captures(&self.acquire_trial(k, t)?)?;
                r.origin = Some((k, t));
                row.push(r);
            }
            responses.push(row);
        }
        Ok(EvaluationBatch::new(responses, ideal)?)
    }

    /// Genuine scores (fractional HD of each trial to its own ideal) and
    /// impostor scores (fractional HD between different surfaces' trials,
    /// per trial index) for error-rate evaluation.
    pub fn score_sets(
        &self,
        batch: &EvaluationBatch,
    ) -> Result<(Vec<f64>, Vec<f64>), PopulationError> {
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for k in 0..batch.surfaces() {
            for t in 0..batch.trials() {
                genuine.push(
                    batch.ideal(k).fractional_hd(batch.response(k, t))?,
                );
            }
        }
        for t in 0..batch.trials() {
            for i in 0..batch.surfaces() {
                for j in i + 1..batch.surfaces() {
                    impostor.push(
                        batch.response(i, t).fractional_hd(batch.response(j, t))?,
                    );
                }
            }
        }
        Ok((genuine, impostor))
    }
}

/// One response per surface, convenient for registration flows.
pub fn enroll_responses(spec: &PopulationSpec) -> Result<Vec<PufResponse>, PopulationError> {
    let pipeline = spec.pipeline();
    (0..spec.surfaces)
        .map(|k| {
            let captures = spec.acquire_ideal(k)?;
            Ok(pipeline.response_from_captures(&captures)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pufmetrics;

    fn small_spec() -> PopulationSpec {
        PopulationSpec { surfaces: 4, trials: 2, width: 32, height: 32, ..Default::default() }
    }

    #[test]
    fn batches_replay_bit_for_bit() {
        let spec = small_spec();
        let a = spec.build_batch().unwrap();
        let b = spec.build_batch().unwrap();
        for k in 0..a.surfaces() {
            assert_eq!(a.ideal(k), b.ideal(k));
            for t in 0..a.trials() {
                assert_eq!(a.response(k, t), b.response(k, t));
            }
        }
    }

    #[test]
    fn noiseless_population_has_unit_robustness() {
        let spec = PopulationSpec { noise_rel: 0.0, ..small_spec() };
        let batch = spec.build_batch().unwrap();
        for k in 0..batch.surfaces() {
            assert_eq!(pufmetrics::robustness(&batch, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn noise_lowers_robustness_below_one() {
        let spec = PopulationSpec { noise_rel: 0.05, ..small_spec() };
        let batch = spec.build_batch().unwrap();
        let r = pufmetrics::robustness(&batch, 0).unwrap();
        assert!(r < 1.0 && r > 0.5, "robustness {r}");
    }

    #[test]
    fn score_sets_separate_genuine_from_impostor() {
        let spec = small_spec();
        let batch = spec.build_batch().unwrap();
        let (genuine, impostor) = spec.score_sets(&batch).unwrap();
        assert_eq!(genuine.len(), 4 * 2);
        assert_eq!(impostor.len(), 2 * (4 * 3 / 2));
        let max_gen = genuine.iter().cloned().fold(0.0, f64::max);
        let min_imp = impostor.iter().cloned().fold(1.0, f64::min);
        assert!(max_gen < min_imp, "genuine {max_gen} vs impostor {min_imp}");
    }
}
