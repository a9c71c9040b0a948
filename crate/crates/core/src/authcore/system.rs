//! The assembled authentication system: pipeline, store, decision policy,
//! and the sensor-interface defenses, wired together the way a deployment
//! would run them.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::authcore::{DecisionPolicy, DecisionResult, Feature, StoreError, TemplateStore};
use crate::features::{FeatureError, Pipeline};
use crate::optics::CaptureSet;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Which feature the system enrolls and matches: quantized binary
/// responses, or the estimated norm maps themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Response,
    NormMap,
}

/// What the system said about one presented capture.
#[derive(Debug, Clone, PartialEq)]
pub enum AuthOutcome {
    /// The decision rule ran; inspect the contained result.
    Decision(DecisionResult),
    /// Registration markers were tampered with; the product is routed to
    /// manual inspection instead of being scored.
    ManualInspection,
    /// The capture nonce was seen before; rejected at the interface.
    ReplayRejected,
}

impl AuthOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, AuthOutcome::Decision(d) if d.accepted)
    }
}

/// A deployed verifier: `f` and `phi` (the pipeline), `D` (the store),
/// `delta` (the policy), plus nonce tracking at the sensor interface.
#[derive(Debug, Clone)]
pub struct AuthSystem {
    pub pipeline: Pipeline,
    pub store: TemplateStore,
    pub policy: DecisionPolicy,
    /// Reject capture bundles whose nonce has been presented before.
    pub replay_defense: bool,
    pub feature_kind: FeatureKind,
    seen_nonces: BTreeSet<u64>,
    /// Captures that could not be processed at all (DoS bookkeeping).
    pub availability_incidents: u64,
}

impl AuthSystem {
    pub fn new(pipeline: Pipeline, store: TemplateStore, policy: DecisionPolicy) -> Self {
        Self {
            pipeline,
            store,
            policy,
            replay_defense: false,
            feature_kind: FeatureKind::Response,
            seen_nonces: BTreeSet::new(),
            availability_incidents: 0,
        }
    }

    pub fn with_replay_defense(mut self) -> Self {
        self.replay_defense = true;
        self
    }

    /// Enroll and match estimated norm maps instead of binary responses.
    pub fn with_norm_map_features(mut self) -> Self {
        self.feature_kind = FeatureKind::NormMap;
        self
    }

    /// Runs preprocessing and estimation, yielding the configured feature.
    pub fn extract_feature(&self, captures: &CaptureSet) -> Result<Feature, FeatureError> {
        match self.feature_kind {
            FeatureKind::Response => {
                Ok(Feature::Response(self.pipeline.response_from_captures(captures)?))
            }
            FeatureKind::NormMap => {
                Ok(Feature::NormMap(self.pipeline.norm_map_from_captures(captures)?))
            }
        }
    }

    /// Enrolls a product from its registration captures.
    pub fn register_captures(
        &mut self,
        actor: &str,
        product_id: &str,
        captures: &CaptureSet,
    ) -> Result<u64, SystemError> {
        let feature = self.extract_feature(captures)?;
        Ok(self.store.register(actor, Some(product_id), feature)?)
    }

    /// Full verification of a presented capture bundle: interface nonce
    /// check, preprocessing, feature extraction, then the decision rule.
    pub fn authenticate_captures(
        &mut self,
        requester: &str,
        captures: &CaptureSet,
        claimed_id: Option<&str>,
    ) -> Result<AuthOutcome, SystemError> {
        if self.replay_defense {
            match captures.nonce() {
                Some(nonce) if !self.seen_nonces.insert(nonce) => {
                    return Ok(AuthOutcome::ReplayRejected)
                }
                Some(_) => {}
                None => return Err(SystemError::Feature(FeatureError::EmptyCapture)),
            }
        }
        let feature = match self.extract_feature(captures) {
            Ok(f) => f,
            Err(FeatureError::AlignmentFailed) => {
                self.availability_incidents += 1;
                return Ok(AuthOutcome::ManualInspection);
            }
            Err(e) => return Err(e.into()),
        };
        let result = self.store.decide(&self.policy, requester, &feature, claimed_id)?;
        Ok(AuthOutcome::Decision(result))
    }

    /// Direct decision endpoint taking an already-extracted feature; the
    /// channel an adversary reaches once the sensor stage is bypassed.
    pub fn authenticate_feature(
        &mut self,
        requester: &str,
        feature: &Feature,
        claimed_id: Option<&str>,
    ) -> Result<DecisionResult, SystemError> {
        Ok(self.store.decide(&self.policy, requester, feature, claimed_id)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authcore::StoreMode;
    use crate::optics::{acquire, AcquisitionPlan, EnvironmentModel};
    use crate::surface::{generate_surface, SurfaceParams};

    fn system(mode: StoreMode) -> AuthSystem {
        AuthSystem::new(
            Pipeline::default(),
            TemplateStore::new(mode, 7),
            DecisionPolicy::hamming(0.1),
        )
    }

    fn captures(surface_seed: u64, plan_seed: u64) -> crate::optics::CaptureSet {
        let nm = generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, surface_seed)).unwrap();
        acquire(&nm, &AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), plan_seed))
            .unwrap()
    }

    #[test]
    fn genuine_product_authenticates() {
        let mut sys = system(StoreMode::Plain);
        sys.register_captures("manufacturer", "SKU", &captures(1, 10)).unwrap();
        let outcome = sys.authenticate_captures("retailer", &captures(1, 11), Some("SKU")).unwrap();
        assert!(outcome.accepted());
    }

    #[test]
    fn wrong_surface_rejected() {
        let mut sys = system(StoreMode::Plain);
        sys.register_captures("manufacturer", "SKU", &captures(1, 10)).unwrap();
        let outcome = sys.authenticate_captures("retailer", &captures(2, 11), Some("SKU")).unwrap();
        assert!(!outcome.accepted());
    }

    #[test]
    fn replay_defense_rejects_second_presentation() {
        let mut sys = system(StoreMode::Plain).with_replay_defense();
        sys.register_captures("manufacturer", "SKU", &captures(1, 10)).unwrap();
        let caps = captures(1, 11);
        assert!(sys.authenticate_captures("r", &caps, Some("SKU")).unwrap().accepted());
        let replayed = sys.authenticate_captures("r", &caps, Some("SKU")).unwrap();
        assert_eq!(replayed, AuthOutcome::ReplayRejected);
        // A fresh acquisition of the same surface still passes.
        assert!(sys.authenticate_captures("r", &captures(1, 12), Some("SKU")).unwrap().accepted());
    }

    #[test]
    fn tampered_markers_route_to_manual_inspection() {
        let mut sys = system(StoreMode::Plain);
        sys.register_captures("manufacturer", "SKU", &captures(1, 10)).unwrap();
        let nm = generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, 1)).unwrap();
        let tampered = acquire(
            &nm,
            &AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), 13)
                .with_tampered_markers(),
        )
        .unwrap();
        let outcome = sys.authenticate_captures("r", &tampered, Some("SKU")).unwrap();
        assert_eq!(outcome, AuthOutcome::ManualInspection);
        assert_eq!(sys.availability_incidents, 1);
    }
}
