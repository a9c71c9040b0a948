//! The adversary playbook, run against a configured authentication system.
//!
//! Each attack targets one stage: marker tampering and image replay hit the
//! sensor, template leakage and malicious registration hit the reference
//! store, inversion turns a leaked norm map back into synthetic captures,
//! and hill climbing exploits score leakage at the decision endpoint. For
//! every attack the paper-named mitigation is wired in so the
//! attack-versus-mitigation matrix can be measured cell by cell: replay vs
//! nonces, leakage and inversion vs salted hashing, hill climbing vs
//! non-leaky metrics or lockout, malicious registration vs audit review.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::authcore::{
    AuditEntry, AuthOutcome, AuthSystem, DecisionMetric, DecisionPolicy, Feature, StoreError,
    SystemError, TemplatePayload, TemplateStore,
};
use crate::features::{Pipeline, PufResponse};
use crate::optics::{
    acquire, AcquisitionPlan, CaptureSet, EnvironmentModel, MarkerState, OpticsError,
};
use crate::surface::{generate_surface, NormMap, SurfaceError, SurfaceParams};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error("unknown attack name {0:?}")]
    UnknownAttack(String),
}

/// Result of one mounted attack.
#[derive(Debug, Clone, Serialize)]
pub struct AttackOutcome {
    pub attack: String,
    pub success: bool,
    pub queries_used: u64,
    /// Observed leaked scores, best-so-far; monotone by construction.
    pub score_trace: Option<Vec<f64>>,
    pub notes: String,
}

impl AttackOutcome {
    fn new(attack: &str, success: bool, queries_used: u64, notes: impl Into<String>) -> Self {
        Self { attack: attack.into(), success, queries_used, score_trace: None, notes: notes.into() }
    }
}

/// Resubmits a previously captured image bundle to the sensor interface.
/// Succeeds exactly when the system lacks nonce checking (or the images are
/// genuinely fresh for the claimed product).
pub fn spoof_replay_images(
    system: &mut AuthSystem,
    captured: &CaptureSet,
    claimed_id: Option<&str>,
) -> Result<AttackOutcome, AttackError> {
    let outcome = system.authenticate_captures("spoofing-adversary", captured, claimed_id)?;
    let (success, notes) = match &outcome {
        AuthOutcome::ReplayRejected => (false, "nonce already seen; rejected at interface"),
        AuthOutcome::ManualInspection => (false, "captures routed to manual inspection"),
        AuthOutcome::Decision(d) if d.accepted => (true, "replayed images accepted"),
        AuthOutcome::Decision(_) => (false, "replayed images rejected by decision rule"),
    };
    Ok(AttackOutcome::new("replay", success, 1, notes))
}

/// Insider extraction of a stored raw template. The salted-hash mitigation
/// makes this impossible by construction: hashed stores hold no raw
/// features.
pub fn leak_template(store: &TemplateStore, product_id: &str) -> Result<Feature, StoreError> {
    let record = store
        .lookup_by_id(product_id)
        .ok_or_else(|| StoreError::UnknownId(product_id.to_string()))?;
    match &record.payload {
        TemplatePayload::Raw(feature) => Ok(feature.clone()),
        TemplatePayload::SaltedDigest { .. } => Err(StoreError::NothingToLeak),
    }
}

/// Forward-evaluates the diffuse reflection model on a leaked norm map
/// under the adversary's assumed environment: exactly the optics renderer
/// applied to the stolen template.
pub fn invert_template(
    template: &NormMap,
    assumed_plan: &AcquisitionPlan,
) -> Result<CaptureSet, OpticsError> {
    acquire(template, assumed_plan)
}

/// Models feeding synthetic images into the verifier's sensor: the sensor
/// stamps its own calibrated environments onto whatever it is shown.
pub fn present_through_sensor(
    mut synthetic: CaptureSet,
    sensor_environments: Vec<EnvironmentModel>,
) -> CaptureSet {
    synthetic.environments = sensor_environments;
    synthetic
}

/// Physically destroys the registration markers; downstream preprocessing
/// fails and the product drops out of automated authentication.
pub fn dos_marker_tamper(captures: &CaptureSet) -> CaptureSet {
    let mut out = captures.clone();
    out.marker_state = MarkerState::Tampered;
    out
}

/// Iterated local search against the decision endpoint: start from a random
/// feature, flip a small random bit subset, keep the proposal iff the
/// leaked score improves, stop on acceptance or budget exhaustion. With a
/// non-leaking endpoint there is no gradient and the walk degenerates to
/// blind guessing; with lockout enabled the budget runs out first.
pub fn hill_climb(
    system: &mut AuthSystem,
    claimed_id: &str,
    feature_bits: usize,
    budget: u64,
    seed: u64,
) -> Result<AttackOutcome, AttackError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = PufResponse::random(feature_bits, &mut rng);
    let metric = system.policy.metric;
    let improved = move |new: f64, old: f64| match metric {
        DecisionMetric::L2 | DecisionMetric::Hamming => new < old,
        DecisionMetric::Pearson => new > old,
    };

    let mut queries = 0u64;
    let mut trace: Vec<f64> = Vec::new();
    let mut best_score: Option<f64> = None;

    let submit = |system: &mut AuthSystem,
                  candidate: &PufResponse,
                  queries: &mut u64|
     -> Result<Option<crate::authcore::DecisionResult>, AttackError> {
        match system.authenticate_feature(
            "hill-climber",
            &Feature::Response(candidate.clone()),
            Some(claimed_id),
        ) {
            Ok(result) => {
                *queries += 1;
                Ok(Some(result))
            }
            // A refused attempt never reached the matcher and spends no
            // budget.
            Err(SystemError::Store(StoreError::LockedOut { .. })) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };

    // Baseline query for the starting point.
    match submit(system, &current, &mut queries)? {
        None => {
            return Ok(AttackOutcome {
                score_trace: Some(trace),
                ..AttackOutcome::new("hill_climb", false, queries, "locked out")
            })
        }
        Some(result) => {
            if result.accepted {
                return Ok(AttackOutcome {
                    score_trace: Some(trace),
                    ..AttackOutcome::new("hill_climb", true, queries, "random start accepted")
                });
            }
            if let Some(score) = result.score {
                best_score = Some(score);
                trace.push(score);
            }
        }
    }

    while queries < budget {
        let mut proposal = current.clone();
        let flips = rng.random_range(1..=4usize);
        for _ in 0..flips {
            proposal.flip(rng.random_range(0..feature_bits));
        }
        let Some(result) = submit(system, &proposal, &mut queries)? else {
            return Ok(AttackOutcome {
                score_trace: Some(trace),
                ..AttackOutcome::new("hill_climb", false, queries, "locked out")
            });
        };
        if result.accepted {
            if let Some(score) = result.score {
                trace.push(score);
            }
            return Ok(AttackOutcome {
                score_trace: Some(trace),
                ..AttackOutcome::new("hill_climb", true, queries, "threshold crossed")
            });
        }
        match (result.score, best_score) {
            (Some(score), Some(best)) if improved(score, best) => {
                best_score = Some(score);
                current = proposal;
                trace.push(score);
            }
            (Some(score), None) => {
                best_score = Some(score);
                current = proposal;
                trace.push(score);
            }
            // No leaked score: a rejected proposal carries no information,
            // so the walk never moves.
            _ => {}
        }
    }

    Ok(AttackOutcome {
        score_trace: Some(trace),
        ..AttackOutcome::new("hill_climb", false, queries, "budget exhausted")
    })
}

/// Insider write of a counterfeit record, then an authentication of the
/// counterfeit against it. The write always works and the counterfeit
/// always authenticates; what the mitigation changes is detection — the
/// unauthorized append is attributable in the audit ledger.
pub fn malicious_registration(
    system: &mut AuthSystem,
    insider: &str,
    counterfeit: Feature,
    product_id: &str,
) -> Result<AttackOutcome, AttackError> {
    system.store.register(insider, Some(product_id), counterfeit.clone())?;
    let result = system.authenticate_feature("counterfeit-holder", &counterfeit, Some(product_id))?;
    Ok(AttackOutcome::new(
        "malicious_registration",
        result.accepted,
        1,
        format!("counterfeit record {product_id:?} written by {insider:?}"),
    ))
}

/// Ledger review: entries appended by actors outside the authorized set.
pub fn audit_review<'s>(store: &'s TemplateStore, authorized: &[&str]) -> Vec<&'s AuditEntry> {
    store
        .audit()
        .entries()
        .iter()
        .filter(|e| !authorized.contains(&e.actor.as_str()))
        .collect()
}

/// The five attack rows of the mitigation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Replay,
    TemplateLeakage,
    Inversion,
    HillClimb,
    MaliciousRegistration,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Replay,
        AttackKind::TemplateLeakage,
        AttackKind::Inversion,
        AttackKind::HillClimb,
        AttackKind::MaliciousRegistration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Replay => "replay",
            AttackKind::TemplateLeakage => "template_leakage",
            AttackKind::Inversion => "inversion",
            AttackKind::HillClimb => "hill_climb",
            AttackKind::MaliciousRegistration => "malicious_registration",
        }
    }

    pub fn parse(name: &str) -> Result<Self, AttackError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| AttackError::UnknownAttack(name.to_string()))
    }

    /// The mitigation the matrix pairs with this attack.
    pub fn mitigation_name(&self) -> &'static str {
        match self {
            AttackKind::Replay => "nonces",
            AttackKind::TemplateLeakage => "hashing",
            AttackKind::Inversion => "hashing",
            AttackKind::HillClimb => "no_leak",
            AttackKind::MaliciousRegistration => "audit_review",
        }
    }
}

/// One cell of the attack x mitigation x seed matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixCell {
    pub attack: &'static str,
    pub mitigation: &'static str,
    pub mitigated: bool,
    pub seed: u64,
    pub success: bool,
    pub queries_used: u64,
    pub notes: String,
}

fn surface_for(seed: u64, tag: u64) -> Result<NormMap, AttackError> {
    Ok(generate_surface(&SurfaceParams::new(32, 32, 3.0, 0.2, mix_seed(seed, tag, 0)))?)
}

fn scanner_plan(seed: u64, tag: u64) -> AcquisitionPlan {
    AcquisitionPlan::scanner(EnvironmentModel::scanner_default(), mix_seed(seed, tag, 1))
}

/// Runs one deterministic matrix cell: a fresh default system per cell, the
/// named attack mounted once, with or without its paired mitigation.
pub fn run_attack_cell(
    kind: AttackKind,
    mitigated: bool,
    seed: u64,
) -> Result<MatrixCell, AttackError> {
    let outcome = match kind {
        AttackKind::Replay => {
            let mut system = AuthSystem::new(
                Pipeline::default(),
                TemplateStore::plain(mix_seed(seed, 1, 2)),
                DecisionPolicy::hamming(0.1),
            );
            if mitigated {
                system = system.with_replay_defense();
            }
            let nm = surface_for(seed, 10)?;
            let registration = acquire(&nm, &scanner_plan(seed, 11))?;
            system.register_captures("manufacturer", "SKU", &registration)?;
            // The bundle the adversary observed during a legitimate check.
            let observed = acquire(&nm, &scanner_plan(seed, 12))?;
            system.authenticate_captures("retailer", &observed, Some("SKU"))?;
            spoof_replay_images(&mut system, &observed, Some("SKU"))?
        }
        AttackKind::TemplateLeakage => {
            let store_seed = mix_seed(seed, 2, 2);
            let store = if mitigated {
                TemplateStore::hashed(store_seed)
            } else {
                TemplateStore::plain(store_seed)
            };
            let mut system =
                AuthSystem::new(Pipeline::default(), store, DecisionPolicy::l2(0.5));
            let nm = surface_for(seed, 20)?;
            let registration = acquire(&nm, &scanner_plan(seed, 21))?;
            system.register_captures("manufacturer", "SKU", &registration)?;
            match leak_template(&system.store, "SKU") {
                Ok(leaked) => {
                    let result = system.authenticate_feature("insider", &leaked, Some("SKU"))?;
                    AttackOutcome::new(
                        "template_leakage",
                        result.accepted,
                        1,
                        "leaked raw template replayed to the decision endpoint",
                    )
                }
                Err(StoreError::NothingToLeak) => AttackOutcome::new(
                    "template_leakage",
                    false,
                    0,
                    "store holds salted digests only; nothing to leak",
                ),
                Err(e) => return Err(e.into()),
            }
        }
        AttackKind::Inversion => {
            let store_seed = mix_seed(seed, 3, 2);
            let store = if mitigated {
                TemplateStore::hashed(store_seed)
            } else {
                TemplateStore::plain(store_seed)
            };
            let mut system = AuthSystem::new(Pipeline::default(), store, DecisionPolicy::pearson(0.9))
                .with_norm_map_features();
            let nm = surface_for(seed, 30)?;
            let true_envs = EnvironmentModel::corner_lights(32, 32, 32.0);
            let registration =
                acquire(&nm, &AcquisitionPlan::camera(true_envs.clone(), mix_seed(seed, 31, 0)))?;
            system.register_captures("manufacturer", "SKU", &registration)?;
            match leak_template(&system.store, "SKU") {
                Ok(Feature::NormMap(template)) => {
                    let assumed_plan =
                        AcquisitionPlan::camera(true_envs.clone(), mix_seed(seed, 32, 0));
                    let synthetic = invert_template(&template, &assumed_plan)?;
                    let presented = present_through_sensor(synthetic, true_envs);
                    let outcome =
                        system.authenticate_captures("forger", &presented, Some("SKU"))?;
                    AttackOutcome::new(
                        "inversion",
                        outcome.accepted(),
                        1,
                        "synthetic captures rendered from the leaked norm map",
                    )
                }
                Ok(_) => AttackOutcome::new("inversion", false, 0, "leaked template not a norm map"),
                Err(StoreError::NothingToLeak) => AttackOutcome::new(
                    "inversion",
                    false,
                    0,
                    "no raw norm map available; attack not mountable",
                ),
                Err(e) => return Err(e.into()),
            }
        }
        AttackKind::HillClimb => {
            let bits = 256;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4, 0));
            let template = PufResponse::random(bits, &mut rng);
            let mut policy = DecisionPolicy::l2(6.0f64.sqrt());
            if !mitigated {
                policy = policy.with_leaky_scores();
            }
            let mut system = AuthSystem::new(
                Pipeline::default(),
                TemplateStore::plain(mix_seed(seed, 4, 2)),
                policy,
            );
            system.store.register("manufacturer", Some("SKU"), Feature::Response(template))?;
            hill_climb(&mut system, "SKU", bits, 50_000, mix_seed(seed, 4, 3))?
        }
        AttackKind::MaliciousRegistration => {
            let mut system = AuthSystem::new(
                Pipeline::default(),
                TemplateStore::plain(mix_seed(seed, 5, 2)),
                DecisionPolicy::hamming(0.1),
            );
            let nm = surface_for(seed, 50)?;
            let registration = acquire(&nm, &scanner_plan(seed, 51))?;
            system.register_captures("manufacturer", "SKU-1", &registration)?;
            let counterfeit_nm = surface_for(seed, 52)?;
            let counterfeit = Feature::Response(
                system
                    .pipeline
                    .response_from_captures(&acquire(&counterfeit_nm, &scanner_plan(seed, 53))?)?,
            );
            let mut outcome =
                malicious_registration(&mut system, "mallory", counterfeit, "SKU-FAKE")?;
            if mitigated {
                let unauthorized =
                    audit_review(&system.store, &["manufacturer", "counterfeit-holder"]);
                if !unauthorized.is_empty() {
                    outcome.success = false;
                    outcome.notes = format!(
                        "audit review attributed unauthorized append(s) at seq {:?}",
                        unauthorized.iter().map(|e| e.seq).collect::<Vec<_>>()
                    );
                }
            }
            outcome
        }
    };

    Ok(MatrixCell {
        attack: kind.name(),
        mitigation: kind.mitigation_name(),
        mitigated,
        seed,
        success: outcome.success,
        queries_used: outcome.queries_used,
        notes: outcome.notes,
    })
}

/// The full 5 x 2 matrix for one seed.
pub fn run_mitigation_matrix(seed: u64) -> Result<Vec<MatrixCell>, AttackError> {
    let mut cells = Vec::with_capacity(10);
    for kind in AttackKind::ALL {
        for mitigated in [false, true] {
            cells.push(run_attack_cell(kind, mitigated, seed)?);
        }
    }
    Ok(cells)
}
