//! Reference store, template protection, and the decision rule.
//!
//! A [`TemplateStore`] is the database of enrolled features. It runs in one
//! of three modes:
//!
//! - `plain` — raw features stored under their product id;
//! - `hashed` — only a fresh-salted cryptographic digest of each feature is
//!   kept, so a leaked record cannot be inverted into the feature;
//! - `lsh` — raw binary responses in a bit-sampling LSH index for ID-less
//!   similarity search.
//!
//! Every mutation appends exactly one entry to the hash-chained
//! [`AuditLedger`] before returning, decisions respect a per-requester
//! lockout budget, and [`DecisionPolicy::leak_scores`] controls whether the
//! decision endpoint is a pure accept/reject channel or reveals numeric
//! scores (which hill-climbing attacks exploit).

mod ledger;
mod lsh;
pub mod system;

pub use ledger::{AuditEntry, AuditLedger, AuditVerdict};
pub use lsh::{LshIndex, LshParams};
pub use system::{AuthOutcome, AuthSystem, FeatureKind, SystemError};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::PufResponse;
use crate::pufmetrics;
use crate::surface::NormMap;

pub(crate) fn hex_bytes<S: serde::Serializer>(
    bytes: &[u8; 32],
    s: S,
) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

/// Container magic for the persisted store.
pub const STORE_MAGIC: &[u8; 4] = b"PTDB";
/// Container format version.
pub const STORE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("product id {0:?} already registered")]
    DuplicateId(String),
    #[error("feature dimension mismatch: store holds {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires {expected} store mode")]
    WrongMode { expected: &'static str },
    #[error("requester {requester:?} exhausted its query budget")]
    LockedOut { requester: String },
    #[error("unknown product id {0:?}")]
    UnknownId(String),
    #[error("store holds no raw features")]
    NothingToLeak,
    #[error("product id required in this store mode")]
    MissingProductId,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("score computation failed: {0}")]
    Score(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store container: {0}")]
    Corrupt(String),
}

/// An authentication feature as stored or queried: a binary response, a raw
/// norm map, or a plain real vector (the shape leaked templates and forged
/// queries take).
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Response(PufResponse),
    NormMap(NormMap),
    Vector(Vec<f64>),
}

impl Feature {
    /// Dimension of the real-vector view.
    pub fn dim(&self) -> usize {
        match self {
            Feature::Response(r) => r.len(),
            Feature::NormMap(nm) => nm.normals().len() * 3,
            Feature::Vector(v) => v.len(),
        }
    }

    /// The feature as a flat real vector: bits become 0/1, normals are
    /// flattened component-wise.
    pub fn as_reals(&self) -> Vec<f64> {
        match self {
            Feature::Response(r) => r.bits_as_f64(),
            Feature::NormMap(nm) => nm.normals().iter().flatten().copied().collect(),
            Feature::Vector(v) => v.clone(),
        }
    }

    /// Canonical serialization used for digests.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Feature::Response(r) => r.canonical_bytes(),
            Feature::NormMap(nm) => nm.to_bytes(),
            Feature::Vector(v) => {
                let mut out = Vec::with_capacity(8 + v.len() * 8);
                out.extend_from_slice(b"VECF");
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out
            }
        }
    }

    pub fn as_response(&self) -> Option<&PufResponse> {
        match self {
            Feature::Response(r) => Some(r),
            _ => None,
        }
    }
}

/// What a template record actually holds.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplatePayload {
    /// Raw feature (plain and lsh modes).
    Raw(Feature),
    /// Salted one-way digest (hashed mode); the raw feature is gone.
    SaltedDigest { salt: [u8; 16], digest: [u8; 32] },
}

/// One enrolled reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord {
    pub record_id: u64,
    /// Absent in ID-less (lsh) enrollments.
    pub product_id: Option<String>,
    pub payload: TemplatePayload,
    /// Logical timestamp: the audit sequence number of the registration.
    pub registered_at: u64,
}

/// Store operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    Plain,
    Hashed,
    Lsh,
}

/// Similarity metric of the decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMetric {
    /// Euclidean distance; accept iff `score <= threshold`.
    L2,
    /// Fractional Hamming distance; accept iff `score <= threshold`.
    Hamming,
    /// Pearson correlation; accept iff `score >= threshold`.
    Pearson,
}

/// The decision rule: metric, acceptance threshold, score leakage, and the
/// per-requester query budget (lockout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub metric: DecisionMetric,
    pub threshold: f64,
    /// When false the endpoint is a pure binary channel: no score, no
    /// matched id.
    pub leak_scores: bool,
    /// Maximum decide calls per requester for the lifetime of the store
    /// (one scenario run); `None` disables lockout.
    pub lockout_budget: Option<u64>,
}

impl DecisionPolicy {
    pub fn l2(threshold: f64) -> Self {
        Self { metric: DecisionMetric::L2, threshold, leak_scores: false, lockout_budget: None }
    }

    pub fn hamming(threshold: f64) -> Self {
        Self {
            metric: DecisionMetric::Hamming,
            threshold,
            leak_scores: false,
            lockout_budget: None,
        }
    }

    pub fn pearson(threshold: f64) -> Self {
        Self {
            metric: DecisionMetric::Pearson,
            threshold,
            leak_scores: false,
            lockout_budget: None,
        }
    }

    pub fn with_leaky_scores(mut self) -> Self {
        self.leak_scores = true;
        self
    }

    pub fn with_lockout(mut self, budget: u64) -> Self {
        self.lockout_budget = Some(budget);
        self
    }
}

/// Outcome of one decision. With `leak_scores = false` only `accepted` and
/// the audit sequence number are populated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionResult {
    pub accepted: bool,
    pub score: Option<f64>,
    /// Advisory: the matched record's product id (ID-less search binds
    /// decisions to records, not identities).
    pub matched_id: Option<String>,
    pub audit_seq: u64,
}

/// A ranked similarity-search hit.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub record_id: u64,
    pub product_id: Option<String>,
    pub fractional_hd: f64,
}

/// Salted one-way digest of a feature: SHA-256 over `salt || canonical
/// serialization`. Deterministic in both arguments.
pub fn hash_template(feature: &Feature, salt: &[u8; 16]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(feature.canonical_bytes());
    h.finalize().into()
}

/// Unsalted digest used for on-chain references and audit payloads.
pub fn feature_digest(feature: &Feature) -> [u8; 32] {
    Sha256::digest(feature.canonical_bytes()).into()
}

/// Majority vote over consecutive bit triples; an optional stabilizer that
/// lets hashed-mode exact matching survive isolated bit flips. The output
/// keeps `L / 3` bits.
pub fn stabilize_majority(response: &PufResponse) -> PufResponse {
    let triples = response.len() / 3;
    let mut bits = Vec::with_capacity(triples);
    for j in 0..triples {
        let ones = (0..3).filter(|k| response.get(3 * j + k)).count();
        bits.push(ones >= 2);
    }
    PufResponse::from_bits(&bits)
}

/// The reference database D.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    mode: StoreMode,
    records: BTreeMap<u64, TemplateRecord>,
    by_product: BTreeMap<String, u64>,
    next_id: u64,
    feature_dim: Option<usize>,
    lsh_params: LshParams,
    lsh: Option<LshIndex>,
    audit: AuditLedger,
    lockout: BTreeMap<String, u64>,
    /// Whether hashed-mode features pass the majority-vote stabilizer
    /// before hashing.
    stabilize: bool,
    seed: u64,
    salt_counter: u64,
}

impl TemplateStore {
    pub fn new(mode: StoreMode, seed: u64) -> Self {
        Self {
            mode,
            records: BTreeMap::new(),
            by_product: BTreeMap::new(),
            next_id: 0,
            feature_dim: None,
            lsh_params: LshParams::default(),
            lsh: None,
            audit: AuditLedger::new(),
            lockout: BTreeMap::new(),
            stabilize: false,
            seed,
            salt_counter: 0,
        }
    }

    pub fn plain(seed: u64) -> Self {
        Self::new(StoreMode::Plain, seed)
    }

    pub fn hashed(seed: u64) -> Self {
        Self::new(StoreMode::Hashed, seed)
    }

    pub fn lsh(seed: u64) -> Self {
        Self::new(StoreMode::Lsh, seed)
    }

    pub fn with_lsh_params(mut self, params: LshParams) -> Self {
        self.lsh_params = params;
        self
    }

    /// Enables the majority-vote stabilizer for hashed-mode matching.
    pub fn with_stabilizer(mut self) -> Self {
        self.stabilize = true;
        self
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn audit(&self) -> &AuditLedger {
        &self.audit
    }

    /// Tamper hook for attack experiments.
    pub fn audit_mut(&mut self) -> &mut AuditLedger {
        &mut self.audit
    }

    pub fn records(&self) -> impl Iterator<Item = &TemplateRecord> {
        self.records.values()
    }

    pub fn record(&self, record_id: u64) -> Option<&TemplateRecord> {
        self.records.get(&record_id)
    }

    pub fn lookup_by_id(&self, product_id: &str) -> Option<&TemplateRecord> {
        self.by_product.get(product_id).and_then(|id| self.records.get(id))
    }

    fn fresh_salt(&mut self) -> [u8; 16] {
        let mut h = Sha256::new();
        h.update(b"papertrust-salt");
        h.update(self.seed.to_le_bytes());
        h.update(self.salt_counter.to_le_bytes());
        self.salt_counter += 1;
        let digest = h.finalize();
        let mut salt = [0u8; 16];
        salt.copy_from_slice(&digest[..16]);
        salt
    }

    fn stabilized(&self, feature: &Feature) -> Feature {
        match (self.stabilize, feature) {
            (true, Feature::Response(r)) => Feature::Response(stabilize_majority(r)),
            _ => feature.clone(),
        }
    }

    /// Enrolls one feature under `actor`'s identity. Plain and lsh modes
    /// keep the raw feature; hashed mode keeps a fresh-salted digest only.
    pub fn register(
        &mut self,
        actor: &str,
        product_id: Option<&str>,
        feature: Feature,
    ) -> Result<u64, StoreError> {
        if product_id.is_none() && self.mode != StoreMode::Lsh {
            return Err(StoreError::MissingProductId);
        }
        if let Some(id) = product_id {
            if self.by_product.contains_key(id) {
                return Err(StoreError::DuplicateId(id.to_string()));
            }
        }
        match self.feature_dim {
            Some(expected) if expected != feature.dim() => {
                return Err(StoreError::DimensionMismatch { expected, got: feature.dim() })
            }
            _ => self.feature_dim = Some(feature.dim()),
        }
        if self.mode == StoreMode::Lsh && feature.as_response().is_none() {
            return Err(StoreError::Unsupported(
                "lsh mode indexes binary responses only".into(),
            ));
        }

        let payload = match self.mode {
            StoreMode::Plain | StoreMode::Lsh => TemplatePayload::Raw(feature.clone()),
            StoreMode::Hashed => {
                let salt = self.fresh_salt();
                let digest = hash_template(&self.stabilized(&feature), &salt);
                TemplatePayload::SaltedDigest { salt, digest }
            }
        };

        let record_id = self.next_id;
        self.next_id += 1;
        let payload_digest: [u8; 32] = Sha256::digest(encode_payload(&payload)).into();
        let seq = self.audit.append("register", actor, payload_digest);

        if self.mode == StoreMode::Lsh {
            let response = feature.as_response().expect("checked above");
            let index = self.lsh.get_or_insert_with(|| {
                LshIndex::new(self.lsh_params, response.len(), self.seed)
            });
            index.insert(record_id, response);
        }

        self.records.insert(
            record_id,
            TemplateRecord {
                record_id,
                product_id: product_id.map(str::to_string),
                payload,
                registered_at: seq,
            },
        );
        if let Some(id) = product_id {
            self.by_product.insert(id.to_string(), record_id);
        }
        Ok(record_id)
    }

    /// ID-less similarity search: LSH candidates ranked by exact fractional
    /// Hamming distance to the probe.
    pub fn search_similar(
        &self,
        probe: &PufResponse,
        max_candidates: usize,
    ) -> Result<Vec<SearchHit>, StoreError> {
        if self.mode != StoreMode::Lsh {
            return Err(StoreError::WrongMode { expected: "lsh" });
        }
        let Some(index) = &self.lsh else {
            return Ok(Vec::new());
        };
        let mut hits = Vec::new();
        for record_id in index.candidates(probe) {
            let record = &self.records[&record_id];
            let TemplatePayload::Raw(Feature::Response(stored)) = &record.payload else {
                continue;
            };
            let fhd = stored.fractional_hd(probe).map_err(|e| StoreError::Score(e.to_string()))?;
            hits.push(SearchHit {
                record_id,
                product_id: record.product_id.clone(),
                fractional_hd: fhd,
            });
        }
        hits.sort_by(|a, b| {
            a.fractional_hd
                .partial_cmp(&b.fractional_hd)
                .expect("distances are finite")
                .then(a.record_id.cmp(&b.record_id))
        });
        hits.truncate(max_candidates);
        Ok(hits)
    }

    /// The decision rule: scores the query against the claimed template (or
    /// the best ID-less candidate), debits the requester's query budget,
    /// and appends an audit entry. Scores and matched ids are only revealed
    /// when the policy leaks them.
    pub fn decide(
        &mut self,
        policy: &DecisionPolicy,
        requester: &str,
        query: &Feature,
        claimed_id: Option<&str>,
    ) -> Result<DecisionResult, StoreError> {
        if let Some(budget) = policy.lockout_budget {
            let used = self.lockout.get(requester).copied().unwrap_or(0);
            if used >= budget {
                return Err(StoreError::LockedOut { requester: requester.to_string() });
            }
        }
        *self.lockout.entry(requester.to_string()).or_insert(0) += 1;

        let target = match claimed_id {
            Some(id) => Some(
                self.by_product
                    .get(id)
                    .copied()
                    .ok_or_else(|| StoreError::UnknownId(id.to_string()))?,
            ),
            None => {
                if self.mode != StoreMode::Lsh {
                    return Err(StoreError::MissingProductId);
                }
                let probe = query.as_response().ok_or_else(|| {
                    StoreError::Unsupported("id-less search needs a binary response".into())
                })?;
                self.search_similar(probe, 1)?.first().map(|hit| hit.record_id)
            }
        };

        let (accepted, score, matched) = match target {
            None => (false, None, None),
            Some(record_id) => {
                let record = &self.records[&record_id];
                let (accepted, score) = match &record.payload {
                    TemplatePayload::SaltedDigest { salt, digest } => {
                        let recomputed = hash_template(&self.stabilized(query), salt);
                        let equal = recomputed == *digest;
                        (equal, if equal { 1.0 } else { 0.0 })
                    }
                    TemplatePayload::Raw(stored) => {
                        let score = score_features(policy.metric, query, stored)?;
                        let accepted = match policy.metric {
                            DecisionMetric::L2 | DecisionMetric::Hamming => {
                                score <= policy.threshold
                            }
                            DecisionMetric::Pearson => score >= policy.threshold,
                        };
                        (accepted, score)
                    }
                };
                (accepted, Some(score), record.product_id.clone())
            }
        };

        let mut h = Sha256::new();
        h.update(query.canonical_bytes());
        h.update([accepted as u8]);
        let audit_seq = self.audit.append("decide", requester, h.finalize().into());

        Ok(DecisionResult {
            accepted,
            score: if policy.leak_scores { score } else { None },
            matched_id: if policy.leak_scores { matched } else { None },
            audit_seq,
        })
    }

    /// Recomputes the audit hash chain and checks the entry count against
    /// the append counter.
    pub fn verify_audit(&self) -> AuditVerdict {
        self.audit.verify()
    }

    /// Queries already spent by a requester.
    pub fn queries_used(&self, requester: &str) -> u64 {
        self.lockout.get(requester).copied().unwrap_or(0)
    }

    /// Resets all lockout budgets; a new epoch.
    pub fn reset_lockout(&mut self) {
        self.lockout.clear();
    }
}

fn score_features(
    metric: DecisionMetric,
    query: &Feature,
    stored: &Feature,
) -> Result<f64, StoreError> {
    match metric {
        DecisionMetric::Hamming => {
            let (Some(a), Some(b)) = (query.as_response(), stored.as_response()) else {
                return Err(StoreError::Unsupported(
                    "hamming metric needs binary responses".into(),
                ));
            };
            a.fractional_hd(b).map_err(|e| StoreError::Score(e.to_string()))
        }
        DecisionMetric::L2 => {
            let a = query.as_reals();
            let b = stored.as_reals();
            if a.len() != b.len() {
                return Err(StoreError::DimensionMismatch { expected: b.len(), got: a.len() });
            }
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        }
        DecisionMetric::Pearson => {
            let a = query.as_reals();
            let b = stored.as_reals();
            pufmetrics::pearson(&a, &b).map_err(|e| StoreError::Score(e.to_string()))
        }
    }
}

// --- persistence -----------------------------------------------------------

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R) -> Result<String, StoreError> {
    String::from_utf8(read_vec(r)?).map_err(|_| StoreError::Corrupt("non-utf8 string".into()))
}

fn read_fixed<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn encode_payload(payload: &TemplatePayload) -> Vec<u8> {
    let mut out = Vec::new();
    match payload {
        TemplatePayload::Raw(feature) => {
            out.push(0u8);
            let bytes = feature.canonical_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        TemplatePayload::SaltedDigest { salt, digest } => {
            out.push(1u8);
            out.extend_from_slice(salt);
            out.extend_from_slice(digest);
        }
    }
    out
}

fn decode_payload(bytes: &[u8]) -> Result<TemplatePayload, StoreError> {
    let mut r = bytes;
    let tag = read_fixed::<1, _>(&mut r)?[0];
    match tag {
        0 => {
            let raw = read_vec(&mut r)?;
            decode_feature(&raw).map(TemplatePayload::Raw)
        }
        1 => {
            let salt = read_fixed::<16, _>(&mut r)?;
            let digest = read_fixed::<32, _>(&mut r)?;
            Ok(TemplatePayload::SaltedDigest { salt, digest })
        }
        other => Err(StoreError::Corrupt(format!("unknown payload tag {other}"))),
    }
}

fn decode_feature(bytes: &[u8]) -> Result<Feature, StoreError> {
    match bytes.get(..4) {
        Some(b"PUFR") => {
            let len = u32::from_le_bytes(
                bytes[4..8].try_into().map_err(|_| StoreError::Corrupt("short PUFR".into()))?,
            ) as usize;
            let payload = &bytes[8..];
            let hex_form = format!("L={len}:{}", hex::encode(payload));
            PufResponse::from_hex_string(&hex_form)
                .map(Feature::Response)
                .map_err(|e| StoreError::Corrupt(e.to_string()))
        }
        Some(b"NMAP") => NormMap::from_bytes(bytes)
            .map(Feature::NormMap)
            .map_err(|e| StoreError::Corrupt(e.to_string())),
        Some(b"VECF") => {
            let len = u32::from_le_bytes(
                bytes[4..8].try_into().map_err(|_| StoreError::Corrupt("short VECF".into()))?,
            ) as usize;
            let mut values = Vec::with_capacity(len);
            for chunk in bytes[8..].chunks_exact(8).take(len) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            if values.len() != len {
                return Err(StoreError::Corrupt("short vector payload".into()));
            }
            Ok(Feature::Vector(values))
        }
        _ => Err(StoreError::Corrupt("unknown feature magic".into())),
    }
}

impl TemplateStore {
    /// Persists the store to a single binary container: header, record
    /// table, audit log. All integers little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&[
            match self.mode {
                StoreMode::Plain => 0u8,
                StoreMode::Hashed => 1,
                StoreMode::Lsh => 2,
            },
            self.stabilize as u8,
        ])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.next_id.to_le_bytes())?;
        w.write_all(&self.salt_counter.to_le_bytes())?;
        w.write_all(&self.lsh_params.bands.to_le_bytes())?;
        w.write_all(&self.lsh_params.bits_per_band.to_le_bytes())?;

        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for record in self.records.values() {
            w.write_all(&record.record_id.to_le_bytes())?;
            match &record.product_id {
                Some(id) => {
                    w.write_all(&[1u8])?;
                    write_bytes(&mut w, id.as_bytes())?;
                }
                None => w.write_all(&[0u8])?,
            }
            w.write_all(&record.registered_at.to_le_bytes())?;
            write_bytes(&mut w, &encode_payload(&record.payload))?;
        }

        w.write_all(&(self.audit.entries().len() as u64).to_le_bytes())?;
        w.write_all(&self.audit.appended_total().to_le_bytes())?;
        for e in self.audit.entries() {
            w.write_all(&e.seq.to_le_bytes())?;
            write_bytes(&mut w, e.action.as_bytes())?;
            write_bytes(&mut w, e.actor.as_bytes())?;
            w.write_all(&e.payload_digest)?;
            w.write_all(&e.prev_digest)?;
            w.write_all(&e.entry_digest)?;
        }
        Ok(())
    }

    /// Reads a container written by [`TemplateStore::write_to`] and
    /// rebuilds the LSH index. Lockout counters are epoch-scoped and start
    /// fresh.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, StoreError> {
        let magic = read_fixed::<4, _>(&mut r)?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::Corrupt("bad magic".into()));
        }
        let version = read_u16(&mut r)?;
        if version != STORE_VERSION {
            return Err(StoreError::Corrupt(format!("unsupported version {version}")));
        }
        let flags = read_fixed::<2, _>(&mut r)?;
        let mode = match flags[0] {
            0 => StoreMode::Plain,
            1 => StoreMode::Hashed,
            2 => StoreMode::Lsh,
            other => return Err(StoreError::Corrupt(format!("unknown mode {other}"))),
        };
        let stabilize = flags[1] != 0;
        let seed = read_u64(&mut r)?;
        let next_id = read_u64(&mut r)?;
        let salt_counter = read_u64(&mut r)?;
        let lsh_params =
            LshParams { bands: read_u32(&mut r)?, bits_per_band: read_u32(&mut r)? };

        let mut store = TemplateStore::new(mode, seed).with_lsh_params(lsh_params);
        store.stabilize = stabilize;
        store.next_id = next_id;
        store.salt_counter = salt_counter;

        let record_count = read_u64(&mut r)?;
        for _ in 0..record_count {
            let record_id = read_u64(&mut r)?;
            let has_product = read_fixed::<1, _>(&mut r)?[0] != 0;
            let product_id = if has_product { Some(read_string(&mut r)?) } else { None };
            let registered_at = read_u64(&mut r)?;
            let payload = decode_payload(&read_vec(&mut r)?)?;
            if let TemplatePayload::Raw(f) = &payload {
                store.feature_dim.get_or_insert(f.dim());
                if mode == StoreMode::Lsh {
                    if let Feature::Response(resp) = f {
                        store
                            .lsh
                            .get_or_insert_with(|| LshIndex::new(lsh_params, resp.len(), seed))
                            .insert(record_id, resp);
                    }
                }
            }
            if let Some(id) = &product_id {
                store.by_product.insert(id.clone(), record_id);
            }
            store
                .records
                .insert(record_id, TemplateRecord { record_id, product_id, payload, registered_at });
        }

        let present = read_u64(&mut r)?;
        let appended_total = read_u64(&mut r)?;
        let mut entries = Vec::with_capacity(present as usize);
        for _ in 0..present {
            let seq = read_u64(&mut r)?;
            let action = read_string(&mut r)?;
            let actor = read_string(&mut r)?;
            let payload_digest = read_fixed::<32, _>(&mut r)?;
            let prev_digest = read_fixed::<32, _>(&mut r)?;
            let entry_digest = read_fixed::<32, _>(&mut r)?;
            entries.push(AuditEntry { seq, action, actor, payload_digest, prev_digest, entry_digest });
        }
        store.audit = AuditLedger::restore(entries, appended_total);
        Ok(store)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), StoreError> {
        let mut f = File::create(path)?;
        self.write_to(&mut f)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, StoreError> {
        let f = File::open(path)?;
        Self::read_from(io::BufReader::new(f))
    }

    /// JSON export for inspection; digests hex-encoded, raw norm maps
    /// summarized by digest.
    pub fn export_json(&self) -> serde_json::Value {
        let records: Vec<serde_json::Value> = self
            .records
            .values()
            .map(|record| {
                let payload = match &record.payload {
                    TemplatePayload::Raw(Feature::Response(resp)) => serde_json::json!({
                        "type": "response",
                        "bits": resp.to_string(),
                    }),
                    TemplatePayload::Raw(Feature::NormMap(nm)) => serde_json::json!({
                        "type": "norm_map",
                        "width": nm.width(),
                        "height": nm.height(),
                        "sha256": hex::encode::<[u8; 32]>(
                            Sha256::digest(nm.to_bytes()).into()
                        ),
                    }),
                    TemplatePayload::Raw(Feature::Vector(v)) => serde_json::json!({
                        "type": "vector",
                        "dim": v.len(),
                    }),
                    TemplatePayload::SaltedDigest { salt, digest } => serde_json::json!({
                        "type": "salted_digest",
                        "salt": hex::encode(salt),
                        "digest": hex::encode(digest),
                    }),
                };
                serde_json::json!({
                    "record_id": record.record_id,
                    "product_id": record.product_id,
                    "registered_at": record.registered_at,
                    "payload": payload,
                })
            })
            .collect();
        serde_json::json!({
            "mode": self.mode,
            "records": records,
            "audit": self.audit.entries(),
            "audit_appended_total": self.audit.appended_total(),
        })
    }
}
