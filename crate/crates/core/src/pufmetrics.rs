//! PUF quality metrics, similarity scores, and authentication error rates.
//!
//! An [`EvaluationBatch`] holds the responses of `K` surfaces evaluated `T`
//! times each, plus one ideal (noiseless-acquisition) response per surface.
//! Over a batch this module computes:
//!
//! - robustness: `1 - mean_t HD(ideal_k, r_kt) / L`, ideally 1;
//! - uniqueness: mean pairwise fractional Hamming distance at a fixed trial,
//!   ideally 0.5;
//! - uniformity: fraction of 1-bits in one response, ideally 0.5;
//!
//! together with the Pearson correlation score and an empirical equal error
//! rate computed by a threshold sweep over pooled genuine/impostor scores.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::features::PufResponse;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("response lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("population of {0} surfaces is too small")]
    InsufficientPopulation(usize),
    #[error("zero variance input")]
    ZeroVariance,
    #[error("empty score list")]
    EmptyScores,
    #[error("batch is malformed: {0}")]
    MalformedBatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// K x T grid of responses plus the K ideal responses they are judged
/// against.
#[derive(Debug, Clone)]
pub struct EvaluationBatch {
    responses: Vec<Vec<PufResponse>>,
    ideal: Vec<PufResponse>,
    bits: usize,
}

impl EvaluationBatch {
    pub fn new(
        responses: Vec<Vec<PufResponse>>,
        ideal: Vec<PufResponse>,
    ) -> Result<Self, MetricError> {
        if responses.is_empty() || responses[0].is_empty() {
            return Err(MetricError::MalformedBatch("empty response grid".into()));
        }
        if ideal.len() != responses.len() {
            return Err(MetricError::MalformedBatch(format!(
                "{} ideal responses for {} surfaces",
                ideal.len(),
                responses.len()
            )));
        }
        let t = responses[0].len();
        let bits = ideal[0].len();
        for (k, row) in responses.iter().enumerate() {
            if row.len() != t {
                return Err(MetricError::MalformedBatch(format!(
                    "surface {k} has {} trials, expected {t}",
                    row.len()
                )));
            }
            if row.iter().any(|r| r.len() != bits) || ideal[k].len() != bits {
                return Err(MetricError::MalformedBatch("response lengths differ".into()));
            }
        }
        Ok(Self { responses, ideal, bits })
    }

    /// Number of distinct surfaces K.
    pub fn surfaces(&self) -> usize {
        self.responses.len()
    }

    /// Trials per surface T.
    pub fn trials(&self) -> usize {
        self.responses[0].len()
    }

    /// Response length L in bits.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn response(&self, k: usize, t: usize) -> &PufResponse {
        &self.responses[k][t]
    }

    pub fn ideal(&self, k: usize) -> &PufResponse {
        &self.ideal[k]
    }
}

/// Hamming distance in bits between two equal-length responses.
pub fn hamming_distance(a: &PufResponse, b: &PufResponse) -> Result<usize, MetricError> {
    a.hamming(b).map_err(|_| MetricError::LengthMismatch { a: a.len(), b: b.len() })
}

/// Stability of surface `k` across its trials:
/// `1 - (1/T) * sum_t HD(ideal_k, r_kt) / L`. Equals 1 exactly when every
/// trial reproduces the ideal response.
pub fn robustness(batch: &EvaluationBatch, k: usize) -> Result<f64, MetricError> {
    if k >= batch.surfaces() {
        return Err(MetricError::IndexOutOfRange(format!(
            "surface {k} of {}",
            batch.surfaces()
        )));
    }
    let t = batch.trials() as f64;
    let mut acc = 0.0;
    for trial in 0..batch.trials() {
        acc += hamming_distance(batch.ideal(k), batch.response(k, trial))? as f64
            / batch.bits() as f64;
    }
    Ok(1.0 - acc / t)
}

/// Discriminative power at trial `t`: mean fractional Hamming distance over
/// all surface pairs; 0.5 is ideal.
pub fn uniqueness(batch: &EvaluationBatch, t: usize) -> Result<f64, MetricError> {
    if batch.surfaces() < 2 {
        return Err(MetricError::InsufficientPopulation(batch.surfaces()));
    }
    if t >= batch.trials() {
        return Err(MetricError::IndexOutOfRange(format!("trial {t} of {}", batch.trials())));
    }
    let k = batch.surfaces();
    let mut acc = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            acc += hamming_distance(batch.response(i, t), batch.response(j, t))? as f64
                / batch.bits() as f64;
        }
    }
    Ok(acc / (k * (k - 1) / 2) as f64)
}

/// Uniqueness averaged over all trials; an extension beyond the single-trial
/// definition, reported alongside it.
pub fn uniqueness_trial_average(batch: &EvaluationBatch) -> Result<f64, MetricError> {
    let mut acc = 0.0;
    for t in 0..batch.trials() {
        acc += uniqueness(batch, t)?;
    }
    Ok(acc / batch.trials() as f64)
}

/// Balance of 1-bits in response `(k, t)`; 0.5 means equiprobable bits.
pub fn uniformity(batch: &EvaluationBatch, k: usize, t: usize) -> Result<f64, MetricError> {
    if k >= batch.surfaces() || t >= batch.trials() {
        return Err(MetricError::IndexOutOfRange(format!("({k}, {t})")));
    }
    let r = batch.response(k, t);
    Ok(r.count_ones() as f64 / r.len() as f64)
}

/// Sample Pearson correlation coefficient, single-pass co-moment form.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < 2 {
        return Err(MetricError::InsufficientPopulation(a.len()));
    }
    let mut mean_a = 0.0;
    let mut mean_b = 0.0;
    let mut m2a = 0.0;
    let mut m2b = 0.0;
    let mut cab = 0.0;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mean_a;
        let dy = y - mean_b;
        mean_a += dx / n;
        mean_b += dy / n;
        m2a += dx * (x - mean_a);
        m2b += dy * (y - mean_b);
        cab += dx * (y - mean_b);
    }
    if m2a == 0.0 || m2b == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(cab / (m2a.sqrt() * m2b.sqrt()))
}

/// Whether small scores mean genuine (distances) or large scores do
/// (similarities).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePolarity {
    Distance,
    Similarity,
}

/// Score distributions with the equal error rate of the implied verifier.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub genuine_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
    pub polarity: ScorePolarity,
    /// Rate at which the false-accept and false-reject curves cross.
    pub eer: f64,
    pub threshold_at_eer: f64,
}

impl ScoreReport {
    /// CSV rows `score,label` with label `genuine` or `impostor`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MetricError> {
        writeln!(w, "score,label")?;
        for s in &self.genuine_scores {
            writeln!(w, "{s},genuine")?;
        }
        for s in &self.impostor_scores {
            writeln!(w, "{s},impostor")?;
        }
        Ok(())
    }

    /// Compact JSON summary of the operating point.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eer": self.eer,
            "threshold": self.threshold_at_eer,
            "n_genuine": self.genuine_scores.len(),
            "n_impostor": self.impostor_scores.len(),
        })
    }
}

/// Empirical equal error rate by sweeping thresholds over the pooled score
/// set. The crossing of the FAR and FRR step curves is interpolated
/// linearly in the rate domain, so the result depends only on score ranks
/// and survives any strictly monotone rescoring.
pub fn eer(
    genuine: &[f64],
    impostor: &[f64],
    polarity: ScorePolarity,
) -> Result<ScoreReport, MetricError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(MetricError::EmptyScores);
    }
    // Work in distance orientation: accept iff score <= threshold.
    let flip = |v: f64| if polarity == ScorePolarity::Similarity { -v } else { v };
    let mut gen: Vec<f64> = genuine.iter().map(|&v| flip(v)).collect();
    let mut imp: Vec<f64> = impostor.iter().map(|&v| flip(v)).collect();
    gen.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    imp.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));

    let mut thresholds: Vec<f64> = gen.iter().chain(imp.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    thresholds.dedup();

    let far_at = |th: f64| imp.partition_point(|&v| v <= th) as f64 / imp.len() as f64;
    let frr_at = |th: f64| {
        (gen.len() - gen.partition_point(|&v| v <= th)) as f64 / gen.len() as f64
    };

    // Virtual starting point below every score: FAR 0, FRR 1.
    let mut prev = (thresholds[0] - 1.0, 0.0f64, 1.0f64);
    for &th in &thresholds {
        let far = far_at(th);
        let frr = frr_at(th);
        let diff = far - frr;
        if diff >= 0.0 {
            let (pth, pfar, pfrr) = prev;
            let pdiff = pfar - pfrr;
            let (rate, th_star) = if diff == 0.0 {
                (far, th)
            } else {
                let t = -pdiff / (diff - pdiff);
                (pfar + t * (far - pfar), pth + t * (th - pth))
            };
            return Ok(ScoreReport {
                genuine_scores: genuine.to_vec(),
                impostor_scores: impostor.to_vec(),
                polarity,
                eer: rate,
                threshold_at_eer: flip(th_star),
            });
        }
        prev = (th, far, frr);
    }
    // FAR reaches 1 and FRR reaches 0 at the largest threshold, so the
    // sweep always crosses.
    unreachable!("FAR-FRR sign change is guaranteed at the final threshold")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PufResponse;
    use proptest::prelude::*;

    fn resp(bits: &[bool]) -> PufResponse {
        PufResponse::from_bits(bits)
    }

    fn batch_of(rows: Vec<Vec<PufResponse>>, ideal: Vec<PufResponse>) -> EvaluationBatch {
        EvaluationBatch::new(rows, ideal).unwrap()
    }

    #[test]
    fn hamming_distance_cases() {
        let a = resp(&[true, false, true, false]);
        let b = resp(&[true, false, false, true]);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), 4);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 2);
        assert_eq!(hamming_distance(&b, &a).unwrap(), 2);
    }

    #[test]
    fn robustness_of_perfect_trials_is_one() {
        let r = resp(&[true, false, true, true]);
        let batch = batch_of(vec![vec![r.clone(), r.clone()]], vec![r.clone()]);
        assert_eq!(robustness(&batch, 0).unwrap(), 1.0);
    }

    #[test]
    fn robustness_with_one_complemented_trial_is_half() {
        let r = resp(&[true, false, true, true]);
        let batch = batch_of(vec![vec![r.clone(), r.complement()]], vec![r.clone()]);
        assert_eq!(robustness(&batch, 0).unwrap(), 0.5);
    }

    #[test]
    fn robustness_index_checked() {
        let r = resp(&[true; 4]);
        let batch = batch_of(vec![vec![r.clone()]], vec![r.clone()]);
        assert!(matches!(robustness(&batch, 1), Err(MetricError::IndexOutOfRange(_))));
    }

    #[test]
    fn uniqueness_identical_and_complementary_pairs() {
        let r = resp(&[true, false, true, false]);
        let same = batch_of(
            vec![vec![r.clone()], vec![r.clone()]],
            vec![r.clone(), r.clone()],
        );
        assert_eq!(uniqueness(&same, 0).unwrap(), 0.0);
        let opposed = batch_of(
            vec![vec![r.clone()], vec![r.complement()]],
            vec![r.clone(), r.complement()],
        );
        assert_eq!(uniqueness(&opposed, 0).unwrap(), 1.0);
    }

    #[test]
    fn uniqueness_needs_two_surfaces() {
        let r = resp(&[true; 8]);
        let batch = batch_of(vec![vec![r.clone()]], vec![r.clone()]);
        assert!(matches!(uniqueness(&batch, 0), Err(MetricError::InsufficientPopulation(1))));
    }

    #[test]
    fn uniformity_counts_ones() {
        let zeros = resp(&[false; 8]);
        let alternating = resp(&[true, false, true, false, true, false, true, false]);
        let batch = batch_of(
            vec![vec![zeros.clone()], vec![alternating.clone()]],
            vec![zeros.clone(), alternating.clone()],
        );
        assert_eq!(uniformity(&batch, 0, 0).unwrap(), 0.0);
        assert_eq!(uniformity(&batch, 1, 0).unwrap(), 0.5);
    }

    #[test]
    fn pearson_perfect_and_inverted() {
        let x = [1.0, 2.0, 5.0, -3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    /// Independent two-pass covariance oracle.
    #[test]
    fn pearson_matches_two_pass_oracle() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.1];
        let ma = a.iter().sum::<f64>() / 3.0;
        let mb = b.iter().sum::<f64>() / 3.0;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        let oracle = cov / (va.sqrt() * vb.sqrt());
        assert!((pearson(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn pearson_zero_variance_rejected() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::ZeroVariance)
        ));
    }

    #[test]
    fn eer_perfectly_separated_is_zero() {
        let report = eer(&[0.1, 0.15, 0.2], &[0.8, 0.9, 1.0], ScorePolarity::Distance).unwrap();
        assert_eq!(report.eer, 0.0);
        assert!(report.threshold_at_eer >= 0.2 && report.threshold_at_eer < 0.8);
    }

    #[test]
    fn eer_identical_distributions_is_half() {
        let scores = [1.0, 2.0, 3.0, 4.0];
        let report = eer(&scores, &scores, ScorePolarity::Distance).unwrap();
        assert!((report.eer - 0.5).abs() < 1e-12, "eer {}", report.eer);
    }

    #[test]
    fn eer_similarity_polarity() {
        let report = eer(&[0.9, 0.95], &[0.1, 0.2], ScorePolarity::Similarity).unwrap();
        assert_eq!(report.eer, 0.0);
        assert!(report.threshold_at_eer > 0.2 && report.threshold_at_eer <= 0.9);
    }

    #[test]
    fn eer_rejects_empty_scores() {
        assert!(matches!(
            eer(&[], &[1.0], ScorePolarity::Distance),
            Err(MetricError::EmptyScores)
        ));
    }

    #[test]
    fn eer_invariant_under_monotone_transforms() {
        let gen = [0.05, 0.1, 0.32, 0.4, 0.21];
        let imp = [0.3, 0.45, 0.5, 0.62, 0.7];
        let base = eer(&gen, &imp, ScorePolarity::Distance).unwrap().eer;
        for transform in [|v: f64| v.exp(), |v: f64| 3.0 * v + 10.0, |v: f64| v.powi(3)] {
            let g: Vec<f64> = gen.iter().map(|&v| transform(v)).collect();
            let i: Vec<f64> = imp.iter().map(|&v| transform(v)).collect();
            let t = eer(&g, &i, ScorePolarity::Distance).unwrap().eer;
            assert!((base - t).abs() < 1e-12, "transform changed EER: {base} vs {t}");
        }
    }

    #[test]
    fn score_report_emits_csv_and_json() {
        let report = eer(&[0.1], &[0.9], ScorePolarity::Distance).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("0.1,genuine"));
        assert!(text.contains("0.9,impostor"));
        let json = report.summary_json();
        assert_eq!(json["n_genuine"], 1);
        assert_eq!(json["eer"], 0.0);
    }

    proptest! {
        /// Hamming distance is a metric: identity, symmetry, triangle
        /// inequality.
        #[test]
        fn hamming_is_a_metric(
            a in proptest::collection::vec(any::<bool>(), 32),
            b in proptest::collection::vec(any::<bool>(), 32),
            c in proptest::collection::vec(any::<bool>(), 32),
        ) {
            let (ra, rb, rc) = (resp(&a), resp(&b), resp(&c));
            let dab = hamming_distance(&ra, &rb).unwrap();
            let dba = hamming_distance(&rb, &ra).unwrap();
            let dac = hamming_distance(&ra, &rc).unwrap();
            let dcb = hamming_distance(&rc, &rb).unwrap();
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(hamming_distance(&ra, &ra).unwrap(), 0);
            prop_assert!((dab == 0) == (a == b));
            prop_assert!(dab <= dac + dcb);
        }

        /// Pearson is invariant under positive affine transforms of either
        /// argument.
        #[test]
        fn pearson_affine_invariance(
            xs in proptest::collection::vec(-10.0f64..10.0, 8..32),
            scale in 0.1f64..10.0,
            offset in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * 0.5 + (i as f64).sin()).collect();
            prop_assume!(pearson(&xs, &ys).is_ok());
            let base = pearson(&xs, &ys).unwrap();
            let transformed: Vec<f64> = xs.iter().map(|v| v * scale + offset).collect();
            let t = pearson(&transformed, &ys).unwrap();
            prop_assert!((base - t).abs() < 1e-9, "{} vs {}", base, t);
        }
    }
}
