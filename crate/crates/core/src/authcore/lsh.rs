//! Bit-sampling locality-sensitive index over binary responses.
//!
//! Each of `bands` hash tables keys a record by `bits_per_band` sampled bit
//! positions. Two responses within fractional Hamming distance `p` collide
//! in one band with probability `(1 - p)^s`, so near-duplicates collide in
//! at least one band with high probability while unrelated codes scatter.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::PufResponse;
use crate::util::mix_seed;

/// Band count and sampled bits per band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub bands: u32,
    pub bits_per_band: u32,
}

impl Default for LshParams {
    /// 16 bands of 16 bits: at L = 2048 this keeps recall above 0.95 for
    /// probes within 10% bit flips.
    fn default() -> Self {
        Self { bands: 16, bits_per_band: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct LshIndex {
    params: LshParams,
    bits: usize,
    /// Sampled bit positions, `bands` rows of `bits_per_band` entries.
    positions: Vec<Vec<usize>>,
    buckets: BTreeMap<(u32, u64), Vec<u64>>,
}

impl LshIndex {
    /// Samples the band positions from the seed; the same (seed, params,
    /// bits) always yields the same index layout.
    pub fn new(params: LshParams, bits: usize, seed: u64) -> Self {
        assert!(params.bits_per_band as usize <= 64, "band keys are packed into u64");
        let mut positions = Vec::with_capacity(params.bands as usize);
        for band in 0..params.bands {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x15AB, band as u64));
            let idx = rand::seq::index::sample(
                &mut rng,
                bits,
                (params.bits_per_band as usize).min(bits),
            );
            let mut vec: Vec<usize> = idx.into_iter().collect();
            vec.sort_unstable();
            positions.push(vec);
        }
        Self { params, bits, positions, buckets: BTreeMap::new() }
    }

    pub fn params(&self) -> LshParams {
        self.params
    }

    fn band_key(&self, band: usize, response: &PufResponse) -> u64 {
        let mut key = 0u64;
        for (i, &pos) in self.positions[band].iter().enumerate() {
            if response.get(pos) {
                key |= 1u64 << i;
            }
        }
        key
    }

    pub fn insert(&mut self, record_id: u64, response: &PufResponse) {
        assert_eq!(response.len(), self.bits);
        for band in 0..self.positions.len() {
            let key = (band as u32, self.band_key(band, response));
            self.buckets.entry(key).or_default().push(record_id);
        }
    }

    /// Record ids colliding with the probe in at least one band, sorted and
    /// deduplicated.
    pub fn candidates(&self, probe: &PufResponse) -> Vec<u64> {
        let mut out = Vec::new();
        for band in 0..self.positions.len() {
            let key = (band as u32, self.band_key(band, probe));
            if let Some(ids) = self.buckets.get(&key) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn exact_copy_always_collides() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut index = LshIndex::new(LshParams::default(), 2048, 3);
        let r = PufResponse::random(2048, &mut rng);
        index.insert(42, &r);
        assert_eq!(index.candidates(&r), vec![42]);
    }

    #[test]
    fn layout_is_deterministic() {
        let a = LshIndex::new(LshParams::default(), 512, 9);
        let b = LshIndex::new(LshParams::default(), 512, 9);
        assert_eq!(a.positions, b.positions);
        let c = LshIndex::new(LshParams::default(), 512, 10);
        assert_ne!(a.positions, c.positions);
    }

    /// Oracle: exhaustive linear scan. Probes at up to 10% flips must be
    /// retrieved at well over 0.95 recall; fully random probes should
    /// rarely collide with anything.
    #[test]
    fn near_probes_collide_far_probes_do_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut index = LshIndex::new(LshParams::default(), 2048, 5);
        let stored: Vec<PufResponse> =
            (0..100).map(|_| PufResponse::random(2048, &mut rng)).collect();
        for (i, r) in stored.iter().enumerate() {
            index.insert(i as u64, r);
        }

        let mut hits = 0;
        let trials = 200;
        for t in 0..trials {
            let target = (t * 7) % 100;
            let mut probe = stored[target].clone();
            let flips = rng.random_range(0..=204);
            for _ in 0..flips {
                probe.flip(rng.random_range(0..2048));
            }
            if index.candidates(&probe).contains(&(target as u64)) {
                hits += 1;
            }
        }
        let recall = hits as f64 / trials as f64;
        assert!(recall >= 0.95, "recall {recall}");

        let mut stray = 0;
        for _ in 0..100 {
            let probe = PufResponse::random(2048, &mut rng);
            stray += index.candidates(&probe).len();
        }
        assert!(stray < 50, "random probes collided {stray} times");
    }
}
