//! Multi-row activation inside a 4-row segment and its per-bitline errors.
//!
//! An ACT to the second row of a segment, a PRE, and an ACT to the third row
//! with a qualifying (tRAS, tRP) pair activate rows 0, 1 and 2 together. Each
//! bitline settles to the majority of the three cells, complemented with a
//! segment-specific error probability, and the result lands in all three rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustc_hash::FxHashMap;

use crate::config::MajorityConfig;
use crate::dram::cells::{mix, splitmix, DOMAIN_MAJORITY, DOMAIN_SEGMENT};
use crate::dram::storage::RowStore;

pub const SEGMENT_ROWS: u32 = 4;

/// Per-segment error probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRates {
    pub and: f64,
    pub or: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorityEvent {
    pub bank: u32,
    pub segment: u32,
    pub epsilon: f64,
    pub errors: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct MajorityModel {
    cfg: MajorityConfig,
    seed: u64,
    slot_ns: f64,
    rates: FxHashMap<(u32, u32), SegmentRates>,
    ordinals: FxHashMap<(u32, u32), u64>,
}

impl MajorityModel {
    pub fn new(cfg: &MajorityConfig, seed: u64, slot_ns: f64) -> MajorityModel {
        MajorityModel { cfg: cfg.clone(), seed, slot_ns, rates: FxHashMap::default(), ordinals: FxHashMap::default() }
    }

    pub fn reset(&mut self) {
        self.ordinals.clear();
    }

    /// The error scale of the matching timing combination, if the observed
    /// delays trigger a multi-row activation.
    pub fn trigger(&self, tras_slots: u64, trp_slots: u64) -> Option<f64> {
        let tras = tras_slots as f64 * self.slot_ns;
        let trp = trp_slots as f64 * self.slot_ns;
        if tras > self.cfg.tras_threshold_ns + 1e-9 || trp > self.cfg.trp_threshold_ns + 1e-9 {
            return None;
        }
        self.cfg
            .valid_timing_set
            .iter()
            .find(|v| (v.tras_ns - tras).abs() < 1e-6 && (v.trp_ns - trp).abs() < 1e-6)
            .map(|v| v.error_scale)
    }

    pub fn rates(&mut self, bank: u32, segment: u32) -> SegmentRates {
        let (seed, e) = (self.seed, &self.cfg.segment_error);
        *self.rates.entry((bank, segment)).or_insert_with(|| {
            let (z, v) = segment_draws(seed, bank, segment);
            let or = (e.or_median * (e.or_sigma * z).exp()).min(0.5);
            SegmentRates { and: or * (1.0 - e.and_gap * v), or }
        })
    }

    /// Seed of the error lanes for the `ordinal`-th activation of a segment.
    pub fn lane_seed(&self, bank: u32, segment: u32, ordinal: u64, tras_slots: u64, trp_slots: u64) -> u64 {
        mix(&[self.seed, DOMAIN_MAJORITY, bank as u64, segment as u64, ordinal, tras_slots, trp_slots])
    }

    /// Performs the activation on rows `4s`, `4s+1`, `4s+2` of `bank`.
    pub fn activate(
        &mut self,
        store: &mut RowStore,
        bank: u32,
        segment: u32,
        tras_slots: u64,
        trp_slots: u64,
        scale: f64,
        now: u64,
    ) -> MajorityEvent {
        let base_row = segment * SEGMENT_ROWS;
        let r0 = store.snapshot(bank, base_row);
        let r1 = store.snapshot(bank, base_row + 1);
        let r2 = store.snapshot(bank, base_row + 2);
        let rates = self.rates(bank, segment);
        let eps = if r0.iter().all(|&b| b == 0) {
            rates.and
        } else if r1.iter().all(|&b| b == 0xFF) {
            rates.or
        } else {
            rates.and.max(rates.or)
        };
        let eps = (eps * scale).clamp(0.0, 1.0);
        let threshold = lane_threshold(eps);
        let ordinal = self.ordinals.entry((bank, segment)).or_insert(0);
        let n = *ordinal;
        *ordinal += 1;
        let lane_seed = self.lane_seed(bank, segment, n, tras_slots, trp_slots);

        let mut out = vec![0u8; r0.len()];
        let mut errors = 0u64;
        for (w, chunk) in out.chunks_exact_mut(8).enumerate() {
            let word = |r: &[u8]| u64::from_le_bytes(r[w * 8..w * 8 + 8].try_into().unwrap());
            let (a, b, c) = (word(&r0), word(&r1), word(&r2));
            let mut v = (a & b) | (a & c) | (b & c);
            if threshold > 0 {
                let flip = error_mask(lane_seed, w as u64, threshold);
                errors += flip.count_ones() as u64;
                v ^= flip;
            }
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        for r in 0..3 {
            store.fill(bank, base_row + r, &out, now);
        }
        MajorityEvent { bank, segment, epsilon: eps, errors }
    }
}

/// The standard normal and uniform draws behind a segment's error rates.
pub fn segment_draws(seed: u64, bank: u32, segment: u32) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, DOMAIN_SEGMENT, bank as u64, segment as u64]));
    let z: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.random();
    (z, v)
}

/// Lane threshold for error probability `eps`.
pub fn lane_threshold(eps: f64) -> u32 {
    (eps.clamp(0.0, 1.0) * 65536.0).round() as u32
}

/// Erroneous bitlines of an activation over `words` 64-bit words.
pub fn error_count(lane_seed: u64, words: usize, threshold: u32) -> u64 {
    if threshold == 0 {
        return 0;
    }
    (0..words as u64).map(|w| error_mask(lane_seed, w, threshold).count_ones() as u64).sum()
}

/// Bitlines of word `w` whose 16-bit hash lane falls below `threshold`.
fn error_mask(lane_seed: u64, w: u64, threshold: u32) -> u64 {
    let mut mask = 0u64;
    for q in 0..16u64 {
        let h = splitmix(lane_seed.wrapping_add(w * 16 + q));
        for lane in 0..4 {
            if ((h >> (16 * lane)) & 0xFFFF) < threshold as u64 {
                mask |= 1 << (q * 4 + lane);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{SegmentErrorModel, ValidTiming};

    fn cfg(or_median: f64) -> MajorityConfig {
        MajorityConfig {
            tras_threshold_ns: 3.0,
            trp_threshold_ns: 3.0,
            valid_timing_set: vec![
                ValidTiming { tras_ns: 1.5, trp_ns: 1.5, error_scale: 1.0 },
                ValidTiming { tras_ns: 1.5, trp_ns: 3.0, error_scale: 1.0 },
                ValidTiming { tras_ns: 3.0, trp_ns: 1.5, error_scale: 1.0 },
            ],
            segment_error: SegmentErrorModel { or_median, or_sigma: 0.3, and_gap: 0.5 },
        }
    }

    #[test]
    fn only_listed_combinations_trigger() {
        let m = MajorityModel::new(&cfg(0.0), 1, 1.5);
        let hits: Vec<(u64, u64)> =
            (1..=10).flat_map(|a| (1..=10).map(move |b| (a, b))).filter(|&(a, b)| m.trigger(a, b).is_some()).collect();
        assert_eq!(hits, vec![(1, 1), (1, 2), (2, 1)]);
    }

    #[test]
    fn and_rate_never_exceeds_or_rate() {
        let mut m = MajorityModel::new(&cfg(0.1), 9, 1.5);
        for s in 0..2000 {
            let r = m.rates(0, s);
            assert!(r.and <= r.or && r.or <= 0.5 && r.and >= 0.0);
        }
    }

    #[test]
    fn error_mask_density_tracks_threshold() {
        let total: u32 = (0..4096).map(|w| error_mask(77, w, 6554).count_ones()).sum();
        let rate = total as f64 / (4096.0 * 64.0);
        assert!((rate - 0.1).abs() < 0.005, "{rate}");
        assert_eq!(error_mask(77, 3, 0), 0);
        assert_eq!(error_mask(77, 3, 65536), u64::MAX);
        // a lower threshold only removes errors
        for w in 0..256 {
            let hi = error_mask(5, w, 9000);
            let lo = error_mask(5, w, 3000);
            assert_eq!(lo & !hi, 0);
        }
    }
}
