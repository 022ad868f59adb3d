//! Seeded, lazily generated per-row populations of weak cells.
//!
//! A row's weak cells are the cells whose quantile `u` falls below
//! `fraction`. They are produced in ascending `u` order using sequential
//! order statistics, so a row only materializes as many cells as the
//! disturbance it has seen requires.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive hash of a sequence of words.
pub(crate) fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |h, &w| splitmix(h ^ w))
}

pub(crate) const DOMAIN_ROWHAMMER: u64 = 0x524F_5748;
pub(crate) const DOMAIN_RETENTION: u64 = 0x5245_544E;
pub(crate) const DOMAIN_SEGMENT: u64 = 0x5345_474D;
pub(crate) const DOMAIN_MAJORITY: u64 = 0x4D41_4A52;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCell {
    /// Quantile of the cell in the full cell population.
    pub u: f64,
    /// Bit index within the row (`column * 512 + bit`).
    pub bit: u32,
    /// Three extra random bits attached to the cell.
    pub tag: u8,
}

#[derive(Debug, Clone)]
pub struct CellStream {
    rng: ChaCha8Rng,
    total: u64,
    emitted: u64,
    last: f64,
    fraction: f64,
    row_bits: u32,
    used: Vec<u64>,
}

impl CellStream {
    pub fn new(seed: u64, domain: u64, bank: u32, row: u32, row_bits: u32, fraction: f64) -> CellStream {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, domain, bank as u64, row as u64]));
        let total = if fraction <= 0.0 {
            0
        } else if fraction >= 1.0 {
            row_bits as u64
        } else {
            Binomial::new(row_bits as u64, fraction).expect("valid binomial").sample(&mut rng)
        };
        CellStream { rng, total, emitted: 0, last: 0.0, fraction, row_bits, used: Vec::new() }
    }

    /// Number of cells the row holds in total.
    pub fn population(&self) -> u64 {
        self.total
    }
}

impl Iterator for CellStream {
    type Item = RawCell;

    fn next(&mut self) -> Option<RawCell> {
        if self.emitted >= self.total {
            return None;
        }
        let remaining = (self.total - self.emitted) as f64;
        let v: f64 = 1.0 - self.rng.random::<f64>();
        self.last = 1.0 - (1.0 - self.last) * v.powf(1.0 / remaining);
        self.emitted += 1;
        if self.used.is_empty() {
            self.used = vec![0u64; self.row_bits.div_ceil(64) as usize];
        }
        let bit = loop {
            let b = self.rng.random_range(0..self.row_bits);
            let (w, m) = ((b / 64) as usize, 1u64 << (b % 64));
            if self.used[w] & m == 0 {
                self.used[w] |= m;
                break b;
            }
        };
        let tag = self.rng.random::<u8>() & 7;
        Some(RawCell { u: self.last * self.fraction, bit, tag })
    }
}
