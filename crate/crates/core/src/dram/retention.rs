//! Charge leakage for a sparse set of leaky cells with Weibull retention times.

use rustc_hash::FxHashMap;

use crate::config::{Geometry, RetentionConfig};
use crate::dram::cells::{CellStream, DOMAIN_RETENTION};
use crate::dram::storage::{bit_of, RowStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyCell {
    pub bit: u32,
    pub retention_ms: f64,
    /// Value the cell decays to.
    pub discharged: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct RetentionModel {
    cfg: RetentionConfig,
    seed: u64,
    row_bits: u32,
    slot_ns: f64,
    cells: FxHashMap<(u32, u32), Vec<LeakyCell>>,
}

impl RetentionModel {
    pub fn new(cfg: &RetentionConfig, geometry: &Geometry, seed: u64, slot_ns: f64) -> RetentionModel {
        RetentionModel { cfg: cfg.clone(), seed, row_bits: geometry.row_bits(), slot_ns, cells: FxHashMap::default() }
    }

    pub fn leaky_cells(&mut self, bank: u32, row: u32) -> &[LeakyCell] {
        let (cfg, seed, row_bits) = (&self.cfg, self.seed, self.row_bits);
        self.cells.entry((bank, row)).or_insert_with(|| {
            CellStream::new(seed, DOMAIN_RETENTION, bank, row, row_bits, cfg.leaky_fraction)
                .map(|c| {
                    let q = (c.u / cfg.leaky_fraction).min(1.0 - 1e-12);
                    LeakyCell {
                        bit: c.bit,
                        retention_ms: cfg.scale_ms * (-(-q).ln_1p()).powf(1.0 / cfg.shape),
                        discharged: c.tag & 1 == 1,
                    }
                })
                .collect()
        })
    }

    /// Bits of a stored row that have leaked by `now`.
    fn decayed(&mut self, store: &RowStore, bank: u32, row: u32, now: u64) -> Vec<(u32, bool)> {
        let Some(data) = store.get(bank, row) else { return Vec::new() };
        let elapsed_ms = now.saturating_sub(data.last_restore) as f64 * self.slot_ns * 1e-6;
        let bytes: &[u8] = &data.bytes;
        let mut out = Vec::new();
        for c in self.leaky_cells(bank, row) {
            if c.retention_ms < elapsed_ms && bit_of(bytes, c.bit) != c.discharged {
                out.push((c.bit, c.discharged));
            }
        }
        out
    }

    /// Applies leakage to `data`, which holds the bytes of row `row` starting at row bit `first_bit`.
    pub fn apply(&mut self, store: &RowStore, bank: u32, row: u32, now: u64, first_bit: u32, data: &mut [u8]) {
        let end = first_bit + data.len() as u32 * 8;
        for (bit, val) in self.decayed(store, bank, row, now) {
            if bit >= first_bit && bit < end {
                let b = bit - first_bit;
                let mask = 1u8 << (b % 8);
                if val {
                    data[(b / 8) as usize] |= mask;
                } else {
                    data[(b / 8) as usize] &= !mask;
                }
            }
        }
    }

    /// Makes leaked values permanent and marks the row as freshly restored.
    pub fn restore(&mut self, store: &mut RowStore, bank: u32, row: u32, now: u64) -> u32 {
        let updates = self.decayed(store, bank, row, now);
        let n = store.set_bits(bank, row, &updates, now);
        store.set_restored(bank, row, now);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_leak_after_their_retention_time() {
        let g = Geometry { banks: 1, rows_per_bank: 8, columns_per_row: 128, burst_length: 8 };
        let cfg = RetentionConfig { leaky_fraction: 0.001, scale_ms: 64.0, shape: 2.0 };
        let mut m = RetentionModel::new(&cfg, &g, 3, 1.5);
        let mut store = RowStore::new(g.row_bytes());
        let cells = m.leaky_cells(0, 1).to_vec();
        assert!(!cells.is_empty());
        let charged: Vec<u8> = vec![0xFF; g.row_bytes()];
        store.fill(0, 1, &charged, 0);
        let shortest = cells.iter().map(|c| c.retention_ms).fold(f64::INFINITY, f64::min);
        let before = ((shortest * 0.5) * 1e6 / 1.5) as u64;
        let mut row = charged.clone();
        m.apply(&store, 0, 1, before, 0, &mut row);
        assert_eq!(row, charged);
        let after = (400.0 * 1e6 / 1.5) as u64;
        m.apply(&store, 0, 1, after, 0, &mut row);
        let leaked = cells.iter().filter(|c| c.retention_ms < 400.0 && !c.discharged).count();
        let zeros: u32 = row.iter().map(|b| b.count_zeros()).sum();
        assert_eq!(zeros as usize, leaked);
        m.restore(&mut store, 0, 1, after);
        assert_eq!(store.snapshot(0, 1), row);
    }
}
