//! Activation-disturbance accounting and latched bit flips.
//!
//! Every ACT adds a fixed-point disturbance to the rows around the activated
//! row and restores the activated row itself. A weak cell flips once the
//! victim's accumulator reaches the cell threshold and the aggressor data
//! around the cell matches the cell's gate pattern; the victim bit is then
//! driven toward the aggressor's center bit and stays there until the column
//! is rewritten.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::config::{Geometry, RowHammerConfig, ThresholdDistribution};
use crate::dram::cells::{CellStream, DOMAIN_ROWHAMMER};
use crate::dram::storage::{bit_of, RowStore};

/// Fixed-point units per ACT-equivalent of disturbance.
pub const DISTURB_SCALE: f64 = 65536.0;

const OFFSETS: [i64; 4] = [-2, -1, 1, 2];

pub fn to_units(x: f64) -> u64 {
    (x * DISTURB_SCALE).round().max(0.0) as u64
}

fn threshold_units(theta: f64) -> u64 {
    (theta * DISTURB_SCALE).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakCell {
    pub threshold: u64,
    pub bit: u32,
    pub gate: u8,
}

#[derive(Debug, Clone)]
struct RowCells {
    stream: CellStream,
    cells: Vec<WeakCell>,
    fired: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    aggressor: u32,
    ptr: usize,
    version: u64,
}

#[derive(Debug, Clone, Default)]
struct VictimState {
    epoch: u64,
    acc: u64,
    crossed: usize,
    evals: Vec<Eval>,
}

#[derive(Debug, Clone)]
pub(crate) struct HammerModel {
    enabled: bool,
    weight: [u64; 3],
    bonus: u64,
    threshold: ThresholdDistribution,
    fraction: f64,
    gate: bool,
    stride: u32,
    seed: u64,
    rows_per_bank: u32,
    row_bits: u32,
    cells: FxHashMap<(u32, u32), RowCells>,
    /// Rows holding at least one latched cell.
    latched: FxHashSet<(u32, u32)>,
    victims: FxHashMap<(u32, u32), VictimState>,
    last_act: Vec<Option<u32>>,
    epoch: u64,
    roi: Option<Vec<bool>>,
}

impl HammerModel {
    pub fn new(cfg: &RowHammerConfig, geometry: &Geometry, seed: u64) -> HammerModel {
        HammerModel {
            enabled: cfg.enabled,
            weight: [0, to_units(cfg.base_disturb * cfg.blast.distance1), to_units(cfg.base_disturb * cfg.blast.distance2)],
            bonus: to_units(cfg.alternation_bonus),
            threshold: cfg.threshold.clone(),
            fraction: cfg.weak_fraction,
            gate: cfg.gate.enabled,
            stride: cfg.gate.stride_bits,
            seed,
            rows_per_bank: geometry.rows_per_bank,
            row_bits: geometry.row_bits(),
            cells: FxHashMap::default(),
            latched: FxHashSet::default(),
            victims: FxHashMap::default(),
            last_act: vec![None; geometry.banks as usize],
            epoch: 0,
            roi: None,
        }
    }

    pub fn accumulator(&self, bank: u32, row: u32) -> u64 {
        match self.victims.get(&(bank, row)) {
            Some(v) if v.epoch == self.epoch => v.acc,
            _ => 0,
        }
    }

    /// Restricts materialized weak cells to the given columns. Clears all
    /// disturbance state.
    pub fn set_region_of_interest(&mut self, columns: Option<&[u32]>, columns_per_row: u32) {
        self.roi = columns.map(|cols| {
            let mut mask = vec![false; columns_per_row as usize];
            for &c in cols {
                if let Some(m) = mask.get_mut(c as usize) {
                    *m = true;
                }
            }
            mask
        });
        self.cells.clear();
        self.latched.clear();
        self.victims.clear();
    }

    /// Clears accumulators, alternation memory and latch flags; keeps the
    /// sampled cell populations.
    pub fn reset(&mut self) {
        self.victims.clear();
        self.last_act.iter_mut().for_each(|a| *a = None);
        for key in self.latched.drain() {
            if let Some(rc) = self.cells.get_mut(&key) {
                rc.fired.iter_mut().for_each(|f| *f = false);
            }
        }
    }

    /// Forgets all accumulated disturbance (self-refresh exit).
    pub fn new_epoch(&mut self) {
        self.epoch += 1;
        self.last_act.iter_mut().for_each(|a| *a = None);
    }

    pub fn restore(&mut self, bank: u32, row: u32) {
        if let Some(v) = self.victims.get_mut(&(bank, row)) {
            v.epoch = self.epoch;
            v.acc = 0;
            v.crossed = 0;
            v.evals.clear();
        }
    }

    /// A WRITE to `col` of `row` re-arms the latched cells of that column.
    pub fn on_column_write(&mut self, bank: u32, row: u32, col: u32) {
        if let Some(rc) = self.cells.get_mut(&(bank, row)) {
            for (c, f) in rc.cells.iter().zip(rc.fired.iter_mut()) {
                if c.bit / Geometry::TRANSFER_BITS == col {
                    *f = false;
                }
            }
        }
        if let Some(v) = self.victims.get_mut(&(bank, row)) {
            v.evals.clear();
        }
    }

    pub fn on_row_rewrite(&mut self, bank: u32, row: u32) {
        if let Some(rc) = self.cells.get_mut(&(bank, row)) {
            rc.fired.iter_mut().for_each(|f| *f = false);
        }
        if let Some(v) = self.victims.get_mut(&(bank, row)) {
            v.evals.clear();
        }
    }

    fn victims_of(&self, a: u32) -> impl Iterator<Item = (u32, usize)> + '_ {
        OFFSETS.iter().filter_map(move |&d| {
            let v = a as i64 + d;
            (v >= 0 && v < self.rows_per_bank as i64).then_some((v as u32, d.unsigned_abs() as usize))
        })
    }

    /// Applies `count` back-to-back activations of row `a`. `prev` is the row
    /// activated in this bank right before the first of them. Returns the number
    /// of victim bits that changed.
    pub fn activate(&mut self, bank: u32, a: u32, count: u64, store: &mut RowStore, now: u64) -> u32 {
        let prev = self.last_act[bank as usize];
        self.last_act[bank as usize] = Some(a);
        if !self.enabled || count == 0 {
            return 0;
        }
        self.restore(bank, a);
        let mut flips = 0;
        let victims: Vec<(u32, usize)> = self.victims_of(a).collect();
        for (v, d) in victims {
            let mut add = count * self.weight[d];
            if d == 1 && prev.map(i64::from) == Some(2 * v as i64 - a as i64) {
                add += self.bonus;
            }
            if add == 0 {
                continue;
            }
            self.add_disturbance(bank, v, add);
            flips += self.evaluate(bank, v, a, store, now);
        }
        flips
    }

    fn add_disturbance(&mut self, bank: u32, v: u32, add: u64) {
        let epoch = self.epoch;
        let st = self.victims.entry((bank, v)).or_default();
        if st.epoch != epoch {
            *st = VictimState { epoch, ..VictimState::default() };
        }
        st.acc += add;
        let acc = st.acc;
        let mut crossed = st.crossed;
        let (seed, row_bits, fraction) = (self.seed, self.row_bits, self.fraction);
        let rc = self.cells.entry((bank, v)).or_insert_with(|| RowCells {
            stream: CellStream::new(seed, DOMAIN_ROWHAMMER, bank, v, row_bits, fraction),
            cells: Vec::new(),
            fired: Vec::new(),
        });
        loop {
            if crossed < rc.cells.len() {
                if rc.cells[crossed].threshold <= acc {
                    crossed += 1;
                    continue;
                }
                break;
            }
            if !pull(rc, &self.threshold, self.roi.as_deref()) {
                break;
            }
        }
        self.victims.get_mut(&(bank, v)).unwrap().crossed = crossed;
    }

    /// Checks crossed-but-unfired cells of `v` against the current data of aggressor `a`.
    fn evaluate(&mut self, bank: u32, v: u32, a: u32, store: &mut RowStore, now: u64) -> u32 {
        let version = store.version(bank, a);
        let Some(st) = self.victims.get_mut(&(bank, v)) else { return 0 };
        let idx = match st.evals.iter().position(|e| e.aggressor == a) {
            Some(i) => i,
            None => {
                st.evals.push(Eval { aggressor: a, ptr: 0, version });
                st.evals.len() - 1
            }
        };
        let e = &mut st.evals[idx];
        if e.version != version {
            e.version = version;
            e.ptr = 0;
        }
        let (from, to) = (e.ptr, st.crossed);
        e.ptr = to;
        if from >= to {
            return 0;
        }
        let Some(rc) = self.cells.get_mut(&(bank, v)) else { return 0 };
        let agg = store.get(bank, a).map(|r| &r.bytes[..]);
        let mut updates = Vec::new();
        for j in from..to {
            if rc.fired[j] {
                continue;
            }
            let c = rc.cells[j];
            if let Some(center) = gate_match(agg, c.bit, c.gate, self.gate, self.stride) {
                rc.fired[j] = true;
                self.latched.insert((bank, v));
                updates.push((c.bit, center));
            }
        }
        store.set_bits(bank, v, &updates, now)
    }

    /// Disturbance one steady-state iteration of `pattern` adds to each row
    /// outside the pattern, with the aggressors that contribute to it.
    fn steady_deltas(&self, pattern: &[(u32, u64)]) -> Vec<(u32, u64, Vec<u32>)> {
        let mut out: Vec<(u32, u64, Vec<u32>)> = Vec::new();
        let mut prev = pattern.iter().rev().find(|p| p.1 > 0).map(|p| p.0);
        for &(a, count) in pattern {
            if count == 0 {
                continue;
            }
            for (v, d) in self.victims_of(a) {
                if pattern.iter().any(|p| p.0 == v && p.1 > 0) {
                    continue;
                }
                let mut add = count * self.weight[d];
                if d == 1 && prev.map(i64::from) == Some(2 * v as i64 - a as i64) {
                    add += self.bonus;
                }
                if add == 0 {
                    continue;
                }
                match out.iter_mut().find(|o| o.0 == v) {
                    Some(o) => {
                        o.1 += add;
                        if !o.2.contains(&a) {
                            o.2.push(a);
                        }
                    }
                    None => out.push((v, add, vec![a])),
                }
            }
            prev = Some(a);
        }
        out
    }

    /// Advances rows outside `pattern` by `k` steady-state iterations at once.
    /// Only valid once the data of every pattern row has stopped changing.
    pub fn bulk(&mut self, bank: u32, pattern: &[(u32, u64)], k: u64, store: &mut RowStore, now: u64) -> u32 {
        if !self.enabled || k == 0 {
            return 0;
        }
        let mut flips = 0;
        for (v, delta, aggressors) in self.steady_deltas(pattern) {
            self.add_disturbance(bank, v, delta * k);
            for a in aggressors {
                flips += self.evaluate(bank, v, a, store, now);
            }
        }
        flips
    }

    /// Sampled weak cells of a row with thresholds at or below `limit`
    /// (ACT-equivalents), in ascending threshold order.
    pub fn cells_up_to(&mut self, bank: u32, row: u32, limit: f64) -> Vec<WeakCell> {
        let limit = threshold_units(limit);
        let (seed, row_bits, fraction) = (self.seed, self.row_bits, self.fraction);
        let rc = self.cells.entry((bank, row)).or_insert_with(|| RowCells {
            stream: CellStream::new(seed, DOMAIN_ROWHAMMER, bank, row, row_bits, fraction),
            cells: Vec::new(),
            fired: Vec::new(),
        });
        while rc.cells.last().is_none_or(|c| c.threshold <= limit) {
            if !pull(rc, &self.threshold, self.roi.as_deref()) {
                break;
            }
        }
        rc.cells.iter().copied().take_while(|c| c.threshold <= limit).collect()
    }

    pub fn gate_enabled(&self) -> bool {
        self.gate
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }
}

fn pull(rc: &mut RowCells, dist: &ThresholdDistribution, roi: Option<&[bool]>) -> bool {
    for raw in rc.stream.by_ref() {
        if let Some(mask) = roi {
            if !mask[(raw.bit / Geometry::TRANSFER_BITS) as usize] {
                continue;
            }
        }
        rc.cells.push(WeakCell { threshold: threshold_units(dist.quantile(raw.u)), bit: raw.bit, gate: raw.tag });
        rc.fired.push(false);
        return true;
    }
    false
}

/// The center aggressor bit if the aggressor data around `bit` matches `gate`.
/// Bits `bit - stride`, `bit`, `bit + stride` (wrapping inside the 512-bit
/// column) form the pattern, most significant first.
pub fn gate_match(agg: Option<&[u8]>, bit: u32, gate: u8, gate_enabled: bool, stride: u32) -> Option<bool> {
    let w = Geometry::TRANSFER_BITS;
    let base = bit - bit % w;
    let off = bit % w;
    let get = |b: u32| agg.is_some_and(|d| bit_of(d, b));
    let center = get(bit);
    if !gate_enabled {
        return Some(center);
    }
    let left = get(base + (off + w - stride) % w);
    let right = get(base + (off + stride) % w);
    let pattern = (left as u8) << 2 | (center as u8) << 1 | right as u8;
    (pattern == gate).then_some(center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn model(profile: &Profile) -> (HammerModel, RowStore) {
        let g = &profile.geometry;
        (HammerModel::new(&profile.fault_model.rowhammer, g, 11), RowStore::new(g.row_bytes()))
    }

    #[test]
    fn neighbours_receive_weighted_disturbance() {
        let p = Profile::ddr4_default();
        let (mut m, mut s) = model(&p);
        m.activate(0, 10, 1, &mut s, 0);
        let w = m.weight[1];
        assert_eq!(m.accumulator(0, 9), w);
        assert_eq!(m.accumulator(0, 11), w);
        assert_eq!(m.accumulator(0, 8), m.weight[2]);
        assert_eq!(m.accumulator(0, 12), m.weight[2]);
        assert_eq!(m.accumulator(0, 10), 0);
    }

    #[test]
    fn alternation_adds_bonus_only_to_sandwiched_row() {
        let p = Profile::ddr4_default();
        let (mut m, mut s) = model(&p);
        m.activate(0, 10, 1, &mut s, 0);
        m.activate(0, 12, 1, &mut s, 1);
        assert_eq!(m.accumulator(0, 11), 2 * m.weight[1] + m.bonus);
        assert_eq!(m.accumulator(0, 13), m.weight[1]);
        // the activated rows were restored by their own activation
        assert_eq!(m.accumulator(0, 12), 0);
        assert_eq!(m.accumulator(0, 10), m.weight[2]);
    }

    #[test]
    fn single_sided_never_gets_bonus() {
        let p = Profile::ddr4_default();
        let (mut m, mut s) = model(&p);
        for t in 0..100 {
            m.activate(0, 10, 1, &mut s, t);
        }
        assert_eq!(m.accumulator(0, 11), 100 * m.weight[1]);
    }

    #[test]
    fn burst_matches_individual_activations() {
        let p = Profile::builtin("C").unwrap();
        let (mut a, mut sa) = model(&p);
        let (mut b, mut sb) = model(&p);
        for (s, row) in [(&mut sa, 0u32), (&mut sb, 0u32)] {
            for r in 0..8 {
                s.fill(0, row + r, &vec![if r % 2 == 1 { 0xAA } else { 0x55 }; 8192], 0);
            }
        }
        for _ in 0..3 {
            a.activate(0, 1, 20_000, &mut sa, 0);
            a.activate(0, 3, 20_000, &mut sa, 0);
            for _ in 0..20_000 {
                b.activate(0, 1, 1, &mut sb, 0);
            }
            for _ in 0..20_000 {
                b.activate(0, 3, 1, &mut sb, 0);
            }
        }
        for r in 0..8 {
            assert_eq!(a.accumulator(0, r), b.accumulator(0, r));
            assert_eq!(sa.snapshot(0, r), sb.snapshot(0, r), "row {r}");
        }
    }

    #[test]
    fn gate_reads_three_bits_with_wraparound() {
        let mut d = vec![0u8; 128];
        // bit 0 of column 1 is row bit 512; left neighbour wraps to 512 + 448
        d[64] = 1;
        d[64 + 56] = 1;
        assert_eq!(gate_match(Some(&d), 512, 0b110, true, 64), Some(true));
        assert_eq!(gate_match(Some(&d), 512, 0b111, true, 64), None);
        assert_eq!(gate_match(None, 5, 0, true, 64), Some(false));
        assert_eq!(gate_match(None, 5, 3, false, 64), Some(false));
    }
}
