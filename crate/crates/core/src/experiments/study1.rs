//! Double-sided hammering with aggressor interleaving granularity T.
//!
//! Each victim triple occupies eight rows: V1, A1, V2, A2, V3 at offsets
//! 0..5. Aggressors hold 0xAA and victims 0x55. For every T the aggressors are
//! activated T times each in turn until the ACT budget is spent, the victims
//! are read back, and the smallest per-aggressor ACT count that flips a bit
//! is searched separately.

use std::fmt::Write as _;

use crate::config::Profile;
use crate::dram::timing::CommandClass;
use crate::dram::{DramDevice, HammerTiming};
use crate::isa::{R0, R1, R2, R4, R5, R6, R7};
use crate::platform::Platform;
use crate::program::{AssembleOptions, Assembled, Program};

use super::{count_differing, device_seed, parallel_map, ExperimentError};

pub const VICTIMS: [&str; 3] = ["V1", "V2", "V3"];
const AGGRESSOR_FILL: u8 = 0xAA;
const VICTIM_FILL: u8 = 0x55;
const HC_START: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub a1: u32,
    pub a2: u32,
    pub victims: [u32; 3],
}

impl Triple {
    fn rows(&self) -> [u32; 5] {
        [self.victims[0], self.a1, self.victims[1], self.a2, self.victims[2]]
    }
}

/// Rows of the `k`-th tested triple.
pub fn triple(k: u32) -> Triple {
    let base = 8 * k;
    Triple { a1: base + 1, a2: base + 3, victims: [base, base + 2, base + 4] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study1Config {
    /// Fault-model seed; `None` uses the profile's.
    pub seed: Option<u64>,
    pub bank: u32,
    pub triples: u32,
    /// ACTs issued per triple and T, split evenly over both aggressors.
    pub total_acts: u64,
    pub t_grid: Vec<u64>,
    /// Also run triple 0 through the emulated core and compare with the replay.
    pub emulate_first_triple: bool,
    /// Relative width at which the first-flip search stops.
    pub hc_resolution: f64,
    /// Largest per-aggressor budget the first-flip search tries.
    pub hc_cap: u64,
}

impl Default for Study1Config {
    fn default() -> Self {
        Study1Config {
            seed: None,
            bank: 0,
            triples: 1024,
            total_acts: 1 << 20,
            t_grid: (0..=16).map(|i| 1u64 << i).collect(),
            emulate_first_triple: true,
            hc_resolution: 0.01,
            hc_cap: 1 << 26,
        }
    }
}

impl Study1Config {
    /// Tests every triple that fits in one bank.
    pub fn full_bank(profile: &Profile) -> Study1Config {
        Study1Config { triples: profile.geometry.rows_per_bank / 8, ..Study1Config::default() }
    }

    fn validate(&self, profile: &Profile) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        let Some(&t_max) = self.t_grid.iter().max() else { return bad("T grid is empty".into()) };
        if self.t_grid.contains(&0) {
            return bad("T must be positive".into());
        }
        if self.total_acts < 2 * t_max {
            return bad(format!("total_acts {} is below 2 * max T = {}", self.total_acts, 2 * t_max));
        }
        if self.triples == 0 || self.triples as u64 * 8 > profile.geometry.rows_per_bank as u64 {
            return bad(format!("{} triples do not fit in {} rows", self.triples, profile.geometry.rows_per_bank));
        }
        if self.bank >= profile.geometry.banks {
            return bad(format!("bank {} does not exist", self.bank));
        }
        if !(self.hc_resolution > 0.0) {
            return bad("first-flip resolution must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study1Row {
    pub t: u64,
    /// Index into [`VICTIMS`].
    pub victim: usize,
    pub flips_avg: f64,
    pub hc_first_min: Option<u64>,
    /// ACTs issued per triple at this T.
    pub acts_issued: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study1Result {
    pub profile: String,
    pub seed: u64,
    pub triples: u32,
    pub rows: Vec<Study1Row>,
}

impl Study1Result {
    pub fn row(&self, t: u64, victim: usize) -> Option<&Study1Row> {
        self.rows.iter().find(|r| r.t == t && r.victim == victim)
    }

    pub fn flips(&self, t: u64, victim: usize) -> Option<f64> {
        self.row(t, victim).map(|r| r.flips_avg)
    }

    pub fn hc_first(&self, t: u64, victim: usize) -> Option<u64> {
        self.row(t, victim).and_then(|r| r.hc_first_min)
    }

    fn t_max(&self) -> u64 {
        self.rows.iter().map(|r| r.t).max().unwrap_or(1)
    }

    /// One line per (T, victim); flips are also given relative to the largest T.
    pub fn csv(&self) -> String {
        let t_max = self.t_max();
        let mut out = String::from("T,victim,flips_avg,hc_first_min,flips_normalized,acts_issued\n");
        for r in &self.rows {
            let base = self.flips(t_max, r.victim).unwrap_or(0.0);
            let norm = if base > 0.0 { format!("{:.4}", r.flips_avg / base) } else { String::new() };
            let hc = r.hc_first_min.map(|h| h.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.3},{},{},{}", r.t, VICTIMS[r.victim], r.flips_avg, hc, norm, r.acts_issued);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("profile {} seed {} triples {}\n", self.profile, self.seed, self.triples);
        let _ = writeln!(out, "{:>6} {:>10} {:>10} {:>10} {:>12} {:>12} {:>12}", "T", "V1", "V2", "V3", "HC V1", "HC V2", "HC V3");
        let mut ts: Vec<u64> = self.rows.iter().map(|r| r.t).collect();
        ts.dedup();
        for t in ts {
            let f = |v| self.flips(t, v).unwrap_or(0.0);
            let h = |v| self.hc_first(t, v).map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:>6} {:>10.1} {:>10.1} {:>10.1} {:>12} {:>12} {:>12}", t, f(0), f(1), f(2), h(0), h(1), h(2));
        }
        out
    }
}

/// Fills the triple's rows with the checkered pattern on a freshly reset device.
fn prepare(dev: &mut DramDevice, bank: u32, tr: &Triple) -> Result<(), ExperimentError> {
    dev.reset_state();
    for (i, row) in tr.rows().into_iter().enumerate() {
        let fill = if i % 2 == 1 { AGGRESSOR_FILL } else { VICTIM_FILL };
        dev.fill_row_pattern(bank, row, &[fill])?;
    }
    Ok(())
}

/// Activates each aggressor `per_aggressor` times in turns of `t`.
fn hammer(dev: &mut DramDevice, bank: u32, tr: &Triple, t: u64, per_aggressor: u64, timing: HammerTiming) -> Result<(), ExperimentError> {
    let (n, r) = (per_aggressor / t, per_aggressor % t);
    let mut start = dev.now();
    if n > 0 {
        dev.hammer_pattern(bank, &[(tr.a1, t), (tr.a2, t)], n, start, timing)?;
        start = dev.now() + timing.pre_to_act;
    }
    if r > 0 {
        dev.hammer_pattern(bank, &[(tr.a1, r), (tr.a2, r)], 1, start, timing)?;
    }
    Ok(())
}

fn victim_flips(dev: &mut DramDevice, bank: u32, tr: &Triple) -> Result<[u32; 3], ExperimentError> {
    let mut out = [0; 3];
    for (o, &v) in out.iter_mut().zip(&tr.victims) {
        *o = count_differing(&dev.peek_row(bank, v)?, VICTIM_FILL);
    }
    Ok(out)
}

fn flips_at(dev: &mut DramDevice, bank: u32, tr: &Triple, t: u64, per_aggressor: u64, timing: HammerTiming) -> Result<[u32; 3], ExperimentError> {
    prepare(dev, bank, tr)?;
    hammer(dev, bank, tr, t, per_aggressor, timing)?;
    victim_flips(dev, bank, tr)
}

/// Program that hammers `a1` and `a2` in turns of `t` ACT/PRE pairs for `iterations` rounds.
pub fn interleave_kernel(profile: &Profile, bank: u32, a1: u32, a2: u32, t: u64, iterations: u64) -> Result<Assembled, ExperimentError> {
    let tras = profile.min_slots(CommandClass::Act, CommandClass::Pre).max(1);
    let mut p = Program::new();
    p.append_li(R0, bank as i64)?;
    p.append_li(R1, a1 as i64)?;
    p.append_li(R2, a2 as i64)?;
    p.append_li(R4, t as i64)?;
    p.append_li(R5, iterations as i64)?;
    p.append_li(R6, 0)?;
    p.append_label("round")?;
    for (label, row) in [("first", R1), ("second", R2)] {
        p.append_li(R7, 0)?;
        p.append_label(label)?;
        p.append_act(R0, false, row, false, tras - 1)?;
        p.append_pre(R0, false, false, 0)?;
        p.append_addi(R7, R7, 1)?;
        p.append_bl(label, R7, R4)?;
    }
    p.append_addi(R6, R6, 1)?;
    p.append_bl("round", R6, R5)?;
    p.append_end()?;
    let opts = AssembleOptions {
        capacity: profile.platform.instruction_capacity,
        fifo_capacity: profile.platform.fifo_capacity,
        scratchpad_words: profile.platform.scratchpad_words,
        sizing_budget: 0,
    };
    Ok(p.assemble_with(&opts)?)
}

/// Runs the kernel for triple `tr` on the emulated platform and returns the five row contents.
fn emulate(profile: &Profile, seed: u64, bank: u32, tr: &Triple, t: u64, iterations: u64) -> Result<Vec<Vec<u8>>, ExperimentError> {
    let kernel = interleave_kernel(profile, bank, tr.a1, tr.a2, t, iterations)?;
    let mut p = Platform::with_device(DramDevice::with_seed(profile, seed));
    prepare(p.device_mut(), bank, tr)?;
    let report = p.execute(&kernel.image)?;
    if !report.halted() {
        return Err(ExperimentError::KernelFailed(format!("{:?}", report.outcome)));
    }
    if report.histogram.act != 2 * t * iterations {
        return Err(ExperimentError::KernelFailed(format!("issued {} ACTs", report.histogram.act)));
    }
    tr.rows().into_iter().map(|r| Ok(p.device_mut().peek_row(bank, r)?)).collect()
}

struct TResult {
    flips: [f64; 3],
    hc: [Option<u64>; 3],
    acts: u64,
}

/// Smallest per-aggressor budget that flips a bit in each victim, over all triples.
fn search_first_flip(dev: &mut DramDevice, cfg: &Study1Config, t: u64, timing: HammerTiming) -> Result<[Option<u64>; 3], ExperimentError> {
    let mut best: [Option<u64>; 3] = [None; 3];
    for k in 0..cfg.triples {
        let tr = triple(k);
        let mut cache: Vec<(u64, [u32; 3])> = Vec::new();
        let mut probe = |dev: &mut DramDevice, h: u64| -> Result<[u32; 3], ExperimentError> {
            if let Some(&(_, f)) = cache.iter().find(|c| c.0 == h) {
                return Ok(f);
            }
            let f = flips_at(dev, cfg.bank, &tr, t, h, timing)?;
            cache.push((h, f));
            Ok(f)
        };
        for v in 0..3 {
            let (mut lo, mut hi) = match best[v] {
                Some(b) => {
                    if probe(dev, b)?[v] == 0 {
                        continue;
                    }
                    (0, b)
                }
                None => {
                    let mut h = HC_START;
                    loop {
                        if probe(dev, h)?[v] > 0 {
                            break (if h == HC_START { 0 } else { h / 2 }, h);
                        }
                        if h >= cfg.hc_cap {
                            break (h, 0);
                        }
                        h = (h * 2).min(cfg.hc_cap);
                    }
                }
            };
            if hi == 0 {
                continue;
            }
            while (hi - lo) as f64 > (hi as f64 * cfg.hc_resolution).max(1.0) {
                let mid = lo + (hi - lo) / 2;
                if probe(dev, mid)?[v] > 0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            best[v] = Some(best[v].map_or(hi, |b| b.min(hi)));
        }
    }
    Ok(best)
}

fn run_t(profile: &Profile, seed: u64, cfg: &Study1Config, t: u64) -> Result<TResult, ExperimentError> {
    let timing = HammerTiming::from_profile(profile);
    let mut dev = DramDevice::with_seed(profile, seed);
    let iterations = cfg.total_acts / (2 * t);
    let per_aggressor = iterations * t;
    let mut sums = [0u64; 3];
    for k in 0..cfg.triples {
        let tr = triple(k);
        let f = flips_at(&mut dev, cfg.bank, &tr, t, per_aggressor, timing)?;
        for (s, x) in sums.iter_mut().zip(f) {
            *s += x as u64;
        }
        if k == 0 && cfg.emulate_first_triple {
            let replay: Vec<Vec<u8>> = tr.rows().into_iter().map(|r| dev.peek_row(cfg.bank, r)).collect::<Result<_, _>>()?;
            if emulate(profile, seed, cfg.bank, &tr, t, iterations)? != replay {
                return Err(ExperimentError::EmulatorMismatch { t });
            }
        }
    }
    let hc = search_first_flip(&mut dev, cfg, t, timing)?;
    Ok(TResult { flips: sums.map(|s| s as f64 / cfg.triples as f64), hc, acts: 2 * per_aggressor })
}

/// Runs the interleaving sweep over `cfg.t_grid`.
pub fn run_study1(profile: &Profile, cfg: &Study1Config) -> Result<Study1Result, ExperimentError> {
    if profile.fault_model.calibration.is_none() || !profile.fault_model.rowhammer.enabled {
        return Err(ExperimentError::CalibrationMissing(profile.name.clone()));
    }
    run_uncalibrated(profile, cfg)
}

/// [`run_study1`] without the calibration check, for the fitting tool.
pub(crate) fn run_uncalibrated(profile: &Profile, cfg: &Study1Config) -> Result<Study1Result, ExperimentError> {
    cfg.validate(profile)?;
    let seed = device_seed(profile, cfg.seed);
    let per_t = parallel_map(&cfg.t_grid, |&t| run_t(profile, seed, cfg, t))?;
    let mut rows = Vec::new();
    for (&t, r) in cfg.t_grid.iter().zip(per_t) {
        for v in 0..3 {
            rows.push(Study1Row { t, victim: v, flips_avg: r.flips[v], hc_first_min: r.hc[v], acts_issued: r.acts });
        }
    }
    Ok(Study1Result { profile: profile.name.clone(), seed, triples: cfg.triples, rows })
}
