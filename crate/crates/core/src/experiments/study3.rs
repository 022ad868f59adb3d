//! Bitwise AND/OR through multi-row activation across a grid of violated
//! (tRAS, tRP) pairs, measured as the bit error rate of every segment.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Profile;
use crate::dram::cells::mix;
use crate::dram::majority::SEGMENT_ROWS;
use crate::dram::timing::CommandClass;
use crate::dram::DramDevice;
use crate::isa::{R1, R2, R3, R4};
use crate::platform::Platform;
use crate::program::{AssembleOptions, Assembled, Program};

use super::{device_seed, parallel_map, ExperimentError};

const DOMAIN_STUDY3: u64 = 0x5354_5533;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingCombo {
    pub tras_ns: f64,
    pub trp_ns: f64,
}

/// tRAS and tRP each over 1.5, 3.0, ..., 15.0 ns, tRAS-major.
pub fn combo_grid() -> Vec<TimingCombo> {
    let steps: Vec<f64> = (1..=10).map(|i| i as f64 * 1.5).collect();
    steps.iter().flat_map(|&tras_ns| steps.iter().map(move |&trp_ns| TimingCombo { tras_ns, trp_ns })).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MajorityOp {
    And,
    Or,
}

impl MajorityOp {
    pub const ALL: [MajorityOp; 2] = [MajorityOp::And, MajorityOp::Or];

    pub fn name(self) -> &'static str {
        match self {
            MajorityOp::And => "AND",
            MajorityOp::Or => "OR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study3Config {
    /// Fault-model and operand seed; `None` uses the profile's.
    pub seed: Option<u64>,
    pub bank: u32,
    pub segments: u32,
    pub combos: Vec<TimingCombo>,
}

impl Default for Study3Config {
    fn default() -> Self {
        Study3Config { seed: None, bank: 0, segments: 8192, combos: combo_grid() }
    }
}

/// Best bit error rate of a segment over the activating combinations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentBer {
    pub segment: u32,
    pub and: f64,
    pub or: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Study3Counts {
    /// AND below 3% while OR is not.
    pub and_only_3: u32,
    pub both_5: u32,
    pub both_10: u32,
    pub both_3: u32,
}

impl Study3Counts {
    pub fn from_segments(segs: &[SegmentBer]) -> Study3Counts {
        let mut c = Study3Counts::default();
        for s in segs {
            c.and_only_3 += (s.and < 0.03 && s.or >= 0.03) as u32;
            c.both_3 += (s.and < 0.03 && s.or < 0.03) as u32;
            c.both_5 += (s.and < 0.05 && s.or < 0.05) as u32;
            c.both_10 += (s.and < 0.10 && s.or < 0.10) as u32;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study3Result {
    pub profile: String,
    pub seed: u64,
    pub combos: Vec<TimingCombo>,
    /// Whether each combination of `combos` performed a multi-row activation.
    pub activating: Vec<bool>,
    /// Per activating combination (in `combos` order): per segment, AND and OR error rates.
    pub measured: Vec<Vec<[f64; 2]>>,
    pub segments: Vec<SegmentBer>,
    pub counts: Study3Counts,
}

impl Study3Result {
    /// One line per (combination, segment, operation); non-activating combinations report 1.
    pub fn csv(&self) -> String {
        let n = self.segments.len();
        let mut out = String::with_capacity(self.combos.len() * n * 2 * 24 + 32);
        out.push_str("tras,trp,segment,op,ber\n");
        let mut m = self.measured.iter();
        for (c, &act) in self.combos.iter().zip(&self.activating) {
            let rates = if act { m.next() } else { None };
            for s in 0..n {
                for (k, op) in MajorityOp::ALL.iter().enumerate() {
                    let ber = rates.map_or(1.0, |r| r[s][k]);
                    let _ = writeln!(out, "{:.1},{:.1},{},{},{:.6}", c.tras_ns, c.trp_ns, self.segments[s].segment, op.name(), ber);
                }
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("profile {} seed {} segments {}\n", self.profile, self.seed, self.segments.len());
        let act: Vec<String> = self
            .combos
            .iter()
            .zip(&self.activating)
            .filter(|(_, &a)| a)
            .map(|(c, _)| format!("({:.1} ns, {:.1} ns)", c.tras_ns, c.trp_ns))
            .collect();
        let _ = writeln!(out, "activating combinations: {}", act.join(" "));
        let c = &self.counts;
        let _ = writeln!(out, "AND-only <3%: {}", c.and_only_3);
        let _ = writeln!(out, "both <3%: {}", c.both_3);
        let _ = writeln!(out, "both <5%: {}", c.both_5);
        let _ = writeln!(out, "both <10%: {}", c.both_10);
        let mean = |f: fn(&SegmentBer) -> f64| self.segments.iter().map(f).sum::<f64>() / self.segments.len().max(1) as f64;
        let _ = writeln!(out, "mean BER AND {:.4} OR {:.4}", mean(|s| s.and), mean(|s| s.or));
        out
    }
}

/// ACT row `sp[0]`, PRE after `tras` slots, ACT row `sp[1]` after `trp` slots, then close the bank.
pub fn segment_kernel(profile: &Profile, bank: u32, tras: u64, trp: u64) -> Result<Assembled, ExperimentError> {
    let normal_tras = profile.min_slots(CommandClass::Act, CommandClass::Pre).max(1);
    let mut p = Program::new();
    p.append_li(R3, bank as i64)?;
    p.append_li(R4, 0)?;
    p.append_ld(R1, R4, 0)?;
    p.append_ld(R2, R4, 1)?;
    p.append_act(R3, false, R1, false, tras.max(1) - 1)?;
    p.append_pre(R3, false, false, trp.max(1) - 1)?;
    p.append_act(R3, false, R2, false, normal_tras - 1)?;
    p.append_pre(R3, false, false, 0)?;
    p.append_end()?;
    let opts = AssembleOptions {
        capacity: profile.platform.instruction_capacity,
        fifo_capacity: profile.platform.fifo_capacity,
        scratchpad_words: profile.platform.scratchpad_words,
        ..AssembleOptions::default()
    };
    Ok(p.assemble_with(&opts)?)
}

fn operands(seed: u64, segment: u32, row_bytes: usize) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, DOMAIN_STUDY3, segment as u64]));
    let mut a = vec![0u8; row_bytes];
    let mut b = vec![0u8; row_bytes];
    rng.fill_bytes(&mut a);
    rng.fill_bytes(&mut b);
    (a, b)
}

struct Bench {
    platform: Platform,
    kernel: Assembled,
    bank: u32,
}

impl Bench {
    fn new(profile: &Profile, seed: u64, bank: u32, combo: TimingCombo) -> Result<Bench, ExperimentError> {
        let kernel = segment_kernel(profile, bank, profile.ns_to_slots(combo.tras_ns), profile.ns_to_slots(combo.trp_ns))?;
        Ok(Bench { platform: Platform::with_device(DramDevice::with_seed(profile, seed)), kernel, bank })
    }

    /// Runs one operation on `segment`; returns the result row and whether rows were activated together.
    fn run(&mut self, segment: u32, op: MajorityOp, a: &[u8], b: &[u8]) -> Result<(Vec<u8>, bool), ExperimentError> {
        let base = segment * SEGMENT_ROWS;
        let n = a.len();
        let (r0, r1, r2) = match op {
            MajorityOp::And => (vec![0u8; n], a.to_vec(), b.to_vec()),
            MajorityOp::Or => (a.to_vec(), vec![0xFFu8; n], b.to_vec()),
        };
        let dev = self.platform.device_mut();
        dev.reset_state();
        dev.fill_row(self.bank, base, &r0)?;
        dev.fill_row(self.bank, base + 1, &r1)?;
        dev.fill_row(self.bank, base + 2, &r2)?;
        let sp = &mut self.platform.core.state.scratchpad;
        sp[0] = base + 1;
        sp[1] = base + 2;
        let report = self.platform.execute(&self.kernel.image)?;
        if !report.halted() {
            return Err(ExperimentError::KernelFailed(format!("{:?}", report.outcome)));
        }
        let activated = !self.platform.device().majority_events().is_empty();
        Ok((self.platform.device_mut().peek_row(self.bank, base)?, activated))
    }
}

fn bit_error_rate(got: &[u8], a: &[u8], b: &[u8], op: MajorityOp) -> f64 {
    let errors: u64 = got
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&g, (&x, &y))| {
            let want = match op {
                MajorityOp::And => x & y,
                MajorityOp::Or => x | y,
            };
            (g ^ want).count_ones() as u64
        })
        .sum();
    errors as f64 / (got.len() * 8) as f64
}

fn run_combo(profile: &Profile, seed: u64, cfg: &Study3Config, combo: TimingCombo) -> Result<Option<Vec<[f64; 2]>>, ExperimentError> {
    let mut bench = Bench::new(profile, seed, cfg.bank, combo)?;
    let row_bytes = profile.geometry.row_bytes();
    let (a, b) = operands(seed, 0, row_bytes);
    if !bench.run(0, MajorityOp::And, &a, &b)?.1 {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(cfg.segments as usize);
    for s in 0..cfg.segments {
        let (a, b) = operands(seed, s, row_bytes);
        let mut bers = [0.0; 2];
        for (k, op) in MajorityOp::ALL.into_iter().enumerate() {
            let (got, activated) = bench.run(s, op, &a, &b)?;
            bers[k] = if activated { bit_error_rate(&got, &a, &b, op) } else { 1.0 };
        }
        out.push(bers);
    }
    Ok(Some(out))
}

/// Runs the segment kernel for every timing combination and segment.
pub fn run_study3(profile: &Profile, cfg: &Study3Config) -> Result<Study3Result, ExperimentError> {
    if profile.fault_model.majority.valid_timing_set.is_empty() {
        return Err(ExperimentError::MajorityUnsupported(profile.name.clone()));
    }
    let g = &profile.geometry;
    if cfg.combos.is_empty() || cfg.segments == 0 || cfg.segments as u64 * SEGMENT_ROWS as u64 > g.rows_per_bank as u64 || cfg.bank >= g.banks {
        return Err(ExperimentError::InvalidConfig("combinations, segments or bank out of range".into()));
    }
    let seed = device_seed(profile, cfg.seed);
    let per_combo = parallel_map(&cfg.combos, |&c| run_combo(profile, seed, cfg, c))?;
    let activating: Vec<bool> = per_combo.iter().map(Option::is_some).collect();
    let measured: Vec<Vec<[f64; 2]>> = per_combo.into_iter().flatten().collect();
    let segments: Vec<SegmentBer> = (0..cfg.segments)
        .map(|s| {
            let best = |k: usize| measured.iter().map(|m| m[s as usize][k]).fold(1.0f64, f64::min);
            SegmentBer { segment: s, and: best(0), or: best(1) }
        })
        .collect();
    let counts = Study3Counts::from_segments(&segments);
    Ok(Study3Result { profile: profile.name.clone(), seed, combos: cfg.combos.clone(), activating, measured, segments, counts })
}
