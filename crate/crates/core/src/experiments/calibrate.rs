//! Fits the disturbance model to interleaving endpoints and the segment
//! error model to majority-operation counts.
//!
//! Both fits work on the seeded cell and segment draws, which do not depend
//! on the fitted parameters, so a fit is exact for its seed and is verified
//! by rerunning the experiment.

use crate::config::{Calibration, Profile, ThresholdDistribution};
use crate::dram::cells::{CellStream, DOMAIN_ROWHAMMER};
use crate::dram::majority::{lane_threshold, segment_draws, MajorityModel};
use crate::dram::rowhammer::gate_match;
use crate::dram::DramDevice;

use super::study1::{run_uncalibrated, triple, Study1Config, Study1Result};
use super::study3::{combo_grid, SegmentBer, Study3Counts};
use super::{device_seed, parallel_map, ExperimentError};

const AGGRESSOR_FILL: u8 = 0xAA;
const VICTIM_FILL: u8 = 0x55;
const SANDWICHED: usize = 1;

/// Sandwiched-victim endpoints of the interleaving sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Study1Targets {
    pub flips_t1: f64,
    pub flips_tmax: f64,
    pub hc_first_t1: f64,
    pub hc_first_tmax: f64,
}

impl Study1Targets {
    /// Endpoints the shipped manufacturer profiles are fitted to.
    pub fn reference(profile: &str) -> Option<Study1Targets> {
        let t = |flips_t1, flips_tmax, hc_first_t1, hc_first_tmax| Study1Targets { flips_t1, flips_tmax, hc_first_t1, hc_first_tmax };
        match profile {
            "mfrA" => Some(t(314.8, 31.9, 99_000.0, 130_000.0)),
            "mfrB" => Some(t(50.7, 9.9, 80_000.0, 108_000.0)),
            "mfrC" => Some(t(604.9, 71.2, 16_000.0, 23_000.0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub alternation_bonus: f64,
    pub threshold: ThresholdDistribution,
    /// Endpoints of a verification run with the fitted profile.
    pub achieved: Study1Targets,
}

/// Disturbance of the sandwiched victim after `h` ACTs per aggressor in turns of `t`.
fn sandwiched_disturbance(w: f64, beta: f64, h: f64, t: f64) -> f64 {
    let switches = 2.0 * (h / t).ceil() - 1.0;
    2.0 * w * h + beta * switches
}

fn weibull_e(u: f64) -> f64 {
    -(-u).ln_1p() / std::f64::consts::LN_2
}

/// Quantiles of every sandwiched-victim cell that the checkered data lets flip, pooled and sorted.
fn flippable_quantiles(profile: &Profile, seed: u64, bank: u32, triples: u32) -> Vec<f64> {
    let rh = &profile.fault_model.rowhammer;
    let g = &profile.geometry;
    let agg = vec![AGGRESSOR_FILL; g.row_bytes()];
    let mut out = Vec::new();
    for k in 0..triples {
        let row = triple(k).victims[SANDWICHED];
        for c in CellStream::new(seed, DOMAIN_ROWHAMMER, bank, row, g.row_bits(), rh.weak_fraction) {
            let Some(center) = gate_match(Some(&agg), c.bit, c.tag, rh.gate.enabled, rh.gate.stride_bits) else { continue };
            let victim_bit = VICTIM_FILL >> (c.bit % 8) & 1 == 1;
            if center != victim_bit {
                out.push(c.u);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let increasing = f(hi) > f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn endpoints(r: &Study1Result, t_max: u64) -> Study1Targets {
    let hc = |t| r.hc_first(t, SANDWICHED).map_or(f64::INFINITY, |h| h as f64);
    Study1Targets {
        flips_t1: r.flips(1, SANDWICHED).unwrap_or(0.0),
        flips_tmax: r.flips(t_max, SANDWICHED).unwrap_or(0.0),
        hc_first_t1: hc(1),
        hc_first_tmax: hc(t_max),
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs()
}

/// Solves the alternation bonus and threshold distribution of `profile` so that
/// the interleaving sweep under `cfg` reproduces `targets`, then verifies the fit.
pub fn calibrate_study1(
    profile: &Profile,
    targets: &Study1Targets,
    cfg: &Study1Config,
) -> Result<(Profile, CalibrationReport), ExperimentError> {
    let diverged = |m: String| Err(ExperimentError::FitDiverged(m));
    let t_max = cfg.t_grid.iter().copied().max().unwrap_or(1).max(2);
    let rh = &profile.fault_model.rowhammer;
    let w = rh.base_disturb * rh.blast.distance1;
    if !(w > 0.0) {
        return diverged("distance-1 disturbance weight must be positive".into());
    }
    if !(targets.flips_t1 > targets.flips_tmax && targets.flips_tmax > 0.0) {
        return diverged("flips must be positive and fall as T grows".into());
    }
    let (h1, hm) = (targets.hc_first_t1, targets.hc_first_tmax);
    if !(h1 > 0.0 && hm >= h1) {
        return diverged("first-flip counts must be positive and not fall as T grows".into());
    }

    // Both first-flip endpoints hit the same weakest cell.
    let denom = (2.0 * h1 - 1.0) - (2.0 * (hm / t_max as f64).ceil() - 1.0);
    if denom <= 0.0 {
        return diverged("first-flip endpoints leave the alternation bonus undetermined".into());
    }
    let beta = 2.0 * w * (hm - h1) / denom;
    let theta_min = sandwiched_disturbance(w, beta, h1, 1.0);

    let per_t1 = (cfg.total_acts / 2) as f64;
    let iters_max = cfg.total_acts / (2 * t_max);
    let acc_t1 = sandwiched_disturbance(w, beta, per_t1, 1.0);
    let acc_tmax = sandwiched_disturbance(w, beta, (iters_max * t_max) as f64, t_max as f64);
    if !(theta_min < acc_tmax && acc_tmax < acc_t1) {
        return diverged(format!("disturbance levels out of order: {theta_min} {acc_tmax} {acc_t1}"));
    }

    let seed = device_seed(profile, cfg.seed);
    let pool = flippable_quantiles(profile, seed, cfg.bank, cfg.triples);
    let rank = |flips: f64| (flips * cfg.triples as f64).round() as usize;
    let (n1, nm) = (rank(targets.flips_t1), rank(targets.flips_tmax));
    if nm == 0 || n1 <= nm || n1 >= pool.len() {
        return diverged(format!("flip targets need {n1} and {nm} of {} flippable cells", pool.len()));
    }
    let between = |n: usize| 0.5 * (pool[n - 1] + pool[n]);
    let (a, b, c) = (weibull_e(pool[0]), weibull_e(between(nm)), weibull_e(between(n1)));

    // theta(u) = location + scale * e(u)^x must pass through all three points.
    let ratio = (acc_t1 - theta_min) / (acc_tmax - theta_min);
    let shape_ratio = |x: f64| (c.powf(x) - a.powf(x)) / (b.powf(x) - a.powf(x));
    let (x_lo, x_hi) = (1e-3, 2.0);
    if !(shape_ratio(x_lo) < ratio && ratio < shape_ratio(x_hi)) {
        return diverged(format!("no threshold shape matches disturbance ratio {ratio:.4}"));
    }
    let x = bisect(x_lo, x_hi, shape_ratio, ratio);
    let scale = (acc_tmax - theta_min) / (b.powf(x) - a.powf(x));
    let location = theta_min - scale * a.powf(x);
    let threshold = ThresholdDistribution { location, median: location + scale, shape: 1.0 / x };

    let mut fitted = profile.clone();
    fitted.fault_model.seed = seed;
    fitted.fault_model.rowhammer.alternation_bonus = beta;
    fitted.fault_model.rowhammer.threshold = threshold.clone();
    fitted.fault_model.calibration = Some(Calibration {
        seed,
        triples: cfg.triples,
        total_acts: cfg.total_acts,
        t_max,
        flips_t1: targets.flips_t1,
        flips_tmax: targets.flips_tmax,
        hc_first_t1: targets.hc_first_t1,
        hc_first_tmax: targets.hc_first_tmax,
    });

    let check = Study1Config { seed: Some(seed), t_grid: vec![1, t_max], emulate_first_triple: false, ..cfg.clone() };
    let achieved = endpoints(&run_uncalibrated(&fitted, &check)?, t_max);
    let ok = within(achieved.flips_t1, targets.flips_t1, 0.05)
        && within(achieved.flips_tmax, targets.flips_tmax, 0.05)
        && within(achieved.hc_first_t1, targets.hc_first_t1, 0.05)
        && within(achieved.hc_first_tmax, targets.hc_first_tmax, 0.05);
    if !ok {
        return diverged(format!("verification run missed the targets: {achieved:?}"));
    }
    Ok((fitted, CalibrationReport { alternation_bonus: beta, threshold, achieved }))
}

/// Segment counts the majority error model is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityTargets {
    pub and_only_3: u32,
    pub both_5: u32,
    pub both_10: u32,
    pub segments: u32,
}

impl Default for MajorityTargets {
    fn default() -> Self {
        MajorityTargets { and_only_3: 35, both_5: 160, both_10: 4546, segments: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityFitReport {
    pub or_median: f64,
    pub or_sigma: f64,
    pub and_gap: f64,
    pub counts: Study3Counts,
}

const CUTOFFS: [f64; 3] = [0.03, 0.05, 0.10];

/// For one segment and activating combination: the error scale and, per cutoff,
/// the largest lane threshold whose error count stays below the cutoff.
#[derive(Debug, Clone)]
struct LaneLimits {
    scale: f64,
    max_threshold: [u32; 3],
}

/// Largest error count strictly below `cutoff` as a bit error rate.
fn allowed_errors(cutoff: f64, bits: u64) -> u64 {
    let mut e = (cutoff * bits as f64).floor() as u64 + 1;
    while e > 0 && e as f64 / bits as f64 >= cutoff {
        e -= 1;
    }
    e
}

fn lane_limits(lane_seed: u64, words: usize, scale: f64, allowed: [u64; 3]) -> LaneLimits {
    let bits = words as u64 * 64;
    let cap = lane_threshold(CUTOFFS[2] * 1.5) as u64 + 1;
    let mut hashes: Vec<u16> = Vec::new();
    for w in 0..words as u64 {
        for q in 0..16u64 {
            let h = crate::dram::cells::splitmix(lane_seed.wrapping_add(w * 16 + q));
            for lane in 0..4 {
                let v = (h >> (16 * lane)) & 0xFFFF;
                if v < cap {
                    hashes.push(v as u16);
                }
            }
        }
    }
    hashes.sort_unstable();
    let max_threshold = allowed.map(|k| match hashes.get(k as usize) {
        Some(&h) => h as u32,
        None if k < bits => cap as u32,
        None => u32::MAX,
    });
    LaneLimits { scale, max_threshold }
}

/// Segment error rates implied by a parameter set, classified per cutoff.
fn classify(draws: &[(f64, f64)], limits: &[Vec<LaneLimits>], p: [f64; 3]) -> Study3Counts {
    let [median, sigma, gap] = p;
    let segs: Vec<SegmentBer> = draws
        .iter()
        .zip(limits)
        .enumerate()
        .map(|(s, (&(z, v), lims))| {
            let or = (median * (sigma * z).exp()).min(0.5);
            let and = or * (1.0 - gap * v);
            // Encode the best cutoff band as a representative rate.
            let band = |eps: f64| {
                let best = lims
                    .iter()
                    .map(|l| {
                        let t = lane_threshold((eps * l.scale).clamp(0.0, 1.0));
                        l.max_threshold.iter().position(|&m| t <= m).unwrap_or(3)
                    })
                    .min()
                    .unwrap_or(3);
                [0.0, 0.04, 0.07, 1.0][best]
            };
            SegmentBer { segment: s as u32, and: band(and), or: band(or) }
        })
        .collect();
    Study3Counts::from_segments(&segs)
}

/// Counts predicted for the segment error parameters without running kernels.
pub fn majority_counts(profile: &Profile, seed: Option<u64>, bank: u32, segments: u32) -> Study3Counts {
    let prep = MajorityPrep::new(profile, device_seed(profile, seed), bank, segments);
    let e = &profile.fault_model.majority.segment_error;
    classify(&prep.draws, &prep.limits, [e.or_median, e.or_sigma, e.and_gap])
}

struct MajorityPrep {
    draws: Vec<(f64, f64)>,
    limits: Vec<Vec<LaneLimits>>,
}

impl MajorityPrep {
    fn new(profile: &Profile, seed: u64, bank: u32, segments: u32) -> MajorityPrep {
        let dev = DramDevice::with_seed(profile, seed);
        let combos: Vec<(u64, u64, f64)> = combo_grid()
            .into_iter()
            .filter_map(|c| {
                let (a, p) = (profile.ns_to_slots(c.tras_ns), profile.ns_to_slots(c.trp_ns));
                dev.majority_trigger(a, p).map(|s| (a, p, s))
            })
            .collect();
        let model = MajorityModel::new(&profile.fault_model.majority, seed, profile.slot_ns);
        let words = profile.geometry.row_bits() as usize / 64;
        let bits = words as u64 * 64;
        let allowed = CUTOFFS.map(|c| allowed_errors(c, bits));
        let ids: Vec<u32> = (0..segments).collect();
        let limits = parallel_map(&ids, |&s| {
            Ok(combos.iter().map(|&(a, p, scale)| lane_limits(model.lane_seed(bank, s, 0, a, p), words, scale, allowed)).collect())
        })
        .expect("lane limits never fail");
        let draws = ids.iter().map(|&s| segment_draws(seed, bank, s)).collect();
        MajorityPrep { draws, limits }
    }
}

/// Finds the middle of the interval of `x` in `[lo, hi]` where `count(x) == target`,
/// with `count` monotone; falls back to the closest reachable value.
fn solve_count(lo: f64, hi: f64, count: impl Fn(f64) -> i64, target: i64) -> f64 {
    let increasing = count(hi) >= count(lo);
    let below = |x: f64| if increasing { count(x) < target } else { count(x) > target };
    let above = |x: f64| if increasing { count(x) > target } else { count(x) < target };
    // first x where not below, and first x where above
    let edge = |pred: &dyn Fn(f64) -> bool| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if pred(m) {
                a = m;
            } else {
                b = m;
            }
        }
        b
    };
    let start = edge(&below);
    let end = edge(&|x| !above(x));
    if end > start {
        0.5 * (start + end)
    } else {
        start
    }
}

/// Fits `or_median`, `or_sigma` and `and_gap` so the majority experiment yields `targets`.
pub fn fit_majority(
    profile: &Profile,
    targets: &MajorityTargets,
    seed: Option<u64>,
    bank: u32,
) -> Result<(Profile, MajorityFitReport), ExperimentError> {
    let diverged = |m: String| Err(ExperimentError::FitDiverged(m));
    let n = targets.segments;
    if !(targets.and_only_3 < n && targets.both_5 < targets.both_10 && targets.both_10 < n && targets.both_5 > 0) {
        return diverged("counts must be ordered and below the segment count".into());
    }
    let seed = device_seed(profile, seed);
    let prep = MajorityPrep::new(profile, seed, bank, n);
    if prep.limits.first().is_none_or(|l| l.is_empty()) {
        return Err(ExperimentError::MajorityUnsupported(profile.name.clone()));
    }

    // Anchor the OR rate at the z quantiles of the two "both" targets.
    let mut zs: Vec<f64> = prep.draws.iter().map(|d| d.0).collect();
    zs.sort_by(f64::total_cmp);
    let mid = |k: u32| 0.5 * (zs[k as usize - 1] + zs[k as usize]);
    let (z10, z5) = (mid(targets.both_10), mid(targets.both_5));
    let params = |e10: f64, e5: f64, gap: f64| {
        let sigma = (e10 / e5).ln() / (z10 - z5);
        [e10 * (-sigma * z10).exp(), sigma, gap]
    };
    let counts = |p: [f64; 3]| classify(&prep.draws, &prep.limits, p);

    let (mut e10, mut e5, mut gap) = (CUTOFFS[2], CUTOFFS[1], 0.5);
    for _ in 0..4 {
        e10 = solve_count(e5 * 1.0001, 0.5, |x| counts(params(x, e5, gap)).both_10 as i64, targets.both_10 as i64);
        e5 = solve_count(1e-4, e10 * 0.9999, |x| counts(params(e10, x, gap)).both_5 as i64, targets.both_5 as i64);
    }
    gap = solve_count(0.0, 1.0, |x| counts(params(e10, e5, x)).and_only_3 as i64, targets.and_only_3 as i64);

    let p = params(e10, e5, gap);
    let got = counts(p);
    let close = |g: u32, w: u32| (g as f64 - w as f64).abs() <= 0.02 * w as f64;
    if !(close(got.and_only_3, targets.and_only_3) && close(got.both_5, targets.both_5) && close(got.both_10, targets.both_10)) {
        return diverged(format!("best parameters give {got:?}"));
    }
    let mut fitted = profile.clone();
    fitted.fault_model.seed = seed;
    let e = &mut fitted.fault_model.majority.segment_error;
    e.or_median = p[0];
    e.or_sigma = p[1];
    e.and_gap = p[2];
    Ok((fitted, MajorityFitReport { or_median: p[0], or_sigma: p[1], and_gap: p[2], counts: got }))
}
