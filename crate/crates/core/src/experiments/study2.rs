//! Data-pattern coverage: which cells of a victim cache block flip under
//! 8-bit-repeated aggressor data versus random 512-bit aggressor data.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Geometry, Profile};
use crate::dram::cells::mix;
use crate::dram::{DramDevice, HammerTiming};

use super::{device_seed, parallel_map, ExperimentError};

const DOMAIN_STUDY2: u64 = 0x5354_5532;
const INITS: [u8; 2] = [0x00, 0xFF];

#[derive(Debug, Clone, PartialEq)]
pub struct Study2Config {
    /// Fault-model and victim-selection seed; `None` uses the profile's.
    pub seed: Option<u64>,
    pub bank: u32,
    pub victims: u32,
    /// ACTs per aggressor in every double-sided run.
    pub per_aggressor: u64,
    pub random_patterns: u32,
}

impl Default for Study2Config {
    fn default() -> Self {
        Study2Config { seed: None, bank: 0, victims: 24, per_aggressor: 1 << 19, random_patterns: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimBlock {
    pub row: u32,
    /// Transfer index within the row.
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VictimCoverage {
    pub block: VictimBlock,
    /// Bit offsets inside the block that flipped under some repeated-byte pattern.
    pub repeated: BTreeSet<u32>,
    /// Bit offsets that flipped under some random pattern.
    pub random: BTreeSet<u32>,
}

impl VictimCoverage {
    /// Cells only the random patterns reach.
    pub fn random_only(&self) -> usize {
        self.random.difference(&self.repeated).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study2Result {
    pub profile: String,
    pub seed: u64,
    pub victims: Vec<VictimCoverage>,
}

fn join(set: &BTreeSet<u32>) -> String {
    set.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";")
}

impl Study2Result {
    /// Fraction of victims where random patterns flip at least one extra cell.
    pub fn fraction_with_extra(&self) -> f64 {
        if self.victims.is_empty() {
            return 0.0;
        }
        self.victims.iter().filter(|v| v.random_only() > 0).count() as f64 / self.victims.len() as f64
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("pattern_class,victim_row,column,flipped_bits\n");
        for v in &self.victims {
            for (class, set) in [("repeated_8bit", &v.repeated), ("random_512bit", &v.random)] {
                let _ = writeln!(out, "{class},{},{},{}", v.block.row, v.block.column, join(set));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("profile {} seed {} victims {}\n", self.profile, self.seed, self.victims.len());
        let _ = writeln!(out, "{:>8} {:>6} {:>10} {:>10} {:>12}", "row", "column", "repeated", "random", "random only");
        for v in &self.victims {
            let _ = writeln!(
                out,
                "{:>8} {:>6} {:>10} {:>10} {:>12}",
                v.block.row,
                v.block.column,
                v.repeated.len(),
                v.random.len(),
                v.random_only()
            );
        }
        let _ = writeln!(out, "rows with extra random-pattern cells: {:.1}%", 100.0 * self.fraction_with_extra());
        out
    }
}

/// Distinct victim blocks away from the bank edges.
fn pick_victims(profile: &Profile, count: u32, rng: &mut ChaCha8Rng) -> Result<Vec<VictimBlock>, ExperimentError> {
    let rows = profile.geometry.rows_per_bank;
    if rows < 8 || count > rows - 4 {
        return Err(ExperimentError::InvalidConfig(format!("cannot pick {count} victims from {rows} rows")));
    }
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < count as usize {
        let row = rng.random_range(2..rows - 2);
        if used.insert(row) {
            out.push(VictimBlock { row, column: rng.random_range(0..profile.geometry.columns_per_row) });
        }
    }
    Ok(out)
}

fn flipped_bits(before: u8, after: &[u8]) -> impl Iterator<Item = u32> + '_ {
    after.iter().enumerate().flat_map(move |(i, &b)| {
        let d = b ^ before;
        (0..8).filter(move |k| d >> k & 1 == 1).map(move |k| i as u32 * 8 + k)
    })
}

fn cover(
    profile: &Profile,
    seed: u64,
    cfg: &Study2Config,
    block: VictimBlock,
    random: &[[u8; Geometry::TRANSFER_BYTES]],
) -> Result<VictimCoverage, ExperimentError> {
    let timing = HammerTiming::from_profile(profile);
    let burst = profile.geometry.burst_length;
    let mut dev = DramDevice::with_seed(profile, seed);
    dev.set_region_of_interest(Some(&[block.column]));
    let (a1, a2) = (block.row - 1, block.row + 1);
    let mut run = |pattern: &[u8]| -> Result<BTreeSet<u32>, ExperimentError> {
        let mut set = BTreeSet::new();
        for init in INITS {
            dev.reset_state();
            dev.fill_row_pattern(cfg.bank, a1, pattern)?;
            dev.fill_row_pattern(cfg.bank, a2, pattern)?;
            dev.fill_row_pattern(cfg.bank, block.row, &[init])?;
            dev.hammer_pattern(cfg.bank, &[(a1, 1), (a2, 1)], cfg.per_aggressor, 0, timing)?;
            let col = dev.peek_column(cfg.bank, block.row, block.column * burst)?;
            set.extend(flipped_bits(init, &col));
        }
        Ok(set)
    };
    let mut repeated = BTreeSet::new();
    for byte in 0..=255u8 {
        repeated.extend(run(&[byte])?);
    }
    let mut rand_set = BTreeSet::new();
    for p in random {
        rand_set.extend(run(p)?);
    }
    Ok(VictimCoverage { block, repeated, random: rand_set })
}

/// Hammers every victim block with all repeated-byte and random aggressor patterns.
pub fn run_study2(profile: &Profile, cfg: &Study2Config) -> Result<Study2Result, ExperimentError> {
    if !profile.fault_model.rowhammer.enabled {
        return Err(ExperimentError::CalibrationMissing(profile.name.clone()));
    }
    if cfg.bank >= profile.geometry.banks || cfg.per_aggressor == 0 {
        return Err(ExperimentError::InvalidConfig("bank or ACT budget out of range".into()));
    }
    let seed = device_seed(profile, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, DOMAIN_STUDY2]));
    let blocks = pick_victims(profile, cfg.victims, &mut rng)?;
    let jobs: Vec<(VictimBlock, Vec<[u8; Geometry::TRANSFER_BYTES]>)> = blocks
        .into_iter()
        .map(|b| {
            let pats = (0..cfg.random_patterns)
                .map(|_| {
                    let mut p = [0u8; Geometry::TRANSFER_BYTES];
                    rng.fill(&mut p[..]);
                    p
                })
                .collect();
            (b, pats)
        })
        .collect();
    let victims = parallel_map(&jobs, |(b, pats)| cover(profile, seed, cfg, *b, pats))?;
    Ok(Study2Result { profile: profile.name.clone(), seed, victims })
}
