//! Device and platform profiles loaded from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dram::timing::{CommandClass, Scope};

#[derive(Debug, Error)]
#[error("config error in {path}: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
        ConfigError { path: path.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub banks: u32,
    pub rows_per_bank: u32,
    /// 512-bit transfer units per row.
    pub columns_per_row: u32,
    /// Column-address units covered by one transfer.
    #[serde(default = "default_burst")]
    pub burst_length: u32,
}

fn default_burst() -> u32 {
    8
}

impl Geometry {
    pub const TRANSFER_BYTES: usize = 64;
    pub const TRANSFER_BITS: u32 = 512;

    pub fn row_bytes(&self) -> usize {
        self.columns_per_row as usize * Self::TRANSFER_BYTES
    }

    pub fn row_bits(&self) -> u32 {
        self.columns_per_row * Self::TRANSFER_BITS
    }

    pub fn column_addresses(&self) -> u32 {
        self.columns_per_row * self.burst_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRuleSpec {
    pub name: String,
    pub prev: CommandClass,
    pub next: CommandClass,
    pub scope: Scope,
    pub min_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blast {
    pub distance1: f64,
    pub distance2: f64,
}

/// Shifted Weibull over the cell quantile `u`:
/// `location + (median - location) * (-ln(1-u) / ln 2)^(1/shape)`, clamped to at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdDistribution {
    pub location: f64,
    pub median: f64,
    pub shape: f64,
}

impl ThresholdDistribution {
    pub fn quantile(&self, u: f64) -> f64 {
        let e = -(-u).ln_1p() / std::f64::consts::LN_2;
        (self.location + (self.median - self.location) * e.powf(1.0 / self.shape)).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub enabled: bool,
    /// Bit distance between the three aggressor bits a cell's gate inspects.
    pub stride_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowHammerConfig {
    pub enabled: bool,
    pub base_disturb: f64,
    pub alternation_bonus: f64,
    pub blast: Blast,
    /// Fraction of cells with a finite threshold (the rest never flip).
    pub weak_fraction: f64,
    pub threshold: ThresholdDistribution,
    pub gate: GateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidTiming {
    pub tras_ns: f64,
    pub trp_ns: f64,
    #[serde(default = "one")]
    pub error_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Per-segment error rates: `eps_or = or_median * exp(or_sigma * z)`, `eps_and = eps_or * (1 - and_gap * v)`
/// with `z` standard normal and `v` uniform, both drawn per segment from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentErrorModel {
    pub or_median: f64,
    pub or_sigma: f64,
    pub and_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajorityConfig {
    pub tras_threshold_ns: f64,
    pub trp_threshold_ns: f64,
    pub valid_timing_set: Vec<ValidTiming>,
    pub segment_error: SegmentErrorModel,
}

/// Weibull retention times in milliseconds for a sparse set of leaky cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionConfig {
    pub leaky_fraction: f64,
    pub scale_ms: f64,
    pub shape: f64,
}

/// Interleaving-experiment endpoints a profile's disturbance model was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub seed: u64,
    pub triples: u32,
    pub total_acts: u64,
    pub t_max: u64,
    /// Average sandwiched-victim flips at T = 1 and T = `t_max`.
    pub flips_t1: f64,
    pub flips_tmax: f64,
    /// Minimum ACTs per aggressor to the first flip at T = 1 and T = `t_max`.
    pub hc_first_t1: f64,
    pub hc_first_tmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModelConfig {
    pub seed: u64,
    #[serde(default)]
    pub temperature_c: f64,
    pub rowhammer: RowHammerConfig,
    pub majority: MajorityConfig,
    #[serde(default)]
    pub retention: Option<RetentionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConstants {
    #[serde(rename = "ACT", default)]
    pub act: f64,
    #[serde(rename = "PRE", default)]
    pub pre: f64,
    #[serde(rename = "READ", default)]
    pub read: f64,
    #[serde(rename = "WRITE", default)]
    pub write: f64,
    #[serde(rename = "REF", default)]
    pub refresh: f64,
    #[serde(rename = "ZQS", default)]
    pub zqs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub instruction_capacity: usize,
    pub scratchpad_words: usize,
    pub fifo_capacity: u32,
    /// Transfers moved to the host per core cycle.
    pub drain_rate: f64,
    pub refresh_ns: f64,
    pub zqs_ns: f64,
    pub periodic_read_ns: f64,
    /// Bus occupancy of the calibration command issued by the scheduler.
    pub zqs_busy_ns: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            instruction_capacity: 2048,
            scratchpad_words: 1024,
            fifo_capacity: 512,
            drain_rate: 0.25,
            refresh_ns: 7800.0,
            zqs_ns: 128e6,
            periodic_read_ns: 1e6,
            zqs_busy_ns: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub standard: String,
    pub slot_ns: f64,
    pub geometry: Geometry,
    pub timing_rules: Vec<TimingRuleSpec>,
    pub fault_model: FaultModelConfig,
    #[serde(default)]
    pub energy: EnergyConstants,
    #[serde(default)]
    pub platform: PlatformConfig,
}

const BUILTIN: &[(&str, &str)] = &[
    ("ddr4_default", include_str!("../profiles/ddr4_default.json")),
    ("ddr3_default", include_str!("../profiles/ddr3_default.json")),
    ("mfrA", include_str!("../profiles/mfrA.json")),
    ("mfrB", include_str!("../profiles/mfrB.json")),
    ("mfrC", include_str!("../profiles/mfrC.json")),
];

impl Profile {
    pub fn from_json(text: &str, origin: &str) -> Result<Profile, ConfigError> {
        let p: Profile = serde_json::from_str(text).map_err(|e| ConfigError::new(origin, e.to_string()))?;
        p.validate().map_err(|reason| ConfigError::new(origin, reason))?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Profile, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(&origin, e.to_string()))?;
        Profile::from_json(&text, &origin)
    }

    /// Names of the profiles compiled into the library.
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    /// Looks up a built-in profile by name, file name, or manufacturer letter (`A`, `B`, `C`).
    pub fn builtin(name: &str) -> Option<Profile> {
        let key = name.trim_end_matches(".json");
        let key = match key {
            "A" | "B" | "C" => format!("mfr{key}"),
            k => k.to_string(),
        };
        BUILTIN
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(n, text)| Profile::from_json(text, n).expect("built-in profile is valid"))
    }

    /// Resolves a built-in name first, then a file path.
    pub fn resolve(spec: &str) -> Result<Profile, ConfigError> {
        match Profile::builtin(spec) {
            Some(p) => Ok(p),
            None => Profile::load(Path::new(spec)),
        }
    }

    pub fn ddr4_default() -> Profile {
        Profile::builtin("ddr4_default").unwrap()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn ns_to_slots(&self, ns: f64) -> u64 {
        (ns / self.slot_ns - 1e-9).ceil().max(0.0) as u64
    }

    /// Largest configured minimum delay between two command classes, in slots.
    pub fn min_slots(&self, prev: CommandClass, next: CommandClass) -> u64 {
        self.timing_rules
            .iter()
            .filter(|r| r.prev == prev && r.next == next)
            .map(|r| self.ns_to_slots(r.min_ns))
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let g = &self.geometry;
        if self.slot_ns <= 0.0 {
            return Err("slot_ns must be positive".into());
        }
        if g.banks == 0 || g.rows_per_bank == 0 || g.columns_per_row == 0 || g.burst_length == 0 {
            return Err("geometry counts must be at least 1".into());
        }
        for r in &self.timing_rules {
            if r.min_ns < 0.0 {
                return Err(format!("rule {} has a negative delay", r.name));
            }
            let slots = r.min_ns / self.slot_ns;
            if (slots - slots.round()).abs() > 1e-6 {
                return Err(format!("rule {} ({} ns) is not a multiple of the {} ns slot", r.name, r.min_ns, self.slot_ns));
            }
        }
        let rh = &self.fault_model.rowhammer;
        if !(0.0..=1.0).contains(&rh.weak_fraction) {
            return Err("weak_fraction must be a probability".into());
        }
        if rh.base_disturb < 0.0 || rh.alternation_bonus < 0.0 || rh.blast.distance1 < 0.0 || rh.blast.distance2 < 0.0 {
            return Err("rowhammer weights must be non-negative".into());
        }
        if !(rh.blast.distance2 < 1.0) {
            return Err("distance-2 weight must be below 1".into());
        }
        if rh.threshold.shape <= 0.0 || rh.threshold.median <= rh.threshold.location || rh.threshold.median <= 0.0 {
            return Err("threshold distribution needs shape > 0 and median above location".into());
        }
        if rh.gate.stride_bits == 0 || rh.gate.stride_bits >= Geometry::TRANSFER_BITS {
            return Err("gate stride must be within a transfer".into());
        }
        let m = &self.fault_model.majority;
        let e = &m.segment_error;
        if !(0.0..=1.0).contains(&e.or_median) || e.or_sigma < 0.0 || !(0.0..=1.0).contains(&e.and_gap) {
            return Err("segment error model parameters out of range".into());
        }
        if m.valid_timing_set.iter().any(|v| v.error_scale < 0.0) {
            return Err("error_scale must be non-negative".into());
        }
        if let Some(r) = &self.fault_model.retention {
            if !(0.0..=1.0).contains(&r.leaky_fraction) || r.scale_ms <= 0.0 || r.shape <= 0.0 {
                return Err("retention parameters out of range".into());
            }
        }
        let p = &self.platform;
        if p.drain_rate < 0.0 || p.fifo_capacity == 0 || p.instruction_capacity == 0 || p.scratchpad_words == 0 {
            return Err("platform parameters out of range".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load() {
        for name in Profile::builtin_names() {
            let p = Profile::builtin(name).unwrap();
            assert_eq!(p.name, name);
        }
        assert_eq!(Profile::builtin("ddr3_default").unwrap().slot_ns, 2.5);
        assert_eq!(Profile::builtin("ddr4_default.json").unwrap().slot_ns, 1.5);
        assert_eq!(Profile::builtin("C").unwrap().name, "mfrC");
    }

    #[test]
    fn missing_timing_table_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&Profile::ddr4_default().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("timing_rules");
        let err = Profile::from_json(&v.to_string(), "x.json").unwrap_err();
        assert!(err.reason.contains("timing_rules"), "{}", err.reason);
    }

    #[test]
    fn off_grid_delay_is_rejected() {
        let mut p = Profile::ddr4_default();
        p.timing_rules[0].min_ns = 14.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn slots_conversion() {
        let p = Profile::ddr4_default();
        assert_eq!(p.ns_to_slots(33.0), 22);
        assert_eq!(p.ns_to_slots(32.0), 22);
        assert_eq!(p.min_slots(CommandClass::Act, CommandClass::Read), 9);
    }

    #[test]
    fn weibull_quantile_median() {
        let d = ThresholdDistribution { location: 1000.0, median: 5000.0, shape: 3.0 };
        assert!((d.quantile(0.5) - 5000.0).abs() < 1e-6);
        assert!(d.quantile(0.1) < d.quantile(0.2));
        let neg = ThresholdDistribution { location: -1e6, median: 10.0, shape: 1.0 };
        assert_eq!(neg.quantile(1e-12), 1.0);
    }
}
