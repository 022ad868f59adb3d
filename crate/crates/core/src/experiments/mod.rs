//! Seeded reproductions of the interleaved-hammering, data-pattern and
//! in-DRAM majority experiments, with CSV output and the fitting tools that
//! produce the shipped fault-model parameters.

mod calibrate;
mod study1;
mod study2;
mod study3;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::config::Profile;
use crate::dram::DeviceError;
use crate::emulator::LoadError;
use crate::program::ProgramError;

pub use calibrate::{
    calibrate_study1, fit_majority, majority_counts, CalibrationReport, MajorityFitReport, MajorityTargets, Study1Targets,
};
pub use study1::{interleave_kernel, run_study1, triple, Study1Config, Study1Result, Study1Row, Triple, VICTIMS};
pub use study2::{run_study2, Study2Config, Study2Result, VictimBlock, VictimCoverage};
pub use study3::{
    combo_grid, run_study3, segment_kernel, MajorityOp, SegmentBer, Study3Config, Study3Counts, Study3Result, TimingCombo,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("profile `{0}` carries no fitted disturbance model")]
    CalibrationMissing(String),
    #[error("profile `{0}` has no timing combination that activates several rows")]
    MajorityUnsupported(String),
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("emulated kernel and replay disagree at T = {t}")]
    EmulatorMismatch { t: u64 },
    #[error("kernel did not reach END: {0}")]
    KernelFailed(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Load(#[from] LoadError),
}

/// The fault-model seed a run uses: the override if given, else the profile's.
pub fn device_seed(profile: &Profile, seed: Option<u64>) -> u64 {
    seed.unwrap_or(profile.fault_model.seed)
}

/// Applies `f` to every item on worker threads and returns results in input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>, ExperimentError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, ExperimentError> + Sync,
{
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, ExperimentError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item processed")).collect()
}

fn count_differing(row: &[u8], fill: u8) -> u32 {
    row.iter().map(|&b| (b ^ fill).count_ones()).sum()
}

#[cfg(test)]
mod tests;
