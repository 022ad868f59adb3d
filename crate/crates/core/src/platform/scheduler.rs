//! Periodic refresh, calibration and read tasks injected between program runs.

use crate::config::Profile;
use crate::dram::timing::CommandClass;
use crate::dram::DeviceCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTask {
    Refresh,
    Zqs,
    PeriodicRead,
}

impl PosTask {
    /// Highest priority first.
    pub const ALL: [PosTask; 3] = [PosTask::Refresh, PosTask::Zqs, PosTask::PeriodicRead];

    pub fn name(self) -> &'static str {
        match self {
            PosTask::Refresh => "refresh",
            PosTask::Zqs => "zqs",
            PosTask::PeriodicRead => "periodic_read",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub task: PosTask,
    pub slot: u64,
}

#[derive(Debug, Clone, Copy)]
struct TaskState {
    enabled: bool,
    period: u64,
    next_due: u64,
}

#[derive(Debug, Clone)]
pub struct PeriodicScheduler {
    tasks: [TaskState; 3],
    busy_until: u64,
    trp: u64,
    trcd: u64,
    tras: u64,
    trtp: u64,
    trfc: u64,
    zqs_busy: u64,
}

impl PeriodicScheduler {
    pub fn new(profile: &Profile) -> PeriodicScheduler {
        let p = &profile.platform;
        let task = |ns: f64| TaskState { enabled: false, period: profile.ns_to_slots(ns).max(1), next_due: 0 };
        PeriodicScheduler {
            tasks: [task(p.refresh_ns), task(p.zqs_ns), task(p.periodic_read_ns)],
            busy_until: 0,
            trp: profile.min_slots(CommandClass::Pre, CommandClass::Act).max(1),
            trcd: profile.min_slots(CommandClass::Act, CommandClass::Read).max(1),
            tras: profile.min_slots(CommandClass::Act, CommandClass::Pre).max(1),
            trtp: profile.min_slots(CommandClass::Read, CommandClass::Pre).max(1),
            trfc: profile.min_slots(CommandClass::Ref, CommandClass::Act).max(1),
            zqs_busy: profile.ns_to_slots(p.zqs_busy_ns).max(1),
        }
    }

    fn idx(task: PosTask) -> usize {
        task as usize
    }

    pub fn set_enabled(&mut self, task: PosTask, on: bool, now_slot: u64) {
        let t = &mut self.tasks[Self::idx(task)];
        t.enabled = on;
        t.next_due = now_slot + t.period;
    }

    pub fn is_enabled(&self, task: PosTask) -> bool {
        self.tasks[Self::idx(task)].enabled
    }

    pub fn any_enabled(&self) -> bool {
        self.tasks.iter().any(|t| t.enabled)
    }

    pub fn period(&self, task: PosTask) -> u64 {
        self.tasks[Self::idx(task)].period
    }

    pub fn next_due(&self, task: PosTask) -> u64 {
        self.tasks[Self::idx(task)].next_due
    }

    /// Bus slot until which injected commands own the bus.
    pub fn busy_until(&self) -> u64 {
        self.busy_until
    }

    /// The earliest enabled task due before `slot`; ties go to the higher priority.
    pub fn due_before(&self, slot: u64) -> Option<PosTask> {
        PosTask::ALL
            .into_iter()
            .filter(|&t| self.tasks[Self::idx(t)].enabled && self.tasks[Self::idx(t)].next_due < slot)
            .min_by_key(|&t| self.tasks[Self::idx(t)].next_due)
    }

    /// Command offsets of the task's stored program and its bus occupancy.
    pub fn canned(&self, task: PosTask) -> (Vec<(u64, DeviceCommand)>, u64) {
        match task {
            PosTask::Refresh => {
                (vec![(0, DeviceCommand::prea()), (self.trp, DeviceCommand::refresh())], self.trp + self.trfc)
            }
            PosTask::Zqs => (vec![(0, DeviceCommand::zqs())], self.zqs_busy),
            PosTask::PeriodicRead => {
                let pre = self.tras.max(self.trcd + self.trtp);
                (
                    vec![(0, DeviceCommand::act(0, 0)), (self.trcd, DeviceCommand::read(0, 0)), (pre, DeviceCommand::pre(0))],
                    pre + self.trp,
                )
            }
        }
    }

    /// Records an injection at `at`; periods that fell behind are skipped.
    pub(crate) fn complete(&mut self, task: PosTask, at: u64, busy_until: u64) {
        let t = &mut self.tasks[Self::idx(task)];
        t.next_due += t.period;
        if t.next_due <= at {
            t.next_due += (at - t.next_due) / t.period * t.period + t.period;
        }
        self.busy_until = self.busy_until.max(busy_until);
    }
}
