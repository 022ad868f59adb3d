//! Simulated board: readback FIFO, host link drain, periodic operation
//! scheduler, and the load/execute/receive workflow around one core and device.

mod scheduler;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, Profile};
use crate::dram::{CommandEvents, DeviceCommand, DeviceError, DramDevice, Transfer, Violation};
use crate::emulator::{Core, LoadError, RunReport};
use crate::isa::DramOpcode;
pub use scheduler::{Injection, PeriodicScheduler, PosTask};

/// Cycle budget used by [`Platform::execute`].
pub const DEFAULT_MAX_CYCLES: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct ReadbackFifo {
    capacity: u32,
    queue: VecDeque<Transfer>,
    high_water: u32,
    overflows: u64,
}

impl ReadbackFifo {
    pub fn new(capacity: u32) -> ReadbackFifo {
        ReadbackFifo { capacity, queue: VecDeque::new(), high_water: 0, overflows: 0 }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn len(&self) -> u32 {
        self.queue.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn free(&self) -> u32 {
        self.capacity - self.len()
    }

    /// Appends a transfer; a full FIFO drops it and counts an overflow.
    pub fn push(&mut self, t: Transfer) -> bool {
        if self.len() >= self.capacity {
            self.overflows += 1;
            return false;
        }
        self.queue.push_back(t);
        self.high_water = self.high_water.max(self.len());
        true
    }

    pub fn pop(&mut self) -> Option<Transfer> {
        self.queue.pop_front()
    }

    pub fn high_water(&self) -> u32 {
        self.high_water
    }

    pub fn reset_high_water(&mut self) {
        self.high_water = self.len();
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    pub fn clear(&mut self) {
        self.queue.clear();
        self.high_water = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Proceed,
    Stall,
}

/// Admits a run of `hint` READs only if all of them fit in the FIFO.
pub fn fifo_gate(fifo: &ReadbackFifo, hint: u32) -> Gate {
    if fifo.free() >= hint {
        Gate::Proceed
    } else {
        Gate::Stall
    }
}

/// Moves transfers from the FIFO to a host-side buffer at a fixed average rate.
#[derive(Debug, Clone)]
pub struct HostDrain {
    rate: f64,
    credit: f64,
    last_cycle: u64,
    buffer: VecDeque<Transfer>,
}

impl HostDrain {
    pub fn new(rate: f64) -> HostDrain {
        HostDrain { rate: rate.max(0.0), credit: 0.0, last_cycle: 0, buffer: VecDeque::new() }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.rate = rate.max(0.0);
    }

    /// Drains whole transfers earned between the last call and `cycle`.
    pub fn advance(&mut self, fifo: &mut ReadbackFifo, cycle: u64) {
        if cycle <= self.last_cycle {
            return;
        }
        self.credit += self.rate * (cycle - self.last_cycle) as f64;
        self.last_cycle = cycle;
        let n = (self.credit.floor() as u64).min(fifo.len() as u64);
        for _ in 0..n {
            self.buffer.extend(fifo.pop());
        }
        self.credit -= n as f64;
        if fifo.is_empty() {
            self.credit = self.credit.fract();
        }
    }

    pub fn sync(&mut self, cycle: u64) {
        self.last_cycle = self.last_cycle.max(cycle);
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn take(&mut self, n: usize) -> Vec<Transfer> {
        let n = n.min(self.buffer.len());
        self.buffer.drain(..n).collect()
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
        self.credit = 0.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Core { pc: u32 },
    Scheduler(PosTask),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub slot: u64,
    pub op: DramOpcode,
    pub bank: Option<u32>,
    pub addr: Option<u32>,
    pub origin: Origin,
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("slot,{},{},{},{}", self.slot, self.op.mnemonic(), opt(self.bank), opt(self.addr))
    }
}

pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// Everything the core talks to: device, FIFO, host link and scheduler.
#[derive(Debug, Clone)]
pub struct System {
    pub device: DramDevice,
    pub fifo: ReadbackFifo,
    pub drain: HostDrain,
    pub scheduler: PeriodicScheduler,
    trace: Option<Vec<TraceRecord>>,
    injections: Vec<Injection>,
}

impl System {
    pub fn new(profile: &Profile) -> System {
        System::with_device(DramDevice::new(profile))
    }

    pub fn with_device(device: DramDevice) -> System {
        let p = device.profile().platform.clone();
        let scheduler = PeriodicScheduler::new(device.profile());
        System {
            device,
            fifo: ReadbackFifo::new(p.fifo_capacity),
            drain: HostDrain::new(p.drain_rate),
            scheduler,
            trace: None,
            injections: Vec::new(),
        }
    }

    pub fn enable_trace(&mut self, on: bool) {
        self.trace = if on { Some(self.trace.take().unwrap_or_default()) } else { None };
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn injections(&self) -> &[Injection] {
        &self.injections
    }

    pub(crate) fn issue(
        &mut self,
        cmd: DeviceCommand,
        slot: u64,
        wdr: &Transfer,
        origin: Origin,
    ) -> Result<CommandEvents, DeviceError> {
        let ev = self.device.apply(cmd, slot, wdr)?;
        if let Some(t) = self.trace.as_mut() {
            let (bank, addr) = match cmd.op {
                DramOpcode::Act | DramOpcode::Read | DramOpcode::Write => (Some(cmd.bank), Some(cmd.addr)),
                DramOpcode::Pre => (Some(cmd.bank), None),
                _ => (None, None),
            };
            t.push(TraceRecord { slot, op: cmd.op, bank, addr, origin });
        }
        Ok(ev)
    }

    /// Runs every scheduler task due before `to_slot`, starting no earlier than `from_slot`.
    pub(crate) fn idle(&mut self, from_slot: u64, to_slot: u64) -> Result<(), DeviceError> {
        while let Some(task) = self.scheduler.due_before(to_slot) {
            let at = self.scheduler.next_due(task).max(from_slot).max(self.scheduler.busy_until());
            let (cmds, busy) = self.scheduler.canned(task);
            self.device.set_current_pc(None);
            for (offset, cmd) in cmds {
                self.issue(cmd, at + offset, &[0u8; 64], Origin::Scheduler(task))?;
            }
            self.scheduler.complete(task, at, at + busy);
            self.injections.push(Injection { task, slot: at });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
}

/// A core, a device and the board plumbing between them.
#[derive(Debug, Clone)]
pub struct Platform {
    pub core: Core,
    pub sys: System,
    max_cycles: u64,
}

impl Platform {
    /// Loads a profile from a JSON file or a built-in name.
    pub fn initialize(config: impl AsRef<Path>) -> Result<Platform, PlatformError> {
        let s = config.as_ref().to_string_lossy();
        let profile = Profile::resolve(&s)?;
        Ok(Platform::new(&profile))
    }

    pub fn new(profile: &Profile) -> Platform {
        Platform::with_device(DramDevice::new(profile))
    }

    pub fn with_device(device: DramDevice) -> Platform {
        let p = &device.profile().platform;
        let core = Core::new(p.instruction_capacity, p.scratchpad_words);
        Platform { core, sys: System::with_device(device), max_cycles: DEFAULT_MAX_CYCLES }
    }

    pub fn profile(&self) -> &Profile {
        self.sys.device.profile()
    }

    pub fn device(&self) -> &DramDevice {
        &self.sys.device
    }

    pub fn device_mut(&mut self) -> &mut DramDevice {
        &mut self.sys.device
    }

    pub fn set_max_cycles(&mut self, max_cycles: u64) {
        self.max_cycles = max_cycles;
    }

    /// Turns a scheduler task on or off; an enabled task first fires one period from now.
    pub fn set_periodic(&mut self, task: PosTask, on: bool) {
        let now = self.core.state.cycle * 4;
        self.sys.scheduler.set_enabled(task, on, now);
    }

    pub fn set_drain_rate(&mut self, rate: f64) {
        self.sys.drain.set_rate(rate);
    }

    pub fn enable_trace(&mut self, on: bool) {
        self.sys.enable_trace(on);
    }

    pub fn load(&mut self, image: &[u8]) -> Result<(), LoadError> {
        self.core.load_program(image)
    }

    /// Loads `image` and runs it to END, a trap or the cycle budget.
    pub fn execute(&mut self, image: &[u8]) -> Result<RunReport, LoadError> {
        self.core.load_program(image)?;
        Ok(self.core.run(&mut self.sys, self.max_cycles))
    }

    /// Hands up to `n` transfers to the host, waiting on the link for data still in the FIFO.
    pub fn receive_data(&mut self, n: usize) -> Vec<Transfer> {
        let sys = &mut self.sys;
        let mut cycle = self.core.state.cycle;
        while sys.drain.buffered() < n && !sys.fifo.is_empty() {
            if sys.drain.rate() > 0.0 {
                cycle += 1;
                sys.drain.advance(&mut sys.fifo, cycle);
            } else {
                let t = sys.fifo.pop().unwrap();
                sys.drain.buffer.push_back(t);
            }
        }
        self.core.state.cycle = cycle;
        sys.drain.take(n)
    }

    pub fn violations(&self) -> &[Violation] {
        self.sys.device.violations()
    }
}
