//! Offline timing simulation with per-instruction violation reports, and an
//! interactive session with breakpoints, stepping and state probes.

mod vcd;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::config::Profile;
use crate::dram::{violations_csv, Violation};
use crate::emulator::{LoadError, RunReport, StepEvents, StepOutcome, Trap};
use crate::isa::disassemble;
use crate::platform::Platform;
use crate::program::Assembled;
pub use vcd::{write_vcd, VcdRecorder};

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    pub run: RunReport,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn csv(&self) -> String {
        violations_csv(&self.violations)
    }

    /// One line per violation with the issuing instruction address.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            let pc = v.pc.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("pc {pc}: {}\n", v.csv_line()));
        }
        out
    }
}

/// Runs `image` on a fresh device with the scheduler off and reports every violation.
pub fn simulate(image: &[u8], profile: &Profile) -> Result<ViolationReport, LoadError> {
    let mut p = Platform::new(profile);
    let run = p.execute(image)?;
    Ok(ViolationReport { violations: run.violations.clone(), run })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DebugError {
    #[error("unknown label or address `{0}`")]
    UnknownLocation(String),
    #[error("index {addr} is out of range (limit {len})")]
    OutOfRange { addr: u64, len: usize },
    #[error("cannot parse probe target `{0}`")]
    BadTarget(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Breakpoint { pc: u32 },
    StepsDone { pc: u32 },
    Halted,
    Trapped(Trap),
    AlreadyHalted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Register(u8),
    Scratchpad { start: usize, end: usize },
    WdrSlice(usize),
}

impl ProbeTarget {
    /// Accepts `R3`, `CASR`, `sp[4..8]`, `sp[4]` and `wdr[2]`.
    pub fn parse(s: &str) -> Result<ProbeTarget, DebugError> {
        let bad = || DebugError::BadTarget(s.to_string());
        let inner = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_suffix(']'));
        if let Some(r) = inner("sp[") {
            let (a, b) = match r.split_once("..") {
                Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
                None => {
                    let a: usize = r.trim().parse().map_err(|_| bad())?;
                    (a, a + 1)
                }
            };
            return Ok(ProbeTarget::Scratchpad { start: a, end: b });
        }
        if let Some(r) = inner("wdr[") {
            return Ok(ProbeTarget::WdrSlice(r.trim().parse().map_err(|_| bad())?));
        }
        match crate::isa::parse_register(s) {
            Some(r) if r.is_narrow() => Ok(ProbeTarget::Register(r.index())),
            _ => Err(bad()),
        }
    }
}

/// A platform under interactive control.
pub struct DebugSession {
    pub platform: Platform,
    assembled: Assembled,
    breakpoints: BTreeSet<u32>,
    violation_cursor: usize,
    last: Option<StepEvents>,
    vcd: Option<VcdRecorder>,
}

impl DebugSession {
    pub fn new(profile: &Profile, assembled: Assembled) -> Result<DebugSession, LoadError> {
        let mut platform = Platform::new(profile);
        platform.load(&assembled.image)?;
        Ok(DebugSession { platform, assembled, breakpoints: BTreeSet::new(), violation_cursor: 0, last: None, vcd: None })
    }

    /// Records bank state, commands and FIFO occupancy for [`DebugSession::vcd`].
    pub fn record_waveform(&mut self) {
        self.platform.enable_trace(true);
        self.vcd = Some(VcdRecorder::default());
    }

    pub fn vcd(&self) -> Option<String> {
        let rec = self.vcd.as_ref()?;
        Some(rec.render(self.platform.sys.trace(), self.platform.profile()))
    }

    pub fn pc(&self) -> u32 {
        self.platform.core.state.pc
    }

    pub fn last_events(&self) -> Option<&StepEvents> {
        self.last.as_ref()
    }

    pub fn resolve(&self, loc: &str) -> Result<u32, DebugError> {
        let addr: u64 = match self.assembled.address_of(loc) {
            Some(a) => a as u64,
            None => loc.parse().map_err(|_| DebugError::UnknownLocation(loc.to_string()))?,
        };
        let len = self.assembled.instructions.len();
        if addr as usize >= len {
            return Err(DebugError::OutOfRange { addr, len });
        }
        Ok(addr as u32)
    }

    pub fn add_breakpoint(&mut self, loc: &str) -> Result<u32, DebugError> {
        let a = self.resolve(loc)?;
        self.breakpoints.insert(a);
        Ok(a)
    }

    pub fn remove_breakpoint(&mut self, addr: u32) -> bool {
        self.breakpoints.remove(&addr)
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = u32> + '_ {
        self.breakpoints.iter().copied()
    }

    fn step_once(&mut self) -> Option<StopReason> {
        let p = &mut self.platform;
        let ev = p.core.step(&mut p.sys);
        if let Some(rec) = self.vcd.as_mut() {
            rec.sample(&ev, p.sys.fifo.len());
        }
        let stop = match &ev.outcome {
            StepOutcome::Continue => None,
            StepOutcome::Halted => Some(StopReason::Halted),
            StepOutcome::AlreadyHalted => Some(StopReason::AlreadyHalted),
            StepOutcome::Trapped(t) => Some(StopReason::Trapped(t.clone())),
        };
        self.last = Some(ev);
        stop
    }

    /// Commits up to `n` instructions, stopping early at END or a trap.
    pub fn step_n(&mut self, n: u64) -> StopReason {
        if self.platform.core.state.halted {
            return StopReason::AlreadyHalted;
        }
        for _ in 0..n {
            if let Some(stop) = self.step_once() {
                return stop;
            }
        }
        StopReason::StepsDone { pc: self.pc() }
    }

    /// Runs until a breakpoint address is about to execute, END, or a trap.
    pub fn cont(&mut self) -> StopReason {
        if self.platform.core.state.halted {
            return StopReason::AlreadyHalted;
        }
        loop {
            if let Some(stop) = self.step_once() {
                return stop;
            }
            let pc = self.pc();
            if self.breakpoints.contains(&pc) {
                return StopReason::Breakpoint { pc };
            }
        }
    }

    pub fn probe(&self, target: ProbeTarget) -> Result<Vec<u32>, DebugError> {
        let st = &self.platform.core.state;
        match target {
            ProbeTarget::Register(r) => Ok(vec![st.regs[r as usize]]),
            ProbeTarget::Scratchpad { start, end } => {
                if start > end || end > st.scratchpad.len() {
                    return Err(DebugError::OutOfRange { addr: end.max(start) as u64, len: st.scratchpad.len() });
                }
                Ok(st.scratchpad[start..end].to_vec())
            }
            ProbeTarget::WdrSlice(k) => {
                if k >= 16 {
                    return Err(DebugError::OutOfRange { addr: k as u64, len: 16 });
                }
                Ok(vec![st.wdr_slice(k)])
            }
        }
    }

    /// Violations recorded since the previous call.
    pub fn new_violations(&mut self) -> Vec<Violation> {
        let all = self.platform.violations();
        let out = all[self.violation_cursor.min(all.len())..].to_vec();
        self.violation_cursor = all.len();
        out
    }

    fn describe_stop(&self, stop: &StopReason) -> String {
        let here = |pc: u32| {
            let text = self.assembled.instructions.get(pc as usize).map(disassemble).unwrap_or_default();
            format!("pc {pc}: {text}")
        };
        match stop {
            StopReason::Breakpoint { pc } => format!("breakpoint at {}", here(*pc)),
            StopReason::StepsDone { pc } => here(*pc),
            StopReason::Halted => format!("halted after {} cycles", self.platform.core.state.cycle),
            StopReason::Trapped(t) => format!("trap: {t}"),
            StopReason::AlreadyHalted => "program already halted".to_string(),
        }
    }

    /// Reads commands from `input` until `q` or end of input.
    pub fn repl(&mut self, input: impl BufRead, mut out: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(cmd) = parts.next() else { continue };
            let arg = parts.next();
            match cmd {
                "b" => match arg.map(|a| self.add_breakpoint(a)) {
                    Some(Ok(a)) => writeln!(out, "breakpoint at {a}")?,
                    Some(Err(e)) => writeln!(out, "error: {e}")?,
                    None => {
                        let list: Vec<String> = self.breakpoints().map(|a| a.to_string()).collect();
                        writeln!(out, "breakpoints: {}", list.join(" "))?
                    }
                },
                "s" => {
                    let n = arg.and_then(|a| a.parse().ok()).unwrap_or(1);
                    let stop = self.step_n(n);
                    writeln!(out, "{}", self.describe_stop(&stop))?;
                    if let Some(ev) = &self.last {
                        for c in ev.issued() {
                            writeln!(out, "  slot {} {} bank {} addr {}", c.slot, c.cmd.op.mnemonic(), c.cmd.bank, c.cmd.addr)?;
                        }
                    }
                }
                "c" => {
                    let stop = self.cont();
                    writeln!(out, "{}", self.describe_stop(&stop))?;
                }
                "p" => match arg.map(ProbeTarget::parse) {
                    Some(Ok(t)) => match self.probe(t) {
                        Ok(v) => {
                            let vals: Vec<String> = v.iter().map(|x| format!("{x:#010x} ({x})")).collect();
                            writeln!(out, "{}", vals.join(" "))?
                        }
                        Err(e) => writeln!(out, "error: {e}")?,
                    },
                    Some(Err(e)) => writeln!(out, "error: {e}")?,
                    None => writeln!(out, "error: p needs a target")?,
                },
                "viol" => {
                    let v = self.new_violations();
                    if v.is_empty() {
                        writeln!(out, "no new violations")?;
                    }
                    for x in v {
                        let pc = x.pc.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
                        writeln!(out, "pc {pc}: {}", x.csv_line())?;
                    }
                }
                "q" => break,
                other => writeln!(out, "unknown command `{other}` (b, s, c, p, viol, q)")?,
            }
        }
        Ok(())
    }
}
