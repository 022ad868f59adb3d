//! Cycle-level model of the programmable core: one instruction per core cycle,
//! four DRAM command slots per cycle, a fixed branch penalty, load-use
//! interlock, readback-hint stalls and performance counters.

use thiserror::Error;

use crate::dram::{CommandCounts, DeviceCommand, DeviceError, Transfer, Violation};
use crate::isa::{read_image_words, DramCommand, DramOpcode, Instruction, IsaError, RegularOp, RegularOpcode};
use crate::platform::{Injection, Origin, System};

/// Extra core cycles spent by every control-flow instruction.
pub const BRANCH_PENALTY: u64 = 6;
/// Cycles from END's fetch until the pipeline is empty.
pub const PIPELINE_DRAIN: u64 = 5;
pub const SLOTS_PER_CYCLE: u64 = 4;
pub const PERF_COUNTERS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("program has {len} instructions, memory holds {capacity}")]
    ProgramTooLarge { len: usize, capacity: usize },
    #[error(transparent)]
    Image(#[from] IsaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Trap {
    #[error("scratchpad address {addr} out of range at pc {pc}")]
    ScratchpadOutOfRange { pc: u32, addr: u32 },
    #[error("undecodable instruction at pc {pc}: {reason}")]
    DecodeTrap { pc: u32, reason: String },
    #[error("pc {pc} is outside the loaded program")]
    PcOutOfRange { pc: u32 },
    #[error("unknown performance counter {id} at pc {pc}")]
    UnknownCounter { pc: u32, id: u32 },
    #[error("device rejected command at pc {pc}: {error}")]
    Device { pc: u32, error: DeviceError },
    #[error("readback hint of {need} at pc {pc} can never be satisfied")]
    FifoDeadlock { pc: u32, need: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PerfCounters {
    pub cycles: u64,
    pub acts: u64,
    pub reads: u64,
    pub writes: u64,
    pub pres: u64,
    pub refs: u64,
}

impl PerfCounters {
    pub fn get(&self, id: u32) -> Option<u64> {
        Some(match id {
            0 => self.cycles,
            1 => self.acts,
            2 => self.reads,
            3 => self.writes,
            4 => self.pres,
            5 => self.refs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CoreState {
    pub pc: u32,
    /// R0..R12 followed by BASR, RASR, CASR.
    pub regs: [u32; 16],
    pub wdr: Transfer,
    pub scratchpad: Vec<u32>,
    pub cycle: u64,
    /// Slots consumed by the DRAM pipeline (4 per DRAM instruction).
    pub bus_slot: u64,
    pub counters: PerfCounters,
    pub halted: bool,
    /// READ count of the hint the core is currently waiting on.
    pub stalled_on_hint: Option<u32>,
}

impl CoreState {
    pub fn wdr_slice(&self, k: usize) -> u32 {
        u32::from_le_bytes(self.wdr[k * 4..k * 4 + 4].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssuedCommand {
    pub slot: u64,
    pub cmd: DeviceCommand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halted,
    AlreadyHalted,
    Trapped(Trap),
}

/// What one committed instruction did.
#[derive(Debug, Clone)]
pub struct StepEvents {
    pub pc: u32,
    pub instruction: Option<Instruction>,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub stall_cycles: u64,
    issued: [Option<IssuedCommand>; 4],
    pub flips: u32,
    pub violations: usize,
    pub outcome: StepOutcome,
}

impl StepEvents {
    pub fn issued(&self) -> impl Iterator<Item = &IssuedCommand> {
        self.issued.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Halted,
    Trapped(Trap),
    MaxCyclesExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StallBreakdown {
    pub hint: u64,
    pub scheduler: u64,
    pub load_use: u64,
}

impl StallBreakdown {
    pub fn total(&self) -> u64 {
        self.hint + self.scheduler + self.load_use
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub cycles: u64,
    pub bus_slots: u64,
    /// Commands issued by the program (scheduler injections excluded).
    pub histogram: CommandCounts,
    pub violations: Vec<Violation>,
    pub fifo_high_water: u32,
    pub stalls: StallBreakdown,
    pub transfers: u64,
    pub fifo_overflows: u64,
    pub injections: Vec<Injection>,
    pub instructions: u64,
    pub flips: u64,
}

impl RunReport {
    pub fn halted(&self) -> bool {
        self.outcome == RunOutcome::Halted
    }
}

#[derive(Debug, Clone)]
pub struct Core {
    pub state: CoreState,
    program: Vec<Result<Instruction, IsaError>>,
    capacity: usize,
    /// Destination of an LD committed by the previous instruction.
    pending_load: Option<u8>,
    /// READs left in the current hint-guarded run.
    guard: Option<u32>,
    histogram: CommandCounts,
    stalls: StallBreakdown,
    transfers: u64,
    flips: u64,
}

impl Core {
    pub fn new(capacity: usize, scratchpad_words: usize) -> Core {
        Core {
            state: CoreState {
                pc: 0,
                regs: [0; 16],
                wdr: [0; 64],
                scratchpad: vec![0; scratchpad_words],
                cycle: 0,
                bus_slot: 0,
                counters: PerfCounters::default(),
                halted: true,
                stalled_on_hint: None,
            },
            program: Vec::new(),
            capacity,
            pending_load: None,
            guard: None,
            histogram: CommandCounts::default(),
            stalls: StallBreakdown::default(),
            transfers: 0,
            flips: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn program_len(&self) -> usize {
        self.program.len()
    }

    pub fn instruction(&self, pc: u32) -> Option<&Result<Instruction, IsaError>> {
        self.program.get(pc as usize)
    }

    /// Replaces instruction memory and restarts at address 0. Registers,
    /// scratchpad, time and counters carry over.
    pub fn load_program(&mut self, image: &[u8]) -> Result<(), LoadError> {
        let words = read_image_words(image)?;
        self.load_words(words)
    }

    pub fn load_instructions(&mut self, program: &[Instruction]) -> Result<(), LoadError> {
        self.load_words(program.iter().copied().map(Ok).collect())
    }

    fn load_words(&mut self, words: Vec<Result<Instruction, IsaError>>) -> Result<(), LoadError> {
        if words.len() > self.capacity {
            return Err(LoadError::ProgramTooLarge { len: words.len(), capacity: self.capacity });
        }
        self.program = words;
        self.state.pc = 0;
        self.state.halted = false;
        self.state.stalled_on_hint = None;
        self.pending_load = None;
        self.guard = None;
        Ok(())
    }

    pub fn reset_counters(&mut self) {
        self.state.counters = PerfCounters::default();
    }

    pub fn read_perf_counter(&self, id: u32) -> Option<u32> {
        let mut c = self.state.counters;
        c.cycles = self.state.cycle;
        c.get(id).map(|v| v as u32)
    }

    /// True while a hint-guarded run is in flight.
    pub fn in_guarded_run(&self) -> bool {
        self.guard.is_some()
    }

    /// Steps until END, a trap, or `max_cycles` core cycles have elapsed.
    pub fn run(&mut self, sys: &mut System, max_cycles: u64) -> RunReport {
        let start_cycle = self.state.cycle;
        let start_bus = self.state.bus_slot;
        let first_violation = sys.device.violations().len();
        let first_injection = sys.injections().len();
        self.histogram = CommandCounts::default();
        self.stalls = StallBreakdown::default();
        self.transfers = 0;
        self.flips = 0;
        sys.fifo.reset_high_water();
        let overflows = sys.fifo.overflows();
        let mut instructions = 0u64;
        let deadline = start_cycle.saturating_add(max_cycles);
        let outcome = loop {
            if self.state.halted && self.program.is_empty() {
                break RunOutcome::Halted;
            }
            if self.state.cycle >= deadline {
                break RunOutcome::MaxCyclesExceeded;
            }
            let ev = self.step(sys);
            match ev.outcome {
                StepOutcome::Continue => instructions += 1,
                StepOutcome::Halted | StepOutcome::AlreadyHalted => {
                    instructions += (ev.outcome == StepOutcome::Halted) as u64;
                    break RunOutcome::Halted;
                }
                StepOutcome::Trapped(t) => break RunOutcome::Trapped(t),
            }
        };
        RunReport {
            outcome,
            cycles: self.state.cycle - start_cycle,
            bus_slots: self.state.bus_slot - start_bus,
            histogram: self.histogram,
            violations: sys.device.violations()[first_violation..].to_vec(),
            fifo_high_water: sys.fifo.high_water(),
            stalls: self.stalls,
            transfers: self.transfers,
            fifo_overflows: sys.fifo.overflows() - overflows,
            injections: sys.injections()[first_injection..].to_vec(),
            instructions,
            flips: self.flips,
        }
    }

    fn trap(&mut self, ev: &mut StepEvents, trap: Trap) {
        self.state.halted = true;
        ev.outcome = StepOutcome::Trapped(trap);
    }

    /// Commits one instruction.
    pub fn step(&mut self, sys: &mut System) -> StepEvents {
        let pc = self.state.pc;
        let mut ev = StepEvents {
            pc,
            instruction: None,
            start_cycle: self.state.cycle,
            end_cycle: self.state.cycle,
            stall_cycles: 0,
            issued: [None; 4],
            flips: 0,
            violations: 0,
            outcome: StepOutcome::Continue,
        };
        if self.state.halted {
            ev.outcome = StepOutcome::AlreadyHalted;
            return ev;
        }
        let instr = match self.program.get(pc as usize) {
            None => {
                self.trap(&mut ev, Trap::PcOutOfRange { pc });
                return ev;
            }
            Some(Err(e)) => {
                let reason = e.to_string();
                self.trap(&mut ev, Trap::DecodeTrap { pc, reason });
                return ev;
            }
            Some(Ok(i)) => *i,
        };
        ev.instruction = Some(instr);
        let mut start = self.state.cycle;
        if let Some(r) = self.pending_load.take() {
            if reads_register(&instr, r) {
                start += 1;
                self.stalls.load_use += 1;
                ev.stall_cycles += 1;
            }
        }
        let result = match instr {
            Instruction::Dram(slots) => self.exec_dram(sys, &slots, start, &mut ev),
            Instruction::Regular(op) => self.exec_regular(sys, op, start, &mut ev),
        };
        if let Err(t) = result {
            self.trap(&mut ev, t);
        }
        ev.end_cycle = self.state.cycle;
        ev
    }

    fn idle_span(&mut self, sys: &mut System, from: u64, to: u64) -> Result<(), Trap> {
        if self.guard.is_some() || sys.device.in_self_refresh() || !sys.scheduler.any_enabled() {
            return Ok(());
        }
        let pc = self.state.pc;
        sys.idle(from * SLOTS_PER_CYCLE, to * SLOTS_PER_CYCLE).map_err(|error| Trap::Device { pc, error })
    }

    fn exec_dram(&mut self, sys: &mut System, slots: &[DramCommand; 4], mut start: u64, ev: &mut StepEvents) -> Result<(), Trap> {
        let pc = self.state.pc;
        let busy = sys.scheduler.busy_until();
        if busy > start * SLOTS_PER_CYCLE {
            let wait = (busy - start * SLOTS_PER_CYCLE).div_ceil(SLOTS_PER_CYCLE);
            start += wait;
            self.stalls.scheduler += wait;
            ev.stall_cycles += wait;
        }
        sys.drain.advance(&mut sys.fifo, start);
        sys.device.set_current_pc(Some(pc));
        for (k, c) in slots.iter().enumerate() {
            if c.op == DramOpcode::Nop {
                continue;
            }
            let slot = start * SLOTS_PER_CYCLE + k as u64;
            let a = self.state.regs[c.reg_a.index() as usize];
            let b = self.state.regs[c.reg_b.index() as usize];
            let mut cmd = match c.op {
                DramOpcode::Act => DeviceCommand::act(a, b),
                DramOpcode::Pre => DeviceCommand::pre(a),
                DramOpcode::PreA => DeviceCommand::prea(),
                DramOpcode::Read => DeviceCommand::read(a, b),
                DramOpcode::Write => DeviceCommand::write(a, b),
                DramOpcode::Ref => DeviceCommand::refresh(),
                DramOpcode::Zqs => DeviceCommand::zqs(),
                DramOpcode::Nop => unreachable!(),
            };
            if c.flags.auto_precharge && matches!(c.op, DramOpcode::Read | DramOpcode::Write) {
                cmd = cmd.with_auto_precharge();
            }
            let out = sys.issue(cmd, slot, &self.state.wdr, Origin::Core { pc }).map_err(|error| Trap::Device { pc, error })?;
            ev.issued[k] = Some(IssuedCommand { slot, cmd });
            ev.flips += out.flips;
            ev.violations += out.violations;
            self.flips += out.flips as u64;
            self.count(c.op);
            if let Some(data) = out.data {
                sys.fifo.push(data);
                self.transfers += 1;
                if let Some(n) = self.guard.as_mut() {
                    *n = n.saturating_sub(1);
                    if *n == 0 {
                        self.guard = None;
                    }
                }
            }
            let (stride_a, stride_b) = match c.op {
                DramOpcode::Act => (13, 14),
                DramOpcode::Pre => (13, 13),
                DramOpcode::Read | DramOpcode::Write => (13, 15),
                _ => continue,
            };
            let regs = &mut self.state.regs;
            if c.flags.inc_a {
                let i = c.reg_a.index() as usize;
                regs[i] = regs[i].wrapping_add(regs[stride_a]);
            }
            if c.flags.inc_b && c.op != DramOpcode::Pre {
                let i = c.reg_b.index() as usize;
                regs[i] = regs[i].wrapping_add(regs[stride_b]);
            }
        }
        sys.device.set_current_pc(None);
        self.state.bus_slot += SLOTS_PER_CYCLE;
        self.state.cycle = start + 1;
        self.state.pc = pc + 1;
        Ok(())
    }

    fn count(&mut self, op: DramOpcode) {
        let (c, h) = (&mut self.state.counters, &mut self.histogram);
        match op {
            DramOpcode::Act => {
                c.acts += 1;
                h.act += 1;
            }
            DramOpcode::Pre => {
                c.pres += 1;
                h.pre += 1;
            }
            DramOpcode::PreA => {
                c.pres += 1;
                h.prea += 1;
            }
            DramOpcode::Read => {
                c.reads += 1;
                h.read += 1;
            }
            DramOpcode::Write => {
                c.writes += 1;
                h.write += 1;
            }
            DramOpcode::Ref => {
                c.refs += 1;
                h.refresh += 1;
            }
            DramOpcode::Zqs => h.zqs += 1,
            DramOpcode::Nop => {}
        }
    }

    fn exec_regular(&mut self, sys: &mut System, r: RegularOp, mut start: u64, ev: &mut StepEvents) -> Result<(), Trap> {
        use RegularOpcode::*;
        let pc = self.state.pc;
        let st = &mut self.state;
        let rd = r.rd.index() as usize;
        let a = st.regs[r.rs1.index() as usize];
        let b = st.regs[r.rs2.index() as usize];
        let imm = r.imm as u32;
        let mut next = pc + 1;
        let mut cost = 1u64;
        let sp_len = st.scratchpad.len();
        let sp_addr = |addr: u32| -> Result<usize, Trap> {
            if (addr as usize) < sp_len {
                Ok(addr as usize)
            } else {
                Err(Trap::ScratchpadOutOfRange { pc, addr })
            }
        };
        match r.op {
            Ld => {
                st.regs[rd] = st.scratchpad[sp_addr(a.wrapping_add(imm))?];
                self.pending_load = Some(rd as u8);
            }
            St => st.scratchpad[sp_addr(a.wrapping_add(imm))?] = b,
            And => st.regs[rd] = a & b,
            Or => st.regs[rd] = a | b,
            Xor => st.regs[rd] = a ^ b,
            Add => st.regs[rd] = a.wrapping_add(b),
            Sub => st.regs[rd] = a.wrapping_sub(b),
            Addi => st.regs[rd] = a.wrapping_add(imm),
            Mv => st.regs[rd] = a,
            Src => st.regs[rd] = st.regs[rd].rotate_right(a & 31),
            Li => st.regs[rd] = imm,
            Bl | Beq | Jump => {
                cost += BRANCH_PENALTY;
                let taken = match r.op {
                    Bl => a < b,
                    Beq => a == b,
                    _ => true,
                };
                if taken {
                    next = imm;
                }
            }
            Sleep => cost = (imm as u64).max(1),
            Ldwd => {
                let k = (imm & 15) as usize;
                st.wdr[k * 4..k * 4 + 4].copy_from_slice(&a.to_le_bytes());
            }
            Ldpc => {
                let mut c = st.counters;
                c.cycles = start;
                match c.get(imm) {
                    Some(v) => st.regs[rd] = v as u32,
                    None => return Err(Trap::UnknownCounter { pc, id: imm }),
                }
            }
            Sre => {
                sys.drain.advance(&mut sys.fifo, start);
                sys.device.enter_self_refresh(start * SLOTS_PER_CYCLE);
            }
            Srx => {
                sys.drain.advance(&mut sys.fifo, start);
                sys.device.exit_self_refresh(start * SLOTS_PER_CYCLE);
            }
            Hint => {
                let need = imm.min(sys.fifo.capacity());
                sys.drain.advance(&mut sys.fifo, start);
                if sys.fifo.free() < need {
                    st.stalled_on_hint = Some(need);
                    if sys.drain.rate() <= 0.0 {
                        return Err(Trap::FifoDeadlock { pc, need });
                    }
                    let from = start;
                    while sys.fifo.free() < need {
                        start += 1;
                        sys.drain.advance(&mut sys.fifo, start);
                    }
                    self.state.stalled_on_hint = None;
                    self.stalls.hint += start - from;
                    ev.stall_cycles += start - from;
                    self.guard = None;
                    self.idle_span(sys, from, start)?;
                }
                self.guard = (imm > 0).then_some(imm);
            }
            End => {
                self.guard = None;
                self.state.halted = true;
                self.state.cycle = start + PIPELINE_DRAIN;
                sys.drain.advance(&mut sys.fifo, self.state.cycle);
                ev.outcome = StepOutcome::Halted;
                return Ok(());
            }
        }
        if r.op != Hint {
            self.idle_span(sys, start, start + cost)?;
        }
        self.state.cycle = start + cost;
        self.state.pc = next;
        Ok(())
    }
}

/// Whether `instr` reads register `r` (including strides used by auto-increment).
fn reads_register(instr: &Instruction, r: u8) -> bool {
    match instr {
        Instruction::Regular(op) => {
            let (_, rs1, rs2, _) = op.op.fields();
            (rs1 && op.rs1.index() == r) || (rs2 && op.rs2.index() == r) || (op.op == RegularOpcode::Src && op.rd.index() == r)
        }
        Instruction::Dram(slots) => slots.iter().any(|c| {
            let n = c.op.operand_count();
            let strides: &[u8] = match c.op {
                DramOpcode::Act => &[13, 14],
                DramOpcode::Pre => &[13],
                DramOpcode::Read | DramOpcode::Write => &[13, 15],
                _ => &[],
            };
            (n >= 1 && c.reg_a.index() == r)
                || (n >= 2 && c.reg_b.index() == r)
                || (c.flags.inc_a && strides.first() == Some(&r))
                || (c.flags.inc_b && strides.get(1) == Some(&r))
        }),
    }
}
