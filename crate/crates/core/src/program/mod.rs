//! Program construction: append calls, delay scheduling into 4-slot
//! instructions, labels, readback hints and assembly to a binary image.

mod interp;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

pub use interp::{reference_run, RefOutcome, RefTrace};

use crate::isa::{
    self, imm32, parse_source, write_image, DramCommand, Instruction, IsaError, RegisterId, RegularOp,
    RegularOpcode, SourceItem, R12,
};

pub const DEFAULT_INSTRUCTION_CAPACITY: usize = 2048;
pub const DEFAULT_FIFO_CAPACITY: u32 = 512;
pub const DEFAULT_SCRATCHPAD_WORDS: usize = 1024;
/// Delays up to this many slots are realized with NOP slots only.
pub const NOP_DELAY_LIMIT: u64 = 32;
/// Register clobbered by branch forms that compare against an immediate.
pub const SCRATCH_REGISTER: RegisterId = R12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("program has {len} instructions, capacity is {capacity}")]
    ProgramTooLarge { len: usize, capacity: usize },
    #[error("READ run at address {address} issues {reads} READs, FIFO holds {capacity}")]
    ReadRunExceedsFifo { address: u32, reads: u32, capacity: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Instr(Instruction),
    /// Branch whose target is resolved from a label at assembly time.
    Branch { op: RegularOp, label: String },
    Label(String),
    Hint(u32),
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub capacity: usize,
    pub fifo_capacity: u32,
    pub scratchpad_words: usize,
    /// Instruction budget for the functional run that sizes readback hints.
    pub sizing_budget: u64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            capacity: DEFAULT_INSTRUCTION_CAPACITY,
            fifo_capacity: DEFAULT_FIFO_CAPACITY,
            scratchpad_words: DEFAULT_SCRATCHPAD_WORDS,
            sizing_budget: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HintSizing {
    /// Counts measured on a functional run over whole static DRAM runs.
    Dynamic,
    /// Counts are the static READ totals of label-delimited runs.
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HintSite {
    pub address: u32,
    pub count: u32,
    /// READ commands in the static run that follows the hint.
    pub static_reads: u32,
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, u32>,
    pub hints: Vec<HintSite>,
    pub sizing: HintSizing,
    pub image: Vec<u8>,
}

impl Assembled {
    pub fn address_of(&self, label: &str) -> Option<u32> {
        self.labels.get(label).copied()
    }
}

/// An ordered instruction list under construction.
#[derive(Debug, Clone, Default)]
pub struct Program {
    items: Vec<Item>,
    labels: HashSet<String>,
    open: Vec<DramCommand>,
    owed_slots: u64,
}

impl Program {
    pub fn new() -> Program {
        Program::default()
    }

    /// Items with any pending DRAM instruction flushed.
    pub fn items(&self) -> Vec<Item> {
        let mut p = self.clone();
        p.flush();
        p.items
    }

    fn emit_open(&mut self) {
        if !self.open.is_empty() {
            let mut slots = [DramCommand::NOP; 4];
            slots[..self.open.len()].copy_from_slice(&self.open);
            self.items.push(Item::Instr(Instruction::Dram(slots)));
            self.open.clear();
        }
    }

    fn push_slot(&mut self, cmd: DramCommand) {
        self.open.push(cmd);
        if self.open.len() == 4 {
            self.emit_open();
        }
    }

    fn pay_owed(&mut self) {
        let owed = std::mem::take(&mut self.owed_slots);
        if owed <= NOP_DELAY_LIMIT {
            for _ in 0..owed {
                self.push_slot(DramCommand::NOP);
            }
            return;
        }
        let head = if self.open.is_empty() { 0 } else { 4 - self.open.len() as u64 };
        for _ in 0..head {
            self.push_slot(DramCommand::NOP);
        }
        let rest = owed - head;
        let mut cycles = rest / 4;
        while cycles > 0 {
            let chunk = cycles.min(i32::MAX as u64);
            self.items.push(Item::Instr(Instruction::Regular(RegularOp::new(RegularOpcode::Sleep).imm(chunk as i32))));
            cycles -= chunk;
        }
        for _ in 0..rest % 4 {
            self.push_slot(DramCommand::NOP);
        }
    }

    fn flush(&mut self) {
        self.pay_owed();
        if !self.open.is_empty() {
            while !self.open.is_empty() {
                self.push_slot(DramCommand::NOP);
            }
        }
    }

    /// Places `cmd` in the next free slot; `delay` NOP slots separate it from the next command.
    pub fn append_dram(&mut self, cmd: DramCommand, delay: u64) -> Result<&mut Self, ProgramError> {
        for r in [cmd.reg_a, cmd.reg_b] {
            if !r.is_narrow() {
                return Err(IsaError::InvalidRegisterField { field: "dram register", reg: r }.into());
            }
        }
        self.pay_owed();
        self.push_slot(cmd.normalized());
        self.owed_slots = delay;
        Ok(self)
    }

    pub fn append_regular(&mut self, op: RegularOp) -> Result<&mut Self, ProgramError> {
        let op = op.validated()?;
        self.flush();
        self.items.push(Item::Instr(Instruction::Regular(op)));
        Ok(self)
    }

    /// Appends an already-formed instruction verbatim (used by the text front-end).
    pub fn append_instruction(&mut self, instr: Instruction) -> Result<&mut Self, ProgramError> {
        match instr {
            Instruction::Regular(r) => self.append_regular(r),
            Instruction::Dram(_) => {
                isa::encode_instruction(&instr)?;
                self.flush();
                self.items.push(Item::Instr(instr));
                Ok(self)
            }
        }
    }

    pub fn append_label(&mut self, name: &str) -> Result<&mut Self, ProgramError> {
        if !self.labels.insert(name.to_string()) {
            return Err(ProgramError::DuplicateLabel(name.to_string()));
        }
        self.flush();
        self.items.push(Item::Label(name.to_string()));
        Ok(self)
    }

    fn append_branch(&mut self, op: RegularOp, label: &str) -> Result<&mut Self, ProgramError> {
        let op = op.validated()?;
        self.flush();
        self.items.push(Item::Branch { op, label: label.to_string() });
        Ok(self)
    }

    fn rrr(&mut self, op: RegularOpcode, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(op).rd(rd).rs1(rs1).rs2(rs2))
    }

    pub fn append_ld(&mut self, rd: RegisterId, base: RegisterId, offset: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Ld).rd(rd).rs1(base).imm(imm32(offset)?))
    }

    pub fn append_st(&mut self, data: RegisterId, base: RegisterId, offset: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::St).rs2(data).rs1(base).imm(imm32(offset)?))
    }

    pub fn append_and(&mut self, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.rrr(RegularOpcode::And, rd, rs1, rs2)
    }

    pub fn append_or(&mut self, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.rrr(RegularOpcode::Or, rd, rs1, rs2)
    }

    pub fn append_xor(&mut self, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.rrr(RegularOpcode::Xor, rd, rs1, rs2)
    }

    pub fn append_add(&mut self, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.rrr(RegularOpcode::Add, rd, rs1, rs2)
    }

    pub fn append_sub(&mut self, rd: RegisterId, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.rrr(RegularOpcode::Sub, rd, rs1, rs2)
    }

    pub fn append_addi(&mut self, rd: RegisterId, rs1: RegisterId, imm: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Addi).rd(rd).rs1(rs1).imm(imm32(imm)?))
    }

    pub fn append_mv(&mut self, rd: RegisterId, rs1: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Mv).rd(rd).rs1(rs1))
    }

    /// Rotates `rd` right by the low 5 bits of `amount`.
    pub fn append_src(&mut self, rd: RegisterId, amount: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Src).rd(rd).rs1(amount))
    }

    pub fn append_li(&mut self, rd: RegisterId, imm: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Li).rd(rd).imm(imm32(imm)?))
    }

    /// Branches to `target` when `rs1 < rs2` (unsigned).
    pub fn append_bl(&mut self, target: &str, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_branch(RegularOp::new(RegularOpcode::Bl).rs1(rs1).rs2(rs2), target)
    }

    /// Branches to `target` when `reg < bound`; loads `bound` into the scratch register first.
    pub fn append_bl_imm(&mut self, reg: RegisterId, bound: i64, target: &str) -> Result<&mut Self, ProgramError> {
        self.append_li(SCRATCH_REGISTER, bound)?;
        self.append_bl(target, reg, SCRATCH_REGISTER)
    }

    pub fn append_beq(&mut self, target: &str, rs1: RegisterId, rs2: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_branch(RegularOp::new(RegularOpcode::Beq).rs1(rs1).rs2(rs2), target)
    }

    pub fn append_jump(&mut self, target: &str) -> Result<&mut Self, ProgramError> {
        self.append_branch(RegularOp::new(RegularOpcode::Jump), target)
    }

    pub fn append_sleep(&mut self, cycles: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Sleep).imm(imm32(cycles)?))
    }

    /// Copies `rs` into 32-bit slice `slice` of the wide-data register.
    pub fn append_ldwd(&mut self, slice: i64, rs: RegisterId) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Ldwd).rs1(rs).imm(imm32(slice)?))
    }

    pub fn append_ldpc(&mut self, rd: RegisterId, counter: i64) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Ldpc).rd(rd).imm(imm32(counter)?))
    }

    pub fn append_sre(&mut self) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Sre))
    }

    pub fn append_srx(&mut self) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::Srx))
    }

    pub fn append_end(&mut self) -> Result<&mut Self, ProgramError> {
        self.append_regular(RegularOp::new(RegularOpcode::End))
    }

    pub fn append_act(&mut self, bank: RegisterId, inc_bank: bool, row: RegisterId, inc_row: bool, delay: u64) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::act(bank, inc_bank, row, inc_row), delay)
    }

    pub fn append_pre(&mut self, bank: RegisterId, inc_bank: bool, aux: bool, delay: u64) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::pre(bank, inc_bank, aux), delay)
    }

    pub fn append_prea(&mut self, delay: u64) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::prea(), delay)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn append_read(
        &mut self,
        bank: RegisterId,
        inc_bank: bool,
        col: RegisterId,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
        delay: u64,
    ) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::read(bank, inc_bank, col, inc_col, auto_precharge, aux), delay)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn append_write(
        &mut self,
        bank: RegisterId,
        inc_bank: bool,
        col: RegisterId,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
        delay: u64,
    ) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::write(bank, inc_bank, col, inc_col, auto_precharge, aux), delay)
    }

    pub fn append_ref(&mut self, delay: u64) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::refresh(), delay)
    }

    pub fn append_zqs(&mut self, delay: u64) -> Result<&mut Self, ProgramError> {
        self.append_dram(DramCommand::zqs(), delay)
    }

    /// Builds a program from `.dbasm` text. Each source line becomes one item.
    pub fn parse(src: &str) -> Result<Program, ProgramError> {
        let mut p = Program::new();
        for (_, item) in parse_source(src)? {
            match item {
                SourceItem::Label(name) => {
                    p.append_label(&name)?;
                }
                SourceItem::Instr(instr) => {
                    p.append_instruction(instr)?;
                }
                SourceItem::LabelRef { op, label } => {
                    p.append_branch(op, &label)?;
                }
            }
        }
        Ok(p)
    }

    pub fn assemble(&self) -> Result<Assembled, ProgramError> {
        self.assemble_with(&AssembleOptions::default())
    }

    pub fn assemble_with(&self, opts: &AssembleOptions) -> Result<Assembled, ProgramError> {
        let mut body: Vec<Item> = self
            .items()
            .into_iter()
            .filter(|it| match it {
                Item::Hint(_) => false,
                Item::Instr(Instruction::Regular(r)) => r.op != RegularOpcode::Hint,
                _ => true,
            })
            .collect();
        let ends = body.iter().rev().find_map(|it| match it {
            Item::Instr(i) => Some(matches!(i.regular(), Some(r) if r.op == RegularOpcode::End)),
            Item::Branch { .. } => Some(false),
            _ => None,
        });
        if ends != Some(true) {
            body.push(Item::Instr(Instruction::Regular(RegularOp::new(RegularOpcode::End))));
        }

        let dynamic = layout(&body, false)?;
        let trace = reference_run(&dynamic.instructions, opts.scratchpad_words, opts.sizing_budget);
        if trace.outcome != RefOutcome::BudgetExceeded {
            let mut hints = dynamic.hints.clone();
            let mut fits = true;
            for h in hints.iter_mut() {
                h.count = trace.reads_after_hint.get(&h.address).copied().unwrap_or(h.static_reads).max(h.static_reads);
                fits &= h.count <= opts.fifo_capacity;
            }
            if fits {
                return finish(dynamic, hints, HintSizing::Dynamic, opts);
            }
        }
        let fallback = layout(&body, true)?;
        if let Some(h) = fallback.hints.iter().find(|h| h.static_reads > opts.fifo_capacity) {
            return Err(ProgramError::ReadRunExceedsFifo { address: h.address, reads: h.static_reads, capacity: opts.fifo_capacity });
        }
        let hints = fallback.hints.clone();
        finish(fallback, hints, HintSizing::Static, opts)
    }
}

struct Layout {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, u32>,
    hints: Vec<HintSite>,
}

/// Inserts placeholder hints before READ-carrying DRAM runs and resolves labels.
fn layout(body: &[Item], labels_split_runs: bool) -> Result<Layout, ProgramError> {
    // First pass: find runs over the item list.
    let mut run_reads: Vec<(usize, u32)> = Vec::new(); // (item index of run start, reads)
    let mut run: Option<(usize, u32)> = None;
    for (idx, item) in body.iter().enumerate() {
        match item {
            Item::Instr(i @ Instruction::Dram(_)) => {
                let r = run.get_or_insert((idx, 0));
                r.1 += i.read_count();
            }
            Item::Label(_) if !labels_split_runs => {}
            _ => {
                if let Some(r) = run.take() {
                    run_reads.push(r);
                }
            }
        }
    }
    if let Some(r) = run.take() {
        run_reads.push(r);
    }
    let hint_before: BTreeMap<usize, u32> = run_reads.into_iter().filter(|&(_, n)| n > 0).collect();

    let mut labels = BTreeMap::new();
    let mut addr = 0u32;
    for (idx, item) in body.iter().enumerate() {
        if hint_before.contains_key(&idx) {
            addr += 1;
        }
        match item {
            Item::Label(name) => {
                labels.insert(name.clone(), addr);
            }
            Item::Instr(_) | Item::Branch { .. } => addr += 1,
            Item::Hint(_) => {}
        }
    }

    let mut instructions = Vec::with_capacity(addr as usize);
    let mut hints = Vec::new();
    for (idx, item) in body.iter().enumerate() {
        if let Some(&reads) = hint_before.get(&idx) {
            hints.push(HintSite { address: instructions.len() as u32, count: reads, static_reads: reads });
            instructions.push(Instruction::Regular(RegularOp::new(RegularOpcode::Hint).imm(reads as i32)));
        }
        match item {
            Item::Instr(i) => instructions.push(*i),
            Item::Branch { op, label } => {
                let target = *labels.get(label).ok_or_else(|| ProgramError::UndefinedLabel(label.clone()))?;
                instructions.push(Instruction::Regular(op.imm(target as i32)));
            }
            Item::Label(_) | Item::Hint(_) => {}
        }
    }
    Ok(Layout { instructions, labels, hints })
}

fn finish(mut layout: Layout, hints: Vec<HintSite>, sizing: HintSizing, opts: &AssembleOptions) -> Result<Assembled, ProgramError> {
    if layout.instructions.len() > opts.capacity {
        return Err(ProgramError::ProgramTooLarge { len: layout.instructions.len(), capacity: opts.capacity });
    }
    for h in &hints {
        layout.instructions[h.address as usize] = Instruction::Regular(RegularOp::new(RegularOpcode::Hint).imm(h.count as i32));
    }
    let image = write_image(&layout.instructions)?;
    Ok(Assembled { instructions: layout.instructions, labels: layout.labels, hints, sizing, image })
}

/// Listing-style program that opens bank 0 row 0 and reads every column.
pub fn read_row_program() -> Program {
    use crate::isa::{CASR, R3, R4, R5, R6};
    let mut p = Program::new();
    p.append_li(R5, 0).unwrap();
    p.append_li(R4, 0).unwrap();
    p.append_li(R3, 0).unwrap();
    p.append_li(CASR, 8).unwrap();
    p.append_li(R6, 1024).unwrap();
    p.append_act(R5, false, R4, false, 11).unwrap();
    p.append_label("read").unwrap();
    p.append_read(R5, false, R3, true, false, false, 0).unwrap();
    p.append_bl("read", R3, R6).unwrap();
    p.append_pre(R5, false, false, 0).unwrap();
    p
}

/// The `.dbasm` text of [`read_row_program`].
pub const READ_ROW_SOURCE: &str = "\
# Reads all cells in bank 0, row 0
LI R5, 0        # bank address
LI R4, 0        # row address
LI R3, 0        # column address
LI CASR, 8      # column stride
LI R6, 1024     # last column
ACT R5, R4
NOP4
NOP4
read:
READ R5, R3+
BL read, R3, R6
PRE R5
";
