//! Instruction set: registers, DRAM command slots, regular instructions,
//! the 72-bit encoding, assembly text and the binary program image.

mod encode;
mod image;
mod text;

use std::fmt;

pub use encode::{decode_instruction, encode_instruction, Word72, WORD_MASK};
pub use image::{read_image, read_image_words, write_image, IMAGE_MAGIC};
pub use text::{disassemble, parse_register, parse_source, SourceItem};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("unknown opcode {code:#x} in {field}")]
    UnknownOpcode { field: &'static str, code: u32 },
    #[error("register {reg} is not encodable in the {field} field")]
    InvalidRegisterField { field: &'static str, reg: RegisterId },
    #[error("immediate {value} does not fit in 32 bits")]
    ImmOverflow { value: i64 },
    #[error("operand out of range: {0}")]
    InvalidOperand(String),
    #[error("syntax error at line {line}, column {col}: {msg}")]
    SyntaxError { line: usize, col: usize, msg: String },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown mnemonic `{mnemonic}` at line {line}")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("bad image magic")]
    BadMagic,
    #[error("truncated image: expected {expected} bytes, found {found}")]
    TruncatedImage { expected: usize, found: usize },
}

/// Register index: R0..R12 general purpose, 13..15 stride registers, 16 the wide-data register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegisterId(u8);

impl RegisterId {
    pub const BASR: RegisterId = RegisterId(13);
    pub const RASR: RegisterId = RegisterId(14);
    pub const CASR: RegisterId = RegisterId(15);
    pub const WDR: RegisterId = RegisterId(16);
    pub const GPR_COUNT: u8 = 13;

    pub const fn new(index: u8) -> Option<RegisterId> {
        if index <= 16 {
            Some(RegisterId(index))
        } else {
            None
        }
    }

    /// General-purpose register `R<n>`; panics for n > 12.
    pub const fn r(n: u8) -> RegisterId {
        assert!(n < Self::GPR_COUNT);
        RegisterId(n)
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    /// True for registers that fit a 4-bit field (everything except WDR).
    pub const fn is_narrow(self) -> bool {
        self.0 < 16
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            13 => f.write_str("BASR"),
            14 => f.write_str("RASR"),
            15 => f.write_str("CASR"),
            16 => f.write_str("WDR"),
            n => write!(f, "R{n}"),
        }
    }
}

pub const R0: RegisterId = RegisterId::r(0);
pub const R1: RegisterId = RegisterId::r(1);
pub const R2: RegisterId = RegisterId::r(2);
pub const R3: RegisterId = RegisterId::r(3);
pub const R4: RegisterId = RegisterId::r(4);
pub const R5: RegisterId = RegisterId::r(5);
pub const R6: RegisterId = RegisterId::r(6);
pub const R7: RegisterId = RegisterId::r(7);
pub const R8: RegisterId = RegisterId::r(8);
pub const R9: RegisterId = RegisterId::r(9);
pub const R10: RegisterId = RegisterId::r(10);
pub const R11: RegisterId = RegisterId::r(11);
pub const R12: RegisterId = RegisterId::r(12);
pub const BASR: RegisterId = RegisterId::BASR;
pub const RASR: RegisterId = RegisterId::RASR;
pub const CASR: RegisterId = RegisterId::CASR;
pub const WDR: RegisterId = RegisterId::WDR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DramOpcode {
    Nop,
    Act,
    Pre,
    PreA,
    Read,
    Write,
    Ref,
    Zqs,
}

impl DramOpcode {
    pub const ALL: [DramOpcode; 8] = [
        DramOpcode::Nop,
        DramOpcode::Act,
        DramOpcode::Pre,
        DramOpcode::PreA,
        DramOpcode::Read,
        DramOpcode::Write,
        DramOpcode::Ref,
        DramOpcode::Zqs,
    ];

    /// The slot opcode value that marks a regular instruction.
    pub const ESCAPE: u32 = 0xF;

    pub const fn code(self) -> u32 {
        match self {
            DramOpcode::Nop => 0x0,
            DramOpcode::Act => 0x1,
            DramOpcode::Pre => 0x2,
            DramOpcode::PreA => 0x3,
            DramOpcode::Read => 0x4,
            DramOpcode::Write => 0x5,
            DramOpcode::Ref => 0x6,
            DramOpcode::Zqs => 0x7,
        }
    }

    pub fn from_code(code: u32) -> Option<DramOpcode> {
        DramOpcode::ALL.into_iter().find(|op| op.code() == code)
    }

    pub const fn mnemonic(self) -> &'static str {
        match self {
            DramOpcode::Nop => "NOP",
            DramOpcode::Act => "ACT",
            DramOpcode::Pre => "PRE",
            DramOpcode::PreA => "PREA",
            DramOpcode::Read => "READ",
            DramOpcode::Write => "WRITE",
            DramOpcode::Ref => "REF",
            DramOpcode::Zqs => "ZQS",
        }
    }

    /// Number of address-register operands the command reads.
    pub const fn operand_count(self) -> usize {
        match self {
            DramOpcode::Act | DramOpcode::Read | DramOpcode::Write => 2,
            DramOpcode::Pre => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CommandFlags {
    pub inc_a: bool,
    pub inc_b: bool,
    pub auto_precharge: bool,
    pub aux: bool,
}

impl CommandFlags {
    pub const NONE: CommandFlags = CommandFlags {
        inc_a: false,
        inc_b: false,
        auto_precharge: false,
        aux: false,
    };

    pub(crate) fn bits(self) -> u32 {
        (self.inc_a as u32) << 3
            | (self.inc_b as u32) << 2
            | (self.auto_precharge as u32) << 1
            | self.aux as u32
    }

    pub(crate) fn from_bits(bits: u32) -> CommandFlags {
        CommandFlags {
            inc_a: bits & 0b1000 != 0,
            inc_b: bits & 0b0100 != 0,
            auto_precharge: bits & 0b0010 != 0,
            aux: bits & 0b0001 != 0,
        }
    }
}

/// One 18-bit command slot. Fields a command does not use are kept at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DramCommand {
    pub op: DramOpcode,
    pub reg_a: RegisterId,
    pub reg_b: RegisterId,
    pub flags: CommandFlags,
}

impl DramCommand {
    pub const NOP: DramCommand = DramCommand {
        op: DramOpcode::Nop,
        reg_a: RegisterId(0),
        reg_b: RegisterId(0),
        flags: CommandFlags::NONE,
    };

    pub fn act(bank: RegisterId, inc_bank: bool, row: RegisterId, inc_row: bool) -> DramCommand {
        DramCommand {
            op: DramOpcode::Act,
            reg_a: bank,
            reg_b: row,
            flags: CommandFlags { inc_a: inc_bank, inc_b: inc_row, ..CommandFlags::NONE },
        }
    }

    pub fn pre(bank: RegisterId, inc_bank: bool, aux: bool) -> DramCommand {
        DramCommand {
            op: DramOpcode::Pre,
            reg_a: bank,
            reg_b: RegisterId(0),
            flags: CommandFlags { inc_a: inc_bank, aux, ..CommandFlags::NONE },
        }
    }

    pub fn prea() -> DramCommand {
        DramCommand { op: DramOpcode::PreA, ..DramCommand::NOP }
    }

    pub fn refresh() -> DramCommand {
        DramCommand { op: DramOpcode::Ref, ..DramCommand::NOP }
    }

    pub fn zqs() -> DramCommand {
        DramCommand { op: DramOpcode::Zqs, ..DramCommand::NOP }
    }

    pub fn read(
        bank: RegisterId,
        inc_bank: bool,
        col: RegisterId,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
    ) -> DramCommand {
        DramCommand {
            op: DramOpcode::Read,
            reg_a: bank,
            reg_b: col,
            flags: CommandFlags { inc_a: inc_bank, inc_b: inc_col, auto_precharge, aux },
        }
    }

    pub fn write(
        bank: RegisterId,
        inc_bank: bool,
        col: RegisterId,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
    ) -> DramCommand {
        DramCommand { op: DramOpcode::Write, ..DramCommand::read(bank, inc_bank, col, inc_col, auto_precharge, aux) }
    }

    /// Clears every field the opcode ignores, giving the canonical form.
    pub fn normalized(self) -> DramCommand {
        let mut c = self;
        match c.op {
            DramOpcode::Nop => return DramCommand::NOP,
            DramOpcode::Act => c.flags.auto_precharge = false,
            DramOpcode::Pre => {
                c.reg_b = RegisterId(0);
                c.flags.inc_b = false;
                c.flags.auto_precharge = false;
            }
            DramOpcode::PreA | DramOpcode::Ref | DramOpcode::Zqs => {
                c.reg_a = RegisterId(0);
                c.reg_b = RegisterId(0);
                c.flags = CommandFlags { aux: c.flags.aux, ..CommandFlags::NONE };
            }
            DramOpcode::Read | DramOpcode::Write => {}
        }
        c
    }

    pub fn is_nop(&self) -> bool {
        self.op == DramOpcode::Nop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularOpcode {
    Ld,
    St,
    And,
    Or,
    Xor,
    Add,
    Sub,
    Addi,
    Mv,
    Src,
    Li,
    Bl,
    Beq,
    Jump,
    Sleep,
    Ldwd,
    Ldpc,
    Sre,
    Srx,
    End,
    /// Readback hint: stall until the FIFO has room for `imm` transfers.
    Hint,
}

impl RegularOpcode {
    pub const ALL: [RegularOpcode; 21] = [
        RegularOpcode::Ld,
        RegularOpcode::St,
        RegularOpcode::And,
        RegularOpcode::Or,
        RegularOpcode::Xor,
        RegularOpcode::Add,
        RegularOpcode::Sub,
        RegularOpcode::Addi,
        RegularOpcode::Mv,
        RegularOpcode::Src,
        RegularOpcode::Li,
        RegularOpcode::Bl,
        RegularOpcode::Beq,
        RegularOpcode::Jump,
        RegularOpcode::Sleep,
        RegularOpcode::Ldwd,
        RegularOpcode::Ldpc,
        RegularOpcode::Sre,
        RegularOpcode::Srx,
        RegularOpcode::End,
        RegularOpcode::Hint,
    ];

    pub const HINT_CODE: u32 = 0x3E;

    pub fn code(self) -> u32 {
        match self {
            RegularOpcode::Hint => Self::HINT_CODE,
            op => Self::ALL.iter().position(|&o| o == op).unwrap() as u32 + 1,
        }
    }

    pub fn from_code(code: u32) -> Option<RegularOpcode> {
        match code {
            Self::HINT_CODE => Some(RegularOpcode::Hint),
            1..=20 => Some(Self::ALL[code as usize - 1]),
            _ => None,
        }
    }

    pub const fn mnemonic(self) -> &'static str {
        match self {
            RegularOpcode::Ld => "LD",
            RegularOpcode::St => "ST",
            RegularOpcode::And => "AND",
            RegularOpcode::Or => "OR",
            RegularOpcode::Xor => "XOR",
            RegularOpcode::Add => "ADD",
            RegularOpcode::Sub => "SUB",
            RegularOpcode::Addi => "ADDI",
            RegularOpcode::Mv => "MV",
            RegularOpcode::Src => "SRC",
            RegularOpcode::Li => "LI",
            RegularOpcode::Bl => "BL",
            RegularOpcode::Beq => "BEQ",
            RegularOpcode::Jump => "JUMP",
            RegularOpcode::Sleep => "SLEEP",
            RegularOpcode::Ldwd => "LDWD",
            RegularOpcode::Ldpc => "LDPC",
            RegularOpcode::Sre => "SRE",
            RegularOpcode::Srx => "SRX",
            RegularOpcode::End => "END",
            RegularOpcode::Hint => "HINT",
        }
    }

    pub const fn is_branch(self) -> bool {
        matches!(self, RegularOpcode::Bl | RegularOpcode::Beq | RegularOpcode::Jump)
    }

    /// Operand usage as (rd, rs1, rs2, imm).
    pub(crate) const fn fields(self) -> (bool, bool, bool, bool) {
        use RegularOpcode::*;
        match self {
            Ld => (true, true, false, true),
            St => (false, true, true, true),
            And | Or | Xor | Add | Sub => (true, true, true, false),
            Addi => (true, true, false, true),
            Mv | Src => (true, true, false, false),
            Li => (true, false, false, true),
            Bl | Beq => (false, true, true, true),
            Jump | Sleep | Hint => (false, false, false, true),
            Ldwd => (false, true, false, true),
            Ldpc => (true, false, false, true),
            Sre | Srx | End => (false, false, false, false),
        }
    }
}

/// A regular instruction. For LDWD `rd` is always WDR and `imm` selects the 32-bit slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegularOp {
    pub op: RegularOpcode,
    pub rd: RegisterId,
    pub rs1: RegisterId,
    pub rs2: RegisterId,
    pub imm: i32,
}

impl RegularOp {
    pub fn new(op: RegularOpcode) -> RegularOp {
        let rd = if op == RegularOpcode::Ldwd { WDR } else { R0 };
        RegularOp { op, rd, rs1: R0, rs2: R0, imm: 0 }
    }

    pub fn rd(mut self, r: RegisterId) -> Self {
        self.rd = r;
        self
    }
    pub fn rs1(mut self, r: RegisterId) -> Self {
        self.rs1 = r;
        self
    }
    pub fn rs2(mut self, r: RegisterId) -> Self {
        self.rs2 = r;
        self
    }
    pub fn imm(mut self, v: i32) -> Self {
        self.imm = v;
        self
    }

    /// Clears unused fields and checks register/operand ranges.
    pub fn validated(self) -> Result<RegularOp, IsaError> {
        let (use_rd, use_rs1, use_rs2, use_imm) = self.op.fields();
        let mut r = self;
        if self.op == RegularOpcode::Ldwd {
            if self.rd != WDR {
                return Err(IsaError::InvalidRegisterField { field: "rd", reg: self.rd });
            }
            if !(0..16).contains(&self.imm) {
                return Err(IsaError::InvalidOperand(format!("WDR slice {} not in 0..16", self.imm)));
            }
        } else if !use_rd {
            r.rd = R0;
        } else if !self.rd.is_narrow() {
            return Err(IsaError::InvalidRegisterField { field: "rd", reg: self.rd });
        }
        if !use_rs1 {
            r.rs1 = R0;
        } else if !self.rs1.is_narrow() {
            return Err(IsaError::InvalidRegisterField { field: "rs1", reg: self.rs1 });
        }
        if !use_rs2 {
            r.rs2 = R0;
        } else if !self.rs2.is_narrow() {
            return Err(IsaError::InvalidRegisterField { field: "rs2", reg: self.rs2 });
        }
        if !use_imm {
            r.imm = 0;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Regular(RegularOp),
    Dram([DramCommand; 4]),
}

impl Instruction {
    pub const NOP4: Instruction = Instruction::Dram([DramCommand::NOP; 4]);

    pub fn is_dram(&self) -> bool {
        matches!(self, Instruction::Dram(_))
    }

    pub fn regular(&self) -> Option<&RegularOp> {
        match self {
            Instruction::Regular(r) => Some(r),
            Instruction::Dram(_) => None,
        }
    }

    pub fn read_count(&self) -> u32 {
        match self {
            Instruction::Dram(slots) => slots.iter().filter(|c| c.op == DramOpcode::Read).count() as u32,
            Instruction::Regular(_) => 0,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}

/// Accepts values representable as either i32 or u32 and returns the 32-bit pattern.
pub fn imm32(value: i64) -> Result<i32, IsaError> {
    if (i32::MIN as i64..=u32::MAX as i64).contains(&value) {
        Ok(value as u32 as i32)
    } else {
        Err(IsaError::ImmOverflow { value })
    }
}
