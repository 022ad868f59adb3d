use super::{CommandFlags, DramCommand, DramOpcode, Instruction, IsaError, RegisterId, RegularOp, RegularOpcode, WDR};

/// A 72-bit instruction word held in the low bits of a `u128`.
pub type Word72 = u128;
pub const WORD_MASK: Word72 = (1u128 << 72) - 1;

const SLOT_BITS: u32 = 18;
const SLOT_MASK: u128 = (1 << SLOT_BITS) - 1;

fn slot_shift(slot: usize) -> u32 {
    (3 - slot as u32) * SLOT_BITS
}

fn narrow(field: &'static str, reg: RegisterId) -> Result<u128, IsaError> {
    if reg.is_narrow() {
        Ok(reg.index() as u128)
    } else {
        Err(IsaError::InvalidRegisterField { field, reg })
    }
}

fn encode_slot(cmd: &DramCommand) -> Result<u128, IsaError> {
    let c = cmd.normalized();
    let a = narrow("reg_a", c.reg_a)?;
    let b = narrow("reg_b", c.reg_b)?;
    Ok((c.op.code() as u128) << 14 | a << 10 | b << 6 | (c.flags.bits() as u128) << 2)
}

pub fn encode_instruction(instr: &Instruction) -> Result<Word72, IsaError> {
    match instr {
        Instruction::Dram(slots) => {
            let mut w = 0u128;
            for (i, cmd) in slots.iter().enumerate() {
                w |= encode_slot(cmd)? << slot_shift(i);
            }
            Ok(w)
        }
        Instruction::Regular(r) => {
            let r = r.validated()?;
            let rd = if r.op == RegularOpcode::Ldwd { 0 } else { narrow("rd", r.rd)? };
            let rs1 = narrow("rs1", r.rs1)?;
            let rs2 = narrow("rs2", r.rs2)?;
            Ok((DramOpcode::ESCAPE as u128) << 68
                | (r.op.code() as u128) << 62
                | rd << 58
                | rs1 << 54
                | rs2 << 50
                | (r.imm as u32 as u128) << 18)
        }
    }
}

fn decode_slot(bits: u128) -> Result<DramCommand, IsaError> {
    let code = (bits >> 14) as u32 & 0xF;
    let op = DramOpcode::from_code(code).ok_or(IsaError::UnknownOpcode { field: "dram opcode", code })?;
    let reg = |shift: u32| RegisterId::new(((bits >> shift) & 0xF) as u8).unwrap();
    Ok(DramCommand {
        op,
        reg_a: reg(10),
        reg_b: reg(6),
        flags: CommandFlags::from_bits(((bits >> 2) & 0xF) as u32),
    }
    .normalized())
}

pub fn decode_instruction(word: Word72) -> Result<Instruction, IsaError> {
    let w = word & WORD_MASK;
    let slot0_code = (w >> 68) as u32 & 0xF;
    if slot0_code == DramOpcode::ESCAPE {
        let code = (w >> 62) as u32 & 0x3F;
        let op = RegularOpcode::from_code(code).ok_or(IsaError::UnknownOpcode { field: "regular opcode", code })?;
        let reg = |shift: u32| RegisterId::new(((w >> shift) & 0xF) as u8).unwrap();
        let rd = if op == RegularOpcode::Ldwd { WDR } else { reg(58) };
        let r = RegularOp { op, rd, rs1: reg(54), rs2: reg(50), imm: ((w >> 18) & 0xFFFF_FFFF) as u32 as i32 };
        return Ok(Instruction::Regular(r.validated()?));
    }
    let mut slots = [DramCommand::NOP; 4];
    for (i, slot) in slots.iter_mut().enumerate() {
        *slot = decode_slot((w >> slot_shift(i)) & SLOT_MASK)?;
    }
    Ok(Instruction::Dram(slots))
}
