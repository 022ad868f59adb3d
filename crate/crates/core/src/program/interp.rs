//! Plain functional interpreter used for readback-hint sizing and as a
//! reference when checking the pipelined emulator.

use crate::isa::{DramOpcode, Instruction, RegularOpcode};
use rustc_hash::FxHashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefOutcome {
    Halted,
    BudgetExceeded,
    Trap { pc: u32 },
}

#[derive(Debug, Clone)]
pub struct RefTrace {
    /// Issued DRAM commands indexed by opcode code (NOP excluded).
    pub histogram: [u64; 8],
    /// For every executed HINT address, the largest READ count seen before the next HINT or the end.
    pub reads_after_hint: FxHashMap<u32, u32>,
    pub instructions_executed: u64,
    pub outcome: RefOutcome,
}

/// Executes `program` functionally for at most `budget` instructions.
pub fn reference_run(program: &[Instruction], scratchpad_words: usize, budget: u64) -> RefTrace {
    let mut regs = [0u32; 16];
    let mut sp = vec![0u32; scratchpad_words];
    let mut histogram = [0u64; 8];
    let mut reads_after_hint: FxHashMap<u32, u32> = FxHashMap::default();
    let mut current_hint: Option<(u32, u32)> = None;
    let mut pc = 0u32;
    let mut executed = 0u64;
    let mut cycles = 0u64;

    let close_hint = |cur: &mut Option<(u32, u32)>, map: &mut FxHashMap<u32, u32>| {
        if let Some((site, count)) = cur.take() {
            let e = map.entry(site).or_insert(0);
            *e = (*e).max(count);
        }
    };

    let outcome = loop {
        if executed >= budget {
            break RefOutcome::BudgetExceeded;
        }
        let Some(instr) = program.get(pc as usize) else {
            break RefOutcome::Trap { pc };
        };
        executed += 1;
        match instr {
            Instruction::Dram(slots) => {
                for c in slots {
                    if c.op == DramOpcode::Nop {
                        continue;
                    }
                    histogram[c.op.code() as usize] += 1;
                    match c.op {
                        DramOpcode::Act => apply_increments(&mut regs, c.reg_a.index(), c.reg_b.index(), c.flags.inc_a, c.flags.inc_b, 13, 14),
                        DramOpcode::Pre => {
                            if c.flags.inc_a {
                                regs[c.reg_a.index() as usize] = regs[c.reg_a.index() as usize].wrapping_add(regs[13]);
                            }
                        }
                        DramOpcode::Read | DramOpcode::Write => {
                            if c.op == DramOpcode::Read {
                                if let Some((_, n)) = current_hint.as_mut() {
                                    *n += 1;
                                }
                            }
                            apply_increments(&mut regs, c.reg_a.index(), c.reg_b.index(), c.flags.inc_a, c.flags.inc_b, 13, 15);
                        }
                        _ => {}
                    }
                }
                cycles += 1;
                pc += 1;
            }
            Instruction::Regular(r) => {
                use RegularOpcode::*;
                let rd = r.rd.index() as usize;
                let a = regs.get(r.rs1.index() as usize).copied().unwrap_or(0);
                let b = regs.get(r.rs2.index() as usize).copied().unwrap_or(0);
                let imm = r.imm as u32;
                let mut next = pc + 1;
                cycles += 1;
                match r.op {
                    Ld => match sp.get(a.wrapping_add(imm) as usize) {
                        Some(&v) => regs[rd] = v,
                        None => break RefOutcome::Trap { pc },
                    },
                    St => match sp.get_mut(a.wrapping_add(imm) as usize) {
                        Some(slot) => *slot = b,
                        None => break RefOutcome::Trap { pc },
                    },
                    And => regs[rd] = a & b,
                    Or => regs[rd] = a | b,
                    Xor => regs[rd] = a ^ b,
                    Add => regs[rd] = a.wrapping_add(b),
                    Sub => regs[rd] = a.wrapping_sub(b),
                    Addi => regs[rd] = a.wrapping_add(imm),
                    Mv => regs[rd] = a,
                    Src => regs[rd] = regs[rd].rotate_right(a & 31),
                    Li => regs[rd] = imm,
                    Bl | Beq | Jump => {
                        cycles += 6;
                        let taken = match r.op {
                            Bl => a < b,
                            Beq => a == b,
                            _ => true,
                        };
                        if taken {
                            next = imm;
                        }
                    }
                    Sleep => cycles += (imm as u64).max(1) - 1,
                    Ldwd => {}
                    Ldpc => {
                        regs[rd] = match imm {
                            0 => cycles as u32,
                            1 => histogram[DramOpcode::Act.code() as usize] as u32,
                            2 => histogram[DramOpcode::Read.code() as usize] as u32,
                            3 => histogram[DramOpcode::Write.code() as usize] as u32,
                            4 => (histogram[DramOpcode::Pre.code() as usize] + histogram[DramOpcode::PreA.code() as usize]) as u32,
                            5 => histogram[DramOpcode::Ref.code() as usize] as u32,
                            _ => break RefOutcome::Trap { pc },
                        }
                    }
                    Sre | Srx => {}
                    Hint => {
                        close_hint(&mut current_hint, &mut reads_after_hint);
                        current_hint = Some((pc, 0));
                    }
                    End => break RefOutcome::Halted,
                }
                pc = next;
            }
        }
    };
    close_hint(&mut current_hint, &mut reads_after_hint);
    RefTrace { histogram, reads_after_hint, instructions_executed: executed, outcome }
}

fn apply_increments(regs: &mut [u32; 16], a: u8, b: u8, inc_a: bool, inc_b: bool, stride_a: usize, stride_b: usize) {
    if inc_a {
        regs[a as usize] = regs[a as usize].wrapping_add(regs[stride_a]);
    }
    if inc_b {
        regs[b as usize] = regs[b as usize].wrapping_add(regs[stride_b]);
    }
}
