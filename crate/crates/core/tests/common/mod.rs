#![allow(dead_code)]

use bender_core::dram::timing::HistoryEntry;
use bender_core::isa::{
    CommandFlags, DramCommand, DramOpcode, Instruction, RegisterId, RegularOp, RegularOpcode, CASR, R0, R1, R10, R11, R3, R6, R7, R8,
    R9, WDR,
};
use bender_core::program::Program;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn narrow_reg(r: &mut ChaCha8Rng) -> RegisterId {
    RegisterId::new(r.random_range(0..16)).unwrap()
}

/// Any encodable instruction in canonical form.
pub fn random_instruction(r: &mut ChaCha8Rng) -> Instruction {
    if r.random_bool(0.5) {
        let op = *RegularOpcode::ALL.choose(r).unwrap();
        let mut x = RegularOp::new(op).rs1(narrow_reg(r)).rs2(narrow_reg(r)).imm(r.random());
        if op == RegularOpcode::Ldwd {
            x = x.rd(WDR).imm(r.random_range(0..16));
        } else {
            x = x.rd(narrow_reg(r));
        }
        Instruction::Regular(x.validated().unwrap())
    } else {
        let mut slots = [DramCommand::NOP; 4];
        for s in &mut slots {
            let flags = CommandFlags { inc_a: r.random(), inc_b: r.random(), auto_precharge: r.random(), aux: r.random() };
            *s = DramCommand { op: *DramOpcode::ALL.choose(r).unwrap(), reg_a: narrow_reg(r), reg_b: narrow_reg(r), flags }.normalized();
        }
        Instruction::Dram(slots)
    }
}

const ALU_DEST: [RegisterId; 7] = [R1, bender_core::isa::R2, R3, bender_core::isa::R4, bender_core::isa::R5, R6, R7];

fn src_reg(r: &mut ChaCha8Rng) -> RegisterId {
    RegisterId::new(r.random_range(0..8)).unwrap()
}

fn alu_op(p: &mut Program, r: &mut ChaCha8Rng) {
    let rd = *ALU_DEST.choose(r).unwrap();
    let (a, b) = (src_reg(r), src_reg(r));
    match r.random_range(0..12) {
        0 => p.append_add(rd, a, b),
        1 => p.append_sub(rd, a, b),
        2 => p.append_and(rd, a, b),
        3 => p.append_or(rd, a, b),
        4 => p.append_xor(rd, a, b),
        5 => p.append_addi(rd, a, r.random_range(-100..100)),
        6 => p.append_mv(rd, a),
        7 => p.append_li(rd, r.random_range(0..1000)),
        8 => p.append_st(a, R0, r.random_range(0..64)),
        9 => p.append_ld(rd, R0, r.random_range(0..64)),
        10 => p.append_sleep(r.random_range(1..6)),
        _ => p.append_ldpc(rd, r.random_range(0..6)),
    }
    .unwrap();
}

fn dram_op(p: &mut Program, r: &mut ChaCha8Rng) {
    let delay = r.random_range(0..6);
    match r.random_range(0..7) {
        0 => p.append_act(R8, false, R9, false, delay),
        1 => p.append_pre(R8, false, false, delay),
        2 => p.append_read(R8, false, R9, false, false, false, delay),
        3 => p.append_write(R8, false, R9, false, false, false, delay),
        4 => p.append_prea(delay),
        5 => p.append_ref(delay),
        _ => p.append_zqs(delay),
    }
    .unwrap();
}

/// Straight-line code, counted loops and forward branches; `dram` mixes in commands to bank 0, row/column 0.
pub fn control_flow_program(seed: u64, dram: bool) -> Program {
    let r = &mut rng(seed);
    let mut p = Program::new();
    for reg in [R0, R8, R9] {
        p.append_li(reg, 0).unwrap();
    }
    for &reg in &ALU_DEST {
        p.append_li(reg, r.random_range(0..50)).unwrap();
    }
    let blocks = r.random_range(3..12);
    for i in 0..blocks {
        match r.random_range(0..if dram { 4 } else { 3 }) {
            0 => {
                for _ in 0..r.random_range(1..5) {
                    alu_op(&mut p, r);
                }
            }
            1 => {
                let label = format!("loop{i}");
                p.append_li(R10, 0).unwrap();
                p.append_li(R11, r.random_range(1..5)).unwrap();
                p.append_label(&label).unwrap();
                for _ in 0..r.random_range(1..4) {
                    if dram && r.random_bool(0.3) {
                        dram_op(&mut p, r);
                    } else {
                        alu_op(&mut p, r);
                    }
                }
                p.append_addi(R10, R10, 1).unwrap();
                p.append_bl(&label, R10, R11).unwrap();
            }
            2 => {
                let label = format!("skip{i}");
                let (a, b) = (src_reg(r), src_reg(r));
                match r.random_range(0..3) {
                    0 => p.append_bl(&label, a, b),
                    1 => p.append_beq(&label, a, b),
                    _ => p.append_jump(&label),
                }
                .unwrap();
                for _ in 0..r.random_range(0..3) {
                    alu_op(&mut p, r);
                }
                p.append_label(&label).unwrap();
            }
            _ => {
                for _ in 0..r.random_range(1..6) {
                    dram_op(&mut p, r);
                }
            }
        }
    }
    p.append_end().unwrap();
    p
}

/// Rows read in column loops and straight READ bursts, each run well under the FIFO capacity.
pub fn read_heavy_program(seed: u64) -> Program {
    let r = &mut rng(seed);
    let mut p = Program::new();
    p.append_li(R8, 0).unwrap();
    p.append_li(R9, 0).unwrap();
    p.append_li(CASR, 8).unwrap();
    for i in 0..r.random_range(1..6) {
        p.append_li(R9, r.random_range(0..64)).unwrap();
        if r.random_bool(0.5) {
            let label = format!("cols{i}");
            let rounds = format!("rows{i}");
            p.append_li(R10, 0).unwrap();
            p.append_li(R11, r.random_range(1..6)).unwrap();
            p.append_label(&rounds).unwrap();
            p.append_li(R3, 0).unwrap();
            p.append_li(R6, 8 * r.random_range(1..=128)).unwrap();
            p.append_act(R8, false, R9, false, 11).unwrap();
            p.append_label(&label).unwrap();
            p.append_read(R8, false, R3, true, false, false, r.random_range(0..4)).unwrap();
            p.append_bl(&label, R3, R6).unwrap();
            p.append_pre(R8, false, false, 0).unwrap();
            p.append_addi(R10, R10, 1).unwrap();
            p.append_bl(&rounds, R10, R11).unwrap();
        } else {
            p.append_li(R3, 0).unwrap();
            p.append_act(R8, false, R9, false, 11).unwrap();
            for _ in 0..r.random_range(1..200) {
                p.append_read(R8, false, R3, false, false, false, r.random_range(0..3)).unwrap();
            }
            p.append_pre(R8, false, false, 0).unwrap();
        }
        alu_op(&mut p, r);
    }
    p.append_end().unwrap();
    p
}

/// Strictly increasing command times over four banks.
pub fn random_trace(seed: u64, len: usize) -> Vec<HistoryEntry> {
    let r = &mut rng(seed);
    let mut time = 0u64;
    (0..len)
        .map(|_| {
            time += r.random_range(1..24);
            let op = *DramOpcode::ALL[1..].choose(r).unwrap();
            let bank = match op {
                DramOpcode::PreA | DramOpcode::Ref | DramOpcode::Zqs => None,
                _ => Some(r.random_range(0..4)),
            };
            HistoryEntry { time, op, bank }
        })
        .collect()
}
