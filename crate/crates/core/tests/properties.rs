mod common;

use std::collections::BTreeSet;

use bender_core::config::Profile;
use bender_core::dram::timing::{HistoryEntry, RuleSet, TimingChecker, TimingRule};
use bender_core::dram::CommandCounts;
use bender_core::emulator::StepOutcome;
use bender_core::isa::{decode_instruction, encode_instruction, read_image, write_image, DramOpcode, Instruction, RegularOpcode, WORD_MASK};
use bender_core::isa::{R1, R2};
use bender_core::platform::{trace_csv, Platform, PosTask};
use bender_core::program::{reference_run, Program, RefOutcome};
use bender_core::dram::violations_csv;
use proptest::prelude::*;

use common::*;

fn ddr4() -> Profile {
    Profile::ddr4_default()
}

type Key = (String, u64, u64);

fn streaming(trace: &[HistoryEntry], rules: RuleSet) -> BTreeSet<Key> {
    let mut c = TimingChecker::new(rules);
    trace.iter().flat_map(|e| c.issue(*e)).map(|v| (v.rule, v.prev_time, v.cur_time)).collect()
}

fn all_pairs(trace: &[HistoryEntry], rules: &[TimingRule]) -> BTreeSet<Key> {
    let mut out = BTreeSet::new();
    for (j, cur) in trace.iter().enumerate() {
        for prev in &trace[..j] {
            for r in rules {
                if r.prev == prev.class()
                    && r.next == cur.class()
                    && r.scope.matches(prev.bank, cur.bank)
                    && cur.time - prev.time < r.min_slots
                {
                    out.insert((r.name.clone(), prev.time, cur.time));
                }
            }
        }
    }
    out
}

fn run_stepwise(p: &mut Platform, image: &[u8], budget: u64, mut each: impl FnMut(&Platform, &bender_core::emulator::StepEvents, bool)) {
    p.load(image).unwrap();
    while p.core.state.cycle < budget {
        let guarded = p.core.in_guarded_run();
        let ev = p.core.step(&mut p.sys);
        each(p, &ev, guarded);
        if ev.outcome != StepOutcome::Continue {
            break;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encoding_roundtrips(seed in any::<u64>()) {
        let x = random_instruction(&mut rng(seed));
        let w = encode_instruction(&x).unwrap();
        prop_assert_eq!(w & !WORD_MASK, 0);
        prop_assert_eq!(decode_instruction(w).unwrap(), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn images_roundtrip(seed in any::<u64>(), len in 0usize..64) {
        let r = &mut rng(seed);
        let prog: Vec<Instruction> = (0..len).map(|_| random_instruction(r)).collect();
        let img = write_image(&prog).unwrap();
        prop_assert_eq!(img.len(), 12 + 9 * len);
        prop_assert_eq!(read_image(&img).unwrap(), prog);
    }

    #[test]
    fn emulator_histogram_matches_reference_interpreter(seed in any::<u64>()) {
        let a = control_flow_program(seed, true).assemble().unwrap();
        let profile = ddr4();
        let reference = reference_run(&a.instructions, profile.platform.scratchpad_words, 100_000);
        prop_assume!(reference.outcome == RefOutcome::Halted);
        let mut p = Platform::new(&profile);
        let r = p.execute(&a.image).unwrap();
        prop_assert!(r.halted(), "{:?}", r.outcome);
        let h = reference.histogram;
        let want = CommandCounts {
            act: h[DramOpcode::Act.code() as usize],
            pre: h[DramOpcode::Pre.code() as usize],
            prea: h[DramOpcode::PreA.code() as usize],
            read: h[DramOpcode::Read.code() as usize],
            write: h[DramOpcode::Write.code() as usize],
            refresh: h[DramOpcode::Ref.code() as usize],
            zqs: h[DramOpcode::Zqs.code() as usize],
        };
        prop_assert_eq!(r.histogram, want);
        prop_assert_eq!(r.instructions, reference.instructions_executed);
    }

    #[test]
    fn identical_runs_give_identical_traces(seed in any::<u64>()) {
        let a = control_flow_program(seed, true).assemble().unwrap();
        let once = || {
            let mut p = Platform::new(&ddr4());
            p.enable_trace(true);
            p.set_periodic(PosTask::Refresh, true);
            let r = p.execute(&a.image).unwrap();
            (trace_csv(p.sys.trace()), violations_csv(&r.violations), r.cycles, p.core.state.regs)
        };
        prop_assert_eq!(once(), once());
    }

    #[test]
    fn assembly_is_deterministic(seed in any::<u64>()) {
        let a = control_flow_program(seed, true).assemble().unwrap();
        let b = control_flow_program(seed, true).assemble().unwrap();
        prop_assert_eq!(a.image, b.image);
    }

    #[test]
    fn command_spacing_is_one_plus_delay(delays in prop::collection::vec(0u64..120, 1..40)) {
        let mut prog = Program::new();
        for (i, &d) in delays.iter().enumerate() {
            if i % 2 == 0 {
                prog.append_act(R1, false, R2, false, d).unwrap();
            } else {
                prog.append_pre(R1, false, false, d).unwrap();
            }
        }
        let a = prog.assemble().unwrap();
        let mut t = 0u64;
        let mut times = Vec::new();
        for ins in read_image(&a.image).unwrap() {
            match ins {
                Instruction::Dram(slots) => {
                    for (k, c) in slots.iter().enumerate() {
                        if !c.is_nop() {
                            times.push(t + k as u64);
                        }
                    }
                    t += 4;
                }
                Instruction::Regular(r) if r.op == RegularOpcode::Sleep => t += 4 * r.imm as u64,
                Instruction::Regular(_) => t += 4,
            }
        }
        prop_assert_eq!(times.len(), delays.len());
        for (w, d) in times.windows(2).zip(&delays) {
            prop_assert_eq!(w[1] - w[0], 1 + d);
        }
    }

    #[test]
    fn every_read_run_is_preceded_by_its_hint(seed in any::<u64>()) {
        let a = read_heavy_program(seed).assemble().unwrap();
        let prog = &a.instructions;
        for h in &a.hints {
            let at = h.address as usize;
            let Instruction::Regular(op) = prog[at] else { panic!("hint site holds a DRAM instruction") };
            prop_assert_eq!(op.op, RegularOpcode::Hint);
            prop_assert_eq!(op.imm as u32, h.count);
            prop_assert!(h.count <= 512);
        }
        for (i, ins) in prog.iter().enumerate() {
            if ins.read_count() > 0 {
                let start = (0..=i).rev().find(|&k| !prog[k].is_dram() && !prog[k].regular().is_some_and(|r| r.op.is_branch())).unwrap();
                prop_assert_eq!(prog[start].regular().map(|r| r.op), Some(RegularOpcode::Hint), "READ at {} has no hint", i);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn streaming_checker_equals_all_pairs_scan(seed in any::<u64>(), len in 1usize..=200) {
        let trace = random_trace(seed, len);
        let rules = RuleSet::from_profile(&ddr4());
        let brute = all_pairs(&trace, rules.rules());
        prop_assert_eq!(streaming(&trace, rules), brute);
    }

    #[test]
    fn relaxing_rules_only_removes_violations(seed in any::<u64>(), len in 1usize..=200, keep in prop::collection::vec(0.0f64..=1.0, 32)) {
        let trace = random_trace(seed, len);
        let rules = RuleSet::from_profile(&ddr4());
        let relaxed: Vec<TimingRule> = rules
            .rules()
            .iter()
            .zip(keep.iter().cycle())
            .map(|(r, &k)| TimingRule { min_slots: (r.min_slots as f64 * k).floor() as u64, ..r.clone() })
            .collect();
        let strict = streaming(&trace, rules.clone());
        let loose = streaming(&trace, RuleSet::new(relaxed, rules.slot_ns()));
        prop_assert!(loose.is_subset(&strict));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fifo_never_overflows_and_runs_never_stall(seed in any::<u64>(), rate in 0.0f64..=1.0, refresh in any::<bool>()) {
        let a = read_heavy_program(seed).assemble().unwrap();
        let mut p = Platform::new(&ddr4());
        p.set_drain_rate(rate);
        p.set_periodic(PosTask::Refresh, refresh);
        p.set_periodic(PosTask::Zqs, refresh);
        let cap = p.sys.fifo.capacity();
        let mut run: Option<(u64, u64)> = None;
        let mut runs = Vec::new();
        let mut bad = Vec::new();
        run_stepwise(&mut p, &a.image, 50_000_000, |p, ev, guarded| {
            if p.sys.fifo.len() > cap {
                bad.push(format!("occupancy {} at pc {}", p.sys.fifo.len(), ev.pc));
            }
            if guarded && run.is_some() && ev.stall_cycles > 0 {
                bad.push(format!("stall of {} inside a run at pc {}", ev.stall_cycles, ev.pc));
            }
            if guarded || p.core.in_guarded_run() {
                for c in ev.issued() {
                    let r = run.get_or_insert((c.slot, c.slot));
                    r.1 = c.slot;
                }
            }
            if !p.core.in_guarded_run() {
                runs.extend(run.take());
            }
        });
        prop_assert!(bad.is_empty(), "{:?}", bad);
        prop_assert_eq!(p.sys.fifo.overflows(), 0);
        for inj in p.sys.injections() {
            prop_assert!(runs.iter().all(|&(lo, hi)| inj.slot <= lo || inj.slot >= hi), "injection at {} inside a run", inj.slot);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn control_flow_costs_seven_cycles(seed in any::<u64>()) {
        let a = control_flow_program(seed, false).assemble().unwrap();
        let mut p = Platform::new(&ddr4());
        let mut branches = 0;
        let mut costs = Vec::new();
        run_stepwise(&mut p, &a.image, 10_000_000, |_, ev, _| {
            if let Some(Instruction::Regular(op)) = ev.instruction {
                if op.op.is_branch() {
                    branches += 1;
                    costs.push(ev.end_cycle - ev.start_cycle - ev.stall_cycles);
                }
            }
        });
        prop_assert!(p.core.state.halted);
        prop_assert!(costs.iter().all(|&c| c == 7), "{:?}", costs);
        prop_assert_eq!(costs.len(), branches);
    }
}
