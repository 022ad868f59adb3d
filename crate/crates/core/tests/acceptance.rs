mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bender_core::config::Profile;
use bender_core::dram::timing::{HistoryEntry, RuleSet, TimingChecker};
use bender_core::dram::{violations_csv, CommandCounts};
use bender_core::emulator::StepOutcome;
use bender_core::experiments::{
    combo_grid, run_study1, run_study2, run_study3, segment_kernel, Study1Config, Study1Targets, Study2Config, Study3Config, Study3Counts,
};
use bender_core::isa::{decode_instruction, encode_instruction, Instruction};
use bender_core::platform::{trace_csv, Platform};
use bender_core::program::{read_row_program, Program, READ_ROW_SOURCE};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

fn encoding_roundtrip() -> Outcome {
    let r = &mut rng(0xE4C0);
    let mut failures = 0;
    for _ in 0..10_000 {
        let x = random_instruction(r);
        if encode_instruction(&x).and_then(decode_instruction).ok() != Some(x) {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("10000 instructions, {failures} failures"))
}

fn read_row_end_to_end() -> Outcome {
    let built = read_row_program().assemble().unwrap();
    let parsed = Program::parse(READ_ROW_SOURCE).unwrap().assemble().unwrap();
    let hints: Vec<u32> = built.hints.iter().map(|h| h.count).collect();
    let mut p = Platform::new(&Profile::ddr4_default());
    let r = p.execute(&built.image).unwrap();
    let received = p.receive_data(128).len();
    let want = CommandCounts { act: 1, read: 128, pre: 1, ..Default::default() };
    let pass = built.image == parsed.image
        && hints == [128]
        && r.halted()
        && r.histogram == want
        && r.violations.is_empty()
        && received == 128;
    outcome(
        pass,
        format!(
            "hints {hints:?}, ACT {} READ {} PRE {}, {} violations, {received} transfers received, text and builder images {}",
            r.histogram.act,
            r.histogram.read,
            r.histogram.pre,
            r.violations.len(),
            if built.image == parsed.image { "identical" } else { "differ" }
        ),
    )
}

fn branch_penalty() -> Outcome {
    let src = "LI R1, 0\nLI R2, 5\nLDPC R3, 0\nBL a, R1, R2\na:\nLDPC R4, 0\nBL b, R2, R1\nb:\nLDPC R5, 0\nJUMP c\nc:\nLDPC R6, 0\nBEQ d, R1, R1\nd:\nLDPC R7, 0\nBEQ e, R1, R2\ne:\nLDPC R8, 0\nEND\n";
    let a = Program::parse(src).unwrap().assemble().unwrap();
    let mut p = Platform::new(&Profile::ddr4_default());
    p.execute(&a.image).unwrap();
    let regs = p.core.state.regs;
    // Each gap is one LDPC plus one branch.
    let counter: Vec<u32> = (3..8).map(|i| regs[i + 1] - regs[i] - 1).collect();
    let mut branches = 0u64;
    let mut wrong = 0u64;
    for seed in 0..100u64 {
        let a = control_flow_program(0xB7A0 + seed, false).assemble().unwrap();
        let mut p = Platform::new(&Profile::ddr4_default());
        p.load(&a.image).unwrap();
        loop {
            let ev = p.core.step(&mut p.sys);
            if let Some(Instruction::Regular(op)) = ev.instruction {
                if op.op.is_branch() {
                    branches += 1;
                    wrong += (ev.end_cycle - ev.start_cycle - ev.stall_cycles != 7) as u64;
                }
            }
            if ev.outcome != StepOutcome::Continue {
                wrong += !matches!(ev.outcome, StepOutcome::Halted) as u64;
                break;
            }
        }
    }
    let pass = counter.iter().all(|&c| c == 7) && wrong == 0 && branches > 0;
    outcome(pass, format!("cycle counter per branch {counter:?}; {branches} branches over 100 programs, {wrong} off"))
}

fn timing_oracle() -> Outcome {
    let rules = RuleSet::from_profile(&Profile::ddr4_default());
    let r = &mut rng(0x7131);
    let mut mismatches = 0;
    let mut total = 0;
    for k in 0..500u64 {
        let len = rand::Rng::random_range(r, 1..=200);
        let trace: Vec<HistoryEntry> = random_trace(0x7131_0000 + k, len);
        let mut c = TimingChecker::new(rules.clone());
        let mut stream: Vec<(String, u64, u64)> =
            trace.iter().flat_map(|e| c.issue(*e)).map(|v| (v.rule, v.prev_time, v.cur_time)).collect();
        let mut brute = Vec::new();
        for (j, cur) in trace.iter().enumerate() {
            for prev in &trace[..j] {
                for rule in rules.rules() {
                    if rule.prev == prev.class()
                        && rule.next == cur.class()
                        && rule.scope.matches(prev.bank, cur.bank)
                        && cur.time - prev.time < rule.min_slots
                    {
                        brute.push((rule.name.clone(), prev.time, cur.time));
                    }
                }
            }
        }
        stream.sort();
        brute.sort();
        total += brute.len();
        mismatches += (stream != brute) as u32;
    }
    outcome(mismatches == 0, format!("500 traces, {total} violations, {mismatches} traces differ"))
}

fn fifo_safety() -> Outcome {
    let r = &mut rng(0xF1F0);
    let mut worst = 0u32;
    let mut stalls_in_runs = 0u64;
    let mut hint_stalls = 0u64;
    let mut deadlocks = 0;
    let mut overflows = 0;
    for k in 0..200u64 {
        let a = read_heavy_program(0xF1F0_0000 + k).assemble().unwrap();
        let rate: f64 = rand::Rng::random_range(r, 0.0..=1.0);
        let mut p = Platform::new(&Profile::ddr4_default());
        p.set_drain_rate(rate);
        p.load(&a.image).unwrap();
        let mut started = false;
        loop {
            let guarded = p.core.in_guarded_run();
            let ev = p.core.step(&mut p.sys);
            worst = worst.max(p.sys.fifo.len());
            if guarded && started {
                stalls_in_runs += ev.stall_cycles;
            }
            if matches!(ev.instruction, Some(Instruction::Regular(op)) if op.op == bender_core::isa::RegularOpcode::Hint) {
                hint_stalls += ev.stall_cycles;
            }
            started = p.core.in_guarded_run() && (started || ev.issued().next().is_some());
            match ev.outcome {
                StepOutcome::Continue => {}
                StepOutcome::Trapped(_) => {
                    deadlocks += 1;
                    break;
                }
                _ => break,
            }
        }
        overflows += p.sys.fifo.overflows();
    }
    let pass = worst <= 512 && overflows == 0 && stalls_in_runs == 0;
    outcome(
        pass,
        format!(
            "200 programs: peak occupancy {worst}, {overflows} overflows, {stalls_in_runs} stall cycles inside runs, {hint_stalls} hint stall cycles, {deadlocks} zero-drain deadlocks"
        ),
    )
}

fn run_kernel(p: &mut Platform, kernel: &[u8], base: u32, rows: [&[u8]; 3]) -> (Vec<Vec<u8>>, bool) {
    let dev = p.device_mut();
    dev.reset_state();
    for (i, r) in rows.iter().enumerate() {
        dev.fill_row(0, base + i as u32, r).unwrap();
    }
    p.core.state.scratchpad[0] = base + 1;
    p.core.state.scratchpad[1] = base + 2;
    let rep = p.execute(kernel).unwrap();
    assert!(rep.halted());
    let activated = !p.device().majority_events().is_empty();
    let out = (0..3).map(|i| p.device_mut().peek_row(0, base + i).unwrap()).collect();
    (out, activated)
}

fn majority_semantics() -> Outcome {
    let mut prof = Profile::resolve("mfrB").unwrap();
    prof.fault_model.majority.segment_error.or_median = 0.0;
    let n = prof.geometry.row_bytes();
    let kernel = segment_kernel(&prof, 0, prof.ns_to_slots(1.5), prof.ns_to_slots(1.5)).unwrap();
    let mut p = Platform::new(&prof);
    // Bit b of every byte carries input case b, so each case covers n bitlines.
    let row = |i: u32| vec![(0..8u8).filter(|b| b >> i & 1 == 1).fold(0u8, |acc, b| acc | 1 << b); n];
    let (out, act) = run_kernel(&mut p, &kernel.image, 16, [&row(0), &row(1), &row(2)]);
    let maj_ok = act && out.iter().all(|r| r.iter().all(|&x| x == 0xE8));
    let r = &mut rng(0x3A7);
    let mut a = vec![0u8; n];
    let mut b = vec![0u8; n];
    rand::Rng::fill(r, &mut a[..]);
    rand::Rng::fill(r, &mut b[..]);
    let and: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x & y).collect();
    let or: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x | y).collect();
    let (o_and, _) = run_kernel(&mut p, &kernel.image, 32, [&vec![0; n], &a, &b]);
    let (o_or, _) = run_kernel(&mut p, &kernel.image, 48, [&a, &vec![0xFF; n], &b]);
    let and_ok = o_and.iter().all(|x| *x == and);
    let or_ok = o_or.iter().all(|x| *x == or);

    let mut gated = Vec::new();
    for c in combo_grid() {
        let k = segment_kernel(&prof, 0, prof.ns_to_slots(c.tras_ns), prof.ns_to_slots(c.trp_ns)).unwrap();
        if run_kernel(&mut p, &k.image, 64, [&a, &vec![0xFF; n], &b]).1 {
            gated.push((c.tras_ns, c.trp_ns));
        }
    }
    let mut others = 0;
    for name in ["mfrA", "mfrC", "ddr3_default"] {
        let q = Profile::resolve(name).unwrap();
        let mut pq = Platform::new(&q);
        let k = segment_kernel(&q, 0, q.ns_to_slots(1.5).max(1), q.ns_to_slots(1.5).max(1)).unwrap();
        others += run_kernel(&mut pq, &k.image, 64, [&a, &vec![0xFF; q.geometry.row_bytes()], &b]).1 as u32;
    }
    let gate_ok = gated == [(1.5, 1.5), (1.5, 3.0), (3.0, 1.5)] && others == 0;
    outcome(
        maj_ok && and_ok && or_ok && gate_ok,
        format!(
            "MAJ over 8 cases x {} bitlines {}, AND {}, OR {}, activating combos {gated:?}, activations on profiles without the list: {others}",
            n,
            if maj_ok { "exact" } else { "wrong" },
            if and_ok { "exact" } else { "wrong" },
            if or_ok { "exact" } else { "wrong" }
        ),
    )
}

fn study1_reproduction() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["mfrA", "mfrB", "mfrC"] {
        let prof = Profile::resolve(name).unwrap();
        let want = Study1Targets::reference(name).unwrap();
        let cfg = Study1Config::default();
        let res = match run_study1(&prof, &cfg) {
            Ok(r) => r,
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
                continue;
            }
        };
        let t_max = *cfg.t_grid.iter().max().unwrap();
        let f1 = res.flips(1, 1).unwrap();
        let fm = res.flips(t_max, 1).unwrap();
        let h1 = res.hc_first(1, 1).map_or(f64::NAN, |h| h as f64);
        let hm = res.hc_first(t_max, 1).map_or(f64::NAN, |h| h as f64);
        let series: Vec<f64> = cfg.t_grid.iter().map(|&t| res.flips(t, 1).unwrap()).collect();
        let monotone = series.windows(2).all(|w| w[1] <= w[0]);
        let budget = res.rows.iter().all(|r| r.acts_issued <= cfg.total_acts && r.acts_issued + 2 * r.t >= cfg.total_acts);
        let ok = within(f1, want.flips_t1, 0.05)
            && within(fm, want.flips_tmax, 0.05)
            && within(h1, want.hc_first_t1, 0.05)
            && within(hm, want.hc_first_tmax, 0.05)
            && monotone
            && budget;
        pass &= ok;
        parts.push(format!(
            "{name}: flips {f1:.1}/{fm:.1} (want {}/{}), HC {h1:.0}/{hm:.0} (want {:.0}/{:.0}), monotone {monotone}",
            want.flips_t1, want.flips_tmax, want.hc_first_t1, want.hc_first_tmax
        ));
    }
    outcome(pass, parts.join("; "))
}

fn study3_golden() -> Outcome {
    let prof = Profile::resolve("mfrB").unwrap();
    let res = match run_study3(&prof, &Study3Config::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let c = res.counts;
    let want = Study3Counts { and_only_3: 35, both_5: 160, both_10: 4546, both_3: c.both_3 };
    let counts_ok = within(c.and_only_3 as f64, want.and_only_3 as f64, 0.02)
        && within(c.both_5 as f64, want.both_5 as f64, 0.02)
        && within(c.both_10 as f64, want.both_10 as f64, 0.02)
        && c.both_3 <= c.both_5
        && c.both_5 <= c.both_10;
    let mut order_ok = true;
    let mut worst = f64::NEG_INFINITY;
    for m in &res.measured {
        let n = m.len() as f64;
        let d: Vec<f64> = m.iter().map(|x| x[1] - x[0]).collect();
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let z = -mean / (sd / n.sqrt()).max(f64::MIN_POSITIVE);
        worst = worst.max(z);
        order_ok &= z <= 3.0;
    }
    outcome(
        counts_ok && order_ok,
        format!(
            "AND-only <3% {}, both <5% {}, both <10% {} (want 35/160/4546 within 2%); AND above OR by at most {worst:.1} sigma",
            c.and_only_3, c.both_5, c.both_10
        ),
    )
}

fn study2_property() -> Outcome {
    let mut rows = 0;
    let mut with_extra = 0;
    let mut parts = Vec::new();
    for name in ["mfrA", "mfrB", "mfrC"] {
        let prof = Profile::resolve(name).unwrap();
        let (mut r_n, mut r_x) = (0, 0);
        for seed in 1..=20u64 {
            match run_study2(&prof, &Study2Config { seed: Some(seed), ..Study2Config::default() }) {
                Ok(r) => {
                    r_n += r.victims.len();
                    r_x += r.victims.iter().filter(|v| v.random_only() > 0).count();
                }
                Err(e) => return outcome(false, format!("{name} seed {seed}: {e}")),
            }
        }
        parts.push(format!("{name} {r_x}/{r_n}"));
        rows += r_n;
        with_extra += r_x;
    }
    let frac = with_extra as f64 / rows as f64;
    outcome(frac >= 0.95, format!("{:.1}% of victim rows gain a random-only cell over 20 seeds ({})", 100.0 * frac, parts.join(", ")))
}

fn determinism() -> Outcome {
    let a = Profile::resolve("mfrA").unwrap();
    let b = Profile::resolve("mfrB").unwrap();
    let s1 = Study1Config { triples: 32, t_grid: vec![1, 64, 4096], ..Study1Config::default() };
    let s2 = Study2Config { victims: 4, ..Study2Config::default() };
    let s3 = Study3Config { segments: 512, ..Study3Config::default() };
    let run_trace = |prof: &Profile, image: &[u8]| {
        let mut p = Platform::new(prof);
        p.enable_trace(true);
        let r = p.execute(image).unwrap();
        (trace_csv(p.sys.trace()), violations_csv(&r.violations))
    };
    let listing = read_row_program().assemble().unwrap();
    let violating = segment_kernel(&b, 0, 1, 1).unwrap();
    let once = || {
        let mut out = vec![
            run_study1(&a, &s1).unwrap().csv(),
            run_study2(&a, &s2).unwrap().csv(),
            run_study3(&b, &s3).unwrap().csv(),
        ];
        for (prof, img) in [(&Profile::ddr4_default(), &listing.image), (&b, &violating.image)] {
            let (t, v) = run_trace(prof, img);
            out.push(t);
            out.push(v);
        }
        out
    };
    let (x, y) = (once(), once());
    let same = x == y;
    let bytes: usize = x.iter().map(String::len).sum();
    outcome(same, format!("3 study CSVs, 2 traces, 2 violation logs, {bytes} bytes, {}", if same { "identical" } else { "differ" }))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("encoding roundtrip", Duration::from_secs(1), encoding_roundtrip),
        ("read-row listing end to end", Duration::from_secs(1), read_row_end_to_end),
        ("branch penalty", Duration::MAX, branch_penalty),
        ("timing oracle equivalence", Duration::from_secs(10), timing_oracle),
        ("fifo safety", Duration::from_secs(30), fifo_safety),
        ("majority semantics", Duration::MAX, majority_semantics),
        ("interleaving calibrated reproduction", Duration::from_secs(300), study1_reproduction),
        ("majority golden counts", Duration::from_secs(120), study3_golden),
        ("data pattern coverage", Duration::from_secs(120), study2_property),
        ("determinism", Duration::MAX, determinism),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        failed += !pass as u32;
        let budget = if limit == Duration::MAX { String::new() } else { format!(" of {}s", limit.as_secs()) };
        let late = if in_time { "" } else { " [over time budget]" };
        println!("{} {name}: {} ({:.2}s{budget}){late}", if pass { "PASS" } else { "FAIL" }, o.detail, took.as_secs_f64());
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
