use super::*;
use crate::config::Profile;

const Z: Transfer = [0u8; 64];

fn quiet_majority(profile: &mut Profile) {
    let e = &mut profile.fault_model.majority.segment_error;
    e.or_median = 0.0;
    e.or_sigma = 0.0;
}

#[test]
fn short_tras_is_recorded_with_pc() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    d.set_current_pc(Some(7));
    d.apply(DeviceCommand::act(0, 5), 0, &Z).unwrap();
    let ev = d.apply(DeviceCommand::pre(0), 4, &Z).unwrap();
    assert_eq!(ev.violations, 1);
    let v = &d.violations()[0];
    assert_eq!((v.rule.as_str(), v.bus_slot, v.pc), ("tRAS", 4, Some(7)));
    assert_eq!(v.csv_line(), "4,tRAS,0,ACT,PRE,33,6");
}

#[test]
fn neighbour_accumulators_follow_blast_weights() {
    let p = Profile::ddr4_default();
    let mut d = DramDevice::new(&p);
    d.apply(DeviceCommand::act(0, 100), 0, &Z).unwrap();
    let rh = &p.fault_model.rowhammer;
    let w = rh.base_disturb * rh.blast.distance1;
    let w2 = rh.base_disturb * rh.blast.distance2;
    assert_eq!(d.accumulator(0, 99), w);
    assert_eq!(d.accumulator(0, 101), w);
    assert_eq!(d.accumulator(0, 98), w2);
    assert_eq!(d.accumulator(0, 102), w2);
    assert_eq!(d.accumulator(0, 103), 0.0);
}

#[test]
fn write_then_read_and_closed_bank_fallbacks() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    let data = [0xAA; 64];
    d.apply(DeviceCommand::write(1, 0), 0, &data).unwrap();
    assert_eq!(d.violations()[0].rule, "WRITE_TO_CLOSED_BANK");
    assert_eq!(d.peek_column(1, 0, 0).unwrap(), Z);
    d.apply(DeviceCommand::act(1, 3), 10, &Z).unwrap();
    d.apply(DeviceCommand::write(1, 16), 30, &data).unwrap();
    let ev = d.apply(DeviceCommand::read(1, 16), 40, &Z).unwrap();
    assert_eq!(ev.data, Some(data));
    assert_eq!(d.peek_row(1, 3).unwrap()[128..192], data);
    let ev = d.apply(DeviceCommand::read(2, 0), 50, &Z).unwrap();
    assert_eq!(ev.data, Some(Z));
    assert_eq!(d.violations().last().unwrap().rule, "READ_TO_CLOSED_BANK");
}

#[test]
fn address_errors() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    assert_eq!(d.apply(DeviceCommand::act(16, 0), 0, &Z), Err(DeviceError::UnknownBank { bank: 16 }));
    assert_eq!(d.apply(DeviceCommand::act(0, 32768), 0, &Z), Err(DeviceError::UnknownRow { bank: 0, row: 32768 }));
    assert_eq!(d.apply(DeviceCommand::read(0, 1024), 0, &Z), Err(DeviceError::UnknownColumn { bank: 0, col: 1024 }));
}

#[test]
fn auto_precharge_closes_the_bank() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    d.apply(DeviceCommand::act(0, 1), 0, &Z).unwrap();
    d.apply(DeviceCommand::read(0, 0).with_auto_precharge(), 22, &Z).unwrap();
    assert_eq!(d.open_row(0), None);
    assert!(d.violations().is_empty());
    d.apply(DeviceCommand::act(0, 2), 24, &Z).unwrap();
    assert_eq!(d.violations()[0].rule, "tRP");
}

#[test]
fn bank_state_machine() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    assert_eq!(d.bank_state(0), BankState::Precharged);
    d.apply(DeviceCommand::act(0, 1), 0, &Z).unwrap();
    assert_eq!(d.bank_state(0), BankState::Activating);
    d.apply(DeviceCommand::zqs(), 9, &Z).unwrap();
    assert_eq!(d.bank_state(0), BankState::Active);
    d.apply(DeviceCommand::pre(0), 30, &Z).unwrap();
    assert_eq!(d.bank_state(0), BankState::Precharging);
    d.apply(DeviceCommand::zqs(), 39, &Z).unwrap();
    assert_eq!(d.bank_state(0), BankState::Precharged);
    // ACT on an open bank is ignored
    d.apply(DeviceCommand::act(0, 4), 50, &Z).unwrap();
    d.apply(DeviceCommand::act(0, 9), 80, &Z).unwrap();
    assert_eq!(d.open_row(0), Some(4));
    assert_eq!(d.violations().last().unwrap().rule, "ACT_TO_OPEN_BANK");
}

fn run_majority(d: &mut DramDevice, segment: u32, rows: [&[u8]; 3], tras: u64, trp: u64) -> Option<MajorityEvent> {
    let base = segment * 4;
    for (i, r) in rows.iter().enumerate() {
        d.fill_row_pattern(0, base + i as u32, r).unwrap();
    }
    let t = d.now() + 100;
    d.apply(DeviceCommand::act(0, base + 1), t, &Z).unwrap();
    d.apply(DeviceCommand::pre(0), t + tras, &Z).unwrap();
    let ev = d.apply(DeviceCommand::act(0, base + 2), t + tras + trp, &Z).unwrap();
    d.apply(DeviceCommand::pre(0), t + tras + trp + 22, &Z).unwrap();
    ev.majority
}

#[test]
fn majority_truth_table_without_errors() {
    let mut p = Profile::builtin("B").unwrap();
    quiet_majority(&mut p);
    let mut d = DramDevice::new(&p);
    for bits in 0..8u8 {
        let v = |i: u8| if bits >> i & 1 == 1 { vec![0xFFu8] } else { vec![0u8] };
        let (a, b, c) = (v(0), v(1), v(2));
        let ev = run_majority(&mut d, 10 + bits as u32, [&a, &b, &c], 1, 1).expect("activation");
        assert_eq!(ev.errors, 0);
        let want = if bits.count_ones() >= 2 { 0xFF } else { 0 };
        for r in 0..3 {
            assert!(d.peek_row(0, (10 + bits as u32) * 4 + r).unwrap().iter().all(|&x| x == want));
        }
    }
    let a: Vec<u8> = (0..64).map(|i| (i * 37 + 11) as u8).collect();
    let b: Vec<u8> = (0..64).map(|i| (i * 91 + 5) as u8).collect();
    run_majority(&mut d, 40, [&a, &[0xFF], &b], 1, 2).unwrap();
    let or: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x | y).collect();
    assert_eq!(d.peek_row(0, 160).unwrap()[..64], or[..]);
    run_majority(&mut d, 41, [&[0x00], &a, &b], 2, 1).unwrap();
    let and: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x & y).collect();
    assert_eq!(d.peek_row(0, 166).unwrap()[..64], and[..]);
}

#[test]
fn majority_needs_listed_timing() {
    let mut p = Profile::builtin("B").unwrap();
    quiet_majority(&mut p);
    let mut d = DramDevice::new(&p);
    let mut hits = Vec::new();
    for tras in 1..=10 {
        for trp in 1..=10 {
            if run_majority(&mut d, 2, [&[0x0F], &[0xFF], &[0xF0]], tras, trp).is_some() {
                hits.push((tras, trp));
            }
        }
    }
    assert_eq!(hits, vec![(1, 1), (1, 2), (2, 1)]);
    let mut a = DramDevice::new(&Profile::builtin("A").unwrap());
    assert!(run_majority(&mut a, 2, [&[0x0F], &[0xFF], &[0xF0]], 1, 1).is_none());
}

#[test]
fn majority_errors_follow_segment_rates() {
    let p = Profile::builtin("B").unwrap();
    let mut d = DramDevice::new(&p);
    let rates = d.segment_rates(0, 7);
    let ev = run_majority(&mut d, 7, [&[0x00], &[0x3C], &[0x5A]], 1, 1).unwrap();
    assert_eq!(ev.epsilon, rates.and);
    let ev = run_majority(&mut d, 7, [&[0x3C], &[0xFF], &[0x5A]], 1, 1).unwrap();
    assert_eq!(ev.epsilon, rates.or);
    let bits = 65536.0;
    let sd = (rates.or * (1.0 - rates.or) / bits).sqrt();
    assert!((ev.errors as f64 / bits - rates.or).abs() < 5.0 * sd);
}

fn hammer_one_by_one(d: &mut DramDevice, pattern: &[(u32, u64)], iterations: u64, start: u64, t: HammerTiming) {
    let mut now = start;
    for _ in 0..iterations {
        for &(row, count) in pattern {
            for _ in 0..count {
                d.apply(DeviceCommand::act(0, row), now, &Z).unwrap();
                d.apply(DeviceCommand::pre(0), now + t.act_to_pre, &Z).unwrap();
                now += t.period();
            }
        }
    }
}

fn init_triple(d: &mut DramDevice) {
    for r in 0..8 {
        d.fill_row_pattern(0, r, &[if r % 2 == 1 { 0xAA } else { 0x55 }]).unwrap();
    }
}

#[test]
fn replay_matches_command_by_command_execution() {
    let mut p = Profile::builtin("C").unwrap();
    // low thresholds so that flips occur within a short test
    p.fault_model.rowhammer.threshold.location = 200.0;
    p.fault_model.rowhammer.threshold.median = 40_000.0;
    p.fault_model.rowhammer.threshold.shape = 2.0;
    let t = HammerTiming::from_profile(&p);
    for (pattern, iters) in [(vec![(1u32, 1u64), (3, 1)], 3000u64), (vec![(1, 64), (3, 64)], 40), (vec![(2, 5), (3, 2), (5, 0)], 700)] {
        let mut a = DramDevice::new(&p);
        let mut b = DramDevice::new(&p);
        init_triple(&mut a);
        init_triple(&mut b);
        let fa = a.hammer_pattern(0, &pattern, iters, 10, t).unwrap();
        hammer_one_by_one(&mut b, &pattern, iters, 10, t);
        assert!(fa > 0, "pattern {pattern:?} produced no flips");
        for r in 0..8 {
            assert_eq!(a.peek_row(0, r).unwrap(), b.peek_row(0, r).unwrap(), "row {r} for {pattern:?}");
            assert_eq!(a.accumulator(0, r), b.accumulator(0, r));
        }
        assert_eq!(a.counts(), b.counts());
        assert_eq!(a.now(), b.now());
        assert!(b.violations().is_empty());
        // later commands see the same timing history
        a.apply(DeviceCommand::act(0, 9), a.now() + 1, &Z).unwrap();
        b.apply(DeviceCommand::act(0, 9), b.now() + 1, &Z).unwrap();
        assert_eq!(a.violations(), b.violations());
    }
}

#[test]
fn interleaving_lowers_flip_count() {
    let p = Profile::builtin("C").unwrap();
    let t = HammerTiming::from_profile(&p);
    let flips = |tt: u64| {
        let mut d = DramDevice::new(&p);
        init_triple(&mut d);
        d.hammer_pattern(0, &[(1, tt), (3, tt)], (1 << 19) / tt, 0, t).unwrap();
        d.peek_row(0, 2).unwrap().iter().zip(std::iter::repeat(0x55u8)).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>()
    };
    let f1 = flips(1);
    let f64k = flips(65536);
    assert!(f1 > f64k, "{f1} vs {f64k}");
}

#[test]
fn refresh_resets_accumulators_but_keeps_flips() {
    let mut p = Profile::ddr4_default();
    p.fault_model.rowhammer.threshold.location = 10.0;
    p.fault_model.rowhammer.threshold.median = 20_000.0;
    p.geometry.rows_per_bank = 8192;
    let mut d = DramDevice::new(&p);
    init_triple(&mut d);
    let t = HammerTiming::from_profile(&p);
    d.hammer_pattern(0, &[(1, 1), (3, 1)], 20_000, 0, t).unwrap();
    let before = d.peek_row(0, 2).unwrap();
    assert!(d.accumulator(0, 2) > 0.0);
    assert_ne!(before, vec![0x55; before.len()]);
    // one REF covers one row per bank at this geometry; sweep rows 0..=2
    for i in 0..3 {
        d.apply(DeviceCommand::refresh(), d.now() + 1000 + i * 300, &Z).unwrap();
    }
    assert_eq!(d.accumulator(0, 2), 0.0);
    assert_eq!(d.peek_row(0, 2).unwrap(), before);
}

#[test]
fn energy_is_counts_times_constants() {
    let mut p = Profile::ddr4_default();
    p.energy = crate::config::EnergyConstants { act: 1.0, ..Default::default() };
    let mut d = DramDevice::new(&p);
    for i in 0..10 {
        d.apply(DeviceCommand::act(i, 0), i as u64 * 10, &Z).unwrap();
    }
    assert_eq!(d.energy().total, 10.0);
    p.energy = Default::default();
    assert_eq!(DramDevice::new(&p).energy().total, 0.0);
}

#[test]
fn self_refresh_ignores_commands_and_forgets_disturbance() {
    let mut d = DramDevice::new(&Profile::ddr4_default());
    d.apply(DeviceCommand::act(0, 10), 0, &Z).unwrap();
    d.apply(DeviceCommand::pre(0), 30, &Z).unwrap();
    d.enter_self_refresh(40);
    d.apply(DeviceCommand::act(0, 12), 50, &Z).unwrap();
    assert_eq!(d.violations().last().unwrap().rule, "CMD_IN_SELF_REFRESH");
    assert_eq!(d.open_row(0), None);
    d.exit_self_refresh(60);
    assert_eq!(d.accumulator(0, 11), 0.0);
}

#[test]
fn reset_keeps_fault_maps() {
    let p = Profile::builtin("A").unwrap();
    let mut d = DramDevice::new(&p);
    let cells = d.weak_cells(0, 5, 3e6);
    d.fill_row_pattern(0, 5, &[1]).unwrap();
    d.reset_state();
    assert_eq!(d.peek_row(0, 5).unwrap(), vec![0; 8192]);
    assert_eq!(d.weak_cells(0, 5, 3e6), cells);
}
