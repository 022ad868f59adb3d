use super::*;
use crate::debugger::simulate;
use crate::dram::timing::CommandClass::{Act, Pre};

fn builtin(name: &str) -> Profile {
    Profile::resolve(name).unwrap()
}

fn small_study1() -> Study1Config {
    Study1Config { triples: 8, t_grid: vec![1, 16, 256], emulate_first_triple: true, ..Study1Config::default() }
}

#[test]
fn kernel_with_one_act_per_turn_issues_two_pairs() {
    let p = builtin("mfrA");
    let k = interleave_kernel(&p, 0, 1, 3, 1, 1).unwrap();
    let r = simulate(&k.image, &p).unwrap();
    assert!(r.run.halted());
    assert_eq!((r.run.histogram.act, r.run.histogram.pre), (2, 2));
    assert!(r.is_clean(), "{:?}", r.violations);
}

#[test]
fn kernel_act_count_scales_with_turns_and_rounds() {
    let p = builtin("mfrA");
    let k = interleave_kernel(&p, 0, 1, 3, 5, 7).unwrap();
    let r = simulate(&k.image, &p).unwrap();
    assert_eq!((r.run.histogram.act, r.run.histogram.pre), (70, 70));
    assert!(r.is_clean());
}

#[test]
fn study1_requires_calibrated_profile() {
    let err = run_study1(&builtin("ddr4_default"), &small_study1()).unwrap_err();
    assert!(matches!(err, ExperimentError::CalibrationMissing(_)));
}

#[test]
fn study1_flips_never_rise_with_t() {
    let r = run_study1(&builtin("mfrC"), &small_study1()).unwrap();
    let v2: Vec<f64> = [1, 16, 256].iter().map(|&t| r.flips(t, 1).unwrap()).collect();
    assert!(v2.windows(2).all(|w| w[1] <= w[0]), "{v2:?}");
    assert!(v2[0] > 0.0);
    for row in &r.rows {
        assert!(row.acts_issued <= 1 << 20);
    }
}

#[test]
fn study1_is_deterministic() {
    let p = builtin("mfrB");
    let cfg = Study1Config { emulate_first_triple: false, ..small_study1() };
    let a = run_study1(&p, &cfg).unwrap();
    let b = run_study1(&p, &cfg).unwrap();
    assert_eq!(a.csv(), b.csv());
}

#[test]
fn study1_rejects_empty_grid() {
    let cfg = Study1Config { t_grid: vec![], ..small_study1() };
    assert!(matches!(run_study1(&builtin("mfrA"), &cfg), Err(ExperimentError::InvalidConfig(_))));
}

#[test]
fn calibration_rejects_flips_rising_with_t() {
    let p = builtin("mfrA");
    let t = Study1Targets { flips_t1: 10.0, flips_tmax: 20.0, hc_first_t1: 99e3, hc_first_tmax: 130e3 };
    assert!(matches!(calibrate_study1(&p, &t, &Study1Config::default()), Err(ExperimentError::FitDiverged(_))));
}

#[test]
fn calibration_rejects_first_flip_falling_with_t() {
    let p = builtin("mfrA");
    let t = Study1Targets { flips_t1: 300.0, flips_tmax: 30.0, hc_first_t1: 130e3, hc_first_tmax: 99e3 };
    assert!(matches!(calibrate_study1(&p, &t, &Study1Config::default()), Err(ExperimentError::FitDiverged(_))));
}

#[test]
fn shipped_profiles_record_their_calibration() {
    for name in ["mfrA", "mfrB", "mfrC"] {
        let p = builtin(name);
        let c = p.fault_model.calibration.as_ref().unwrap();
        let r = Study1Targets::reference(name).unwrap();
        assert_eq!(c.seed, p.fault_model.seed);
        assert_eq!((c.flips_t1, c.flips_tmax, c.hc_first_t1, c.hc_first_tmax), (r.flips_t1, r.flips_tmax, r.hc_first_t1, r.hc_first_tmax));
    }
}

fn small_study2() -> Study2Config {
    Study2Config { victims: 3, random_patterns: 16, ..Study2Config::default() }
}

#[test]
fn ungated_cells_ignore_aggressor_data() {
    let mut p = builtin("mfrA");
    p.fault_model.rowhammer.gate.enabled = false;
    let r = run_study2(&p, &small_study2()).unwrap();
    for v in &r.victims {
        assert_eq!(v.repeated, v.random);
    }
    assert_eq!(r.fraction_with_extra(), 0.0);
}

#[test]
fn study2_is_deterministic_and_seed_sensitive() {
    let p = builtin("mfrB");
    let a = run_study2(&p, &small_study2()).unwrap();
    let b = run_study2(&p, &small_study2()).unwrap();
    assert_eq!(a.csv(), b.csv());
    let c = run_study2(&p, &Study2Config { seed: Some(a.seed + 1), ..small_study2() }).unwrap();
    assert_ne!(a.csv(), c.csv());
}

#[test]
fn study2_csv_lists_both_pattern_classes() {
    let r = run_study2(&builtin("mfrC"), &small_study2()).unwrap();
    let csv = r.csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "pattern_class,victim_row,column,flipped_bits");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("repeated_8bit,") && lines[2].starts_with("random_512bit,"));
}

#[test]
fn fastest_combo_violates_tras_and_trp_once_each() {
    let p = builtin("mfrB");
    let k = segment_kernel(&p, 0, p.ns_to_slots(1.5), p.ns_to_slots(1.5)).unwrap();
    let r = simulate(&k.image, &p).unwrap();
    let mut rules: Vec<&str> = r.violations.iter().map(|v| v.rule.as_str()).collect();
    rules.sort();
    assert_eq!(rules, vec!["tRAS", "tRP"]);
}

#[test]
fn nominal_combo_is_clean() {
    let p = builtin("mfrB");
    let k = segment_kernel(&p, 0, p.min_slots(Act, Pre), p.min_slots(Pre, Act)).unwrap();
    assert!(simulate(&k.image, &p).unwrap().is_clean());
}

#[test]
fn study3_reports_unit_error_for_inactive_combos() {
    let p = builtin("mfrB");
    let combos = vec![TimingCombo { tras_ns: 1.5, trp_ns: 1.5 }, TimingCombo { tras_ns: 15.0, trp_ns: 15.0 }];
    let r = run_study3(&p, &Study3Config { segments: 4, combos, ..Study3Config::default() }).unwrap();
    assert_eq!(r.activating, vec![true, false]);
    let csv = r.csv();
    let inactive: Vec<&str> = csv.lines().filter(|l| l.starts_with("15.0,15.0,")).collect();
    assert_eq!(inactive.len(), 8);
    assert!(inactive.iter().all(|l| l.ends_with(",1.000000")));
}

#[test]
fn study3_activating_combos_match_valid_set() {
    let p = builtin("mfrB");
    let r = run_study3(&p, &Study3Config { segments: 2, ..Study3Config::default() }).unwrap();
    let got: Vec<(f64, f64)> =
        r.combos.iter().zip(&r.activating).filter(|(_, &a)| a).map(|(c, _)| (c.tras_ns, c.trp_ns)).collect();
    assert_eq!(got, vec![(1.5, 1.5), (1.5, 3.0), (3.0, 1.5)]);
}

#[test]
fn study3_requires_majority_support() {
    let err = run_study3(&builtin("mfrA"), &Study3Config { segments: 2, ..Study3Config::default() }).unwrap_err();
    assert!(matches!(err, ExperimentError::MajorityUnsupported(_)));
}

#[test]
fn study3_error_free_model_computes_exact_results() {
    let mut p = builtin("mfrB");
    p.fault_model.majority.segment_error.or_median = 0.0;
    let r = run_study3(&p, &Study3Config { segments: 8, ..Study3Config::default() }).unwrap();
    assert!(r.segments.iter().all(|s| s.and == 0.0 && s.or == 0.0));
    assert_eq!(r.counts.both_3, 8);
}

#[test]
fn majority_counts_match_pipeline() {
    let p = builtin("mfrB");
    let r = run_study3(&p, &Study3Config { segments: 256, ..Study3Config::default() }).unwrap();
    assert_eq!(majority_counts(&p, None, 0, 256), r.counts);
}

#[test]
fn parallel_map_keeps_input_order() {
    let items: Vec<u32> = (0..50).collect();
    let out = parallel_map(&items, |&x| Ok(x * 2)).unwrap();
    assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
}
