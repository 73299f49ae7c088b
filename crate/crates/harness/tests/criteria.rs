//! Acceptance criteria, one test each. The pass/fail line goes straight to stdout so it
//! shows up even when the harness captures output.

use std::io::Write;

use tnt_harness::acceptance::criterion;

fn check(id: u32) {
    let o = criterion(id);
    let _ = writeln!(std::io::stdout().lock(), "{}", o.line());
    assert!(o.passed, "{}", o.line());
}

#[test]
fn criterion_01_exact_oat_oracle() {
    check(1);
}

#[test]
fn criterion_02_two_mode_tw_matches_exact() {
    check(2);
}

#[test]
fn criterion_03_oat_variance_plateau() {
    check(3);
}

#[test]
fn criterion_04_tnt_speedup() {
    check(4);
}

#[test]
fn criterion_05_squeezing_comparison() {
    check(5);
}

#[test]
fn criterion_06_qfi_milestones() {
    check(6);
}

#[test]
fn criterion_07_q_function_snapshots() {
    check(7);
}

#[test]
fn criterion_08_wigner_sampling() {
    check(8);
}

#[test]
fn criterion_09_gpe_correctness() {
    check(9);
}

#[test]
fn criterion_10_case_behaviour() {
    check(10);
}

#[test]
fn criterion_11_multimode_agrees_with_single_mode() {
    check(11);
}

#[test]
fn criterion_12_omega_scan() {
    check(12);
}

#[test]
fn criterion_13_chi_calibration() {
    check(13);
}

#[test]
fn criterion_14_determinism() {
    check(14);
}
