use std::f64::consts::FRAC_PI_2;

use tnt_core::dicke::{exact_moment_series, HamiltonianParams};
use tnt_core::observables::{metrology, spin_moments_from_two_mode, SpinMoments};
use tnt_core::two_mode::{sample_initial_two_mode, two_mode_moment_series};

fn tw_moments(n: f64, n_traj: usize, seed: u64, hp: HamiltonianParams, times: &[f64]) -> Vec<SpinMoments> {
    let e = sample_initial_two_mode(n, n_traj, seed).unwrap();
    let s = two_mode_moment_series(&e, hp, times).unwrap();
    (0..times.len()).map(|k| spin_moments_from_two_mode(&s, k).unwrap()).collect()
}

fn first_time(m: &[SpinMoments], level: f64) -> f64 {
    m.iter().find(|m| metrology(m).qfi / 4.0 >= level).expect("level reached").time
}

#[test]
fn tnt_reaches_n_squared_over_eight_ten_times_sooner() {
    let n = 1e4;
    let oat_t: Vec<f64> = (0..=2000).map(|k| 0.2 * k as f64 / 2000.0).collect();
    let tnt_t: Vec<f64> = (0..=2000).map(|k| 4e-3 * k as f64 / 2000.0).collect();
    let oat = tw_moments(n, 1000, 1, HamiltonianParams::oat(1.0), &oat_t);
    let tnt = tw_moments(n, 1000, 1, HamiltonianParams::tnt(1.0, n), &tnt_t);
    let level = n * n / 8.0;
    let ratio = first_time(&oat, level) / first_time(&tnt, level);
    assert!(ratio >= 10.0, "ratio {ratio}");
}

#[test]
fn tnt_variance_grows_exponentially_at_first() {
    let n = 1e4;
    let lambda = n / 2.0;
    let times: Vec<f64> = (0..=10).map(|k| 1.0 / lambda * k as f64 / 10.0).collect();
    let m = tw_moments(n, 4000, 2, HamiltonianParams::tnt(1.0, n), &times);
    // log of the anti-squeezed variance against time over the first e-folding
    let y: Vec<f64> = m.iter().map(|m| (metrology(m).qfi / 4.0).ln()).collect();
    let slopes: Vec<f64> = y.windows(2).zip(times.windows(2)).map(|(y, t)| (y[1] - y[0]) / (t[1] - t[0])).collect();
    let late = &slopes[3..];
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    assert!(mean > 1.5 * lambda && mean < 2.5 * lambda, "mean slope {mean} vs 2 lambda {}", 2.0 * lambda);
    for s in late {
        assert!((s / mean - 1.0).abs() < 0.2, "slope {s} vs {mean}");
    }
}

#[test]
fn initial_jx_is_half_n() {
    for (n, seed) in [(100.0, 4), (1e4, 5)] {
        let m = tw_moments(n, 2000, seed, HamiltonianParams::oat(1.0), &[0.0]);
        let z = (m[0].mean_j[0] - n / 2.0) / m[0].se_mean(0);
        assert!(z.abs() < 5.0, "N = {n}: {z} se");
    }
}

#[test]
fn doubling_trajectories_shrinks_the_error_by_root_two() {
    let times = [0.0, 0.05];
    let a = tw_moments(100.0, 4000, 6, HamiltonianParams::oat(1.0), &times);
    let b = tw_moments(100.0, 8000, 6, HamiltonianParams::oat(1.0), &times);
    for k in 0..2 {
        let r = a[k].se_mean(0) / b[k].se_mean(0);
        assert!((r / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {r}");
    }
}

#[test]
fn tw_tracks_exact_variance_for_larger_n() {
    let n = 400;
    let times: Vec<f64> = (0..=5).map(|k| 0.01 * k as f64).collect();
    let exact = exact_moment_series(n, HamiltonianParams::oat(1.0), FRAC_PI_2, 0.0, &times).unwrap();
    let tw = tw_moments(n as f64, 4000, 8, HamiltonianParams::oat(1.0), &times);
    for (e, t) in exact.iter().zip(&tw) {
        // fixed-N against Poissonian input differ only at O(1/N) in Var(J_y)
        let rel = (t.var(1) / e.var(1) - 1.0).abs();
        assert!(rel < 0.1, "t = {}: relative difference {rel}", e.time);
    }
}
