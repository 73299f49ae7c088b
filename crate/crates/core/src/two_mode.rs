//! Truncated-Wigner simulation of the two-mode model.
//!
//! Each trajectory carries amplitudes (α, β) obeying
//! iα̇ = (χ j_z + δ/2) α + (Ω/2) β,  iβ̇ = −(χ j_z + δ/2) β + (Ω/2) α,
//! integrated by a fourth-order Yoshida composition of Strang steps whose substeps
//! are exact unitaries, so |α|² + |β|² is conserved to rounding.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::accum::{default_batch_size, AccumulatorSeries, MomentAccumulator, N_SYMBOLS};
use crate::dicke::HamiltonianParams;
use crate::error::{invalid, Error, Result};

/// Largest phase (rad) accumulated by any term in one Strang substep.
pub const DEFAULT_MAX_STEP_PHASE: f64 = 0.05;
/// Relative norm drift that flags a failed trajectory.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Pointwise 2×2 unitary mixing of the two internal states.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BeamSplitter {
    /// ϑ: a population fraction cos²(ϑ/2) stays in the first component.
    pub mixing_angle: f64,
    pub phase: f64,
}

impl BeamSplitter {
    /// (α, β) → (α cos + e^{iφ} β sin, β cos − e^{−iφ} α sin).
    #[inline]
    pub fn apply(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let (s, c) = (self.mixing_angle / 2.0).sin_cos();
        let e = Complex64::from_polar(1.0, self.phase);
        (a * c + e * b * s, b * c - e.conj() * a * s)
    }

    /// Phase-0 π/2 pulse: (α, 0) → (α/√2, −α/√2).
    pub fn half_pi_phase_zero() -> Self {
        Self {
            mixing_angle: std::f64::consts::FRAC_PI_2,
            phase: 0.0,
        }
    }

    /// Split leaving the fraction `ratio/(1+ratio)` in component a, with the collective
    /// spin on +x: (α, 0) → (α cos, α sin).
    pub fn with_ratio(ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(invalid(format!("population ratio must be positive, got {ratio}")));
        }
        Ok(Self {
            mixing_angle: 2.0 * (ratio / (1.0 + ratio)).sqrt().acos(),
            phase: std::f64::consts::PI,
        })
    }

    /// 50/50 split onto +x.
    pub fn symmetric() -> Self {
        Self {
            mixing_angle: std::f64::consts::FRAC_PI_2,
            phase: std::f64::consts::PI,
        }
    }

    /// Population fraction left in component a.
    pub fn fraction_a(&self) -> f64 {
        (self.mixing_angle / 2.0).cos().powi(2)
    }
}

/// Detuning δ = −2χ⟨J_z⟩₀ that removes the mean OAT precession of a split with
/// fraction cos²(ϑ/2) in component a.
pub fn centering_detuning(chi: f64, n_atoms: f64, splitter: &BeamSplitter) -> f64 {
    -chi * n_atoms * splitter.mixing_angle.cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeEnsemble {
    pub trajectories: Vec<(Complex64, Complex64)>,
    pub n_target: f64,
    pub rng_seed: u64,
    pub time: f64,
}

impl TwoModeEnsemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn apply_beamsplitter(&mut self, splitter: &BeamSplitter) {
        for (a, b) in self.trajectories.iter_mut() {
            (*a, *b) = splitter.apply(*a, *b);
        }
    }
}

/// Independent ChaCha stream for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Complex Gaussian with E|η|² = `variance`, E[η²] = 0.
#[inline]
pub fn complex_gaussian<R: rand::Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// α = √N + η_a, β = η_b with half a quantum of vacuum noise per mode, before any split.
pub fn sample_coherent_two_mode(n_atoms: f64, n_traj: usize, seed: u64) -> Result<TwoModeEnsemble> {
    if n_traj < 2 {
        return Err(invalid(format!("need at least two trajectories, got {n_traj}")));
    }
    if !(n_atoms.is_finite() && n_atoms >= 0.0) {
        return Err(invalid(format!("atom number must be non-negative, got {n_atoms}")));
    }
    let amp = n_atoms.sqrt();
    let trajectories = (0..n_traj)
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let ea = complex_gaussian(&mut rng, 0.5);
            let eb = complex_gaussian(&mut rng, 0.5);
            (Complex64::new(amp, 0.0) + ea, eb)
        })
        .collect();
    Ok(TwoModeEnsemble {
        trajectories,
        n_target: n_atoms,
        rng_seed: seed,
        time: 0.0,
    })
}

/// Coherent input followed by the 50/50 split onto +x.
pub fn sample_initial_two_mode(n_atoms: f64, n_traj: usize, seed: u64) -> Result<TwoModeEnsemble> {
    let mut e = sample_coherent_two_mode(n_atoms, n_traj, seed)?;
    e.apply_beamsplitter(&BeamSplitter::symmetric());
    Ok(e)
}

pub fn beamsplitter_two_mode(ensemble: &TwoModeEnsemble, mixing_angle: f64, phase: f64) -> TwoModeEnsemble {
    let mut out = ensemble.clone();
    out.apply_beamsplitter(&BeamSplitter { mixing_angle, phase });
    out
}

#[inline]
pub fn symbols(a: Complex64, b: Complex64) -> [f64; N_SYMBOLS] {
    let ab = a.conj() * b;
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    [ab.re, -ab.im, 0.5 * (na - nb), na, nb, 1.0]
}

/// Fixed-step integrator for the two-mode drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeIntegrator {
    pub params: HamiltonianParams,
    pub max_step_phase: f64,
}

const YOSHIDA_W1: f64 = 1.351_207_191_959_657_6; // 1/(2 − 2^{1/3})
const YOSHIDA_W0: f64 = 1.0 - 2.0 * YOSHIDA_W1;

impl TwoModeIntegrator {
    pub fn new(params: HamiltonianParams) -> Result<Self> {
        if params.chi_minus != 0.0 {
            return Err(invalid("chi_minus dynamics are not supported by the two-mode TW solver"));
        }
        if ![params.chi, params.omega, params.detuning].iter().all(|v| v.is_finite()) {
            return Err(invalid("two-mode couplings must be finite"));
        }
        Ok(Self {
            params,
            max_step_phase: DEFAULT_MAX_STEP_PHASE,
        })
    }

    #[inline]
    fn nonlinear(&self, a: &mut Complex64, b: &mut Complex64, tau: f64) {
        let jz = 0.5 * (a.norm_sqr() - b.norm_sqr());
        let rot = Complex64::from_polar(1.0, -(self.params.chi * jz + 0.5 * self.params.detuning) * tau);
        *a *= rot;
        *b *= rot.conj();
    }

    #[inline]
    fn rotate(&self, a: &mut Complex64, b: &mut Complex64, tau: f64) {
        let (s, c) = (0.5 * self.params.omega * tau).sin_cos();
        let i = Complex64::new(0.0, 1.0);
        let (na, nb) = (*a * c - i * s * *b, *b * c - i * s * *a);
        *a = na;
        *b = nb;
    }

    #[inline]
    fn strang(&self, a: &mut Complex64, b: &mut Complex64, tau: f64) {
        self.nonlinear(a, b, 0.5 * tau);
        self.rotate(a, b, tau);
        self.nonlinear(a, b, 0.5 * tau);
    }

    /// Number of substeps for an interval `dt` given the largest total occupation.
    pub fn substeps(&self, dt: f64, n_max: f64) -> usize {
        if self.params.omega == 0.0 {
            // the two flows commute and each is exact
            return 1;
        }
        let rate = (self.params.chi.abs() * n_max / 2.0 + 0.5 * self.params.detuning.abs())
            .max(0.5 * self.params.omega.abs());
        ((rate * dt / self.max_step_phase).ceil() as usize).max(1)
    }

    /// Advance one trajectory by `dt` in `steps` Yoshida steps.
    pub fn advance(&self, a: &mut Complex64, b: &mut Complex64, dt: f64, steps: usize) {
        let h = dt / steps as f64;
        if self.params.omega == 0.0 {
            self.nonlinear(a, b, dt);
            return;
        }
        for _ in 0..steps {
            self.strang(a, b, YOSHIDA_W1 * h);
            self.strang(a, b, YOSHIDA_W0 * h);
            self.strang(a, b, YOSHIDA_W1 * h);
        }
    }
}

fn check_grid(start: f64, t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if t_grid[0] < start || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("time grid must be finite, strictly increasing and start at or after the ensemble time"));
    }
    Ok(())
}

/// Integrate one trajectory through `t_grid`, calling `visit(time_index, α, β)`.
fn run_trajectory(
    integ: &TwoModeIntegrator,
    index: usize,
    start: f64,
    mut a: Complex64,
    mut b: Complex64,
    t_grid: &[f64],
    steps: &[usize],
    mut visit: impl FnMut(usize, Complex64, Complex64),
) -> Result<()> {
    let n0 = a.norm_sqr() + b.norm_sqr();
    let mut t = start;
    for (k, (&tk, &nk)) in t_grid.iter().zip(steps).enumerate() {
        if tk > t {
            integ.advance(&mut a, &mut b, tk - t, nk);
            t = tk;
        }
        let n = a.norm_sqr() + b.norm_sqr();
        if !n.is_finite() || (n - n0).abs() > NORM_TOLERANCE * n0.max(1.0) {
            return Err(Error::Integration {
                trajectory: index,
                reason: format!("norm drifted from {n0} to {n} at t = {tk}"),
            });
        }
        visit(k, a, b);
    }
    Ok(())
}

fn step_plan(integ: &TwoModeIntegrator, ensemble: &TwoModeEnsemble, t_grid: &[f64]) -> Vec<usize> {
    let n_max = ensemble
        .trajectories
        .iter()
        .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
        .fold(0.0, f64::max);
    let mut prev = ensemble.time;
    t_grid
        .iter()
        .map(|&t| {
            let s = integ.substeps(t - prev, n_max);
            prev = t;
            s
        })
        .collect()
}

/// Ensemble snapshots at every time of `t_grid`.
pub fn evolve_two_mode(
    ensemble: &TwoModeEnsemble,
    params: HamiltonianParams,
    t_grid: &[f64],
) -> Result<Vec<TwoModeEnsemble>> {
    check_grid(ensemble.time, t_grid)?;
    let integ = TwoModeIntegrator::new(params)?;
    let steps = step_plan(&integ, ensemble, t_grid);
    let per_traj: Vec<Vec<(Complex64, Complex64)>> = ensemble
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut out = Vec::with_capacity(t_grid.len());
            run_trajectory(&integ, i, ensemble.time, a, b, t_grid, &steps, |_, a, b| out.push((a, b)))?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| TwoModeEnsemble {
            trajectories: per_traj.iter().map(|v| v[k]).collect(),
            n_target: ensemble.n_target,
            rng_seed: ensemble.rng_seed,
            time: t,
        })
        .collect())
}

/// Stream the ensemble through `t_grid` into batched moment accumulators without
/// storing trajectories. Deterministic for any thread count.
pub fn two_mode_moment_series(
    ensemble: &TwoModeEnsemble,
    params: HamiltonianParams,
    t_grid: &[f64],
) -> Result<AccumulatorSeries> {
    two_mode_moment_series_with(ensemble, &TwoModeIntegrator::new(params)?, t_grid)
}

pub fn two_mode_moment_series_with(
    ensemble: &TwoModeEnsemble,
    integ: &TwoModeIntegrator,
    t_grid: &[f64],
) -> Result<AccumulatorSeries> {
    check_grid(ensemble.time, t_grid)?;
    let n_traj = ensemble.len();
    let mut series = AccumulatorSeries::new(t_grid.to_vec(), 1, n_traj, default_batch_size(n_traj))?;
    let steps = step_plan(integ, ensemble, t_grid);
    let batches: Vec<Vec<MomentAccumulator>> = (0..series.n_batches())
        .into_par_iter()
        .map(|bi| {
            let mut accs = vec![MomentAccumulator::default(); t_grid.len()];
            for i in series.batch_range(bi) {
                let (a, b) = ensemble.trajectories[i];
                run_trajectory(integ, i, ensemble.time, a, b, t_grid, &steps, |k, a, b| {
                    accs[k].push(&symbols(a, b))
                })?;
            }
            Ok(accs)
        })
        .collect::<Result<_>>()?;
    for (bi, accs) in batches.into_iter().enumerate() {
        series.set_batch(bi, accs)?;
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicke::{exact_moment_series, HamiltonianParams};
    use crate::observables::spin_moments_from_two_mode;
    use std::f64::consts::PI;

    #[test]
    fn phase_zero_half_pi_example() {
        let bs = BeamSplitter::half_pi_phase_zero();
        let a = Complex64::new(1.3, -0.4);
        let (x, y) = bs.apply(a, Complex64::new(0.0, 0.0));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((x - a * r).norm() < 1e-15);
        assert!((y + a * r).norm() < 1e-15);
        let (x, y) = BeamSplitter { mixing_angle: 0.0, phase: 0.7 }.apply(a, Complex64::new(0.2, 0.1));
        assert_eq!((x, y), (a, Complex64::new(0.2, 0.1)));
    }

    #[test]
    fn symmetric_split_points_along_plus_x() {
        let (a, b) = BeamSplitter::symmetric().apply(Complex64::new(10.0, 0.0), Complex64::new(0.0, 0.0));
        let s = symbols(a, b);
        assert!((s[0] - 50.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
    }

    #[test]
    fn ratio_split_fractions() {
        let bs = BeamSplitter::with_ratio(2.0).unwrap();
        assert!((bs.fraction_a() - 2.0 / 3.0).abs() < 1e-14);
        assert!((bs.mixing_angle.cos() - 1.0 / 3.0).abs() < 1e-14);
        assert!((centering_detuning(1.0, 3.0, &bs) + 1.0).abs() < 1e-14);
        assert!(BeamSplitter::with_ratio(-1.0).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_has_half_quantum_noise() {
        let a = sample_coherent_two_mode(0.0, 20_000, 9).unwrap();
        let b = sample_coherent_two_mode(0.0, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let v: Vec<f64> = a.trajectories.iter().map(|(x, _)| x.norm_sqr()).collect();
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 0.5).abs() < 5.0 * sd / n.sqrt());
        let c = sample_coherent_two_mode(0.0, 20_000, 10).unwrap();
        assert_ne!(a, c);
        assert!(sample_coherent_two_mode(10.0, 1, 0).is_err());
    }

    #[test]
    fn number_is_recovered_after_subtracting_one() {
        let n = 100.0;
        let e = sample_initial_two_mode(n, 10_000, 3).unwrap();
        let s = two_mode_moment_series(&e, HamiltonianParams::default(), &[0.0]).unwrap();
        let m = spin_moments_from_two_mode(&s, 0).unwrap();
        let err = m.errors.as_ref().unwrap();
        assert!((m.n_mean - n).abs() < 5.0 * err.n_mean);
        assert!((m.mean_j[0] - n / 2.0).abs() < 5.0 * err.mean_j[0]);
        assert!((m.var(1) - n / 4.0).abs() < 5.0 * err.cov_j[1][1]);
        assert!((m.var(2) - n / 4.0).abs() < 5.0 * err.cov_j[2][2]);
    }

    #[test]
    fn vacuum_has_zero_corrected_jz_variance() {
        let e = sample_coherent_two_mode(0.0, 20_000, 4).unwrap();
        let s = two_mode_moment_series(&e, HamiltonianParams::default(), &[0.0]).unwrap();
        let total = s.total(0);
        let raw = total.covariance(2, 2) + total.mean()[2].powi(2);
        let se = 2f64.sqrt() * 0.125 / (e.len() as f64).sqrt() * 2.0;
        assert!((raw - 0.125).abs() < 5.0 * se, "{raw}");
        let m = spin_moments_from_two_mode(&s, 0).unwrap();
        assert!(m.var(2).abs() < 5.0 * m.se_cov(2, 2));
    }

    #[test]
    fn free_evolution_is_static() {
        let e = sample_initial_two_mode(50.0, 8, 1).unwrap();
        let out = evolve_two_mode(&e, HamiltonianParams::default(), &[0.5, 1.0]).unwrap();
        assert_eq!(out[1].trajectories, e.trajectories);
    }

    #[test]
    fn rabi_rotation_is_rigid() {
        let omega = 3.0;
        let e = sample_initial_two_mode(40.0, 16, 2).unwrap();
        // start from a tilted state so both J_y and J_z are non-zero
        let e = beamsplitter_two_mode(&e, 0.4, 1.1);
        let p = HamiltonianParams { omega, ..Default::default() };
        let t = 0.37;
        let out = evolve_two_mode(&e, p, &[t]).unwrap();
        for (&(a0, b0), &(a1, b1)) in e.trajectories.iter().zip(&out[0].trajectories) {
            let s0 = symbols(a0, b0);
            let s1 = symbols(a1, b1);
            let (s, c) = (omega * t).sin_cos();
            assert!((s1[0] - s0[0]).abs() < 1e-9);
            assert!((s1[1] - (c * s0[1] + s * s0[2])).abs() < 1e-9);
            assert!((s1[2] - (-s * s0[1] + c * s0[2])).abs() < 1e-9);
        }
    }

    #[test]
    fn tnt_conserves_norm_and_converges_under_step_halving() {
        let n = 1000.0;
        let e = sample_initial_two_mode(n, 64, 5).unwrap();
        let p = HamiltonianParams::tnt(1.0, n);
        let t = 6.0 / (n / 2.0);
        let coarse = TwoModeIntegrator::new(p).unwrap();
        let mut fine = coarse;
        fine.max_step_phase /= 2.0;
        let sc = two_mode_moment_series_with(&e, &coarse, &[t]).unwrap();
        let sf = two_mode_moment_series_with(&e, &fine, &[t]).unwrap();
        let vc = sc.total(0).covariance(1, 1);
        let vf = sf.total(0).covariance(1, 1);
        assert!((vc / vf - 1.0).abs() < 1e-3, "{vc} {vf}");
        let out = evolve_two_mode(&e, p, &[t]).unwrap();
        for (&(a0, b0), &(a1, b1)) in e.trajectories.iter().zip(&out[0].trajectories) {
            let n0 = a0.norm_sqr() + b0.norm_sqr();
            assert!(((a1.norm_sqr() + b1.norm_sqr()) / n0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn oat_matches_exact_moments() {
        let n = 100usize;
        let times = [0.0, 0.025, 0.05, 0.075, 0.1];
        let e = sample_initial_two_mode(n as f64, 10_000, 11).unwrap();
        let s = two_mode_moment_series(&e, HamiltonianParams::oat(1.0), &times).unwrap();
        let exact = exact_moment_series(n, HamiltonianParams::oat(1.0), PI / 2.0, 0.0, &times).unwrap();
        for (k, ex) in exact.iter().enumerate() {
            let m = spin_moments_from_two_mode(&s, k).unwrap();
            assert!((m.mean_j[0] - ex.mean_j[0]).abs() < 3.0 * m.se_mean(0), "t={}", times[k]);
            for i in [1, 2] {
                assert!((m.var(i) - ex.var(i)).abs() < 3.0 * m.se_cov(i, i), "t={} i={i}", times[k]);
            }
        }
    }

    #[test]
    fn batch_statistics_do_not_depend_on_thread_count() {
        let e = sample_initial_two_mode(500.0, 300, 8).unwrap();
        let p = HamiltonianParams::tnt(1.0, 500.0);
        let times = [0.0, 0.004, 0.008];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| two_mode_moment_series(&e, p, &times)).unwrap();
        let b = three.install(|| two_mode_moment_series(&e, p, &times)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_time_grids() {
        let e = sample_initial_two_mode(10.0, 4, 0).unwrap();
        let p = HamiltonianParams::default();
        assert!(evolve_two_mode(&e, p, &[]).is_err());
        assert!(evolve_two_mode(&e, p, &[0.2, 0.1]).is_err());
        assert!(evolve_two_mode(&e, p, &[-1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn beamsplitter_is_unitary(theta in -PI..PI, phase in -PI..PI, ar in -10.0f64..10.0, ai in -10.0f64..10.0, br in -10.0f64..10.0, bi in -10.0f64..10.0) {
                let a = Complex64::new(ar, ai);
                let b = Complex64::new(br, bi);
                let (x, y) = BeamSplitter { mixing_angle: theta, phase }.apply(a, b);
                let before = a.norm_sqr() + b.norm_sqr();
                prop_assert!((x.norm_sqr() + y.norm_sqr() - before).abs() <= 1e-12 * before.max(1.0));
            }

            #[test]
            fn evolution_conserves_each_norm(chi in -2.0f64..2.0, omega in -50.0f64..50.0, t in 0.0f64..0.5, seed in 0u64..1000) {
                let e = sample_initial_two_mode(100.0, 4, seed).unwrap();
                let p = HamiltonianParams { chi, omega, ..Default::default() };
                let out = evolve_two_mode(&e, p, &[t]).unwrap();
                for (&(a0, b0), &(a1, b1)) in e.trajectories.iter().zip(&out[0].trajectories) {
                    let n0 = a0.norm_sqr() + b0.norm_sqr();
                    prop_assert!(((a1.norm_sqr() + b1.norm_sqr()) / n0 - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
