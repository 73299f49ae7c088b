//! Multimode truncated-Wigner ensembles of two-component fields.
//!
//! Each trajectory starts from the single-component ground state plus complex vacuum
//! noise of variance ½/Δ per grid point and component, is split by a pointwise
//! beamsplitter and evolved deterministically under the Wigner drift.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::{default_batch_size, AccumulatorSeries, MomentAccumulator, N_SYMBOLS};
use crate::error::{invalid, Error, Result};
use crate::gpe::{
    ground_state, FieldCouplings, FieldPair, GroundState, Ham1D, SplitStepper, StepPolicy, Subtraction,
};
use crate::grid::SpatialGrid;
use crate::params::{breathe_together_ratio, DerivedCouplings, PhysicalParams, ScatteringCase};
use crate::two_mode::{complex_gaussian, trajectory_rng, BeamSplitter};

/// Fraction of failed trajectories above which a run is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaPolicy {
    Zero,
    /// Ω = χN/2.
    Tnt,
    /// Ω = f·χN/2.
    Fraction(f64),
    /// Ω in rad/s.
    Explicit(f64),
}

impl OmegaPolicy {
    pub fn resolve(&self, chi: f64, n_atoms: f64) -> f64 {
        match *self {
            OmegaPolicy::Zero => 0.0,
            OmegaPolicy::Tnt => chi * n_atoms / 2.0,
            OmegaPolicy::Fraction(f) => f * chi * n_atoms / 2.0,
            OmegaPolicy::Explicit(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaRPolicy {
    #[default]
    Off,
    /// Measured from a noise-free run with Ω = 0.
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    #[default]
    Symmetric,
    BreatheTogether,
    /// Mixing angle ϑ in rad.
    Angle(f64),
}

impl SplitPolicy {
    /// Beamsplitter placing the collective spin in the x–z plane with ⟨J_x⟩ > 0.
    pub fn splitter(&self, case: &ScatteringCase) -> Result<BeamSplitter> {
        match *self {
            SplitPolicy::Symmetric => Ok(BeamSplitter::symmetric()),
            SplitPolicy::BreatheTogether => {
                let r = breathe_together_ratio(case)
                    .ok_or_else(|| invalid("no breathe-together solution exists for these scattering lengths"))?;
                BeamSplitter::with_ratio(r)
            }
            SplitPolicy::Angle(a) => Ok(BeamSplitter {
                mixing_angle: a,
                phase: std::f64::consts::PI,
            }),
        }
    }
}

/// Grid of `n_points` spanning ±4 Thomas-Fermi radii of component a.
pub fn default_grid(params: &PhysicalParams, case: &ScatteringCase, n_atoms: f64, n_points: usize) -> Result<SpatialGrid> {
    let u = case.interaction_strengths(params)?.reduced_to_1d(params);
    let (_, r_tf) = params.thomas_fermi(n_atoms, u.aa);
    SpatialGrid::new(n_points, 4.0 * r_tf.max(params.oscillator_length()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwEnsembleConfig {
    pub params: PhysicalParams,
    pub case: ScatteringCase,
    pub n_atoms: f64,
    pub n_traj: usize,
    pub grid: SpatialGrid,
    pub omega: OmegaPolicy,
    /// χ used to resolve the Ω policy; the ground-state density estimate when `None`.
    pub chi: Option<f64>,
    pub omega_r: OmegaRPolicy,
    pub split: SplitPolicy,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub subtraction: Subtraction,
    pub step: StepPolicy,
    /// Inject vacuum noise; `false` gives the mean-field limit.
    pub noise: bool,
    pub ground_tol: f64,
}

impl TwEnsembleConfig {
    /// Defaults: 512 points over ±4 R_TF, 1000 trajectories, symmetric split, Ω = 0.
    pub fn new(params: PhysicalParams, case: ScatteringCase, n_atoms: f64, seed: u64, t_grid: Vec<f64>) -> Result<Self> {
        Ok(Self {
            grid: default_grid(&params, &case, n_atoms, 512)?,
            params,
            case,
            n_atoms,
            n_traj: 1000,
            omega: OmegaPolicy::Zero,
            chi: None,
            omega_r: OmegaRPolicy::Off,
            split: SplitPolicy::Symmetric,
            seed,
            t_grid,
            subtraction: Subtraction::Uniform,
            step: StepPolicy::default(),
            noise: true,
            ground_tol: 1e-9,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.case.validate()?;
        if !(self.n_atoms > 0.0 && self.n_atoms.is_finite()) {
            return Err(invalid("n_atoms must be positive"));
        }
        if self.n_traj < 2 {
            return Err(invalid("n_traj must be at least 2"));
        }
        if self.t_grid.is_empty()
            || self.t_grid[0] < 0.0
            || self.t_grid.windows(2).any(|w| !(w[1] > w[0]))
            || self.t_grid.iter().any(|t| !t.is_finite())
        {
            return Err(invalid("t_grid must be non-negative, finite and strictly increasing"));
        }
        Ok(())
    }
}

/// Everything resolved before the first trajectory runs.
#[derive(Debug, Clone)]
pub struct PreparedEnsemble {
    pub ground: GroundState,
    pub ham: Ham1D,
    pub couplings: FieldCouplings,
    pub splitter: BeamSplitter,
    /// χ of the occupied mode estimated from the ground-state density, rad/s.
    pub chi_estimate: f64,
    pub chi_used: f64,
    pub dt: f64,
    pub warnings: Vec<String>,
}

pub fn prepare(config: &TwEnsembleConfig) -> Result<PreparedEnsemble> {
    config.validate()?;
    let p = &config.params;
    let grid = &config.grid;
    let u1d = config.case.interaction_strengths(p)?.reduced_to_1d(p);
    let ground = ground_state(grid, config.n_atoms, u1d.aa, p, config.ground_tol)?;
    let ham = Ham1D::harmonic(grid, p)?;
    let chi_estimate = DerivedCouplings::from_shared_profile(p, &config.case, grid, &ground.psi, 0.0)?.chi;
    let chi_used = config.chi.unwrap_or(chi_estimate);
    let omega = config.omega.resolve(chi_used, config.n_atoms);
    let splitter = config.split.splitter(&config.case)?;
    let mut couplings = FieldCouplings::from_1d(&u1d, p, omega, 0.0);

    let mut warnings = Vec::new();
    let per_mode = config.n_atoms / grid.n_points() as f64;
    if per_mode < 10.0 {
        warnings.push(format!(
            "truncated-Wigner validity: only {per_mode:.1} atoms per grid mode (want >= 10)"
        ));
    }
    let density: Vec<f64> = ground.psi.iter().map(|p| p * p).collect();
    let edge = crate::gpe::edge_density_ratio(grid, &density);
    if edge > 1e-8 {
        warnings.push(format!("ground-state density at the grid edge is {edge:.2e} of the peak"));
    }

    couplings.omega_r = match config.omega_r {
        OmegaRPolicy::Off => 0.0,
        OmegaRPolicy::Explicit(w) => w,
        OmegaRPolicy::Auto => auto_omega_r(config, &ground, &ham, couplings, &splitter)?,
    };
    let dt = config.step.effective_dt(&ham);
    Ok(PreparedEnsemble {
        ground,
        ham,
        couplings,
        splitter,
        chi_estimate,
        chi_used,
        dt,
        warnings,
    })
}

/// Noise-free calibration of ω_r. The Wigner density of a noisy trajectory exceeds the
/// mean-field density by 1/(2Δ) per component on average, so the probe run uses the
/// configured subtraction shifted by that amount.
fn auto_omega_r(
    config: &TwEnsembleConfig,
    ground: &GroundState,
    ham: &Ham1D,
    couplings: FieldCouplings,
    splitter: &BeamSplitter,
) -> Result<f64> {
    let dx = config.grid.spacing();
    let (s_self, s_cross) = config.subtraction.offsets(dx);
    let probe = FieldCouplings {
        omega: 0.0,
        omega_r: 0.0,
        ..couplings
    };
    let shift = if config.noise { 0.5 / dx } else { 0.0 };
    let mut stepper = SplitStepper::with_offsets(ham, probe, (s_self - shift, s_cross - shift), config.step)?;
    let mut f = FieldPair::single_component(&ground.psi);
    f.apply_beamsplitter(splitter);
    let mut snaps = Vec::with_capacity(config.t_grid.len());
    for &t in &config.t_grid {
        stepper.advance_to(&mut f, t)?;
        snaps.push(f.clone());
    }
    Ok(-crate::gpe::relative_phase_slope(&snaps, &config.grid)?)
}

/// Ground state plus independent vacuum noise for trajectory `index`.
pub fn sample_trajectory(ground: &[f64], grid: &SpatialGrid, seed: u64, index: usize) -> FieldPair {
    let mut rng = trajectory_rng(seed, index);
    let var = 0.5 / grid.spacing();
    let psi_a = ground
        .iter()
        .map(|&g| Complex64::new(g, 0.0) + complex_gaussian(&mut rng, var))
        .collect();
    let psi_b = (0..ground.len()).map(|_| complex_gaussian(&mut rng, var)).collect();
    FieldPair {
        psi_a,
        psi_b,
        time: 0.0,
    }
}

/// ψ_a = Ψ₀ + η_a, ψ_b = η_b with ⟨η_i*(x_n)η_j(x_m)⟩ = ½δ_ij δ_nm/Δ.
pub fn sample_wigner_initial(ground: &[f64], grid: &SpatialGrid, n_traj: usize, seed: u64) -> Result<Vec<FieldPair>> {
    grid.check_len(ground.len(), "ground state")?;
    if n_traj == 0 {
        return Err(invalid("n_traj must be positive"));
    }
    Ok((0..n_traj).map(|i| sample_trajectory(ground, grid, seed, i)).collect())
}

pub fn beamsplitter_fields(pair: &FieldPair, splitter: &BeamSplitter) -> FieldPair {
    let mut out = pair.clone();
    out.apply_beamsplitter(splitter);
    out
}

/// Per-trajectory symbols: (j_x, j_y, j_z, n_a, n_b, normalised overlap).
pub fn field_symbols(f: &FieldPair, grid: &SpatialGrid) -> [f64; N_SYMBOLS] {
    let dx = grid.spacing();
    let mut ab = Complex64::new(0.0, 0.0);
    let (mut na, mut nb) = (0.0, 0.0);
    for (a, b) in f.psi_a.iter().zip(&f.psi_b) {
        ab += a.conj() * b;
        na += a.norm_sqr();
        nb += b.norm_sqr();
    }
    let (ab, na, nb) = (ab * dx, na * dx, nb * dx);
    let overlap = if na > 0.0 && nb > 0.0 { ab.norm() / (na * nb).sqrt() } else { 0.0 };
    [ab.re, -ab.im, 0.5 * (na - nb), na, nb, overlap]
}

/// Evolve one trajectory through `t_grid`, visiting the fields at every output time.
pub fn evolve_tw(
    trajectory: &mut FieldPair,
    stepper: &mut SplitStepper,
    t_grid: &[f64],
    mut visit: impl FnMut(usize, &FieldPair),
) -> Result<()> {
    for (k, &t) in t_grid.iter().enumerate() {
        stepper.advance_to(trajectory, t)?;
        visit(k, trajectory);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub series: AccumulatorSeries,
    pub prepared: PreparedEnsemble,
    /// Indices of trajectories dropped after an integration failure.
    pub failed: Vec<usize>,
}

/// Integrate the whole ensemble into batched accumulators. Deterministic for fixed
/// (config, seed) whatever the worker count; aborts when more than 1% of
/// trajectories fail.
pub fn run_ensemble(config: &TwEnsembleConfig) -> Result<EnsembleRun> {
    let prepared = prepare(config)?;
    run_prepared(config, prepared)
}

pub fn run_prepared(config: &TwEnsembleConfig, prepared: PreparedEnsemble) -> Result<EnsembleRun> {
    let grid = &config.grid;
    let n_traj = config.n_traj;
    let mut series = AccumulatorSeries::new(config.t_grid.clone(), grid.n_points(), n_traj, default_batch_size(n_traj))?;
    let stepper = SplitStepper::new(&prepared.ham, prepared.couplings, config.subtraction, config.step)?;

    type BatchOut = (Vec<MomentAccumulator>, Vec<(usize, Error)>);
    let batches: Vec<BatchOut> = (0..series.n_batches())
        .into_par_iter()
        .map(|bi| {
            let mut stepper = stepper.clone();
            let mut accs = vec![MomentAccumulator::default(); config.t_grid.len()];
            let mut failures = Vec::new();
            for i in series.batch_range(bi) {
                let mut f = if config.noise {
                    sample_trajectory(&prepared.ground.psi, grid, config.seed, i)
                } else {
                    FieldPair::single_component(&prepared.ground.psi)
                };
                f.apply_beamsplitter(&prepared.splitter);
                let mut rows = Vec::with_capacity(config.t_grid.len());
                match evolve_tw(&mut f, &mut stepper, &config.t_grid, |_, f| rows.push(field_symbols(f, grid))) {
                    Ok(()) if rows.iter().flatten().all(|v| v.is_finite()) => {
                        for (acc, row) in accs.iter_mut().zip(&rows) {
                            acc.push(row);
                        }
                    }
                    Ok(()) => failures.push((
                        i,
                        Error::Integration {
                            trajectory: i,
                            reason: "non-finite fields".into(),
                        },
                    )),
                    Err(e) => failures.push((
                        i,
                        Error::Integration {
                            trajectory: i,
                            reason: e.to_string(),
                        },
                    )),
                }
            }
            (accs, failures)
        })
        .collect();

    let mut failed = Vec::new();
    let mut first = None;
    for (bi, (accs, failures)) in batches.into_iter().enumerate() {
        series.set_batch(bi, accs)?;
        for (i, e) in failures {
            failed.push(i);
            first.get_or_insert(e);
        }
    }
    if let Some(first) = first {
        if failed.len() as f64 > MAX_FAILURE_FRACTION * n_traj as f64 {
            return Err(Error::RunAborted {
                failed: failed.len(),
                total: n_traj,
                first: Box::new(first),
            });
        }
    }
    let mut prepared = prepared;
    if !failed.is_empty() {
        prepared
            .warnings
            .push(format!("{} of {n_traj} trajectories failed and were excluded", failed.len()));
    }
    Ok(EnsembleRun {
        series,
        prepared,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpe::evolve_gpe;
    use crate::observables::{component_populations, spin_moments_from_fields, spin_moments_from_two_mode};

    fn small_config(case: ScatteringCase, n_traj: usize, seed: u64, t_grid: Vec<f64>) -> TwEnsembleConfig {
        let p = PhysicalParams::default();
        let mut c = TwEnsembleConfig::new(p, case, 1e4, seed, t_grid).unwrap();
        c.grid = default_grid(&p, &c.case, 1e4, 32).unwrap();
        c.n_traj = n_traj;
        c.step.dt = 2e-5;
        c.step.max_kinetic_phase = 1.0;
        c
    }

    #[test]
    fn noise_statistics_at_one_point() {
        let grid = SpatialGrid::new(8, 1.0).unwrap();
        let ground = vec![0.0; 8];
        let n = 10_000;
        let samples = sample_wigner_initial(&ground, &grid, n, 3).unwrap();
        let var = 0.25 / grid.spacing();
        let re: Vec<f64> = samples.iter().map(|f| f.psi_a[3].re).collect();
        let v = re.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // Var of a squared normal sample is 2σ⁴
        let se = (2.0f64).sqrt() * var / (n as f64).sqrt();
        assert!((v - var).abs() < 5.0 * se, "{v} vs {var}");
        let cross: Complex64 = samples.iter().map(|f| f.psi_a[3].conj() * f.psi_b[3]).sum::<Complex64>() / n as f64;
        let se = 0.5 / grid.spacing() / (n as f64).sqrt();
        assert!(cross.norm() < 5.0 * se);
        let again = sample_wigner_initial(&ground, &grid, 4, 3).unwrap();
        assert_eq!(again[..], samples[..4]);
    }

    #[test]
    fn one_point_grid_reduces_to_two_mode() {
        // a single grid point of spacing 1 is exactly the two-mode sampler
        let grid = SpatialGrid::new(1, 0.5).unwrap();
        let n = 100.0f64;
        let ground = vec![n.sqrt()];
        let n_traj = 64;
        let mut series_f = AccumulatorSeries::new(vec![0.0], 1, n_traj, default_batch_size(n_traj)).unwrap();
        let e = crate::two_mode::sample_initial_two_mode(n, n_traj, 7).unwrap();
        let series_t =
            crate::two_mode::two_mode_moment_series(&e, crate::dicke::HamiltonianParams::default(), &[0.0]).unwrap();
        for b in 0..series_f.n_batches() {
            let mut acc = MomentAccumulator::default();
            for i in series_f.batch_range(b) {
                let mut f = sample_trajectory(&ground, &grid, 7, i);
                f.apply_beamsplitter(&BeamSplitter::symmetric());
                acc.push(&field_symbols(&f, &grid));
            }
            series_f.set_batch(b, vec![acc]).unwrap();
        }
        let a = spin_moments_from_fields(&series_f, &grid, 0).unwrap();
        let b = spin_moments_from_two_mode(&series_t, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vacuum_fields_have_zero_spin() {
        let grid = SpatialGrid::new(16, 1.0).unwrap();
        let ground = vec![0.0; 16];
        let n_traj = 2000;
        let mut s = AccumulatorSeries::new(vec![0.0], 16, n_traj, default_batch_size(n_traj)).unwrap();
        for b in 0..s.n_batches() {
            let mut acc = MomentAccumulator::default();
            for i in s.batch_range(b) {
                acc.push(&field_symbols(&sample_trajectory(&ground, &grid, 1, i), &grid));
            }
            s.set_batch(b, vec![acc]).unwrap();
        }
        let m = spin_moments_from_fields(&s, &grid, 0).unwrap();
        for i in 0..3 {
            assert!(m.mean_j[i].abs() < 5.0 * m.se_mean(i));
            assert!(m.var(i).abs() < 5.0 * m.se_cov(i, i));
        }
        assert!(m.n_mean.abs() < 5.0 * m.errors.as_ref().unwrap().n_mean);
        assert!(spin_moments_from_fields(&s, &SpatialGrid::new(8, 1.0).unwrap(), 0).is_err());
    }

    #[test]
    fn initial_ensemble_is_a_coherent_spin_state() {
        let p = PhysicalParams::default();
        for (case, split) in [
            (ScatteringCase::case_i(&p), SplitPolicy::Symmetric),
            (ScatteringCase::case_iii(&p), SplitPolicy::Symmetric),
            (ScatteringCase::case_ii(&p), SplitPolicy::BreatheTogether),
        ] {
            let mut c = small_config(case, 2000, 5, vec![0.0]);
            c.split = split;
            let run = run_ensemble(&c).unwrap();
            let m = spin_moments_from_fields(&run.series, &c.grid, 0).unwrap();
            let n = c.n_atoms;
            let th = run.prepared.splitter.mixing_angle;
            let e = m.errors.as_ref().unwrap();
            assert!((m.n_mean - n).abs() < 5.0 * e.n_mean);
            assert!((m.mean_j[0] - n / 2.0 * th.sin()).abs() < 5.0 * e.mean_j[0]);
            assert!((m.mean_j[2] - n / 2.0 * th.cos()).abs() < 5.0 * e.mean_j[2] + 1e-9);
            assert!((m.var(1) - n / 4.0).abs() < 5.0 * e.cov_j[1][1]);
            // Var(J_z) of a tilted CSS is (N/4) sin²ϑ
            assert!((m.var(2) - n / 4.0 * th.sin().powi(2)).abs() < 5.0 * e.cov_j[2][2]);
            if split == SplitPolicy::BreatheTogether {
                let (pop, se) = component_populations(&run.series, 0);
                let ratio = pop[0] / pop[1];
                let se_r = ratio * ((se[0] / pop[0]).powi(2) + (se[1] / pop[1]).powi(2)).sqrt();
                assert!((ratio - 2.0).abs() < 5.0 * se_r);
            }
        }
    }

    #[test]
    fn mean_field_limit_matches_gpe() {
        let p = PhysicalParams::default();
        let mut c = small_config(ScatteringCase::case_ii(&p), 2, 1, vec![0.0, 0.005, 0.01]);
        c.noise = false;
        c.subtraction = Subtraction::None;
        c.omega = OmegaPolicy::Explicit(20.0);
        let run = run_ensemble(&c).unwrap();
        let mut f = FieldPair::single_component(&run.prepared.ground.psi);
        f.apply_beamsplitter(&run.prepared.splitter);
        let snaps = evolve_gpe(&f, &run.prepared.ham, run.prepared.couplings, c.step, &c.t_grid).unwrap();
        for (k, s) in snaps.iter().enumerate() {
            let sym = field_symbols(s, &c.grid);
            let acc = run.series.total(k);
            for i in 0..3 {
                assert!((acc.mean()[i] - sym[i]).abs() < 1e-10 * c.n_atoms);
            }
        }
    }

    #[test]
    fn determinism_and_seed_dependence() {
        let p = PhysicalParams::default();
        let mut c = small_config(ScatteringCase::case_i(&p), 40, 9, vec![0.0, 0.01]);
        c.omega = OmegaPolicy::Tnt;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let a = one.install(|| run_ensemble(&c)).unwrap();
        let b = two.install(|| run_ensemble(&c)).unwrap();
        assert_eq!(a.series, b.series);
        let mut d = c.clone();
        d.n_traj = 2;
        d.seed = 10;
        let mut e = d.clone();
        e.seed = 11;
        assert_ne!(run_ensemble(&d).unwrap().series, run_ensemble(&e).unwrap().series);
    }

    #[test]
    fn norm_is_conserved_per_trajectory() {
        let p = PhysicalParams::default();
        let c = small_config(ScatteringCase::case_iii(&p), 2, 4, vec![0.05]);
        let prepared = prepare(&c).unwrap();
        let mut stepper = SplitStepper::new(&prepared.ham, prepared.couplings, c.subtraction, c.step).unwrap();
        let mut f = sample_trajectory(&prepared.ground.psi, &c.grid, 4, 0);
        f.apply_beamsplitter(&prepared.splitter);
        let n0 = f.total_norm(&c.grid);
        evolve_tw(&mut f, &mut stepper, &c.t_grid, |_, _| {}).unwrap();
        assert!(((f.total_norm(&c.grid) - n0) / n0).abs() < 1e-8);
    }

    #[test]
    fn breathe_together_is_rejected_without_solution() {
        let p = PhysicalParams::default();
        let mut c = small_config(ScatteringCase::case_iii(&p), 2, 0, vec![0.0]);
        c.split = SplitPolicy::BreatheTogether;
        assert!(prepare(&c).is_err());
    }

    #[test]
    fn validity_warning_for_sparse_modes() {
        let p = PhysicalParams::default();
        let mut c = small_config(ScatteringCase::case_i(&p), 2, 0, vec![0.0]);
        c.n_atoms = 100.0;
        c.grid = default_grid(&p, &c.case, 100.0, 32).unwrap();
        let prepared = prepare(&c).unwrap();
        assert!(prepared.warnings.iter().any(|w| w.contains("validity")));
    }
}
