//! Experiment dispatch.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;
use tnt_core::accum::AccumulatorSeries;
use tnt_core::calibration::{fit_chi, reference_variance, scan_omega, OatStart};
use tnt_core::dicke::{css_state, exact_moment_series, q_function, HamiltonianParams, SingleModeHamiltonian, SpectralPropagator};
use tnt_core::gpe::{
    calibrate_omega_r, density_overlap, evolve_gpe, ground_state, rms_width, thomas_fermi_density, FieldCouplings,
    FieldPair, Ham1D, SplitStepper, Subtraction,
};
use tnt_core::multimode::{default_grid, run_ensemble, OmegaPolicy, OmegaRPolicy, TwEnsembleConfig};
use tnt_core::observables::{
    component_populations, mean_overlap, metrology, spin_moments_from_fields, spin_moments_from_two_mode, SpinMoments,
};
use tnt_core::params::{DerivedCouplings, PhysicalParams, ScatteringCase};
use tnt_core::two_mode::{sample_coherent_two_mode, two_mode_moment_series, BeamSplitter};
use tnt_core::SpatialGrid;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::output::{unix_now, Column, OutputDir, RunManifest};

/// Resolved physical setting shared by every kind.
struct Setting {
    params: PhysicalParams,
    case: ScatteringCase,
    n_atoms: f64,
    grid: SpatialGrid,
}

impl Setting {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let params = cfg.physical_params();
        params.validate().map_err(|e| HarnessError::Config(format!("physical: {e}")))?;
        let case = cfg.case.expect("validated").resolve(&params)?;
        let n_atoms = cfg.n_atoms.expect("validated");
        let g = cfg.grid.expect("validated");
        let grid = match g.extent {
            Some(e) => SpatialGrid::new(g.n_points, e),
            None => default_grid(&params, &case, n_atoms, g.n_points),
        }
        .map_err(|e| HarnessError::Config(format!("grid: {e}")))?;
        Ok(Self {
            params,
            case,
            n_atoms,
            grid,
        })
    }

    /// Couplings estimated from the component-a ground-state density.
    fn density_couplings(&self, tol: f64) -> Result<DerivedCouplings> {
        let u1d = self
            .case
            .interaction_strengths(&self.params)
            .map_err(HarnessError::numerical("interaction strengths"))?
            .reduced_to_1d(&self.params);
        let g = ground_state(&self.grid, self.n_atoms, u1d.aa, &self.params, tol)
            .map_err(HarnessError::numerical("ground state"))?;
        DerivedCouplings::from_shared_profile(&self.params, &self.case, &self.grid, &g.psi, 0.0)
            .map_err(HarnessError::numerical("density estimate of χ"))
    }
}

/// Run one experiment and write its outputs under `out`. The manifest is written
/// last, also when the run fails part-way.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut cfg = config.clone();
    let mut warnings = cfg.validate()?;
    let started = unix_now();
    let mut dir = OutputDir::create(out, &cfg)?;
    let result = dispatch(&cfg, &mut dir, &mut warnings);
    match result {
        Ok(()) => dir.finish(&cfg, started, warnings, None),
        Err(e) => {
            dir.finish(&cfg, started, warnings, Some(e.to_string()))?;
            Err(e)
        }
    }
}

fn dispatch(cfg: &ExperimentConfig, dir: &mut OutputDir, warnings: &mut Vec<String>) -> Result<()> {
    let setting = Setting::new(cfg)?;
    match cfg.kind() {
        ExperimentKind::GroundState => run_ground_state(cfg, &setting, dir, warnings),
        ExperimentKind::SingleModeExact | ExperimentKind::SingleModeTw | ExperimentKind::QFunction => {
            run_single_mode(cfg, &setting, dir, warnings)
        }
        ExperimentKind::Gpe => run_gpe(cfg, &setting, dir, warnings),
        ExperimentKind::MultimodeTw | ExperimentKind::CalibrateChi | ExperimentKind::ScanOmega => {
            run_multimode(cfg, &setting, dir, warnings)
        }
    }
}

fn run_ground_state(cfg: &ExperimentConfig, s: &Setting, dir: &mut OutputDir, warnings: &mut Vec<String>) -> Result<()> {
    let u1d = s
        .case
        .interaction_strengths(&s.params)
        .map_err(HarnessError::numerical("interaction strengths"))?
        .reduced_to_1d(&s.params);
    let g = ground_state(&s.grid, s.n_atoms, u1d.aa, &s.params, cfg.ground_tol.expect("validated"))
        .map_err(HarnessError::numerical("ground state"))?;
    let ham = Ham1D::harmonic(&s.grid, &s.params).map_err(HarnessError::numerical("trap"))?;
    let tf = thomas_fermi_density(&ham, g.mu, u1d.aa / s.params.hbar);
    let density: Vec<f64> = g.psi.iter().map(|p| p * p).collect();
    let edge = tnt_core::gpe::edge_density_ratio(&s.grid, &density);
    if edge > 1e-8 {
        warnings.push(format!("ground-state density at the grid edge is {edge:.2e} of the peak"));
    }
    let rows: Vec<Vec<f64>> = (0..s.grid.n_points())
        .map(|i| vec![s.grid.positions()[i], g.psi[i], density[i], tf[i]])
        .collect();
    dir.write_table(
        "ground_state.csv",
        "ground-state profile of component a",
        &[("x", "m"), ("psi", "m^-1/2"), ("density", "m^-1"), ("tf_density", "m^-1")],
        &[],
        &rows,
    )?;
    let d = DerivedCouplings::from_shared_profile(&s.params, &s.case, &s.grid, &g.psi, 0.0)
        .map_err(HarnessError::numerical("density estimate of χ"))?;
    #[derive(Serialize)]
    struct Summary {
        mu_over_hbar: f64,
        energy_per_particle_over_hbar: f64,
        iterations: usize,
        residual: f64,
        rms_width: f64,
        couplings: DerivedCouplings,
    }
    dir.write_json(
        "summary.json",
        &Summary {
            mu_over_hbar: g.mu,
            energy_per_particle_over_hbar: g.energy_per_particle,
            iterations: g.iterations,
            residual: g.residual,
            rms_width: rms_width(&s.grid, &density),
            couplings: d,
        },
    )
}

/// Single-mode Hamiltonian and initial angle for the configured split and policies.
/// χ_- enters as the linear term χ_-(N−1)J_z folded into the detuning; the `auto`
/// ω_r policy cancels the mean J_z precession of a tilted start.
pub fn single_mode_hamiltonian(
    chi: f64,
    chi_minus: f64,
    n: f64,
    omega: OmegaPolicy,
    omega_r: OmegaRPolicy,
    splitter: &BeamSplitter,
) -> HamiltonianParams {
    let linear = chi_minus * (n - 1.0);
    let extra = match omega_r {
        OmegaRPolicy::Off => 0.0,
        OmegaRPolicy::Explicit(w) => w,
        OmegaRPolicy::Auto => -chi * n * splitter.mixing_angle.cos() - linear,
    };
    HamiltonianParams {
        chi,
        chi_minus: 0.0,
        omega: omega.resolve(chi, n),
        detuning: linear + extra,
    }
}

fn run_single_mode(cfg: &ExperimentConfig, s: &Setting, dir: &mut OutputDir, warnings: &mut Vec<String>) -> Result<()> {
    let kind = cfg.kind();
    let d = s.density_couplings(cfg.ground_tol.expect("validated"))?;
    let chi = cfg.chi.unwrap_or(d.chi);
    let splitter = cfg
        .split
        .expect("validated")
        .splitter(&s.case)
        .map_err(|e| HarnessError::Config(format!("split: {e}")))?;
    let hp = single_mode_hamiltonian(
        chi,
        d.chi_minus,
        s.n_atoms,
        cfg.omega.expect("validated"),
        cfg.omega_r.expect("validated"),
        &splitter,
    );
    let times = cfg.time.as_ref().expect("validated").seconds(chi)?;
    let theta = splitter.mixing_angle;
    let meta = vec![
        format!("chi: {} rad/s", chi),
        format!("chi_density_estimate: {} rad/s", d.chi),
        format!("omega: {} rad/s", hp.omega),
        format!("detuning: {} rad/s", hp.detuning),
        format!("n_atoms: {}", s.n_atoms),
        format!("mixing_angle: {theta}"),
    ];
    match kind {
        ExperimentKind::SingleModeExact => {
            let m = exact_moment_series(s.n_atoms as usize, hp, theta, 0.0, &times)
                .map_err(HarnessError::numerical("exact evolution"))?;
            write_metrology(dir, &m, chi, None, &meta)
        }
        ExperimentKind::SingleModeTw => {
            let n_traj = cfg.n_traj.expect("validated");
            let mut e = sample_coherent_two_mode(s.n_atoms, n_traj, cfg.seed.expect("validated"))
                .map_err(HarnessError::numerical("sampling"))?;
            e.apply_beamsplitter(&splitter);
            let series = two_mode_moment_series(&e, hp, &times).map_err(HarnessError::numerical("two-mode evolution"))?;
            let m = (0..times.len())
                .map(|k| spin_moments_from_two_mode(&series, k))
                .collect::<tnt_core::Result<Vec<_>>>()
                .map_err(HarnessError::numerical("moments"))?;
            write_metrology(dir, &m, chi, Some(&series), &meta)?;
            write_accumulators(dir, cfg, &series)
        }
        ExperimentKind::QFunction => {
            let q = cfg.q_grid.expect("validated");
            let thetas: Vec<f64> = (0..q.n_theta).map(|i| PI * i as f64 / (q.n_theta - 1) as f64).collect();
            let phis: Vec<f64> = (0..q.n_phi).map(|j| -PI + 2.0 * PI * j as f64 / q.n_phi as f64).collect();
            let n = s.n_atoms as usize;
            let h = SingleModeHamiltonian::new(hp, n).map_err(HarnessError::numerical("Hamiltonian"))?;
            let prop = SpectralPropagator::new(&h).map_err(HarnessError::numerical("propagator"))?;
            let psi0 = css_state(n, theta, 0.0).map_err(HarnessError::numerical("initial state"))?;
            if q.n_theta * q.n_phi > 1_000_000 {
                warnings.push("large Q grid".into());
            }
            for (k, &t) in times.iter().enumerate() {
                let state = prop.evolve(&psi0, t).map_err(HarnessError::numerical("exact evolution"))?;
                let grid = q_function(&state, &thetas, &phis).map_err(HarnessError::numerical("Q function"))?;
                let mut rows = Vec::with_capacity(q.n_theta * q.n_phi);
                for (i, th) in thetas.iter().enumerate() {
                    for (j, ph) in phis.iter().enumerate() {
                        rows.push(vec![*th, *ph, grid[i][j]]);
                    }
                }
                let mut m = meta.clone();
                m.push(format!("time: {t} s"));
                m.push(format!("chi_t: {}", chi * t));
                dir.write_table(
                    &format!("q_{k:03}.csv"),
                    "Husimi Q function",
                    &[("theta", "rad"), ("phi", "rad"), ("q", "1")],
                    &m,
                    &rows,
                )?;
            }
            Ok(())
        }
        _ => unreachable!(),
    }
}

fn write_accumulators(dir: &mut OutputDir, cfg: &ExperimentConfig, series: &AccumulatorSeries) -> Result<()> {
    let mut bytes = Vec::new();
    series
        .write_binary(&mut bytes, &cfg.hash())
        .map_err(HarnessError::io("accumulators.bin"))?;
    dir.write_bytes("accumulators.bin", &bytes)
}

fn nan_or(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn write_metrology(
    dir: &mut OutputDir,
    moments: &[SpinMoments],
    chi: f64,
    fields: Option<&AccumulatorSeries>,
    meta: &[String],
) -> Result<()> {
    let stochastic = moments.iter().any(|m| m.errors.is_some());
    let mut columns: Vec<Column> = vec![
        ("t", "s"),
        ("chi_t", "1"),
        ("n_mean", "atoms"),
        ("jx", "atoms"),
        ("jy", "atoms"),
        ("jz", "atoms"),
        ("var_x", "atoms^2"),
        ("var_y", "atoms^2"),
        ("var_z", "atoms^2"),
        ("cov_yz", "atoms^2"),
        ("max_var", "atoms^2"),
        ("xi", "1"),
        ("theta_min", "rad"),
        ("qfi", "1"),
        ("theta_max", "rad"),
        ("dphi_xi", "rad"),
        ("dphi_qfi", "rad"),
    ];
    if stochastic {
        columns.extend_from_slice(&[
            ("se_jx", "atoms"),
            ("se_var_y", "atoms^2"),
            ("se_var_z", "atoms^2"),
            ("se_cov_yz", "atoms^2"),
            ("se_xi", "1"),
            ("se_qfi", "1"),
        ]);
    }
    let with_fields = fields.is_some_and(|s| s.n_modes() > 1);
    if with_fields {
        columns.extend_from_slice(&[("n_a", "atoms"), ("n_b", "atoms"), ("overlap", "1"), ("se_overlap", "1")]);
    }
    let rows: Vec<Vec<f64>> = moments
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let r = metrology(m);
            let mut row = vec![
                m.time,
                chi * m.time,
                m.n_mean,
                m.mean_j[0],
                m.mean_j[1],
                m.mean_j[2],
                m.var(0),
                m.var(1),
                m.var(2),
                m.cov_j[1][2],
                m.max_variance(),
                nan_or(r.xi),
                nan_or(r.theta_min),
                r.qfi,
                r.theta_max,
                nan_or(r.delta_phi_squeezing),
                r.delta_phi_qfi,
            ];
            if stochastic {
                row.extend_from_slice(&[
                    m.se_mean(0),
                    m.se_cov(1, 1),
                    m.se_cov(2, 2),
                    m.se_cov(1, 2),
                    nan_or(r.se_xi),
                    nan_or(r.se_qfi),
                ]);
            }
            if let (true, Some(series)) = (with_fields, fields) {
                let (pop, _) = component_populations(series, k);
                let (ov, se) = mean_overlap(series, k);
                row.extend_from_slice(&[pop[0], pop[1], ov, se]);
            }
            row
        })
        .collect();
    dir.write_table("metrology.csv", "spin moments and metrology", &columns, meta, &rows)
}

fn run_gpe(cfg: &ExperimentConfig, s: &Setting, dir: &mut OutputDir, warnings: &mut Vec<String>) -> Result<()> {
    let p = &s.params;
    let u1d = s
        .case
        .interaction_strengths(p)
        .map_err(HarnessError::numerical("interaction strengths"))?
        .reduced_to_1d(p);
    let g = ground_state(&s.grid, s.n_atoms, u1d.aa, p, cfg.ground_tol.expect("validated"))
        .map_err(HarnessError::numerical("ground state"))?;
    let d = DerivedCouplings::from_shared_profile(p, &s.case, &s.grid, &g.psi, 0.0)
        .map_err(HarnessError::numerical("density estimate of χ"))?;
    let chi = cfg.chi.unwrap_or(d.chi);
    let ham = Ham1D::harmonic(&s.grid, p).map_err(HarnessError::numerical("trap"))?;
    let splitter = cfg
        .split
        .expect("validated")
        .splitter(&s.case)
        .map_err(|e| HarnessError::Config(format!("split: {e}")))?;
    let mut fields = FieldPair::single_component(&g.psi);
    fields.apply_beamsplitter(&splitter);
    let times = cfg.time.as_ref().expect("validated").seconds(chi)?;
    let step = cfg.step.expect("validated");
    let omega = cfg.omega.expect("validated").resolve(chi, s.n_atoms);
    let mut couplings = FieldCouplings::from_1d(&u1d, p, omega, 0.0);
    couplings.omega_r = match cfg.omega_r.expect("validated") {
        OmegaRPolicy::Off => 0.0,
        OmegaRPolicy::Explicit(w) => w,
        OmegaRPolicy::Auto => calibrate_omega_r(&fields, &ham, couplings, Subtraction::None, step, &times)
            .map_err(HarnessError::numerical("ω_r calibration"))?,
    };
    if step.effective_dt(&ham) < step.dt {
        warnings.push(format!(
            "time step limited by the kinetic phase rule to {:.3e} s",
            step.effective_dt(&ham)
        ));
    }
    let snaps = evolve_gpe(&fields, &ham, couplings, step, &times).map_err(HarnessError::numerical("GPE evolution"))?;
    let mut stepper = SplitStepper::new(&ham, couplings, Subtraction::None, step).map_err(HarnessError::numerical("stepper"))?;
    let mut diag = Vec::with_capacity(snaps.len());
    let mut dens = Vec::with_capacity(snaps.len() * s.grid.n_points());
    for f in &snaps {
        let (na, nb) = f.populations(&s.grid);
        let ab = f.overlap_integral(&s.grid);
        let (da, db) = (f.density_a(), f.density_b());
        diag.push(vec![
            f.time,
            na,
            nb,
            density_overlap(f, &s.grid).map_err(HarnessError::numerical("overlap"))?,
            rms_width(&s.grid, &da),
            rms_width(&s.grid, &db),
            ab.re,
            -ab.im,
            0.5 * (na - nb),
            stepper.energy(f) / (na + nb),
        ]);
        for (i, x) in s.grid.positions().iter().enumerate() {
            dens.push(vec![f.time, *x, da[i], db[i]]);
        }
    }
    let meta = vec![
        format!("chi: {chi} rad/s"),
        format!("omega: {omega} rad/s"),
        format!("omega_r: {} rad/s", couplings.omega_r),
        format!("dt: {} s", stepper.dt()),
        format!("mixing_angle: {}", splitter.mixing_angle),
    ];
    dir.write_table(
        "diagnostics.csv",
        "mean-field two-component dynamics",
        &[
            ("t", "s"),
            ("n_a", "atoms"),
            ("n_b", "atoms"),
            ("eta", "1"),
            ("width_a", "m"),
            ("width_b", "m"),
            ("jx", "atoms"),
            ("jy", "atoms"),
            ("jz", "atoms"),
            ("energy_per_particle", "rad/s"),
        ],
        &meta,
        &diag,
    )?;
    dir.write_table(
        "densities.csv",
        "density snapshots",
        &[("t", "s"), ("x", "m"), ("density_a", "m^-1"), ("density_b", "m^-1")],
        &meta,
        &dens,
    )
}

fn ensemble_config(cfg: &ExperimentConfig, s: &Setting, chi_for_time: f64) -> Result<TwEnsembleConfig> {
    let times = cfg.time.as_ref().expect("validated").seconds(chi_for_time)?;
    Ok(TwEnsembleConfig {
        params: s.params,
        case: s.case,
        n_atoms: s.n_atoms,
        n_traj: cfg.n_traj.expect("validated"),
        grid: s.grid.clone(),
        omega: cfg.omega.expect("validated"),
        chi: cfg.chi,
        omega_r: cfg.omega_r.expect("validated"),
        split: cfg.split.expect("validated"),
        seed: cfg.seed.expect("validated"),
        t_grid: times,
        subtraction: cfg.subtraction.expect("validated"),
        step: cfg.step.expect("validated"),
        noise: true,
        ground_tol: cfg.ground_tol.expect("validated"),
    })
}

fn run_multimode(cfg: &ExperimentConfig, s: &Setting, dir: &mut OutputDir, warnings: &mut Vec<String>) -> Result<()> {
    let needs_estimate = cfg.chi.is_none() || cfg.time.as_ref().is_some_and(|t| t.unit == crate::config::TimeUnit::ChiT);
    let chi_estimate = if needs_estimate {
        Some(s.density_couplings(cfg.ground_tol.expect("validated"))?.chi)
    } else {
        None
    };
    let chi = cfg.chi.or(chi_estimate).expect("one of the two is present");
    let tw = ensemble_config(cfg, s, chi)?;

    if cfg.kind() == ExperimentKind::ScanOmega {
        if cfg.chi.is_none() {
            warnings.push("no fitted χ given; the scan uses the density estimate".into());
        }
        let fractions = cfg.fractions.as_ref().expect("validated");
        let r = scan_omega(&tw, chi, fractions).map_err(HarnessError::numerical("Ω scan"))?;
        let rows: Vec<Vec<f64>> = (0..fractions.len())
            .map(|i| {
                vec![
                    r.fractions[i],
                    r.fractions[i] * chi * s.n_atoms / 2.0,
                    r.peak_variance[i],
                    r.peak_se[i],
                    r.peak_time[i],
                ]
            })
            .collect();
        return dir.write_table(
            "scan_report.csv",
            "Ω scan: peak of the largest spin variance per fraction",
            &[
                ("fraction", "1"),
                ("omega", "rad/s"),
                ("peak_variance", "atoms^2"),
                ("peak_se", "atoms^2"),
                ("peak_time", "s"),
            ],
            &[format!("chi_hat: {chi} rad/s"), format!("best_fraction: {}", r.best_fraction)],
            &rows,
        );
    }

    let run = run_ensemble(&tw).map_err(HarnessError::numerical("multimode ensemble"))?;
    warnings.extend(run.prepared.warnings.iter().cloned());
    let moments = (0..tw.t_grid.len())
        .map(|k| spin_moments_from_fields(&run.series, &tw.grid, k))
        .collect::<tnt_core::Result<Vec<_>>>()
        .map_err(HarnessError::numerical("moments"))?;
    let meta = vec![
        format!("chi_density_estimate: {} rad/s", run.prepared.chi_estimate),
        format!("chi_used: {} rad/s", run.prepared.chi_used),
        format!("omega: {} rad/s", run.prepared.couplings.omega),
        format!("omega_r: {} rad/s", run.prepared.couplings.omega_r),
        format!("dt: {} s", run.prepared.dt),
        format!("mixing_angle: {}", run.prepared.splitter.mixing_angle),
        format!("n_points: {}", tw.grid.n_points()),
        format!("trajectories: {} ({} failed)", tw.n_traj, run.failed.len()),
    ];
    write_metrology(dir, &moments, run.prepared.chi_used, Some(&run.series), &meta)?;
    write_accumulators(dir, cfg, &run.series)?;

    if cfg.kind() == ExperimentKind::CalibrateChi {
        let start = OatStart {
            n_atoms: s.n_atoms,
            theta: run.prepared.splitter.mixing_angle,
        };
        let reference = cfg.reference.expect("validated");
        let fit = fit_chi(&moments, start, run.prepared.chi_used, reference).map_err(HarnessError::numerical("χ fit"))?;
        let times: Vec<f64> = moments.iter().map(|m| m.time).collect();
        let model = reference_variance(fit.chi_hat, start, reference, &times).map_err(HarnessError::numerical("reference"))?;
        let rows: Vec<Vec<f64>> = moments
            .iter()
            .zip(&model)
            .map(|(m, v)| vec![m.time, m.var(1), m.se_cov(1, 1), *v])
            .collect();
        dir.write_table(
            "fit_comparison.csv",
            "multimode Var(J_y) against the fitted single-mode model",
            &[("t", "s"), ("var_y", "atoms^2"), ("se_var_y", "atoms^2"), ("var_y_single_mode", "atoms^2")],
            &[format!("chi_hat: {} rad/s", fit.chi_hat)],
            &rows,
        )?;
        #[derive(Serialize)]
        struct FitReport {
            chi_hat: f64,
            fit_residual: f64,
            time_window: (f64, f64),
            points: usize,
            reference: tnt_core::calibration::OatReference,
            chi_density_estimate: f64,
            reference_run_hash: String,
        }
        dir.write_json(
            "fit_report.json",
            &FitReport {
                chi_hat: fit.chi_hat,
                fit_residual: fit.fit_residual,
                time_window: fit.time_window,
                points: fit.points,
                reference: fit.reference,
                chi_density_estimate: run.prepared.chi_estimate,
                reference_run_hash: cfg.hash_hex(),
            },
        )?;
    }
    Ok(())
}
