//! One-dimensional Gross-Pitaevskii fields: ground state by imaginary time and
//! two-component real-time evolution by a symmetric split-step Fourier scheme.
//!
//! All energies are carried as angular frequencies (H/ħ, rad/s); interaction
//! strengths as g = Ũ/ħ (rad·m/s).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::SpatialGrid;
use crate::params::PhysicalParams;

/// Kinetic and trap parts of the single-particle Hamiltonian on a grid.
#[derive(Debug, Clone)]
pub struct Ham1D {
    grid: SpatialGrid,
    /// ħ/2m, m²/s.
    kinetic_prefactor: f64,
    /// V(x)/ħ, rad/s.
    potential: Vec<f64>,
}

impl Ham1D {
    pub fn harmonic(grid: &SpatialGrid, params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let k = 0.5 * params.mass * params.trap_omega_x.powi(2) / params.hbar;
        Ok(Self {
            grid: grid.clone(),
            kinetic_prefactor: params.hbar / (2.0 * params.mass),
            potential: grid.positions().iter().map(|x| k * x * x).collect(),
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn kinetic_prefactor(&self) -> f64 {
        self.kinetic_prefactor
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Kinetic frequency (ħ/2m)k² at each spectral index.
    pub fn kinetic_spectrum(&self) -> Vec<f64> {
        self.grid
            .wavenumbers()
            .iter()
            .map(|k| self.kinetic_prefactor * k * k)
            .collect()
    }

    /// Kinetic frequency at the grid's Nyquist wavenumber.
    pub fn max_kinetic_frequency(&self) -> f64 {
        self.kinetic_prefactor * self.grid.nyquist_wavenumber().powi(2)
    }
}

/// FFT pair with scratch, normalised so that `inverse(forward(x)) = x`.
#[derive(Clone)]
pub(crate) struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    scale: f64,
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            scale: 1.0 / n as f64,
        }
    }

    pub(crate) fn forward(&mut self, buf: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse transform including the 1/n normalisation.
    pub(crate) fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        for z in buf.iter_mut() {
            *z *= self.scale;
        }
    }

    /// `out = IFFT(mult · FFT(input))`.
    fn apply_diagonal(&mut self, input: &[Complex64], mult: &[f64], out: &mut [Complex64]) {
        out.copy_from_slice(input);
        self.forward(out);
        for (z, m) in out.iter_mut().zip(mult) {
            *z *= *m;
        }
        self.inverse(out);
    }
}

/// ∫ψ*Kψ dx evaluated spectrally.
fn kinetic_energy(spec: &mut Spectral, grid: &SpatialGrid, kin: &[f64], psi: &[Complex64]) -> f64 {
    let mut buf = psi.to_vec();
    spec.forward(&mut buf);
    grid.spacing() / grid.n_points() as f64 * buf.iter().zip(kin).map(|(z, k)| z.norm_sqr() * k).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    /// Non-negative real profile normalised to N on the grid.
    pub psi: Vec<f64>,
    /// Chemical potential μ/ħ, rad/s.
    pub mu: f64,
    /// Energy per particle E/(Nħ), rad/s.
    pub energy_per_particle: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Settings of the imaginary-time solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundStateOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Initial imaginary time step in units of 1/ω_x.
    pub tau_over_period: f64,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 20_000,
            tau_over_period: 2.0,
        }
    }
}

/// Ground state of the single-component GPE with 1D strength `u1d` (J·m).
pub fn ground_state(grid: &SpatialGrid, n_atoms: f64, u1d: f64, params: &PhysicalParams, tol: f64) -> Result<GroundState> {
    ground_state_with(
        grid,
        n_atoms,
        u1d,
        params,
        GroundStateOptions {
            tol,
            ..GroundStateOptions::default()
        },
    )
}

/// Backward-Euler pseudospectral gradient flow
/// (1/τ + K + V + g|ψⁿ|²) ψ* = ψⁿ/τ, ψⁿ⁺¹ = √N ψ*/‖ψ*‖, solved by preconditioned CG.
/// Its fixed points satisfy the stationary equation exactly.
pub fn ground_state_with(
    grid: &SpatialGrid,
    n_atoms: f64,
    u1d: f64,
    params: &PhysicalParams,
    opts: GroundStateOptions,
) -> Result<GroundState> {
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(n_atoms > 0.0 && n_atoms.is_finite()) {
        return Err(invalid(format!("atom number must be positive, got {n_atoms}")));
    }
    if !(u1d >= 0.0 && u1d.is_finite()) {
        return Err(invalid(format!("interaction strength must be non-negative, got {u1d}")));
    }
    let ham = Ham1D::harmonic(grid, params)?;
    let g = u1d / params.hbar;
    let kin = ham.kinetic_spectrum();
    let n = grid.n_points();
    let mut spec = Spectral::new(n);

    // Gaussian start, broadened to the Thomas-Fermi radius when interactions dominate.
    let a_ho = params.oscillator_length();
    let (_, r_tf) = params.thomas_fermi(n_atoms, u1d);
    let width = a_ho.max(0.5 * r_tf);
    let mut psi: Vec<Complex64> = grid
        .positions()
        .iter()
        .map(|x| Complex64::new((-(x * x) / (2.0 * width * width)).exp(), 0.0))
        .collect();
    normalise(grid, &mut psi, n_atoms)?;

    let mut tau = opts.tau_over_period / params.trap_omega_x;
    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    let mut hpsi = vec![Complex64::new(0.0, 0.0); n];
    let mut last = (f64::NAN, f64::NAN);
    for it in 1..=opts.max_iterations {
        let w: Vec<f64> = ham.potential.iter().zip(&psi).map(|(v, p)| v + g * p.norm_sqr()).collect();
        let shift = last.0.is_finite().then_some(last.0).unwrap_or_else(|| w.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0));
        let rhs: Vec<Complex64> = psi.iter().map(|p| p / tau).collect();
        let next = conjugate_gradient(&mut spec, &kin, &w, 1.0 / tau, shift, &rhs, &psi)?;
        psi = next.into_iter().map(|z| Complex64::new(z.re, 0.0)).collect();
        normalise(grid, &mut psi, n_atoms)?;

        let (mu, residual) = chemical_potential_residual(&mut spec, &ham, &kin, g, &psi, &mut hpsi);
        last = (mu, residual);
        if residual < opts.tol {
            let psi_real: Vec<f64> = psi.iter().map(|z| z.re.abs()).collect();
            let e = mean_field_energy_single(&mut spec, &ham, &kin, g, &psi) / n_atoms;
            return Ok(GroundState {
                psi: psi_real,
                mu,
                energy_per_particle: e,
                iterations: it,
                residual,
            });
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                tau *= 0.5;
                stalled = 0;
            }
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iterations,
        residual: last.1,
    })
}

fn normalise(grid: &SpatialGrid, psi: &mut [Complex64], n_atoms: f64) -> Result<()> {
    let norm = grid.norm_squared(psi);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(invalid("field has zero or non-finite norm"));
    }
    let s = (n_atoms / norm).sqrt();
    psi.iter_mut().for_each(|z| *z *= s);
    Ok(())
}

/// Solve (c + K + W) x = b with a Fourier-diagonal preconditioner (c + K + shift).
fn conjugate_gradient(
    spec: &mut Spectral,
    kin: &[f64],
    w: &[f64],
    c: f64,
    shift: f64,
    b: &[Complex64],
    x0: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = b.len();
    let precond: Vec<f64> = kin.iter().map(|k| 1.0 / (c + k + shift)).collect();
    let mut tmp = vec![Complex64::new(0.0, 0.0); n];
    let mut apply = |spec: &mut Spectral, v: &[Complex64], out: &mut [Complex64]| {
        spec.apply_diagonal(v, kin, &mut tmp);
        for i in 0..n {
            out[i] = tmp[i] + v[i] * (c + w[i]);
        }
    };
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum::<f64>();

    let mut x = x0.to_vec();
    let mut ax = vec![Complex64::new(0.0, 0.0); n];
    apply(spec, &x, &mut ax);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    spec.apply_diagonal(&r, &precond, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let b_norm = dot(b, b).sqrt();
    let mut ap = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..1000 {
        if dot(&r, &r).sqrt() <= 1e-14 * b_norm {
            break;
        }
        apply(spec, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        spec.apply_diagonal(&r, &precond, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if x.iter().any(|v| !v.re.is_finite()) {
        return Err(invalid("imaginary-time linear solve produced non-finite values"));
    }
    Ok(x)
}

/// μ = ⟨ψ|H|ψ⟩/⟨ψ|ψ⟩ and ‖(H − μ)ψ‖/‖μψ‖ with H = K + V + g|ψ|².
fn chemical_potential_residual(
    spec: &mut Spectral,
    ham: &Ham1D,
    kin: &[f64],
    g: f64,
    psi: &[Complex64],
    hpsi: &mut [Complex64],
) -> (f64, f64) {
    spec.apply_diagonal(psi, kin, hpsi);
    for ((h, p), v) in hpsi.iter_mut().zip(psi).zip(&ham.potential) {
        *h += p * (v + g * p.norm_sqr());
    }
    let pp: f64 = psi.iter().map(|p| p.norm_sqr()).sum();
    let mu = psi.iter().zip(hpsi.iter()).map(|(p, h)| (p.conj() * h).re).sum::<f64>() / pp;
    let res: f64 = psi.iter().zip(hpsi.iter()).map(|(p, h)| (h - p * mu).norm_sqr()).sum::<f64>().sqrt();
    (mu, res / (mu.abs() * pp.sqrt()))
}

fn mean_field_energy_single(spec: &mut Spectral, ham: &Ham1D, kin: &[f64], g: f64, psi: &[Complex64]) -> f64 {
    let grid = &ham.grid;
    let k = kinetic_energy(spec, grid, kin, psi);
    let pv: f64 = grid.spacing()
        * psi
            .iter()
            .zip(&ham.potential)
            .map(|(p, v)| {
                let r = p.norm_sqr();
                r * v + 0.5 * g * r * r
            })
            .sum::<f64>();
    k + pv
}

/// Thomas-Fermi density max(0, (μ − V)/g) for chemical potential `mu` (rad/s) and g = Ũ/ħ.
pub fn thomas_fermi_density(ham: &Ham1D, mu: f64, g: f64) -> Vec<f64> {
    ham.potential.iter().map(|v| ((mu - v) / g).max(0.0)).collect()
}

/// Largest density within the outer eighth of the grid relative to the peak.
pub fn edge_density_ratio(grid: &SpatialGrid, density: &[f64]) -> f64 {
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let edge = 0.875 * grid.extent();
    let max_edge = grid
        .positions()
        .iter()
        .zip(density)
        .filter(|(x, _)| x.abs() >= edge)
        .map(|(_, d)| *d)
        .fold(0.0, f64::max);
    if peak > 0.0 { max_edge / peak } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub psi_a: Vec<Complex64>,
    pub psi_b: Vec<Complex64>,
    pub time: f64,
}

impl FieldPair {
    /// Component a in `profile` (real), component b empty.
    pub fn single_component(profile: &[f64]) -> Self {
        Self {
            psi_a: profile.iter().map(|&p| Complex64::new(p, 0.0)).collect(),
            psi_b: vec![Complex64::new(0.0, 0.0); profile.len()],
            time: 0.0,
        }
    }

    pub fn populations(&self, grid: &SpatialGrid) -> (f64, f64) {
        (grid.norm_squared(&self.psi_a), grid.norm_squared(&self.psi_b))
    }

    pub fn total_norm(&self, grid: &SpatialGrid) -> f64 {
        let (a, b) = self.populations(grid);
        a + b
    }

    pub fn density_a(&self) -> Vec<f64> {
        self.psi_a.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn density_b(&self) -> Vec<f64> {
        self.psi_b.iter().map(|z| z.norm_sqr()).collect()
    }

    /// ∫ψ_a*ψ_b dx.
    pub fn overlap_integral(&self, grid: &SpatialGrid) -> Complex64 {
        self.psi_a.iter().zip(&self.psi_b).map(|(a, b)| a.conj() * b).sum::<Complex64>() * grid.spacing()
    }

    /// Pointwise unitary mixing; see [`crate::two_mode::BeamSplitter`].
    pub fn apply_beamsplitter(&mut self, splitter: &crate::two_mode::BeamSplitter) {
        for (a, b) in self.psi_a.iter_mut().zip(self.psi_b.iter_mut()) {
            (*a, *b) = splitter.apply(*a, *b);
        }
    }
}

/// |∫ψ_a*ψ_b dx| / √(∫|ψ_a|² ∫|ψ_b|²).
pub fn density_overlap(fields: &FieldPair, grid: &SpatialGrid) -> Result<f64> {
    grid.check_len(fields.psi_a.len(), "psi_a")?;
    grid.check_len(fields.psi_b.len(), "psi_b")?;
    let (na, nb) = fields.populations(grid);
    if na <= 0.0 || nb <= 0.0 {
        return Err(invalid("overlap undefined for a component with zero norm"));
    }
    Ok((fields.overlap_integral(grid).norm() / (na * nb).sqrt()).min(1.0))
}

/// RMS width of a density about its centre of mass.
pub fn rms_width(grid: &SpatialGrid, density: &[f64]) -> f64 {
    let x = grid.positions();
    let n: f64 = density.iter().sum();
    let m1 = x.iter().zip(density).map(|(x, d)| x * d).sum::<f64>() / n;
    let m2 = x.iter().zip(density).map(|(x, d)| x * x * d).sum::<f64>() / n;
    (m2 - m1 * m1).max(0.0).sqrt()
}

/// How the Wigner self- and cross-interaction densities are corrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Subtraction {
    /// 1/Δ subtracted in both self and cross terms.
    #[default]
    Uniform,
    /// 1/Δ self, 1/(2Δ) cross.
    Weyl,
    /// No subtraction: the plain GPE drift.
    None,
}

impl Subtraction {
    /// (self, cross) density offsets for grid spacing `dx`.
    pub fn offsets(self, dx: f64) -> (f64, f64) {
        match self {
            Subtraction::Uniform => (1.0 / dx, 1.0 / dx),
            Subtraction::Weyl => (1.0 / dx, 0.5 / dx),
            Subtraction::None => (0.0, 0.0),
        }
    }
}

/// Couplings of the two-component evolution, as frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCouplings {
    /// g_ij = Ũ_ij/ħ, rad·m/s.
    pub g_aa: f64,
    pub g_bb: f64,
    pub g_ab: f64,
    /// Ω, rad/s.
    pub omega: f64,
    /// ω_r, rad/s: adds ħω_r J_z.
    pub omega_r: f64,
}

impl FieldCouplings {
    pub fn from_1d(u1d: &crate::params::InteractionStrengths, params: &PhysicalParams, omega: f64, omega_r: f64) -> Self {
        Self {
            g_aa: u1d.aa / params.hbar,
            g_bb: u1d.bb / params.hbar,
            g_ab: u1d.ab / params.hbar,
            omega,
            omega_r,
        }
    }
}

/// Time-step policy for the split-step integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    /// Upper bound on the step, s.
    pub dt: f64,
    /// Largest kinetic phase at the Nyquist wavenumber per step, rad.
    pub max_kinetic_phase: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt: 1e-6,
            max_kinetic_phase: 0.1,
        }
    }
}

impl StepPolicy {
    pub fn effective_dt(&self, ham: &Ham1D) -> f64 {
        self.dt.min(self.max_kinetic_phase / ham.max_kinetic_frequency())
    }
}

/// Largest per-step relative norm drift tolerated before flagging a step-size error.
pub const NORM_DRIFT_LIMIT: f64 = 1e-6;

/// Reusable symmetric split-step propagator N(h/2) C(h/2) K(h) C(h/2) N(h/2).
/// N is the exact position-space phase (trap, interactions, ω_r), C the exact Ω
/// rotation, K the spectral kinetic phase.
#[derive(Clone)]
pub struct SplitStepper {
    grid: SpatialGrid,
    potential: Vec<f64>,
    kin: Vec<f64>,
    couplings: FieldCouplings,
    offsets: (f64, f64),
    dt_max: f64,
    spec: Spectral,
    kin_phase: Vec<Complex64>,
    kin_phase_h: f64,
    buf: Vec<Complex64>,
}

impl SplitStepper {
    pub fn new(ham: &Ham1D, couplings: FieldCouplings, subtraction: Subtraction, policy: StepPolicy) -> Result<Self> {
        Self::with_offsets(ham, couplings, subtraction.offsets(ham.grid.spacing()), policy)
    }

    /// Stepper with explicit (self, cross) density offsets.
    pub fn with_offsets(ham: &Ham1D, couplings: FieldCouplings, offsets: (f64, f64), policy: StepPolicy) -> Result<Self> {
        if !(policy.dt > 0.0 && policy.max_kinetic_phase > 0.0) {
            return Err(invalid("time step and kinetic phase bound must be positive"));
        }
        let n = ham.grid.n_points();
        Ok(Self {
            grid: ham.grid.clone(),
            potential: ham.potential.clone(),
            kin: ham.kinetic_spectrum(),
            couplings,
            offsets,
            dt_max: policy.effective_dt(ham),
            spec: Spectral::new(n),
            kin_phase: vec![Complex64::new(1.0, 0.0); n],
            kin_phase_h: f64::NAN,
            buf: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt_max
    }

    pub fn couplings(&self) -> &FieldCouplings {
        &self.couplings
    }

    fn nonlinear(&self, f: &mut FieldPair, tau: f64) {
        let c = &self.couplings;
        let (s_self, s_cross) = self.offsets;
        let half_r = 0.5 * c.omega_r;
        for ((a, b), v) in f.psi_a.iter_mut().zip(f.psi_b.iter_mut()).zip(&self.potential) {
            let ra = a.norm_sqr();
            let rb = b.norm_sqr();
            let wa = v + c.g_aa * (ra - s_self) + c.g_ab * (rb - s_cross) + half_r;
            let wb = v + c.g_bb * (rb - s_self) + c.g_ab * (ra - s_cross) - half_r;
            *a *= Complex64::from_polar(1.0, -wa * tau);
            *b *= Complex64::from_polar(1.0, -wb * tau);
        }
    }

    fn coupling(&self, f: &mut FieldPair, tau: f64) {
        if self.couplings.omega == 0.0 {
            return;
        }
        let (s, c) = (0.5 * self.couplings.omega * tau).sin_cos();
        let is = Complex64::new(0.0, s);
        for (a, b) in f.psi_a.iter_mut().zip(f.psi_b.iter_mut()) {
            let (na, nb) = (*a * c - is * *b, *b * c - is * *a);
            *a = na;
            *b = nb;
        }
    }

    fn kinetic(&mut self, f: &mut FieldPair, h: f64) {
        if self.kin_phase_h != h {
            for (p, k) in self.kin_phase.iter_mut().zip(&self.kin) {
                *p = Complex64::from_polar(1.0, -k * h);
            }
            self.kin_phase_h = h;
        }
        for field in [&mut f.psi_a, &mut f.psi_b] {
            self.buf.copy_from_slice(field);
            self.spec.forward(&mut self.buf);
            for (z, p) in self.buf.iter_mut().zip(&self.kin_phase) {
                *z *= p;
            }
            self.spec.inverse(&mut self.buf);
            field.copy_from_slice(&self.buf);
        }
    }

    /// Advance to `t_end` in equal steps no longer than the policy step
    /// (negative intervals integrate backwards).
    pub fn advance_to(&mut self, f: &mut FieldPair, t_end: f64) -> Result<()> {
        let span = t_end - f.time;
        if span == 0.0 {
            return Ok(());
        }
        if !span.is_finite() {
            return Err(invalid("non-finite evolution interval"));
        }
        let steps = (span.abs() / self.dt_max).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let n0 = f.total_norm(&self.grid);
        self.nonlinear(f, 0.5 * h);
        for s in 0..steps {
            self.coupling(f, 0.5 * h);
            self.kinetic(f, h);
            self.coupling(f, 0.5 * h);
            // adjacent nonlinear half steps commute and fuse into one full step
            self.nonlinear(f, if s + 1 == steps { 0.5 * h } else { h });
        }
        f.time = t_end;
        let n1 = f.total_norm(&self.grid);
        let drift = ((n1 - n0) / n0.max(f64::MIN_POSITIVE)).abs();
        if !n1.is_finite() || drift > NORM_DRIFT_LIMIT * steps as f64 {
            return Err(Error::StepSize { drift, dt: h.abs() });
        }
        Ok(())
    }

    /// Mean-field energy functional E/ħ (rad/s) including the Ω and ω_r terms.
    pub fn energy(&mut self, f: &FieldPair) -> f64 {
        let dx = self.grid.spacing();
        let kin = self.kin.clone();
        let ka = kinetic_energy(&mut self.spec, &self.grid, &kin, &f.psi_a);
        let kb = kinetic_energy(&mut self.spec, &self.grid, &kin, &f.psi_b);
        let c = &self.couplings;
        let local: f64 = f
            .psi_a
            .iter()
            .zip(&f.psi_b)
            .zip(&self.potential)
            .map(|((a, b), v)| {
                let ra = a.norm_sqr();
                let rb = b.norm_sqr();
                v * (ra + rb)
                    + 0.5 * c.g_aa * ra * ra
                    + 0.5 * c.g_bb * rb * rb
                    + c.g_ab * ra * rb
                    + c.omega * (a.conj() * b).re
                    + 0.5 * c.omega_r * (ra - rb)
            })
            .sum();
        ka + kb + dx * local
    }
}

/// Evolve `fields` through `t_grid`, returning a snapshot at every time.
pub fn evolve_gpe(
    fields: &FieldPair,
    ham: &Ham1D,
    couplings: FieldCouplings,
    policy: StepPolicy,
    t_grid: &[f64],
) -> Result<Vec<FieldPair>> {
    let mut stepper = SplitStepper::new(ham, couplings, Subtraction::None, policy)?;
    let mut f = fields.clone();
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if t < f.time {
            return Err(invalid("time grid must be non-decreasing from the field time"));
        }
        stepper.advance_to(&mut f, t)?;
        out.push(f.clone());
    }
    Ok(out)
}

/// Least-squares slope of the unwrapped relative phase arg∫ψ_a*ψ_b dx over `snapshots`.
pub fn relative_phase_slope(snapshots: &[FieldPair], grid: &SpatialGrid) -> Result<f64> {
    if snapshots.len() < 2 {
        return Err(invalid("need at least two snapshots to fit a phase drift"));
    }
    let mut phases = Vec::with_capacity(snapshots.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for (i, s) in snapshots.iter().enumerate() {
        let p = s.overlap_integral(grid).arg();
        if i > 0 {
            let mut d = p - prev;
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
                offset -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
                offset += std::f64::consts::TAU;
            }
        }
        prev = p;
        phases.push(p + offset);
    }
    let t: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let pm = phases.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(&phases).map(|(t, p)| (t - tm) * (p - pm)).sum();
    let sxx: f64 = t.iter().map(|t| (t - tm).powi(2)).sum();
    Ok(sxy / sxx)
}

/// ω_r that cancels the mean relative-phase drift: evolve the noise-free split state
/// with Ω = 0 and the given subtraction mode, and return minus the fitted slope.
pub fn calibrate_omega_r(
    fields: &FieldPair,
    ham: &Ham1D,
    couplings: FieldCouplings,
    subtraction: Subtraction,
    policy: StepPolicy,
    t_grid: &[f64],
) -> Result<f64> {
    let probe = FieldCouplings {
        omega: 0.0,
        omega_r: 0.0,
        ..couplings
    };
    let mut stepper = SplitStepper::new(ham, probe, subtraction, policy)?;
    let mut f = fields.clone();
    let mut snaps = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        stepper.advance_to(&mut f, t)?;
        snaps.push(f.clone());
    }
    Ok(-relative_phase_slope(&snaps, ham.grid())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ScatteringCase, BOHR_RADIUS};
    use crate::two_mode::BeamSplitter;

    fn setup(n_points: usize, extent_ho: f64) -> (PhysicalParams, SpatialGrid) {
        let p = PhysicalParams::default();
        let grid = SpatialGrid::new(n_points, extent_ho * p.oscillator_length()).unwrap();
        (p, grid)
    }

    fn u1d(p: &PhysicalParams, a_bohr: f64) -> f64 {
        crate::params::interaction_strength(a_bohr * BOHR_RADIUS, p).unwrap() / p.transverse_area
    }

    #[test]
    fn harmonic_oscillator_limit() {
        let (p, grid) = setup(256, 12.0);
        let gs = ground_state(&grid, 1000.0, 0.0, &p, 1e-10).unwrap();
        let w = p.trap_omega_x;
        assert!((gs.energy_per_particle / (0.5 * w) - 1.0).abs() < 1e-6);
        assert!((gs.mu / (0.5 * w) - 1.0).abs() < 1e-6);
        let a = p.oscillator_length();
        let norm = (1000.0 / (a * std::f64::consts::PI.sqrt())).sqrt();
        for (x, psi) in grid.positions().iter().zip(&gs.psi) {
            let exact = norm * (-(x * x) / (2.0 * a * a)).exp();
            assert!((psi - exact).abs() < 1e-6 * norm);
        }
    }

    #[test]
    fn thomas_fermi_limit() {
        let (p, _) = setup(2, 1.0);
        let u = u1d(&p, 100.0);
        let n = 1e6;
        let (_, r_tf) = p.thomas_fermi(n, u);
        let grid = SpatialGrid::new(1024, 2.0 * r_tf).unwrap();
        let gs = ground_state(&grid, n, u, &p, 1e-8).unwrap();
        let ham = Ham1D::harmonic(&grid, &p).unwrap();
        let tf = thomas_fermi_density(&ham, gs.mu, u / p.hbar);
        let (mut num, mut den) = (0.0, 0.0);
        for ((x, psi), t) in grid.positions().iter().zip(&gs.psi).zip(&tf) {
            if x.abs() < 0.8 * r_tf {
                num += (psi * psi - t).powi(2);
                den += t * t;
            }
        }
        assert!((num / den).sqrt() < 0.02, "{}", (num / den).sqrt());
    }

    #[test]
    fn ground_state_is_grid_converged() {
        let (p, grid) = setup(256, 24.0);
        let u = u1d(&p, 100.0);
        let coarse = ground_state(&grid, 1e5, u, &p, 1e-9).unwrap();
        let fine_grid = SpatialGrid::new(512, grid.extent()).unwrap();
        let fine = ground_state(&fine_grid, 1e5, u, &p, 1e-9).unwrap();
        let peak = coarse.psi.iter().cloned().fold(0.0, f64::max);
        for (i, c) in coarse.psi.iter().enumerate() {
            assert!((c - fine.psi[2 * i]).abs() < 1e-6 * peak);
        }
        assert!(edge_density_ratio(&grid, &coarse.psi.iter().map(|p| p * p).collect::<Vec<_>>()) < 1e-8);
    }

    #[test]
    fn ground_state_rejects_bad_input() {
        let (p, grid) = setup(64, 10.0);
        assert!(ground_state(&grid, 100.0, 0.0, &p, 0.0).is_err());
        assert!(ground_state(&grid, 0.0, 0.0, &p, 1e-8).is_err());
        let r = ground_state_with(
            &grid,
            1e5,
            u1d(&p, 100.0),
            &p,
            GroundStateOptions {
                tol: 1e-12,
                max_iterations: 2,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::Convergence { .. })));
    }

    fn case_fields(case: &ScatteringCase, n: f64, n_points: usize) -> (PhysicalParams, Ham1D, FieldCouplings, FieldPair) {
        let p = PhysicalParams::default();
        let u = case.interaction_strengths(&p).unwrap().reduced_to_1d(&p);
        let (_, r_tf) = p.thomas_fermi(n, u.aa);
        let grid = SpatialGrid::new(n_points, 4.0 * r_tf).unwrap();
        let gs = ground_state(&grid, n, u.aa, &p, 1e-9).unwrap();
        let ham = Ham1D::harmonic(&grid, &p).unwrap();
        let c = FieldCouplings::from_1d(&u, &p, 0.0, 0.0);
        (p, ham, c, FieldPair::single_component(&gs.psi))
    }

    #[test]
    fn ground_state_is_stationary() {
        let case = ScatteringCase::case_i(&PhysicalParams::default());
        let (_, ham, c, f) = case_fields(&case, 1e5, 256);
        let out = evolve_gpe(&f, &ham, c, StepPolicy::default(), &[0.01]).unwrap();
        let d0 = f.density_a();
        let d1 = out[0].density_a();
        let peak = d0.iter().cloned().fold(0.0, f64::max);
        for (a, b) in d0.iter().zip(&d1) {
            assert!((a - b).abs() < 1e-6 * peak);
        }
    }

    #[test]
    fn split_step_is_unitary_reversible_and_conserves_energy() {
        let case = ScatteringCase::case_ii(&PhysicalParams::default());
        let (_, ham, mut c, mut f) = case_fields(&case, 1e5, 256);
        f.apply_beamsplitter(&BeamSplitter::symmetric());
        c.omega = 30.0;
        c.omega_r = 5.0;
        let mut st = SplitStepper::new(&ham, c, Subtraction::None, StepPolicy::default()).unwrap();
        let n0 = f.total_norm(ham.grid());
        let e0 = st.energy(&f);
        let mut g = f.clone();
        let dt = st.dt();
        for i in 1..=200 {
            let before = g.total_norm(ham.grid());
            st.advance_to(&mut g, i as f64 * dt).unwrap();
            assert!(((g.total_norm(ham.grid()) - before) / before).abs() < 1e-10);
        }
        st.advance_to(&mut g, 0.02).unwrap();
        assert!(((g.total_norm(ham.grid()) - n0) / n0).abs() < 1e-10);
        assert!(((st.energy(&g) - e0) / e0).abs() < 1e-7, "{}", (st.energy(&g) - e0) / e0);
        st.advance_to(&mut g, 0.0).unwrap();
        let err: f64 = g.psi_a.iter().zip(&f.psi_a).chain(g.psi_b.iter().zip(&f.psi_b)).map(|(x, y)| (x - y).norm_sqr()).sum();
        assert!((err / n0 * ham.grid().spacing()).sqrt() < 1e-8);
    }

    #[test]
    fn overlap_diagnostic() {
        let grid = SpatialGrid::new(256, 20.0).unwrap();
        let gauss = |c: f64| -> Vec<Complex64> {
            grid.positions()
                .iter()
                .map(|x| Complex64::new((2.0 * std::f64::consts::PI).powf(-0.25) * (-(x - c).powi(2) / 4.0).exp(), 0.0))
                .collect()
        };
        let a = gauss(0.0);
        let scaled: Vec<_> = a.iter().map(|z| z * Complex64::new(0.0, 3.0)).collect();
        let f = FieldPair { psi_a: a.clone(), psi_b: scaled, time: 0.0 };
        assert!((density_overlap(&f, &grid).unwrap() - 1.0).abs() < 1e-12);
        let f = FieldPair { psi_a: a.clone(), psi_b: gauss(1.0), time: 0.0 };
        assert!((density_overlap(&f, &grid).unwrap() - (-0.125f64).exp()).abs() < 1e-12);
        let left: Vec<_> = grid.positions().iter().map(|&x| Complex64::new(if x < 0.0 { 1.0 } else { 0.0 }, 0.0)).collect();
        let right: Vec<_> = grid.positions().iter().map(|&x| Complex64::new(if x < 0.0 { 0.0 } else { 1.0 }, 0.0)).collect();
        let f = FieldPair { psi_a: left, psi_b: right, time: 0.0 };
        assert_eq!(density_overlap(&f, &grid).unwrap(), 0.0);
        let f = FieldPair::single_component(&vec![1.0; 256]);
        assert!(density_overlap(&f, &grid).is_err());
    }

    #[test]
    fn rms_width_of_gaussian() {
        let grid = SpatialGrid::new(512, 20.0).unwrap();
        let d: Vec<f64> = grid.positions().iter().map(|x| (-(x - 1.0f64).powi(2) / (2.0 * 1.5f64.powi(2))).exp()).collect();
        assert!((rms_width(&grid, &d) - 1.5).abs() < 1e-10);
    }

    #[test]
    fn omega_r_cancels_phase_drift() {
        let case = ScatteringCase::case_iii(&PhysicalParams::default());
        let (_, ham, c, mut f) = case_fields(&case, 1e4, 128);
        f.apply_beamsplitter(&BeamSplitter::symmetric());
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 1e-3).collect();
        let policy = StepPolicy::default();
        let w = calibrate_omega_r(&f, &ham, c, Subtraction::None, policy, &times).unwrap();
        assert!(w.abs() > 0.0);
        let comp = FieldCouplings { omega_r: w, ..c };
        let snaps = evolve_gpe(&f, &ham, comp, policy, &times).unwrap();
        let slope = relative_phase_slope(&snaps, ham.grid()).unwrap();
        assert!(slope.abs() < 1e-6 * w.abs().max(1.0), "{slope} vs {w}");
    }
}
