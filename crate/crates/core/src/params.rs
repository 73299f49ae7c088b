//! Physical constants, scattering-length cases and the couplings derived from them.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::SpatialGrid;

/// Reduced Planck constant (CODATA 2018), J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Unified atomic mass unit (CODATA 2018), kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Bohr radius as used for the scattering-length cases, m.
pub const BOHR_RADIUS: f64 = 5.29e-11;
/// Transverse area used to reduce the 3D couplings to 1D, m².
pub const DEFAULT_TRANSVERSE_AREA: f64 = 1.0e-10;
/// Longitudinal trap frequency, rad/s (2π·50 Hz).
pub const DEFAULT_TRAP_OMEGA_X: f64 = 2.0 * PI * 50.0;
/// Atom number for multimode runs.
pub const DEFAULT_ATOM_NUMBER: f64 = 1.0e5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Atomic mass, kg.
    pub mass: f64,
    /// A_⊥, m².
    pub transverse_area: f64,
    /// ω_x, rad/s.
    pub trap_omega_x: f64,
    /// a₀, m.
    pub bohr_radius: f64,
    /// ħ, J·s.
    pub hbar: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            mass: 87.0 * ATOMIC_MASS_UNIT,
            transverse_area: DEFAULT_TRANSVERSE_AREA,
            trap_omega_x: DEFAULT_TRAP_OMEGA_X,
            bohr_radius: BOHR_RADIUS,
            hbar: HBAR,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("transverse_area", self.transverse_area),
            ("trap_omega_x", self.trap_omega_x),
            ("bohr_radius", self.bohr_radius),
            ("hbar", self.hbar),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Harmonic-oscillator length √(ħ/mω_x).
    pub fn oscillator_length(&self) -> f64 {
        (self.hbar / (self.mass * self.trap_omega_x)).sqrt()
    }

    /// Thomas-Fermi chemical potential (J) and radius (m) of `n_atoms` with 1D coupling `u1d`.
    pub fn thomas_fermi(&self, n_atoms: f64, u1d: f64) -> (f64, f64) {
        let curvature = 0.5 * self.mass * self.trap_omega_x.powi(2);
        let mu = (0.75 * n_atoms * u1d * curvature.sqrt()).powf(2.0 / 3.0);
        (mu, (mu / curvature).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    CaseI,
    CaseII,
    CaseIII,
    Custom,
}

/// s-wave scattering lengths (m) of the two internal states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCase {
    pub a_aa: f64,
    pub a_bb: f64,
    pub a_ab: f64,
    pub label: CaseLabel,
}

impl ScatteringCase {
    fn in_bohr(aa: f64, bb: f64, ab: f64, a0: f64, label: CaseLabel) -> Self {
        Self {
            a_aa: aa * a0,
            a_bb: bb * a0,
            a_ab: ab * a0,
            label,
        }
    }

    /// Equal intra-species lengths: the components breathe together.
    pub fn case_i(params: &PhysicalParams) -> Self {
        Self::in_bohr(100.0, 100.0, 97.0, params.bohr_radius, CaseLabel::CaseI)
    }

    /// a_bb > a_aa > a_ab: separates under a 50/50 split, breathe-together ratio 2.
    pub fn case_ii(params: &PhysicalParams) -> Self {
        Self::in_bohr(95.0, 100.0, 90.0, params.bohr_radius, CaseLabel::CaseII)
    }

    /// a_aa > a_ab > a_bb: no breathe-together solution.
    pub fn case_iii(params: &PhysicalParams) -> Self {
        Self::in_bohr(100.0, 95.0, 97.0, params.bohr_radius, CaseLabel::CaseIII)
    }

    pub fn custom(a_aa: f64, a_bb: f64, a_ab: f64) -> Result<Self> {
        let case = Self {
            a_aa,
            a_bb,
            a_ab,
            label: CaseLabel::Custom,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("a_aa", self.a_aa), ("a_bb", self.a_bb), ("a_ab", self.a_ab)] {
            if !(a.is_finite() && a > 0.0) {
                return Err(invalid(format!("scattering length {name} must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn interaction_strengths(&self, params: &PhysicalParams) -> Result<InteractionStrengths> {
        Ok(InteractionStrengths {
            aa: interaction_strength(self.a_aa, params)?,
            bb: interaction_strength(self.a_bb, params)?,
            ab: interaction_strength(self.a_ab, params)?,
        })
    }
}

/// A set of U_ij values. Depending on context these are the 3D strengths (J·m³)
/// or the 1D strengths Ũ_ij = U_ij / A_⊥ (J·m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionStrengths {
    pub aa: f64,
    pub bb: f64,
    pub ab: f64,
}

impl InteractionStrengths {
    pub fn reduced_to_1d(&self, params: &PhysicalParams) -> Self {
        let a = params.transverse_area;
        Self {
            aa: self.aa / a,
            bb: self.bb / a,
            ab: self.ab / a,
        }
    }
}

/// U = 4πħ²a/m, J·m³.
pub fn interaction_strength(a: f64, params: &PhysicalParams) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(invalid(format!("scattering length must be positive, got {a}")));
    }
    Ok(4.0 * PI * params.hbar * params.hbar * a / params.mass)
}

/// Single-mode nonlinearity χ_ij = (Ũ/2ħ)∫ρ_i ρ_j dx for unit-normalised densities
/// ρ = |u|² sampled on `grid`. `u` is the 3D strength; it is reduced by A_⊥ here.
pub fn chi_from_modes(
    grid: &SpatialGrid,
    rho_i: &[f64],
    rho_j: &[f64],
    u: f64,
    params: &PhysicalParams,
) -> Result<f64> {
    grid.check_len(rho_i.len(), "first density profile")?;
    grid.check_len(rho_j.len(), "second density profile")?;
    let overlap: f64 = grid.spacing() * rho_i.iter().zip(rho_j).map(|(a, b)| a * b).sum::<f64>();
    Ok(u / params.transverse_area / (2.0 * params.hbar) * overlap)
}

/// η = ∫u_a* u_b dx.
pub fn mode_overlap(grid: &SpatialGrid, u_a: &[Complex64], u_b: &[Complex64]) -> Result<Complex64> {
    grid.check_len(u_a.len(), "first mode")?;
    grid.check_len(u_b.len(), "second mode")?;
    let sum: Complex64 = u_a.iter().zip(u_b).map(|(a, b)| a.conj() * b).sum();
    Ok(sum * grid.spacing())
}

/// Population ratio N_a/N_b = (U_bb − U_ab)/(U_aa − U_ab) at which both components
/// feel the same mean-field potential. `None` when no positive finite ratio exists.
pub fn breathe_together_ratio(case: &ScatteringCase) -> Option<f64> {
    // U_ij ∝ a_ij, so the ratio can be formed from the lengths directly.
    let den = case.a_aa - case.a_ab;
    if den == 0.0 {
        return None;
    }
    let ratio = (case.a_bb - case.a_ab) / den;
    (ratio.is_finite() && ratio > 0.0).then_some(ratio)
}

/// Couplings derived once from a parameter set and the occupied spatial modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCouplings {
    /// 3D strengths U_ij, J·m³.
    pub u: InteractionStrengths,
    /// 1D strengths Ũ_ij, J·m.
    pub u1d: InteractionStrengths,
    pub chi_aa: f64,
    pub chi_bb: f64,
    pub chi_ab: f64,
    /// χ = χ_aa + χ_bb − 2χ_ab, rad/s.
    pub chi: f64,
    /// χ_- = χ_aa − χ_bb, rad/s.
    pub chi_minus: f64,
    pub eta: Complex64,
    /// Ω, rad/s.
    pub omega: f64,
}

impl DerivedCouplings {
    /// Couplings for two components occupying the unit-normalised modes `u_a`, `u_b`.
    pub fn from_modes(
        params: &PhysicalParams,
        case: &ScatteringCase,
        grid: &SpatialGrid,
        u_a: &[Complex64],
        u_b: &[Complex64],
        omega: f64,
    ) -> Result<Self> {
        params.validate()?;
        case.validate()?;
        let u = case.interaction_strengths(params)?;
        let rho_a: Vec<f64> = u_a.iter().map(|z| z.norm_sqr()).collect();
        let rho_b: Vec<f64> = u_b.iter().map(|z| z.norm_sqr()).collect();
        let chi_aa = chi_from_modes(grid, &rho_a, &rho_a, u.aa, params)?;
        let chi_bb = chi_from_modes(grid, &rho_b, &rho_b, u.bb, params)?;
        let chi_ab = chi_from_modes(grid, &rho_a, &rho_b, u.ab, params)?;
        let eta = mode_overlap(grid, u_a, u_b)?;
        Ok(Self {
            u,
            u1d: u.reduced_to_1d(params),
            chi_aa,
            chi_bb,
            chi_ab,
            chi: chi_aa + chi_bb - 2.0 * chi_ab,
            chi_minus: chi_aa - chi_bb,
            eta,
            omega,
        })
    }

    /// Both components in the same real profile `psi` (any normalisation).
    pub fn from_shared_profile(
        params: &PhysicalParams,
        case: &ScatteringCase,
        grid: &SpatialGrid,
        psi: &[f64],
        omega: f64,
    ) -> Result<Self> {
        grid.check_len(psi.len(), "profile")?;
        let norm = grid.integrate(&psi.iter().map(|p| p * p).collect::<Vec<_>>()).sqrt();
        if norm == 0.0 {
            return Err(invalid("profile has zero norm"));
        }
        let u: Vec<Complex64> = psi.iter().map(|p| Complex64::new(p / norm, 0.0)).collect();
        Self::from_modes(params, case, grid, &u, &u, omega)
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }
}
