//! Effective χ from multimode Ω = 0 runs, and the Ω-fraction scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dicke::{coherent_oat_moments, exact_moment_series, HamiltonianParams};
use crate::error::{invalid, Error, Result};
use crate::multimode::{run_ensemble, OmegaPolicy, TwEnsembleConfig};
use crate::observables::{spin_moments_from_fields, SpinMoments};

/// Single-mode model the multimode variance is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OatReference {
    /// Coherent two-mode input with Poissonian total number (same statistics as the
    /// Wigner initial state).
    #[default]
    CoherentInput,
    /// Fixed-N coherent spin state, N rounded to the nearest integer.
    FixedN,
}

/// Initial collective spin of the run being fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OatStart {
    pub n_atoms: f64,
    /// Polar angle of the mean spin from +z.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiFit {
    pub chi_hat: f64,
    /// Σ_t [log Var_mm − log Var_sm]² at χ_hat.
    pub fit_residual: f64,
    pub time_window: (f64, f64),
    pub points: usize,
    pub reference: OatReference,
}

/// Var(J_y) of the single-mode OAT model at `chi`, with the linear J_z term chosen to
/// cancel the mean precession of a tilted start.
pub fn reference_variance(chi: f64, start: OatStart, reference: OatReference, times: &[f64]) -> Result<Vec<f64>> {
    let hp = HamiltonianParams {
        chi,
        chi_minus: 0.0,
        omega: 0.0,
        detuning: -chi * start.n_atoms * start.theta.cos(),
    };
    let m = match reference {
        OatReference::CoherentInput => coherent_oat_moments(start.n_atoms, hp, start.theta, 0.0, times)?,
        OatReference::FixedN => {
            let n = start.n_atoms.round();
            if n < 1.0 {
                return Err(invalid("fixed-N reference needs at least one atom"));
            }
            let hp = HamiltonianParams {
                detuning: -chi * n * start.theta.cos(),
                ..hp
            };
            exact_moment_series(n as usize, hp, start.theta, 0.0, times)?
        }
    };
    Ok(m.iter().map(|m| m.var(1)).collect())
}

/// Early-growth window: indices up to the first time Var(J_y) reaches N²/16 (all of
/// the series if it never does).
pub fn growth_window(moments: &[SpinMoments], n_atoms: f64) -> usize {
    let target = n_atoms * n_atoms / 16.0;
    moments
        .iter()
        .position(|m| m.var(1) >= target)
        .map_or(moments.len(), |k| k + 1)
}

fn check_growth(window: &[SpinMoments]) -> Result<()> {
    if window.len() < 3 {
        return Err(Error::Fit(format!("only {} points in the growth window", window.len())));
    }
    for w in window.windows(2) {
        let tol = 3.0 * (w[0].se_cov(1, 1).powi(2) + w[1].se_cov(1, 1).powi(2)).sqrt() + 1e-12 * w[0].var(1).abs();
        if w[1].var(1) < w[0].var(1) - tol {
            return Err(Error::Fit(format!(
                "Var(J_y) decreases from {:.4e} to {:.4e} between t = {} and {}; no OAT-like growth",
                w[0].var(1),
                w[1].var(1),
                w[0].time,
                w[1].time
            )));
        }
    }
    let (first, last) = (window[0].var(1), window[window.len() - 1].var(1));
    if !(first > 0.0 && last > 2.0 * first) {
        return Err(Error::Fit(format!(
            "Var(J_y) grows only from {first:.4e} to {last:.4e}; no OAT-like growth"
        )));
    }
    Ok(())
}

/// Fit χ by matching log Var(J_y) of an Ω = 0 run to the single-mode model over the
/// early-growth window. `chi_estimate` sets the search bracket ×[0.1, 10].
pub fn fit_chi(moments: &[SpinMoments], start: OatStart, chi_estimate: f64, reference: OatReference) -> Result<ChiFit> {
    if !(chi_estimate > 0.0 && chi_estimate.is_finite()) {
        return Err(invalid("chi estimate must be positive"));
    }
    if !(start.n_atoms > 0.0) {
        return Err(invalid("n_atoms must be positive"));
    }
    let k = growth_window(moments, start.n_atoms);
    let window = &moments[..k];
    check_growth(window)?;
    let times: Vec<f64> = window.iter().map(|m| m.time).collect();
    let log_mm: Vec<f64> = window.iter().map(|m| m.var(1).ln()).collect();

    let objective = |log_chi: f64| -> Result<f64> {
        let v = reference_variance(log_chi.exp(), start, reference, &times)?;
        Ok(log_mm
            .iter()
            .zip(&v)
            .map(|(a, b)| if *b > 0.0 { (a - b.ln()).powi(2) } else { f64::INFINITY })
            .sum())
    };

    // coarse log grid first, so the golden section starts inside the right basin
    let (lo, hi) = ((0.1 * chi_estimate).ln(), (10.0 * chi_estimate).ln());
    const COARSE: usize = 41;
    let grid: Vec<f64> = (0..COARSE).map(|i| lo + (hi - lo) * i as f64 / (COARSE - 1) as f64).collect();
    let values = grid.iter().map(|&x| objective(x)).collect::<Result<Vec<_>>>()?;
    let best = (0..COARSE).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(COARSE - 1)]);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while b - a > 1e-7 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok(ChiFit {
        chi_hat: x.exp(),
        fit_residual: objective(x)?,
        time_window: (times[0], times[times.len() - 1]),
        points: times.len(),
        reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaScanResult {
    pub fractions: Vec<f64>,
    /// Peak over the window of max_i Var(J_i), per fraction.
    pub peak_variance: Vec<f64>,
    /// Standard error of each peak variance.
    pub peak_se: Vec<f64>,
    pub peak_time: Vec<f64>,
    pub best_fraction: f64,
}

/// Run the multimode ensemble at Ω = f·χ_hat·N/2 for each fraction and pick the one
/// with the largest peak spin variance over `base.t_grid`.
pub fn scan_omega(base: &TwEnsembleConfig, chi_hat: f64, fractions: &[f64]) -> Result<OmegaScanResult> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(invalid("fractions must be a nonempty list of positive numbers"));
    }
    if !(chi_hat > 0.0 && chi_hat.is_finite()) {
        return Err(invalid("chi_hat must be positive"));
    }
    let peaks: Vec<(f64, f64, f64)> = fractions
        .par_iter()
        .map(|&f| {
            let wrap = |e: Error| Error::ScanPoint {
                fraction: f,
                source: Box::new(e),
            };
            let mut cfg = base.clone();
            cfg.omega = OmegaPolicy::Fraction(f);
            cfg.chi = Some(chi_hat);
            let run = run_ensemble(&cfg).map_err(wrap)?;
            let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
            for k in 0..cfg.t_grid.len() {
                let m = spin_moments_from_fields(&run.series, &cfg.grid, k).map_err(wrap)?;
                let i = (0..3).max_by(|&a, &b| m.var(a).total_cmp(&m.var(b))).unwrap_or(0);
                if m.var(i) > best.0 {
                    best = (m.var(i), m.se_cov(i, i), m.time);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let best = (0..fractions.len())
        .max_by(|&a, &b| peaks[a].0.total_cmp(&peaks[b].0))
        .unwrap_or(0);
    Ok(OmegaScanResult {
        fractions: fractions.to_vec(),
        peak_variance: peaks.iter().map(|p| p.0).collect(),
        peak_se: peaks.iter().map(|p| p.1).collect(),
        peak_time: peaks.iter().map(|p| p.2).collect(),
        best_fraction: fractions[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicke::coherent_oat_moments;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn synthetic(chi: f64, n: f64, theta: f64, t_max: f64) -> Vec<SpinMoments> {
        let times: Vec<f64> = (0..=40).map(|k| t_max * k as f64 / 40.0).collect();
        let hp = HamiltonianParams {
            chi,
            chi_minus: 0.0,
            omega: 0.0,
            detuning: -chi * n * theta.cos(),
        };
        coherent_oat_moments(n, hp, theta, 0.0, &times).unwrap()
    }

    #[test]
    fn recovers_generating_chi() {
        let n = 1e4;
        let m = synthetic(2e-3, n, FRAC_PI_2, 4.0);
        let start = OatStart { n_atoms: n, theta: FRAC_PI_2 };
        let fit = fit_chi(&m, start, 3e-3, OatReference::CoherentInput).unwrap();
        assert!((fit.chi_hat / 2e-3 - 1.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.fit_residual < 1e-10);
        assert!(fit.points < m.len());
        // fixed-N reference differs from the Poissonian one only at O(1/N)
        let fit = fit_chi(&m, start, 3e-3, OatReference::FixedN).unwrap();
        assert!((fit.chi_hat / 2e-3 - 1.0).abs() < 1e-2, "{fit:?}");
    }

    #[test]
    fn tilted_start_is_fitted() {
        let n = 1e4;
        let theta = (1.0f64 / 3.0).acos();
        let m = synthetic(5e-3, n, theta, 2.0);
        let fit = fit_chi(&m, OatStart { n_atoms: n, theta }, 1e-3, OatReference::CoherentInput).unwrap();
        assert!((fit.chi_hat / 5e-3 - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn flat_variance_is_a_fit_failure() {
        let n = 1e4;
        let m = synthetic(0.0, n, FRAC_PI_2, 1.0);
        let start = OatStart { n_atoms: n, theta: FRAC_PI_2 };
        assert!(matches!(fit_chi(&m, start, 1e-3, OatReference::CoherentInput), Err(Error::Fit(_))));
        let mut m = synthetic(2e-3, n, FRAC_PI_2, 3.0);
        m[5].cov_j[1][1] = 0.5 * m[4].cov_j[1][1];
        assert!(matches!(fit_chi(&m, start, 3e-3, OatReference::CoherentInput), Err(Error::Fit(_))));
    }

    #[test]
    fn growth_window_stops_at_threshold() {
        let n = 1e4;
        let m = synthetic(2e-3, n, FRAC_PI_2, 3.0);
        let k = growth_window(&m, n);
        assert!(m[k - 1].var(1) >= n * n / 16.0);
        assert!(m[k - 2].var(1) < n * n / 16.0);
    }

    #[test]
    fn scan_rejects_bad_fractions() {
        let p = crate::params::PhysicalParams::default();
        let case = crate::params::ScatteringCase::case_i(&p);
        let c = TwEnsembleConfig::new(p, case, 1e4, 0, vec![0.0]).unwrap();
        assert!(scan_omega(&c, 1e-3, &[]).is_err());
        assert!(scan_omega(&c, 1e-3, &[0.5, -1.0]).is_err());
    }

    #[test]
    fn singleton_scan_returns_its_fraction() {
        let p = crate::params::PhysicalParams::default();
        let case = crate::params::ScatteringCase::case_i(&p);
        let mut c = TwEnsembleConfig::new(p, case, 1e4, 0, vec![0.0, 0.01]).unwrap();
        c.grid = crate::multimode::default_grid(&p, &c.case, 1e4, 16).unwrap();
        c.n_traj = 4;
        c.step.dt = 2e-5;
        c.step.max_kinetic_phase = 10.0;
        let r = scan_omega(&c, 2e-3, &[1.0]).unwrap();
        assert_eq!(r.best_fraction, 1.0);
        assert_eq!(r.peak_variance.len(), 1);
    }

    #[test]
    fn scan_errors_carry_the_fraction() {
        let p = crate::params::PhysicalParams::default();
        let case = crate::params::ScatteringCase::case_i(&p);
        let mut c = TwEnsembleConfig::new(p, case, 1e4, 0, vec![0.0, 0.01]).unwrap();
        c.grid = crate::multimode::default_grid(&p, &c.case, 1e4, 16).unwrap();
        c.n_traj = 4;
        c.step.dt = -1.0;
        match scan_omega(&c, 2e-3, &[0.85]) {
            Err(Error::ScanPoint { fraction, .. }) => assert_eq!(fraction, 0.85),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fit_scales_with_chi(chi in 5e-4f64..5e-2, scale in 1.5f64..3.0) {
            let n = 1e4;
            let start = OatStart { n_atoms: n, theta: FRAC_PI_2 };
            // same χt range for both fits
            let t_max = 6e-3 / chi;
            let a = fit_chi(&synthetic(chi, n, FRAC_PI_2, t_max), start, chi * 2.0, OatReference::CoherentInput).unwrap();
            let b = fit_chi(&synthetic(scale * chi, n, FRAC_PI_2, t_max / scale), start, chi * 2.0, OatReference::CoherentInput).unwrap();
            prop_assert!((b.chi_hat / a.chi_hat / scale - 1.0).abs() < 1e-2);
        }
    }
}
