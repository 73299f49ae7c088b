//! Spin moments, squeezing, quantum Fisher information and phase sensitivity.
//!
//! Stochastic symbols follow j_x = Re(α*β), j_y = −Im(α*β), j_z = (|α|²−|β|²)/2, summed
//! over grid points for fields. Trajectory averages are symmetrically ordered; with
//! M modes per component the quantum moments are recovered by
//! Var(J_i) = Var(j_i) − M/8 and ⟨N̂⟩ = E[n_a + n_b] − M. Covariances between
//! different components and first moments need no correction.

use serde::{Deserialize, Serialize};

use crate::accum::{AccumulatorSeries, MomentAccumulator, Symbol};
use crate::error::{invalid, Error, Result};
use crate::grid::SpatialGrid;

/// First and second moments of (J_x, J_y, J_z) at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinMoments {
    pub time: f64,
    pub mean_j: [f64; 3],
    /// Symmetrised covariance ½⟨{ΔJ_i, ΔJ_j}⟩.
    pub cov_j: [[f64; 3]; 3],
    pub n_mean: f64,
    /// Present for stochastic sources only.
    pub errors: Option<MomentErrors>,
}

/// Standard errors of a stochastic [`SpinMoments`] entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub mean_j: [f64; 3],
    pub cov_j: [[f64; 3]; 3],
    pub n_mean: f64,
    /// Estimator covariance of (⟨J_x⟩, Var J_y, Var J_z, Cov(J_y,J_z)).
    pub metrology_cov: [[f64; 4]; 4],
}

impl SpinMoments {
    pub fn var(&self, i: usize) -> f64 {
        self.cov_j[i][i]
    }

    /// Standard error of `cov_j[i][j]`, zero for exact sources.
    pub fn se_cov(&self, i: usize, j: usize) -> f64 {
        self.errors.as_ref().map_or(0.0, |e| e.cov_j[i][j])
    }

    pub fn se_mean(&self, i: usize) -> f64 {
        self.errors.as_ref().map_or(0.0, |e| e.mean_j[i])
    }

    /// Largest eigenvalue of the full 3×3 covariance.
    pub fn max_variance(&self) -> f64 {
        let m = nalgebra::Matrix3::from_fn(|i, j| self.cov_j[i][j]);
        nalgebra::SymmetricEigen::new(m).eigenvalues.max()
    }
}

/// Quantum moments from the accumulated symbols at output `time_index`.
pub fn spin_moments_from_accumulators(series: &AccumulatorSeries, time_index: usize) -> Result<SpinMoments> {
    if time_index >= series.times().len() {
        return Err(invalid(format!("time index {time_index} out of range")));
    }
    let total = series.total(time_index);
    let n = total.count();
    if n < 2 {
        return Err(invalid("at least two trajectories are required"));
    }
    let m = series.n_modes() as f64;
    let raw = |i: usize, j: usize| total.covariance(i, j);
    let mean = total.mean();

    let mut cov_j = [[0.0; 3]; 3];
    for (i, row) in cov_j.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = raw(i, j) - if i == j { m / 8.0 } else { 0.0 };
        }
    }
    let na = Symbol::Na as usize;
    let nb = Symbol::Nb as usize;
    let n_mean = mean[na] + mean[nb] - m;

    let nf = n as f64;
    let mut se_mean = [0.0; 3];
    for (i, s) in se_mean.iter_mut().enumerate() {
        *s = (raw(i, i) / nf).sqrt();
    }
    let se_n = ((raw(na, na) + raw(nb, nb) + 2.0 * raw(na, nb)) / nf).sqrt();

    let (se_cov, metrology_cov) = match batch_estimator_covariance(series.batches(time_index)) {
        Some(v) => {
            let mut se = [[0.0; 3]; 3];
            for (i, row) in se.iter_mut().enumerate() {
                for (j, s) in row.iter_mut().enumerate() {
                    let k = 3 + cov_slot(i, j);
                    *s = v[k][k].max(0.0).sqrt();
                }
            }
            let idx = [0, 3 + cov_slot(1, 1), 3 + cov_slot(2, 2), 3 + cov_slot(1, 2)];
            let mut mc = [[0.0; 4]; 4];
            for a in 0..4 {
                for b in 0..4 {
                    mc[a][b] = v[idx[a]][idx[b]];
                }
            }
            (se, mc)
        }
        None => {
            // Normal-theory fallback when there are too few batches.
            let mut se = [[0.0; 3]; 3];
            for (i, row) in se.iter_mut().enumerate() {
                for (j, s) in row.iter_mut().enumerate() {
                    *s = ((raw(i, i) * raw(j, j) + raw(i, j).powi(2)) / (nf - 1.0)).sqrt();
                }
            }
            let mut mc = [[0.0; 4]; 4];
            mc[0][0] = se_mean[0].powi(2);
            mc[1][1] = se[1][1].powi(2);
            mc[2][2] = se[2][2].powi(2);
            mc[3][3] = se[1][2].powi(2);
            (se, mc)
        }
    };

    Ok(SpinMoments {
        time: series.times()[time_index],
        mean_j: [mean[0], mean[1], mean[2]],
        cov_j,
        n_mean,
        errors: Some(MomentErrors {
            mean_j: se_mean,
            cov_j: se_cov,
            n_mean: se_n,
            metrology_cov,
        }),
    })
}

fn cov_slot(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        _ => 5,
    }
}

/// Covariance of the count-weighted batch estimates of
/// (mean x, y, z; cov xx, yy, zz, xy, xz, yz).
fn batch_estimator_covariance(batches: &[MomentAccumulator]) -> Option<[[f64; 9]; 9]> {
    let estimates: Vec<(f64, [f64; 9])> = batches
        .iter()
        .filter(|b| b.count() >= 2)
        .map(|b| {
            let m = b.mean();
            let v = [
                m[0],
                m[1],
                m[2],
                b.covariance(0, 0),
                b.covariance(1, 1),
                b.covariance(2, 2),
                b.covariance(0, 1),
                b.covariance(0, 2),
                b.covariance(1, 2),
            ];
            (b.count() as f64, v)
        })
        .collect();
    let k = estimates.len();
    if k < 2 {
        return None;
    }
    let w_sum: f64 = estimates.iter().map(|(w, _)| w).sum();
    let mut centre = [0.0; 9];
    for (w, v) in &estimates {
        for a in 0..9 {
            centre[a] += w * v[a] / w_sum;
        }
    }
    let mut out = [[0.0; 9]; 9];
    for (w, v) in &estimates {
        for a in 0..9 {
            for b in 0..9 {
                out[a][b] += w * w * (v[a] - centre[a]) * (v[b] - centre[b]);
            }
        }
    }
    let scale = k as f64 / ((k - 1) as f64 * w_sum * w_sum);
    for row in out.iter_mut() {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    Some(out)
}

/// Two-mode ensemble moments (one mode per component).
pub fn spin_moments_from_two_mode(series: &AccumulatorSeries, time_index: usize) -> Result<SpinMoments> {
    if series.n_modes() != 1 {
        return Err(invalid("two-mode accumulators must have exactly one mode per component"));
    }
    spin_moments_from_accumulators(series, time_index)
}

/// Field ensemble moments; the accumulators must come from `grid`.
pub fn spin_moments_from_fields(series: &AccumulatorSeries, grid: &SpatialGrid, time_index: usize) -> Result<SpinMoments> {
    if series.n_modes() != grid.n_points() {
        return Err(invalid(format!(
            "accumulators carry {} modes but the grid has {} points",
            series.n_modes(),
            grid.n_points()
        )));
    }
    spin_moments_from_accumulators(series, time_index)
}

/// Corrected mean populations (N_a, N_b) with standard errors.
pub fn component_populations(series: &AccumulatorSeries, time_index: usize) -> ([f64; 2], [f64; 2]) {
    let total = series.total(time_index);
    let half = series.n_modes() as f64 / 2.0;
    let n = total.count() as f64;
    let (a, b) = (Symbol::Na as usize, Symbol::Nb as usize);
    (
        [total.mean()[a] - half, total.mean()[b] - half],
        [(total.covariance(a, a) / n).sqrt(), (total.covariance(b, b) / n).sqrt()],
    )
}

/// Ensemble mean of the per-trajectory overlap with its standard error.
pub fn mean_overlap(series: &AccumulatorSeries, time_index: usize) -> (f64, f64) {
    let total = series.total(time_index);
    let k = Symbol::Overlap as usize;
    (total.mean()[k], (total.covariance(k, k) / total.count() as f64).sqrt())
}

struct YzEigen {
    lambda_min: f64,
    lambda_max: f64,
    theta_min: f64,
    theta_max: f64,
    degenerate: bool,
    /// Gradients of (λ_min, λ_max) with respect to (Var y, Var z, Cov yz).
    grad_min: [f64; 3],
    grad_max: [f64; 3],
}

fn yz_eigen(m: &SpinMoments) -> YzEigen {
    let vyy = m.cov_j[1][1];
    let vzz = m.cov_j[2][2];
    let cyz = m.cov_j[1][2];
    let mid = 0.5 * (vyy + vzz);
    let half_diff = 0.5 * (vyy - vzz);
    let d = half_diff.hypot(cyz);
    let degenerate = d <= 1e-12 * mid.abs().max(f64::MIN_POSITIVE);
    // Var(J_z cosθ + J_y sinθ) = mid − half_diff cos2θ + cyz sin2θ
    // Var(J_y cosθ + J_z sinθ) = mid + half_diff cos2θ + cyz sin2θ
    let (theta_min, theta_max, dy, dc) = if degenerate {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (
            0.5 * (-cyz).atan2(half_diff),
            0.5 * cyz.atan2(half_diff),
            half_diff / (2.0 * d),
            cyz / d,
        )
    };
    YzEigen {
        lambda_min: mid - d,
        lambda_max: mid + d,
        theta_min,
        theta_max,
        degenerate,
        grad_min: [0.5 - dy, 0.5 + dy, -dc],
        grad_max: [0.5 + dy, 0.5 - dy, dc],
    }
}

/// Wineland parameter ξ = √(N Var_min / ⟨J_x⟩²) and the minimising angle of
/// J_z cosθ + J_y sinθ.
pub fn squeezing_parameter(m: &SpinMoments) -> Result<(f64, f64)> {
    let e = yz_eigen(m);
    let jx = m.mean_j[0];
    let resolution = match &m.errors {
        Some(err) => 3.0 * err.mean_j[0],
        None => 1e-12 * m.n_mean.abs().max(1.0),
    };
    if jx.abs() <= resolution || e.lambda_min <= 0.0 {
        return Err(Error::UndefinedSqueezing { mean_jx: jx });
    }
    Ok(((m.n_mean * e.lambda_min).sqrt() / jx.abs(), e.theta_min))
}

/// F_Q = 4 max_θ Var(J_y cosθ + J_z sinθ) and the maximising angle.
pub fn qfi(m: &SpinMoments) -> (f64, f64) {
    let e = yz_eigen(m);
    (4.0 * e.lambda_max.max(0.0), e.theta_max)
}

/// (Δφ_ξ, Δφ_QFI) = (ξ/√N, 1/√F_Q).
pub fn phase_sensitivity(xi: f64, qfi: f64, n_atoms: f64) -> Result<(f64, f64)> {
    if !(n_atoms >= 1.0) {
        return Err(invalid(format!("atom number must be at least 1, got {n_atoms}")));
    }
    Ok((xi / n_atoms.sqrt(), 1.0 / qfi.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetrologyRecord {
    pub time: f64,
    /// `None` when ⟨J_x⟩ is consistent with zero.
    pub xi: Option<f64>,
    pub theta_min: Option<f64>,
    pub qfi: f64,
    pub theta_max: f64,
    pub delta_phi_squeezing: Option<f64>,
    pub delta_phi_qfi: f64,
    /// Isotropic (y,z) covariance: both angles are reported as 0.
    pub degenerate: bool,
    pub se_xi: Option<f64>,
    pub se_qfi: Option<f64>,
}

pub fn metrology(m: &SpinMoments) -> MetrologyRecord {
    let e = yz_eigen(m);
    let (qfi_value, theta_max) = qfi(m);
    let squeezing = squeezing_parameter(m).ok();
    let jx = m.mean_j[0];

    let (se_xi, se_qfi) = match &m.errors {
        Some(err) => {
            let quad = |g: &[f64; 4]| -> f64 {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        s += g[a] * err.metrology_cov[a][b] * g[b];
                    }
                }
                s.max(0.0).sqrt()
            };
            let gq = [0.0, 4.0 * e.grad_max[0], 4.0 * e.grad_max[1], 4.0 * e.grad_max[2]];
            let se_xi = squeezing.map(|(xi, _)| {
                let k = xi / (2.0 * e.lambda_min);
                quad(&[-xi / jx, k * e.grad_min[0], k * e.grad_min[1], k * e.grad_min[2]])
            });
            (se_xi, Some(quad(&gq)))
        }
        None => (None, None),
    };

    let n = m.n_mean.max(1.0);
    MetrologyRecord {
        time: m.time,
        xi: squeezing.map(|s| s.0),
        theta_min: squeezing.map(|s| s.1),
        qfi: qfi_value,
        theta_max,
        delta_phi_squeezing: squeezing.map(|s| s.0 / n.sqrt()),
        delta_phi_qfi: 1.0 / qfi_value.sqrt(),
        degenerate: e.degenerate,
        se_xi,
        se_qfi,
    }
}
