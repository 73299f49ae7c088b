//! Acceptance suite: one check per numbered criterion, shared by `tnt verify` and the
//! integration tests.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use tnt_core::calibration::{fit_chi, reference_variance, scan_omega, ChiFit, OatReference, OatStart};
use tnt_core::dicke::{coherent_input_moments, css_state, exact_moment_series, q_function, HamiltonianParams, SingleModeHamiltonian, SpectralPropagator};
use tnt_core::gpe::{
    density_overlap, evolve_gpe, ground_state, rms_width, thomas_fermi_density, FieldCouplings, FieldPair, Ham1D,
    SplitStepper, StepPolicy, Subtraction,
};
use tnt_core::multimode::{
    default_grid, run_ensemble, sample_wigner_initial, OmegaPolicy, OmegaRPolicy, SplitPolicy, TwEnsembleConfig,
};
use tnt_core::observables::{metrology, spin_moments_from_fields, spin_moments_from_two_mode, SpinMoments};
use tnt_core::params::{PhysicalParams, ScatteringCase};
use tnt_core::two_mode::{sample_initial_two_mode, two_mode_moment_series, BeamSplitter};
use tnt_core::SpatialGrid;

use crate::config::parse_config;
use crate::output::MANIFEST_NAME;
use crate::run::run_experiment;

pub const ALL: [u32; 14] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

/// Multimode acceptance runs use a reduced atom number and grid (see the README).
pub const MM_ATOMS: f64 = 1e4;
pub const MM_POINTS: usize = 64;
pub const MM_TRAJ: usize = 1000;
pub const MM_DT: f64 = 2e-5;
pub const MM_SEED: u64 = 20_240_601;
/// Window for the mean-field case comparisons, s.
pub const GPE_WINDOW: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} | {} | {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

type Check = std::result::Result<(bool, String), String>;

fn title(id: u32) -> &'static str {
    match id {
        1 => "exact OAT analytic oracle",
        2 => "two-mode TW against exact moments",
        3 => "OAT variance plateau",
        4 => "TNT speedup to N^2/8",
        5 => "squeezing comparison",
        6 => "QFI milestones",
        7 => "Q-function snapshots",
        8 => "Wigner sampling statistics",
        9 => "GPE correctness",
        10 => "case behaviour",
        11 => "multimode against single-mode (Case I)",
        12 => "Omega scan (Case II)",
        13 => "chi calibration",
        14 => "determinism",
        _ => "unknown",
    }
}

/// Run criterion `id`; errors become failures carrying the message.
pub fn criterion(id: u32) -> Outcome {
    let r: Check = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        11 => c11(),
        12 => c12(),
        13 => c13(),
        14 => c14(),
        _ => Err(format!("no criterion {id}")),
    };
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        title: title(id),
        passed,
        detail,
    }
}

pub fn run_all(mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    ALL.iter()
        .map(|&id| {
            let o = criterion(id);
            report(&o);
            o
        })
        .collect()
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1() -> Check {
    let mut worst = 0.0f64;
    let times: Vec<f64> = (0..=30).map(|k| 0.01 * k as f64).collect();
    for n in [2usize, 10, 100] {
        let m = exact_moment_series(n, HamiltonianParams::oat(1.0), FRAC_PI_2, 0.0, &times).map_err(s)?;
        for (mi, &t) in m.iter().zip(&times) {
            let exact = n as f64 / 2.0 * t.cos().powi(n as i32 - 1);
            worst = worst.max((mi.mean_j[0] - exact).abs() / exact.abs());
        }
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e} (tolerance 1e-8)")))
}

fn c2() -> Check {
    let n = 100.0;
    let times: Vec<f64> = (0..=10).map(|k| 0.01 * k as f64).collect();
    let e = sample_initial_two_mode(n, 10_000, 11).map_err(s)?;
    let hp = HamiltonianParams::oat(1.0);
    let series = two_mode_moment_series(&e, hp, &times).map_err(s)?;
    // coherent input: the exact solution averaged over the Poissonian total number
    let exact = coherent_input_moments(n, hp, FRAC_PI_2, 0.0, &times).map_err(s)?;
    let mut worst = (0.0f64, String::new());
    for (k, ex) in exact.iter().enumerate() {
        let m = spin_moments_from_two_mode(&series, k).map_err(s)?;
        let mut check = |name: String, a: f64, b: f64, se: f64| {
            let z = (a - b).abs() / se;
            if z > worst.0 {
                worst = (z, name);
            }
        };
        for i in 0..3 {
            check(format!("<J{i}> at chi t = {}", times[k]), m.mean_j[i], ex.mean_j[i], m.se_mean(i));
            for j in i..3 {
                check(format!("cov{i}{j} at chi t = {}", times[k]), m.cov_j[i][j], ex.cov_j[i][j], m.se_cov(i, j));
            }
        }
    }
    Ok((
        worst.0 <= 3.0,
        format!("largest deviation {:.2} se ({}) over 9 moments x 11 times", worst.0, worst.1),
    ))
}

fn c3() -> Check {
    let n = 1000usize;
    let times: Vec<f64> = (0..=8).map(|k| 0.5 + 0.1 * k as f64).collect();
    let m = exact_moment_series(n, HamiltonianParams::oat(1.0), FRAC_PI_2, 0.0, &times).map_err(s)?;
    let target = (n * n) as f64 / 8.0;
    let ratios: Vec<f64> = m.iter().map(|m| metrology(m).qfi / 4.0 / target).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((
        lo >= 0.9 && hi <= 1.1,
        format!("Var(J_theta_max)/(N^2/8) in [{lo:.3}, {hi:.3}] over chi t in [0.5, 1.3]"),
    ))
}

/// Single-mode TW OAT and TNT series at N = 1e5 (χ = 1) shared by criteria 4 to 6.
struct LargeN {
    n: f64,
    oat: Vec<SpinMoments>,
    tnt: Vec<SpinMoments>,
}

fn large_n() -> &'static std::result::Result<LargeN, String> {
    static CELL: OnceLock<std::result::Result<LargeN, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let n = 1e5;
        let e = sample_initial_two_mode(n, 2000, 7).map_err(s)?;
        let tnt_times: Vec<f64> = (0..=1500).map(|k| 3e-4 * k as f64 / 1500.0).collect();
        let mut oat_times: Vec<f64> = (0..=3000).map(|k| 3e-2 * k as f64 / 3000.0).collect();
        oat_times.extend_from_slice(&tnt_times);
        oat_times.sort_by(f64::total_cmp);
        oat_times.dedup();
        let moments = |hp: HamiltonianParams, times: &[f64]| -> std::result::Result<Vec<SpinMoments>, String> {
            let series = two_mode_moment_series(&e, hp, times).map_err(s)?;
            (0..times.len()).map(|k| spin_moments_from_two_mode(&series, k).map_err(s)).collect()
        };
        Ok(LargeN {
            n,
            oat: moments(HamiltonianParams::oat(1.0), &oat_times)?,
            tnt: moments(HamiltonianParams::tnt(1.0, n), &tnt_times)?,
        })
    })
}

/// First time `f` reaches `level`, linearly interpolated.
fn first_crossing(m: &[SpinMoments], level: f64, f: impl Fn(&SpinMoments) -> f64) -> Option<f64> {
    let v: Vec<f64> = m.iter().map(&f).collect();
    (1..m.len()).find(|&k| v[k] >= level).map(|k| {
        let (t0, t1) = (m[k - 1].time, m[k].time);
        t0 + (level - v[k - 1]) / (v[k] - v[k - 1]) * (t1 - t0)
    })
}

fn interpolate(m: &[SpinMoments], t: f64, f: impl Fn(&SpinMoments) -> f64) -> f64 {
    let k = m.partition_point(|x| x.time < t).clamp(1, m.len() - 1);
    let (a, b) = (&m[k - 1], &m[k]);
    f(a) + (t - a.time) / (b.time - a.time) * (f(b) - f(a))
}

fn qfi_of(m: &SpinMoments) -> f64 {
    metrology(m).qfi
}

fn xi_min(m: &[SpinMoments]) -> Option<(f64, f64)> {
    m.iter()
        .filter_map(|x| metrology(x).xi.map(|v| (v, x.time)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn c4() -> Check {
    let d = large_n().as_ref().map_err(Clone::clone)?;
    let level = d.n * d.n / 8.0;
    let t_oat = first_crossing(&d.oat, level, |m| qfi_of(m) / 4.0).ok_or("OAT never reaches N^2/8")?;
    let t_tnt = first_crossing(&d.tnt, level, |m| qfi_of(m) / 4.0).ok_or("TNT never reaches N^2/8")?;
    let ratio = t_oat / t_tnt;
    // OAT only approaches the level from below on its plateau; the largest component
    // variance is reported alongside for comparison
    let comp = |m: &SpinMoments| m.var(0).max(m.var(1)).max(m.var(2));
    let comp_ratio = first_crossing(&d.oat, level, comp).zip(first_crossing(&d.tnt, level, comp)).map(|(a, b)| a / b);
    Ok((
        (ratio / 40.0 - 1.0).abs() <= 0.25,
        format!(
            "t_OAT/t_TNT = {ratio:.1} (chi t_OAT = {t_oat:.3e}, chi t_TNT = {t_tnt:.3e}); target 40 +/- 25%; largest component variance gives {}",
            comp_ratio.map_or("no crossing".into(), |r| format!("{r:.1}"))
        ),
    ))
}

fn c5() -> Check {
    let d = large_n().as_ref().map_err(Clone::clone)?;
    let (xi_tnt, t_tnt) = xi_min(&d.tnt).ok_or("no defined TNT squeezing")?;
    let (_, t_oat) = xi_min(&d.oat).ok_or("no defined OAT squeezing")?;
    let xi_oat = interpolate(&d.oat, t_tnt, |m| metrology(m).xi.unwrap_or(f64::NAN));
    let ratio = xi_oat / xi_tnt;
    let time_ok = t_oat > 2.0 * t_tnt;
    let ratio_ok = (ratio / 2.3 - 1.0).abs() <= 0.15;
    Ok((
        time_ok && ratio_ok,
        format!(
            "t_min OAT/TNT = {:.2} (need > 2); xi_OAT/xi_TNT at TNT optimum = {ratio:.3} (target 2.3 +/- 15%)",
            t_oat / t_tnt
        ),
    ))
}

fn c6() -> Check {
    let d = large_n().as_ref().map_err(Clone::clone)?;
    let level = d.n * d.n / 2.0;
    let t_oat = first_crossing(&d.oat, level, qfi_of).ok_or("OAT never reaches F_Q = N^2/2")?;
    let t_tnt = first_crossing(&d.tnt, level, qfi_of).ok_or("TNT never reaches F_Q = N^2/2")?;
    let speed = t_oat / t_tnt;
    let f_ratio = level / interpolate(&d.oat, t_tnt, qfi_of);
    let speed_ok = (speed / 40.0 - 1.0).abs() <= 0.25;
    let ratio_ok = (f_ratio / 337.0 - 1.0).abs() <= 0.2;
    Ok((
        speed_ok && ratio_ok,
        format!("speedup {speed:.1} (target 40 +/- 25%); F_Q(TNT)/F_Q(OAT) = {f_ratio:.0} (target 337 +/- 20%)"),
    ))
}

/// Q-weighted variance of the azimuth about the mean spin direction (φ = 0).
fn azimuthal_variance(n: usize, hp: HamiltonianParams, t: f64) -> std::result::Result<f64, String> {
    let thetas: Vec<f64> = (0..=90).map(|i| PI * i as f64 / 90.0).collect();
    let phis: Vec<f64> = (0..180).map(|j| -PI + 2.0 * PI * j as f64 / 180.0).collect();
    let h = SingleModeHamiltonian::new(hp, n).map_err(s)?;
    let psi = SpectralPropagator::new(&h).map_err(s)?.evolve(&css_state(n, FRAC_PI_2, 0.0).map_err(s)?, t).map_err(s)?;
    let q = q_function(&psi, &thetas, &phis).map_err(s)?;
    let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, th) in thetas.iter().enumerate() {
        for (j, ph) in phis.iter().enumerate() {
            let weight = q[i][j] * th.sin();
            w += weight;
            m1 += weight * ph;
            m2 += weight * ph * ph;
        }
    }
    Ok(m2 / w - (m1 / w).powi(2))
}

fn c7() -> Check {
    let n = 100;
    let oat = HamiltonianParams::oat(1.0);
    let v0 = azimuthal_variance(n, oat, 0.0)?;
    let v_oat = azimuthal_variance(n, oat, 0.05)?;
    let v_tnt = azimuthal_variance(n, HamiltonianParams::tnt(1.0, n as f64), 0.02)?;
    Ok((
        v_oat > v0 && v_tnt > v_oat,
        format!("azimuthal variance: t = 0 {v0:.4}, OAT chi t = 0.05 {v_oat:.4}, TNT chi t = 0.02 {v_tnt:.4}"),
    ))
}

fn c8() -> Check {
    let grid = SpatialGrid::new(64, 1e-4).map_err(s)?;
    let n = 10_000;
    let ground = vec![0.0; 64];
    let samples = sample_wigner_initial(&ground, &grid, n, 5).map_err(s)?;
    let expected = 0.5 / grid.spacing();
    let nf = n as f64;
    let stat = |f: &dyn Fn(&FieldPair) -> f64| -> (f64, f64) {
        let v: Vec<f64> = samples.iter().map(f).collect();
        let mean = v.iter().sum::<f64>() / nf;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (mean, (var / nf).sqrt())
    };
    let mut worst = (0.0f64, String::new());
    let mut note = |z: f64, what: String| {
        if z > worst.0 {
            worst = (z, what);
        }
    };
    for p in 0..64 {
        let q = (p + 1) % 64;
        let (m, se) = stat(&|f| f.psi_a[p].norm_sqr());
        note((m - expected).abs() / se, format!("<|psi_a|^2> at point {p}"));
        let (m, se) = stat(&|f| f.psi_b[p].norm_sqr());
        note((m - expected).abs() / se, format!("<|psi_b|^2> at point {p}"));
        for (name, g) in [
            ("Re<psi_a* psi_b>", Box::new(move |f: &FieldPair| (f.psi_a[p].conj() * f.psi_b[p]).re) as Box<dyn Fn(&FieldPair) -> f64>),
            ("Im<psi_a* psi_b>", Box::new(move |f: &FieldPair| (f.psi_a[p].conj() * f.psi_b[p]).im)),
            ("Re<psi_a psi_a>", Box::new(move |f: &FieldPair| (f.psi_a[p] * f.psi_a[p]).re)),
            ("Re<psi_a(x)* psi_a(x')>", Box::new(move |f: &FieldPair| (f.psi_a[p].conj() * f.psi_a[q]).re)),
            ("Re<psi_b(x)* psi_b(x')>", Box::new(move |f: &FieldPair| (f.psi_b[p].conj() * f.psi_b[q]).re)),
        ] {
            let (m, se) = stat(&g);
            note(m.abs() / se, format!("{name} at point {p}"));
        }
    }
    Ok((
        worst.0 <= 5.0,
        format!("largest deviation {:.2} se ({}) at 1e4 samples, 64 points", worst.0, worst.1),
    ))
}

fn case_ground(case: &ScatteringCase, n: f64, n_points: usize) -> std::result::Result<(PhysicalParams, SpatialGrid, Ham1D, FieldCouplings, Vec<f64>), String> {
    let p = PhysicalParams::default();
    let grid = default_grid(&p, case, n, n_points).map_err(s)?;
    let u = case.interaction_strengths(&p).map_err(s)?.reduced_to_1d(&p);
    let g = ground_state(&grid, n, u.aa, &p, 1e-9).map_err(s)?;
    let ham = Ham1D::harmonic(&grid, &p).map_err(s)?;
    Ok((p, grid, ham, FieldCouplings::from_1d(&u, &p, 0.0, 0.0), g.psi))
}

fn c9() -> Check {
    let p = PhysicalParams::default();
    // harmonic-oscillator limit
    let grid = SpatialGrid::new(256, 12.0 * p.oscillator_length()).map_err(s)?;
    let g = ground_state(&grid, 1000.0, 0.0, &p, 1e-10).map_err(s)?;
    let ho_err = (g.energy_per_particle / (0.5 * p.trap_omega_x) - 1.0).abs();
    // Thomas-Fermi limit
    let case = ScatteringCase::case_i(&p);
    let u = case.interaction_strengths(&p).map_err(s)?.reduced_to_1d(&p).aa;
    let n_tf = 1e6;
    let (_, r_tf) = p.thomas_fermi(n_tf, u);
    let grid = SpatialGrid::new(1024, 2.0 * r_tf).map_err(s)?;
    let g = ground_state(&grid, n_tf, u, &p, 1e-8).map_err(s)?;
    let tf = thomas_fermi_density(&Ham1D::harmonic(&grid, &p).map_err(s)?, g.mu, u / p.hbar);
    let (mut num, mut den) = (0.0, 0.0);
    for ((x, psi), t) in grid.positions().iter().zip(&g.psi).zip(&tf) {
        if x.abs() < 0.8 * r_tf {
            num += (psi * psi - t).powi(2);
            den += t * t;
        }
    }
    let tf_err = (num / den).sqrt();
    // real-time evolution at the default settings, split state with Ω and ω_r on
    let (_, grid, ham, mut c, psi) = case_ground(&ScatteringCase::case_ii(&p), 1e5, 512)?;
    let mut f = FieldPair::single_component(&psi);
    f.apply_beamsplitter(&BeamSplitter::symmetric());
    c.omega = 30.0;
    c.omega_r = 5.0;
    let mut st = SplitStepper::new(&ham, c, Subtraction::None, StepPolicy::default()).map_err(s)?;
    let e0 = st.energy(&f);
    let dt = st.dt();
    let mut worst_step = 0.0f64;
    for i in 1..=500 {
        let before = f.total_norm(&grid);
        st.advance_to(&mut f, i as f64 * dt).map_err(s)?;
        worst_step = worst_step.max(((f.total_norm(&grid) - before) / before).abs());
    }
    let window = 0.02;
    let n0 = f.total_norm(&grid);
    let steps = ((window - f.time) / dt).ceil();
    st.advance_to(&mut f, window).map_err(s)?;
    let drift_per_step = ((f.total_norm(&grid) - n0) / n0).abs() / steps;
    let e_err = ((st.energy(&f) - e0) / e0).abs();
    let ok = ho_err <= 1e-6 && tf_err < 0.02 && worst_step <= 1e-10 && drift_per_step <= 1e-10 && e_err <= 1e-7;
    Ok((
        ok,
        format!(
            "HO energy {ho_err:.1e} (1e-6); TF L2 {tf_err:.4} (0.02); norm per step {:.1e} (1e-10); energy over {window} s {e_err:.1e} (1e-7)",
            worst_step.max(drift_per_step)
        ),
    ))
}

struct CaseTrace {
    eta_min: f64,
    /// Relative RMS-width changes (a, b) at every output time.
    widths: Vec<(f64, f64)>,
}

fn case_trace(case: ScatteringCase, splitter: BeamSplitter) -> std::result::Result<CaseTrace, String> {
    let (_, grid, ham, c, psi) = case_ground(&case, 1e5, 512)?;
    let mut f = FieldPair::single_component(&psi);
    f.apply_beamsplitter(&splitter);
    let times: Vec<f64> = (1..=40).map(|k| GPE_WINDOW * k as f64 / 40.0).collect();
    let snaps = evolve_gpe(&f, &ham, c, StepPolicy::default(), &times).map_err(s)?;
    let w0 = (rms_width(&grid, &f.density_a()), rms_width(&grid, &f.density_b()));
    let mut eta_min = density_overlap(&f, &grid).map_err(s)?;
    let mut widths = Vec::new();
    for g in &snaps {
        eta_min = eta_min.min(density_overlap(g, &grid).map_err(s)?);
        widths.push((
            rms_width(&grid, &g.density_a()) / w0.0 - 1.0,
            rms_width(&grid, &g.density_b()) / w0.1 - 1.0,
        ));
    }
    Ok(CaseTrace { eta_min, widths })
}

fn c10() -> Check {
    let p = PhysicalParams::default();
    let sym = BeamSplitter::symmetric();
    let i = case_trace(ScatteringCase::case_i(&p), sym)?;
    let iii = case_trace(ScatteringCase::case_iii(&p), sym)?;
    let ii = case_trace(ScatteringCase::case_ii(&p), sym)?;
    let ratio = tnt_core::params::breathe_together_ratio(&ScatteringCase::case_ii(&p)).ok_or("no breathe-together ratio")?;
    let bt = case_trace(ScatteringCase::case_ii(&p), BeamSplitter::with_ratio(ratio).map_err(s)?)?;
    // separation: the two components breathe in opposite directions
    let sep = ii
        .widths
        .iter()
        .map(|(a, b)| if a * b < 0.0 { a.abs().min(b.abs()) } else { 0.0 })
        .fold(0.0, f64::max);
    let bt_max = bt.widths.iter().map(|(a, b)| a.abs().max(b.abs())).fold(0.0, f64::max);
    let ok = i.eta_min >= 0.99 && iii.eta_min < 0.9 && sep > 0.05 && bt_max <= 0.05;
    Ok((
        ok,
        format!(
            "over {GPE_WINDOW} s: Case I min eta {:.4} (>= 0.99); Case III min eta {:.4} (< 0.9); Case II 50/50 opposite breathing {:.3} (> 0.05); Case II {ratio:.3}:1 max width change {bt_max:.4} (<= 0.05)",
            i.eta_min, iii.eta_min, sep
        ),
    ))
}

fn mm_config(case: ScatteringCase, split: SplitPolicy, omega: OmegaPolicy, chi: Option<f64>, t_grid: Vec<f64>) -> std::result::Result<TwEnsembleConfig, String> {
    let p = PhysicalParams::default();
    let mut c = TwEnsembleConfig::new(p, case, MM_ATOMS, MM_SEED, t_grid).map_err(s)?;
    c.grid = default_grid(&p, &case, MM_ATOMS, MM_POINTS).map_err(s)?;
    c.n_traj = MM_TRAJ;
    c.split = split;
    c.omega = omega;
    c.chi = chi;
    c.omega_r = if split == SplitPolicy::BreatheTogether { OmegaRPolicy::Auto } else { OmegaRPolicy::Off };
    c.step = StepPolicy {
        dt: MM_DT,
        max_kinetic_phase: 2.0,
    };
    Ok(c)
}

struct OatRun {
    moments: Vec<SpinMoments>,
    start: OatStart,
    chi_estimate: f64,
    fit: ChiFit,
}

fn oat_run(case_ii: bool) -> &'static std::result::Result<OatRun, String> {
    static CASE_I: OnceLock<std::result::Result<OatRun, String>> = OnceLock::new();
    static CASE_II: OnceLock<std::result::Result<OatRun, String>> = OnceLock::new();
    let cell = if case_ii { &CASE_II } else { &CASE_I };
    cell.get_or_init(|| {
        let p = PhysicalParams::default();
        let (case, split, t_max) = if case_ii {
            (ScatteringCase::case_ii(&p), SplitPolicy::BreatheTogether, 2.0)
        } else {
            (ScatteringCase::case_i(&p), SplitPolicy::Symmetric, 3.0)
        };
        let times: Vec<f64> = (0..=30).map(|k| t_max * k as f64 / 30.0).collect();
        let cfg = mm_config(case, split, OmegaPolicy::Zero, None, times)?;
        let run = run_ensemble(&cfg).map_err(s)?;
        let moments = (0..cfg.t_grid.len())
            .map(|k| spin_moments_from_fields(&run.series, &cfg.grid, k))
            .collect::<tnt_core::Result<Vec<_>>>()
            .map_err(s)?;
        let start = OatStart {
            n_atoms: MM_ATOMS,
            theta: run.prepared.splitter.mixing_angle,
        };
        let fit = fit_chi(&moments, start, run.prepared.chi_estimate, OatReference::CoherentInput).map_err(s)?;
        Ok(OatRun {
            moments,
            start,
            chi_estimate: run.prepared.chi_estimate,
            fit,
        })
    })
}

fn c11() -> Check {
    let oat = oat_run(false).as_ref().map_err(Clone::clone)?;
    let chi = oat.fit.chi_hat;
    let k = tnt_core::calibration::growth_window(&oat.moments, MM_ATOMS);
    let times: Vec<f64> = oat.moments[..k].iter().map(|m| m.time).collect();
    let model = reference_variance(chi, oat.start, OatReference::CoherentInput, &times).map_err(s)?;
    let dev_oat = oat.moments[..k]
        .iter()
        .zip(&model)
        .map(|(m, v)| (m.var(1) - v).abs() / m.se_cov(1, 1).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    // TNT at Ω = χ_hat N/2 against the two-mode model with the same χ
    let p = PhysicalParams::default();
    let lambda = chi * MM_ATOMS / 2.0;
    let t_grid: Vec<f64> = (0..=30).map(|k| 6.0 / lambda * k as f64 / 30.0).collect();
    let cfg = mm_config(ScatteringCase::case_i(&p), SplitPolicy::Symmetric, OmegaPolicy::Tnt, Some(chi), t_grid.clone())?;
    let run = run_ensemble(&cfg).map_err(s)?;
    let e = sample_initial_two_mode(MM_ATOMS, 10_000, MM_SEED).map_err(s)?;
    let sm = two_mode_moment_series(&e, HamiltonianParams::tnt(chi, MM_ATOMS), &t_grid).map_err(s)?;
    let mut dev_tnt = 0.0f64;
    let mut last = 0.0;
    for k in 0..t_grid.len() {
        let a = spin_moments_from_fields(&run.series, &cfg.grid, k).map_err(s)?;
        let b = spin_moments_from_two_mode(&sm, k).map_err(s)?;
        let se = (a.se_cov(1, 1).powi(2) + b.se_cov(1, 1).powi(2)).sqrt();
        dev_tnt = dev_tnt.max((a.var(1) - b.var(1)).abs() / se);
        last = t_grid[k];
        if b.var(1) >= MM_ATOMS * MM_ATOMS / 16.0 {
            break;
        }
    }
    Ok((
        dev_oat <= 3.0 && dev_tnt <= 3.0,
        format!(
            "chi_hat {chi:.4e} rad/s; OAT max deviation {dev_oat:.2} se over [0, {:.2}] s; TNT max deviation {dev_tnt:.2} se over [0, {last:.3}] s",
            times[times.len() - 1]
        ),
    ))
}

fn c12() -> Check {
    let oat = oat_run(true).as_ref().map_err(Clone::clone)?;
    let chi = oat.fit.chi_hat;
    let p = PhysicalParams::default();
    let lambda = chi * MM_ATOMS / 2.0;
    let t_grid: Vec<f64> = (0..=100).map(|k| 10.0 / lambda * k as f64 / 100.0).collect();
    let base = mm_config(ScatteringCase::case_ii(&p), SplitPolicy::BreatheTogether, OmegaPolicy::Tnt, Some(chi), t_grid)?;
    let r = scan_omega(&base, chi, &[0.7, 0.85, 1.0]).map_err(s)?;
    let table: Vec<String> = (0..3)
        .map(|i| format!("{}: {:.4e} +/- {:.1e}", r.fractions[i], r.peak_variance[i], r.peak_se[i]))
        .collect();
    Ok((
        r.best_fraction == 0.85,
        format!("best fraction {} (target 0.85); peak variance {}", r.best_fraction, table.join(", ")),
    ))
}

fn c13() -> Check {
    // synthetic single-mode data: two-mode TW, OAT, χ* = 2e-3 rad/s
    let chi_star = 2e-3;
    let n = MM_ATOMS;
    let times: Vec<f64> = (0..=30).map(|k| 3.5 * k as f64 / 30.0).collect();
    let e = sample_initial_two_mode(n, 10_000, 3).map_err(s)?;
    let sm = two_mode_moment_series(&e, HamiltonianParams::oat(chi_star), &times).map_err(s)?;
    let m = (0..times.len())
        .map(|k| spin_moments_from_two_mode(&sm, k))
        .collect::<tnt_core::Result<Vec<_>>>()
        .map_err(s)?;
    let start = OatStart { n_atoms: n, theta: FRAC_PI_2 };
    let synthetic = fit_chi(&m, start, 1e-3, OatReference::CoherentInput).map_err(s)?;
    let synth_err = (synthetic.chi_hat / chi_star - 1.0).abs();
    let i = oat_run(false).as_ref().map_err(Clone::clone)?;
    let ii = oat_run(true).as_ref().map_err(Clone::clone)?;
    let r1 = i.fit.chi_hat / i.chi_estimate;
    let r2 = ii.fit.chi_hat / ii.chi_estimate;
    Ok((
        synth_err <= 0.01 && (r1 - 1.0).abs() <= 0.3 && (r2 - 1.0).abs() <= 0.3,
        format!(
            "synthetic recovery error {:.2}% (1%); Case I chi_hat/estimate {r1:.3} ({:.3e}/{:.3e}); Case II {r2:.3} ({:.3e}/{:.3e}) (within 30%)",
            100.0 * synth_err, i.fit.chi_hat, i.chi_estimate, ii.fit.chi_hat, ii.chi_estimate
        ),
    ))
}

fn data_files(dir: &std::path::Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(s)? {
        let entry = entry.map_err(s)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_NAME {
            out.push((name, std::fs::read(entry.path()).map_err(s)?));
        }
    }
    out.sort();
    Ok(out)
}

fn c14() -> Check {
    let configs = [
        r#"{"kind": "single_mode_tw", "n_atoms": 1000, "n_traj": 3000, "seed": 5, "omega": "tnt",
            "chi": 1.0, "time": {"unit": "chi_t", "stop": 0.01, "points": 11}}"#,
        r#"{"kind": "multimode_tw", "case": "case_ii", "n_atoms": 10000, "n_traj": 24, "seed": 9,
            "split": "breathe_together", "omega": "tnt", "omega_r": "auto", "grid": {"n_points": 32},
            "step": {"dt": 2e-5, "max_kinetic_phase": 2.0}, "time": {"stop": 0.02, "points": 5}}"#,
    ];
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let root = std::env::temp_dir().join(format!("tnt-determinism-{}", std::process::id()));
    let mut compared = 0;
    for (ci, text) in configs.iter().enumerate() {
        let cfg = parse_config(text).map_err(s)?;
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for threads in [1, 2, max] {
            let dir = root.join(format!("c{ci}-t{threads}"));
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(s)?;
            pool.install(|| run_experiment(&cfg, &dir)).map_err(s)?;
            let files = data_files(&dir)?;
            match &reference {
                None => reference = Some(files),
                Some(r) if *r == files => compared += 1,
                Some(_) => {
                    let _ = std::fs::remove_dir_all(&root);
                    return Ok((false, format!("config {ci} differs at {threads} workers")));
                }
            }
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    Ok((
        true,
        format!("data files byte-identical for 2 stochastic experiments at 1/2/{max} workers ({compared} comparisons)"),
    ))
}
