//! Declarative experiment configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tnt_core::calibration::OatReference;
use tnt_core::gpe::{StepPolicy, Subtraction};
use tnt_core::multimode::{OmegaPolicy, OmegaRPolicy, SplitPolicy};
use tnt_core::params::{PhysicalParams, ScatteringCase};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GroundState,
    SingleModeExact,
    SingleModeTw,
    Gpe,
    MultimodeTw,
    CalibrateChi,
    ScanOmega,
    QFunction,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GroundState => "ground_state",
            ExperimentKind::SingleModeExact => "single_mode_exact",
            ExperimentKind::SingleModeTw => "single_mode_tw",
            ExperimentKind::Gpe => "gpe",
            ExperimentKind::MultimodeTw => "multimode_tw",
            ExperimentKind::CalibrateChi => "calibrate_chi",
            ExperimentKind::ScanOmega => "scan_omega",
            ExperimentKind::QFunction => "q_function",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            ExperimentKind::SingleModeTw
                | ExperimentKind::MultimodeTw
                | ExperimentKind::CalibrateChi
                | ExperimentKind::ScanOmega
        )
    }

    fn is_multimode(self) -> bool {
        matches!(
            self,
            ExperimentKind::MultimodeTw | ExperimentKind::CalibrateChi | ExperimentKind::ScanOmega
        )
    }

    fn is_single_mode(self) -> bool {
        matches!(
            self,
            ExperimentKind::SingleModeExact | ExperimentKind::SingleModeTw | ExperimentKind::QFunction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSpec {
    CaseI,
    CaseIi,
    CaseIii,
    /// Scattering lengths in Bohr radii.
    Custom { a_aa: f64, a_bb: f64, a_ab: f64 },
}

impl CaseSpec {
    pub fn resolve(&self, params: &PhysicalParams) -> Result<ScatteringCase> {
        match *self {
            CaseSpec::CaseI => Ok(ScatteringCase::case_i(params)),
            CaseSpec::CaseIi => Ok(ScatteringCase::case_ii(params)),
            CaseSpec::CaseIii => Ok(ScatteringCase::case_iii(params)),
            CaseSpec::Custom { a_aa, a_bb, a_ab } => {
                let a0 = params.bohr_radius;
                ScatteringCase::custom(a_aa * a0, a_bb * a0, a_ab * a0).map_err(|e| HarnessError::Config(format!("case: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PhysicalOverrides {
    /// kg
    pub mass: Option<f64>,
    /// rad/s
    pub trap_omega_x: Option<f64>,
    /// m²
    pub transverse_area: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    /// Half-width L of [−L, L) in m; ±4 Thomas-Fermi radii when absent.
    pub extent: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: 512,
            extent: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Seconds,
    /// Dimensionless χt with the resolved χ.
    ChiT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default)]
    pub unit: TimeUnit,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    pub values: Option<Vec<f64>>,
}

impl TimeSpec {
    /// Times in the spec's own unit.
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match (&self.values, self.stop, self.points) {
            (Some(v), None, None) => v.clone(),
            (None, Some(stop), Some(points)) => {
                let start = self.start.unwrap_or(0.0);
                if points < 2 || !(stop > start) {
                    return Err(HarnessError::Config("time: need points >= 2 and stop > start".into()));
                }
                (0..points)
                    .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
                    .collect()
            }
            _ => {
                return Err(HarnessError::Config(
                    "time: give either `values` or both `stop` and `points`".into(),
                ))
            }
        };
        if v.is_empty() || v[0] < 0.0 || v.windows(2).any(|w| !(w[1] > w[0])) || v.iter().any(|t| !t.is_finite()) {
            return Err(HarnessError::Config(
                "time: values must be finite, non-negative and strictly increasing".into(),
            ));
        }
        Ok(v)
    }

    pub fn seconds(&self, chi: f64) -> Result<Vec<f64>> {
        let v = self.values()?;
        Ok(match self.unit {
            TimeUnit::Seconds => v,
            TimeUnit::ChiT => v.into_iter().map(|x| x / chi).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QGridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for QGridSpec {
    fn default() -> Self {
        Self { n_theta: 61, n_phi: 121 }
    }
}

/// Experiment description; after [`ExperimentConfig::validate`] every default is
/// filled in so the serialised form records exactly what ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub case: Option<CaseSpec>,
    pub physical: Option<PhysicalOverrides>,
    pub n_atoms: Option<f64>,
    pub n_traj: Option<usize>,
    pub grid: Option<GridSpec>,
    pub omega: Option<OmegaPolicy>,
    /// χ in rad/s; the ground-state density estimate when absent.
    pub chi: Option<f64>,
    pub split: Option<SplitPolicy>,
    pub omega_r: Option<OmegaRPolicy>,
    pub time: Option<TimeSpec>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub subtraction: Option<Subtraction>,
    pub step: Option<StepPolicy>,
    pub fractions: Option<Vec<f64>>,
    pub q_grid: Option<QGridSpec>,
    pub reference: Option<OatReference>,
    pub ground_tol: Option<f64>,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("`{name}` must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Check kind-specific requirements and fill defaults. Returns warnings for fields
    /// the kind ignores.
    pub fn validate(&mut self) -> Result<Vec<String>> {
        let kind = self.kind.ok_or_else(|| HarnessError::Config("`kind` is required".into()))?;
        let mut warnings = Vec::new();
        let mut unused = |present: bool, name: &str| {
            if present {
                warnings.push(format!("field `{name}` is not used by kind {}", kind.name()));
            }
        };

        if kind.is_stochastic() && self.seed.is_none() {
            return Err(HarnessError::Config(format!("seed required for kind {}", kind.name())));
        }
        unused(!kind.is_stochastic() && self.seed.is_some(), "seed");
        unused(!kind.is_stochastic() && self.n_traj.is_some(), "n_traj");
        unused(kind == ExperimentKind::GroundState && self.time.is_some(), "time");
        unused(!kind.is_multimode() && self.subtraction.is_some(), "subtraction");
        unused(
            !(kind.is_multimode() || kind == ExperimentKind::Gpe) && self.step.is_some(),
            "step",
        );
        unused(kind != ExperimentKind::ScanOmega && self.fractions.is_some(), "fractions");
        unused(kind != ExperimentKind::QFunction && self.q_grid.is_some(), "q_grid");
        unused(kind != ExperimentKind::CalibrateChi && self.reference.is_some(), "reference");
        unused(
            kind == ExperimentKind::GroundState
                && (self.omega.is_some() || self.split.is_some() || self.omega_r.is_some()),
            "omega/split/omega_r",
        );

        self.case.get_or_insert(CaseSpec::CaseI);
        let phys = *self.physical.get_or_insert_with(PhysicalOverrides::default);
        for (name, v) in [
            ("physical.mass", phys.mass),
            ("physical.trap_omega_x", phys.trap_omega_x),
            ("physical.transverse_area", phys.transverse_area),
        ] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        let default_n = if kind.is_single_mode() { 100.0 } else { tnt_core::params::DEFAULT_ATOM_NUMBER };
        positive("n_atoms", *self.n_atoms.get_or_insert(default_n))?;
        if kind.is_stochastic() {
            let default_traj = if kind == ExperimentKind::SingleModeTw { 10_000 } else { 1000 };
            let n = *self.n_traj.get_or_insert(default_traj);
            if n < 2 {
                return Err(HarnessError::Config("`n_traj` must be at least 2".into()));
            }
        }
        let grid = *self.grid.get_or_insert_with(GridSpec::default);
        if !grid.n_points.is_power_of_two() {
            return Err(HarnessError::Config(format!(
                "`grid.n_points` must be a power of two, got {}",
                grid.n_points
            )));
        }
        if let Some(e) = grid.extent {
            positive("grid.extent", e)?;
        }
        if let Some(chi) = self.chi {
            positive("chi", chi)?;
        }
        if kind != ExperimentKind::GroundState {
            self.omega.get_or_insert(OmegaPolicy::Zero);
            self.split.get_or_insert(SplitPolicy::Symmetric);
            self.omega_r.get_or_insert(OmegaRPolicy::Off);
            match &self.time {
                Some(t) => {
                    t.values()?;
                }
                None => return Err(HarnessError::Config(format!("`time` is required for kind {}", kind.name()))),
            }
        }
        if kind == ExperimentKind::CalibrateChi && !matches!(self.omega, Some(OmegaPolicy::Zero)) {
            return Err(HarnessError::Config("calibrate_chi runs with Ω = 0; set `omega` to \"zero\"".into()));
        }
        if kind.is_multimode() {
            self.subtraction.get_or_insert(Subtraction::Uniform);
        }
        if kind.is_multimode() || kind == ExperimentKind::Gpe {
            let s = *self.step.get_or_insert_with(StepPolicy::default);
            positive("step.dt", s.dt)?;
            positive("step.max_kinetic_phase", s.max_kinetic_phase)?;
        }
        if kind == ExperimentKind::ScanOmega {
            match &self.fractions {
                Some(f) if !f.is_empty() && f.iter().all(|x| *x > 0.0 && x.is_finite()) => {}
                _ => {
                    return Err(HarnessError::Config(
                        "`fractions` must be a nonempty list of positive numbers".into(),
                    ))
                }
            }
        }
        if kind == ExperimentKind::QFunction {
            let q = *self.q_grid.get_or_insert_with(QGridSpec::default);
            if q.n_theta < 2 || q.n_phi < 2 {
                return Err(HarnessError::Config("`q_grid` needs at least 2 points per axis".into()));
            }
        }
        if kind == ExperimentKind::CalibrateChi {
            self.reference.get_or_insert(OatReference::CoherentInput);
        }
        positive("ground_tol", *self.ground_tol.get_or_insert(1e-9))?;
        let n = self.n_atoms.unwrap_or(default_n);
        if matches!(kind, ExperimentKind::SingleModeExact | ExperimentKind::QFunction) && n.fract() != 0.0 {
            return Err(HarnessError::Config(format!("`n_atoms` must be an integer for kind {}", kind.name())));
        }
        Ok(warnings)
    }

    pub fn kind(&self) -> ExperimentKind {
        self.kind.expect("validated config has a kind")
    }

    pub fn physical_params(&self) -> PhysicalParams {
        let mut p = PhysicalParams::default();
        if let Some(o) = self.physical {
            if let Some(m) = o.mass {
                p.mass = m;
            }
            if let Some(w) = o.trap_omega_x {
                p.trap_omega_x = w;
            }
            if let Some(a) = o.transverse_area {
                p.transverse_area = a;
            }
        }
        p
    }

    /// SHA-256 of the filled configuration, output directory excluded.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&bytes).into()
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_exact_config_gets_defaults() {
        let mut c = parse_config(r#"{"kind": "single_mode_exact", "time": {"unit": "chi_t", "values": [0, 0.1]}}"#).unwrap();
        let w = c.validate().unwrap();
        assert!(w.is_empty());
        assert_eq!(c.n_atoms, Some(100.0));
        assert_eq!(c.case, Some(CaseSpec::CaseI));
        assert_eq!(c.omega, Some(OmegaPolicy::Zero));
        assert!(c.chi.is_none());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(r#"{"kind": "gpe", "omega_z": 3}"#).unwrap_err();
        assert!(err.to_string().contains("omega_z"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn stochastic_kinds_need_a_seed() {
        let mut c = parse_config(r#"{"kind": "multimode_tw", "time": {"stop": 0.1, "points": 3}}"#).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("seed required"), "{err}");
    }

    #[test]
    fn policies_parse() {
        let mut c = parse_config(
            r#"{"kind": "scan_omega", "seed": 1, "case": {"custom": {"a_aa": 95, "a_bb": 100, "a_ab": 90}},
                "omega": {"fraction": 0.85}, "split": "breathe_together", "omega_r": "auto",
                "fractions": [0.7, 1.0], "time": {"stop": 0.1, "points": 3},
                "step": {"dt": 2e-5, "max_kinetic_phase": 1.0}, "grid": {"n_points": 64}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.omega, Some(OmegaPolicy::Fraction(0.85)));
        assert_eq!(c.split, Some(SplitPolicy::BreatheTogether));
        assert_eq!(c.omega_r, Some(OmegaRPolicy::Auto));
        let case = c.case.unwrap().resolve(&c.physical_params()).unwrap();
        assert!((case.a_bb / c.physical_params().bohr_radius - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bad_values_are_rejected() {
        for text in [
            r#"{"kind": "gpe", "time": {"stop": 0.1, "points": 3}, "grid": {"n_points": 100}}"#,
            r#"{"kind": "gpe", "time": {"values": [0.1, 0.05]}}"#,
            r#"{"kind": "gpe", "time": {"stop": 0.1}}"#,
            r#"{"kind": "single_mode_exact", "n_atoms": 10.5, "time": {"values": [0]}}"#,
            r#"{"kind": "scan_omega", "seed": 1, "time": {"values": [0]}}"#,
            r#"{"kind": "calibrate_chi", "seed": 1, "omega": "tnt", "time": {"values": [0]}}"#,
            r#"{"kind": "gpe"}"#,
            r#"{"time": {"values": [0]}}"#,
        ] {
            let r = parse_config(text).and_then(|mut c| c.validate());
            assert!(matches!(r, Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn ignored_fields_warn_and_hash_ignores_output() {
        let mut a = parse_config(r#"{"kind": "ground_state", "seed": 3}"#).unwrap();
        let w = a.validate().unwrap();
        assert!(w.iter().any(|w| w.contains("seed")));
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.n_atoms = Some(2e5);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn chi_t_times_convert() {
        let t = TimeSpec {
            unit: TimeUnit::ChiT,
            start: None,
            stop: Some(1.0),
            points: Some(3),
            values: None,
        };
        assert_eq!(t.seconds(2.0).unwrap(), vec![0.0, 0.25, 0.5]);
    }
}
