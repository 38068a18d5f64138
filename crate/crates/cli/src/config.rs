//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use bkam_core::bkam::{BkamProblem, KamConfig, Perturbation};
use bkam_core::dynamics::{IntegratorConfig, Method};
use bkam_core::examples::{desk_kam_problem, make_example, standard_lattice, Model, STANDARD_LATTICE_C};
use bkam_core::normal_form::KnfConfig;
use bkam_core::phase_space::{BHamiltonian, BPhaseSpace};
use bkam_core::trig_poly::{Phase, TrigPoly, TrigTerm};
use bkam_core::State;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: Option<SystemSpec>,
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    #[serde(default)]
    pub naff: NaffSpec,
    #[serde(default)]
    pub knf: KnfSpec,
    #[serde(default)]
    pub kam: KamSpec,
    pub diophantine: Option<DiophantineSpec>,
    pub epsilon: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    7
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn system(&self) -> Result<&SystemSpec, CliError> {
        self.system.as_ref().ok_or_else(|| CliError::Config("missing 'system'".into()))
    }

    pub fn initial(&self) -> Result<State, CliError> {
        let s = self.initial.as_ref().ok_or_else(|| CliError::Config("missing 'initial'".into()))?;
        if s.phi.len() != s.y.len() {
            return Err(CliError::Config("initial.phi and initial.y differ in length".into()));
        }
        Ok(State::new(s.phi.clone(), s.y.clone()))
    }

    pub fn time_grid(&self) -> Result<(f64, f64), CliError> {
        let t = self.t_final.ok_or_else(|| CliError::Config("missing 't_final'".into()))?;
        let dt = self.dt.ok_or_else(|| CliError::Config("missing 'dt'".into()))?;
        if !(t >= 0.0 && t.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Config("need t_final >= 0 and dt > 0".into()));
        }
        Ok((t, dt))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
}

/// Either a catalog entry or an inline b-KAM problem / integrable family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Catalog(CatalogSpec),
    Inline(InlineSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSpec {
    pub name: String,
    /// Perturbation size for `desk-kam-n3`.
    #[serde(default)]
    pub epsilon: f64,
    /// Dimension and modular period for `standard-lattice`.
    pub n: Option<usize>,
    pub c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub radius: f64,
    /// Log coefficient `k` of the unperturbed Hamiltonian.
    #[serde(default)]
    pub k: f64,
    /// Angle-free polynomial `h(y)`.
    #[serde(default)]
    pub h: Vec<TermSpec>,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub epsilon: f64,
    pub y0: Option<Vec<f64>>,
    /// Integrals for the lattice command; each one `kappa log|y_1| + terms`.
    pub integrals: Option<Vec<IntegralSpec>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub f1: Vec<TermSpec>,
    #[serde(default)]
    pub f2: Vec<TermSpec>,
    #[serde(default)]
    pub f3: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegralSpec {
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
}

/// `coef * y^alpha * cos|sin(2 pi k.phi)`; `k` defaults to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coef: f64,
    pub alpha: Vec<u32>,
    pub k: Option<Vec<i64>>,
    #[serde(default)]
    pub phase: PhaseSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSpec {
    #[default]
    Cos,
    Sin,
}

fn poly(n: usize, terms: &[TermSpec]) -> Result<TrigPoly, CliError> {
    let mut p = TrigPoly::zero(n);
    for t in terms {
        let phase = match t.phase {
            PhaseSpec::Cos => Phase::Cos,
            PhaseSpec::Sin => Phase::Sin,
        };
        let k = t.k.clone().unwrap_or_else(|| vec![0; n]);
        p.push(TrigTerm { coef: t.coef, k, alpha: t.alpha.clone(), phase })?;
    }
    Ok(p)
}

/// A system resolved against the catalog.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub space: BPhaseSpace,
    pub hamiltonian: BHamiltonian,
    pub kam: Option<BkamProblem>,
    pub integrals: Vec<BHamiltonian>,
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let r = match self {
            SystemSpec::Catalog(c) => resolve_catalog(c),
            SystemSpec::Inline(i) => resolve_inline(i),
        };
        // Whatever the library rejects here came from the config file.
        r.map_err(|e| match e {
            CliError::Numeric(e) => CliError::Config(format!("system: {e}")),
            other => other,
        })
    }
}

/// Largest number of degrees of freedom a config may ask for.
pub const MAX_DOF: usize = 16;

fn check_dof(n: usize) -> Result<(), CliError> {
    if n > MAX_DOF {
        return Err(CliError::Config(format!("n = {n} exceeds the supported {MAX_DOF} degrees of freedom")));
    }
    Ok(())
}

fn resolve_catalog(c: &CatalogSpec) -> Result<Resolved, CliError> {
    check_dof(c.n.unwrap_or(0))?;
    if !(c.epsilon >= 0.0 && c.epsilon.is_finite()) {
        return Err(CliError::Config("system.catalog.epsilon must be finite and >= 0".into()));
    }
    let named = match c.name.as_str() {
        "standard-lattice" => standard_lattice(c.n.unwrap_or(3), c.c.unwrap_or(STANDARD_LATTICE_C))?,
        "desk-kam-n3" => {
            let prob = desk_kam_problem(c.epsilon)?;
            return Ok(Resolved {
                space: prob.space,
                hamiltonian: prob.hamiltonian(),
                kam: Some(prob),
                integrals: Vec::new(),
            });
        }
        other => make_example(other).map_err(|e| CliError::Config(e.to_string()))?,
    };
    match named.model {
        Model::Chart { space, hamiltonian, integrals, kam } => Ok(Resolved { space, hamiltonian, kam, integrals }),
        Model::McGehee(_) => Err(CliError::Config(format!("'{}' lives outside the model chart", c.name))),
    }
}

fn resolve_inline(s: &InlineSpec) -> Result<Resolved, CliError> {
    let n = s.n;
    check_dof(n)?;
    let space = BPhaseSpace::new(n, s.c, s.radius)?;
    let h = poly(n, &s.h)?;
    let p = &s.perturbation;
    let pert = Perturbation::new(p.kappa, poly(n, &p.f1)?, Arc::new(poly(n, &p.f2)?), poly(n, &p.f3)?)?;
    let unperturbed = BHamiltonian::with_log(s.k, h.clone());
    let hamiltonian = unperturbed.perturbed(&pert.to_hamiltonian(), s.epsilon);
    let kam = if h.is_angle_free() {
        let y0 = s.y0.clone().unwrap_or_else(|| vec![0.0; n]);
        Some(BkamProblem::new(space, s.k, h, pert, s.epsilon, y0)?)
    } else {
        None
    };
    let integrals = s
        .integrals
        .iter()
        .flatten()
        .map(|f| Ok(BHamiltonian::with_log(f.kappa, poly(n, &f.terms)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Resolved { space, hamiltonian, kam, integrals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub method: MethodSpec,
    #[serde(default = "tol")]
    pub abs_tol: f64,
    #[serde(default = "tol")]
    pub rel_tol: f64,
    #[serde(default = "one")]
    pub max_step: f64,
    #[serde(default = "yes")]
    pub multiplicative_y1: bool,
}

fn tol() -> f64 {
    1e-12
}

fn yes() -> bool {
    true
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self { method: MethodSpec::Adaptive, abs_tol: tol(), rel_tol: tol(), max_step: 1.0, multiplicative_y1: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Adaptive,
    Fixed,
}

impl IntegratorSpec {
    pub fn to_core(&self) -> Result<IntegratorConfig, CliError> {
        let method = match self.method {
            MethodSpec::Adaptive => Method::AdaptiveRk853,
            MethodSpec::Fixed => Method::FixedSplitting,
        };
        let cfg = IntegratorConfig {
            method,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            multiplicative_y1: self.multiplicative_y1,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaffSpec {
    /// Number of leading samples used; all of them when absent.
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnfSpec {
    #[serde(default = "k_max")]
    pub k_max: u32,
    #[serde(default = "degree")]
    pub degree: u32,
    #[serde(default = "delta")]
    pub delta: f64,
    #[serde(default = "knf_tol")]
    pub tol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
}

fn k_max() -> u32 {
    KnfConfig::default().k_max
}
fn degree() -> u32 {
    KnfConfig::default().degree
}
fn delta() -> f64 {
    KnfConfig::default().delta
}
fn knf_tol() -> f64 {
    KnfConfig::default().tol
}
fn max_iter() -> usize {
    KnfConfig::default().max_iter
}

impl Default for KnfSpec {
    fn default() -> Self {
        Self { k_max: k_max(), degree: degree(), delta: delta(), tol: knf_tol(), max_iter: max_iter() }
    }
}

impl KnfSpec {
    pub fn to_core(&self) -> Result<KnfConfig, CliError> {
        let cfg = KnfConfig {
            k_max: self.k_max,
            degree: self.degree,
            delta: self.delta,
            tol: self.tol,
            max_iter: self.max_iter,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Overrides for the torus checks; absent fields keep the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KamSpec {
    pub gamma: Option<f64>,
    pub scan_k_max: Option<u32>,
    pub t_final: Option<f64>,
    pub dt_out: Option<f64>,
    pub grid: Option<usize>,
    pub trajectories: Option<usize>,
    pub conjugacy_stride: Option<usize>,
    pub deviation_factor: Option<f64>,
    pub frequency_tol: Option<f64>,
    pub conjugacy_tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn kam_config(&self) -> Result<KamConfig, CliError> {
        let d = KamConfig::default();
        let k = &self.kam;
        let cfg = KamConfig {
            knf: self.knf.to_core()?,
            gamma: k.gamma.unwrap_or(d.gamma),
            scan_k_max: k.scan_k_max.unwrap_or(d.scan_k_max),
            integrator: self.integrator.to_core()?,
            t_final: k.t_final.unwrap_or(d.t_final),
            dt_out: k.dt_out.unwrap_or(d.dt_out),
            grid: k.grid.unwrap_or(d.grid),
            trajectories: k.trajectories.unwrap_or(d.trajectories),
            conjugacy_stride: k.conjugacy_stride.unwrap_or(d.conjugacy_stride),
            seed: self.seed,
            deviation_factor: k.deviation_factor.unwrap_or(d.deviation_factor),
            frequency_tol: k.frequency_tol.unwrap_or(d.frequency_tol),
            conjugacy_tol: k.conjugacy_tol.unwrap_or(d.conjugacy_tol),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophantineSpec {
    pub omega: Vec<f64>,
    #[serde(default = "one")]
    pub gamma: f64,
    pub k_max: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sytem": {}}"#).is_err());
        let nested = r#"{"system": {"catalog": {"name": "desk-kam-n3", "eps": 0.1}}}"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
        assert!(ExperimentConfig::from_json(r#"{"knf": {"k_max": 8, "kmax": 8}}"#).is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"system": {"catalog": {"name": "desk-kam-n3"}}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.knf.to_core().unwrap(), KnfConfig::default());
        let r = cfg.system().unwrap().resolve().unwrap();
        assert_eq!(r.space.dof(), 3);
        assert!(r.kam.is_some());
    }

    #[test]
    fn inline_system_resolves() {
        let text = r#"{"system": {"inline": {
            "n": 2, "c": 2.0, "k": 1.0,
            "h": [{"coef": 1.0, "alpha": [0, 1]}, {"coef": 0.5, "alpha": [0, 2]}],
            "perturbation": {"f1": [{"coef": 0.1, "alpha": [0, 0], "k": [0, 1], "phase": "sin"}]},
            "epsilon": 0.01
        }}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let r = cfg.system().unwrap().resolve().unwrap();
        assert_eq!(r.space.modular_period(), 2.0);
        let p = r.kam.unwrap();
        assert_eq!(p.epsilon, 0.01);
        assert_eq!(p.perturbation.f1.terms()[0].phase, Phase::Sin);
    }

    #[test]
    fn invalid_inline_terms_are_config_errors() {
        let text = r#"{"system": {"inline": {"n": 2, "h": [{"coef": 1.0, "alpha": [1]}]}}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(matches!(cfg.system().unwrap().resolve(), Err(CliError::Config(_))));
    }
}
