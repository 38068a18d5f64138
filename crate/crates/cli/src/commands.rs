//! One function per subcommand. Each returns the CSV text and an optional
//! summary line for standard output.

use bkam_core::action_angle::{period_lattice, IntegrableSystem};
use bkam_core::bkam::{epsilon_sweep, factor_hamiltonian, frequency_and_nondegeneracy};
use bkam_core::dynamics::{sample_trajectory, Trajectory};
use bkam_core::examples::{make_example, CATALOG};
use bkam_core::frequency::{diophantine_scan, measure_torus_frequencies};
use bkam_core::normal_form::{kolmogorov_iterate, quadratic_fit};
use bkam_core::{Error, State};

use crate::config::{ExperimentConfig, Resolved};
use crate::report::{
    to_csv_string, DiophantineRow, ExampleRow, FrequencyRow, KamRow, KnfRow, LatticeRow, SimulationRow,
};
use crate::CliError;

pub struct Output {
    pub csv: String,
    pub summary: Option<String>,
}

fn resolved(cfg: &ExperimentConfig) -> Result<Resolved, CliError> {
    cfg.system()?.resolve()
}

fn trajectory(cfg: &ExperimentConfig, sys: &Resolved) -> Result<Trajectory, CliError> {
    let s0 = cfg.initial()?;
    if s0.dof() != sys.space.dof() {
        return Err(CliError::Config(format!(
            "initial state has {} degrees of freedom, system {}",
            s0.dof(),
            sys.space.dof()
        )));
    }
    let (t_final, dt) = cfg.time_grid()?;
    Ok(sample_trajectory(&sys.space, &sys.hamiltonian, &s0, t_final, dt, &cfg.integrator.to_core()?)?)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let sys = resolved(cfg)?;
    let traj = trajectory(cfg, &sys)?;
    let rows: Vec<SimulationRow> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| SimulationRow { t, phi: s.phi.clone(), y: s.y.clone(), h: sys.hamiltonian.value(s) })
        .collect();
    let summary = format!("samples={} energy_drift={:e}", rows.len(), traj.drift.energy);
    Ok(Output { csv: to_csv_string(&rows, sys.space.dof())?, summary: Some(summary) })
}

pub fn freq(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let sys = resolved(cfg)?;
    let mut traj = trajectory(cfg, &sys)?;
    if let Some(k) = cfg.naff.samples {
        traj.times.truncate(k);
        traj.states.truncate(k);
    }
    let tf = measure_torus_frequencies(&traj)?;
    let rows: Vec<FrequencyRow> = tf
        .omega
        .iter()
        .zip(&tf.amplitudes)
        .enumerate()
        .map(|(i, (&omega, &amplitude))| FrequencyRow { index: i + 1, omega, amplitude, residual: tf.residual })
        .collect();
    Ok(Output { csv: to_csv_string(&rows, 0)?, summary: None })
}

pub fn diophantine(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let d = cfg.diophantine.as_ref().ok_or_else(|| CliError::Config("missing 'diophantine'".into()))?;
    let cert = diophantine_scan(&d.omega, d.gamma, d.k_max).map_err(|e| match e {
        Error::InvalidParameter(m) | Error::SingularMatrix(m) => CliError::Config(m),
        e @ Error::DimensionMismatch { .. } => CliError::Config(e.to_string()),
        other => CliError::Numeric(other),
    })?;
    let row =
        DiophantineRow { gamma: cert.gamma, k_max: cert.k_max, l_lower: cert.l_lower, worst_k: cert.worst_k.clone() };
    let summary = if cert.is_resonant() { "resonant" } else { "diophantine" };
    Ok(Output { csv: to_csv_string(&[row], cert.worst_k.len())?, summary: Some(summary.into()) })
}

pub fn knf(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let sys = resolved(cfg)?;
    let prob = sys.kam.ok_or_else(|| CliError::Config("knf needs a system with an angle-free h".into()))?;
    let knf_cfg = cfg.knf.to_core()?;
    let (omega, _) = frequency_and_nondegeneracy(&prob)?;
    let h = factor_hamiltonian(&prob, &knf_cfg.basis(prob.space.dof() - 1)?)?;
    let out = kolmogorov_iterate(&h, &omega, &knf_cfg)?;
    let rows: Vec<KnfRow> =
        out.history.iter().enumerate().map(|(i, &residual)| KnfRow { iteration: i, residual }).collect();
    let fit = quadratic_fit(&out.history, out.roundoff_floor());
    let summary = format!("converged={} pairs={} c={:e} slope={}", out.converged, fit.pairs, fit.c, fit.slope);
    Ok(Output { csv: to_csv_string(&rows, 0)?, summary: Some(summary) })
}

fn reason(e: &Error) -> &'static str {
    match e {
        Error::Divergence { .. } => "divergence",
        Error::NotDiophantine { .. } => "not_diophantine",
        Error::Degenerate { .. } => "degenerate",
        Error::SmallDivisor { .. } => "small_divisor",
        Error::ChartEscape { .. } => "chart_escape",
        Error::ChaoticSignal { .. } => "chaotic_signal",
        Error::StepSizeUnderflow { .. } | Error::Integrator(_) => "integrator",
        _ => "numeric",
    }
}

pub fn kam(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let sys = resolved(cfg)?;
    let prob = sys.kam.ok_or_else(|| CliError::Config("kam needs a system with an angle-free h".into()))?;
    let mut eps = cfg.epsilon.clone().ok_or_else(|| CliError::Config("missing 'epsilon'".into()))?;
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(CliError::Config("epsilon values must be finite and >= 0".into()));
    }
    eps.sort_by(f64::total_cmp);
    let kcfg = cfg.kam_config()?;
    let report = epsilon_sweep(&prob, &eps, &kcfg)?;
    let n = prob.space.dof();
    let rows: Vec<KamRow> = report
        .entries
        .iter()
        .map(|e| match &e.outcome {
            Ok(r) => KamRow {
                epsilon: e.epsilon,
                max_torus_deviation: r.max_torus_deviation,
                conjugacy_error: r.conjugacy_error,
                freq: r.measured_frequency.clone(),
                psi_dist: r.psi_dist,
                passed: r.passed.all(),
                reason: r.passed.failures().join(";"),
            },
            Err(err) => KamRow {
                epsilon: e.epsilon,
                max_torus_deviation: f64::NAN,
                conjugacy_error: f64::NAN,
                freq: vec![f64::NAN; n],
                psi_dist: f64::NAN,
                passed: false,
                reason: reason(err).into(),
            },
        })
        .collect();
    let passed = rows.iter().filter(|r| r.passed).count();
    let slope = report.psi_slope.map_or("nan".to_string(), |s| format!("{s:.6}"));
    let summary = format!("passed={passed}/{} psi_slope={slope}", rows.len());
    Ok(Output { csv: to_csv_string(&rows, n)?, summary: Some(summary) })
}

pub fn lattice(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let sys = resolved(cfg)?;
    if sys.integrals.is_empty() {
        return Err(CliError::Config("lattice needs a system with integrals".into()));
    }
    let n = sys.space.dof();
    let system = IntegrableSystem::new(sys.space, sys.integrals).map_err(|e| CliError::Config(e.to_string()))?;
    let m = match &cfg.initial {
        Some(_) => cfg.initial()?,
        None => {
            // A regular point of Z.
            let mut y = vec![0.0; n];
            y[1] = 0.1 * sys.space.radius();
            State::new(vec![0.0; n], y)
        }
    };
    let lat = period_lattice(&system, &m)?;
    let modular = if m.on_hypersurface() { lat.basis[(n - 1, n - 1)].abs() } else { f64::NAN };
    let rows: Vec<LatticeRow> = (0..n)
        .map(|i| LatticeRow { row: i + 1, lambda: lat.row(i), residual: lat.residual, modular_period: modular })
        .collect();
    Ok(Output { csv: to_csv_string(&rows, n)?, summary: Some(format!("modular_period={modular:.16e}")) })
}

pub fn example_list() -> Result<Output, CliError> {
    let rows = CATALOG
        .iter()
        .map(|name| make_example(name).map(|s| ExampleRow { name: s.name.to_string(), notes: s.notes.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Output { csv: to_csv_string(&rows, 0)?, summary: None })
}
