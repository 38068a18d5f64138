//! Invariant tori inside `Z` for perturbations of `k log|y_1| + h(y)`.
//!
//! On `Z` the perturbed flow splits: `phi_1` rotates with the constant speed
//! `(k + eps k') / c` while `(phi~, y~)` follows the ordinary Hamiltonian
//! `h(0, y~) + eps f_1(phi~, 0, y~)`. The factor is brought to Kolmogorov
//! normal form and the resulting map is lifted identically in `(phi_1, y_1)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{sample_trajectory, IntegratorConfig};
use crate::error::{Error, Result};
use crate::frequency::{diophantine_scan, measure_torus_frequencies};
use crate::normal_form::{
    kolmogorov_iterate, mean_hessian, Basis, ComposedMap, FourierTaylor, KnfConfig, DEGENERACY_TOL,
};
use crate::phase_space::{
    angle_distance, wrap_angle, BHamiltonian, BPhaseSpace, Coordinate, Product, SmoothPart, State, Sum, Zero,
};
use crate::trig_poly::TrigPoly;

/// `P = k' log|y_1| + f_1(phi~, y) + y_1 f_2(phi, y) + f_3(phi_1, y_1)`.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub kappa: f64,
    pub f1: TrigPoly,
    pub f2: Arc<dyn SmoothPart>,
    pub f3: TrigPoly,
}

impl Perturbation {
    pub fn new(kappa: f64, f1: TrigPoly, f2: Arc<dyn SmoothPart>, f3: TrigPoly) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::InvalidParameter("k' must be finite".into()));
        }
        let n = f1.dim();
        if f3.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: f3.dim() });
        }
        if let Some(d) = f2.dim() {
            if d != n {
                return Err(Error::DimensionMismatch { expected: n, found: d });
            }
        }
        if f1.terms().iter().any(|t| t.k[0] != 0) {
            return Err(Error::InvalidParameter("f1 must not depend on phi_1".into()));
        }
        let only_first = |k: &[i64], a: &[u32]| k[1..].iter().all(|&v| v == 0) && a[1..].iter().all(|&v| v == 0);
        if f3.terms().iter().any(|t| !only_first(&t.k, &t.alpha)) {
            return Err(Error::InvalidParameter("f3 may depend on (phi_1, y_1) only".into()));
        }
        Ok(Self { kappa, f1, f2, f3 })
    }

    /// Only the `f_1` part, with `k' = 0`.
    pub fn smooth(f1: TrigPoly) -> Result<Self> {
        let n = f1.dim();
        Self::new(0.0, f1, Arc::new(Zero), TrigPoly::zero(n))
    }

    pub fn dim(&self) -> usize {
        self.f1.dim()
    }

    pub fn to_hamiltonian(&self) -> BHamiltonian {
        let y1f2: Arc<dyn SmoothPart> = Arc::new(Product { a: Arc::new(Coordinate::Action(0)), b: self.f2.clone() });
        let f12: Arc<dyn SmoothPart> = Arc::new(Sum { a: Arc::new(self.f1.clone()), b: y1f2, scale: 1.0 });
        let f: Arc<dyn SmoothPart> = Arc::new(Sum { a: f12, b: Arc::new(self.f3.clone()), scale: 1.0 });
        BHamiltonian::new(self.kappa, f)
    }
}

#[derive(Clone, Debug)]
pub struct BkamProblem {
    pub space: BPhaseSpace,
    /// Log coefficient `k` of the unperturbed Hamiltonian.
    pub k: f64,
    /// Angle-free smooth part `h(y)`.
    pub h: TrigPoly,
    pub perturbation: Perturbation,
    pub epsilon: f64,
    pub y0: Vec<f64>,
}

impl BkamProblem {
    pub fn new(
        space: BPhaseSpace,
        k: f64,
        h: TrigPoly,
        perturbation: Perturbation,
        epsilon: f64,
        y0: Vec<f64>,
    ) -> Result<Self> {
        let n = space.dof();
        for d in [h.dim(), perturbation.dim(), y0.len()] {
            if d != n {
                return Err(Error::DimensionMismatch { expected: n, found: d });
            }
        }
        if !h.is_angle_free() {
            return Err(Error::InvalidParameter("h must not depend on the angles".into()));
        }
        if y0[0] != 0.0 {
            return Err(Error::InvalidParameter("y0 must lie on Z (first component 0)".into()));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParameter("epsilon must be finite and >= 0".into()));
        }
        if !k.is_finite() {
            return Err(Error::InvalidParameter("k must be finite".into()));
        }
        space.check(&State::new(vec![0.0; n], y0.clone()))?;
        Ok(Self { space, k, h, perturbation, epsilon, y0 })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.space, self.k, self.h.clone(), self.perturbation.clone(), epsilon, self.y0.clone())
    }

    pub fn unperturbed(&self) -> BHamiltonian {
        BHamiltonian::with_log(self.k, self.h.clone())
    }

    /// `k log|y_1| + h + eps P`.
    pub fn hamiltonian(&self) -> BHamiltonian {
        self.unperturbed().perturbed(&self.perturbation.to_hamiltonian(), self.epsilon)
    }

    pub fn predicted_frequency(&self, omega_tilde: &[f64]) -> Vec<f64> {
        let mut v = vec![(self.k + self.epsilon * self.perturbation.kappa) / self.space.modular_period()];
        v.extend_from_slice(omega_tilde);
        v
    }

    fn y0_tilde(&self) -> &[f64] {
        &self.y0[1..]
    }
}

/// Restrictions of `h` and `f_1` to `Z`, recentered at `y~_0`.
#[derive(Clone, Debug)]
pub struct Restriction {
    pub h_bar: FourierTaylor,
    pub f1_bar: FourierTaylor,
}

pub fn restrict_to_z(prob: &BkamProblem, basis: &Arc<Basis>) -> Result<Restriction> {
    let y0 = prob.y0_tilde();
    let h = FourierTaylor::from_trig_poly(basis, &prob.h.restrict_to_hypersurface()?)?.translate_actions(y0)?;
    let f = FourierTaylor::from_trig_poly(basis, &prob.perturbation.f1.restrict_to_hypersurface()?)?
        .translate_actions(y0)?;
    Ok(Restriction { h_bar: h, f1_bar: f })
}

/// `h_bar + eps f1_bar`: the Hamiltonian whose normal form gives the torus.
pub fn factor_hamiltonian(prob: &BkamProblem, basis: &Arc<Basis>) -> Result<FourierTaylor> {
    let r = restrict_to_z(prob, basis)?;
    r.h_bar.add(&r.f1_bar.scaled(prob.epsilon))
}

/// `omega~ = d h / d y~ (y0)` and `det d omega~ / d y~ (y0)`, from exact polynomial coefficients.
pub fn frequency_and_nondegeneracy(prob: &BkamProblem) -> Result<(Vec<f64>, f64)> {
    let m = prob.space.dof() - 1;
    let basis = Basis::new(m, 0, prob.h.max_degree().max(2))?;
    let h = FourierTaylor::from_trig_poly(&basis, &prob.h.restrict_to_hypersurface()?)?
        .translate_actions(prob.y0_tilde())?;
    let omega = (0..m)
        .map(|j| {
            let mut a = vec![0; m];
            a[j] = 1;
            h.mean(&a)
        })
        .collect();
    Ok((omega, mean_hessian(&h).determinant()))
}

/// `psi(phi, y) = (phi_1, phi~', y_1, y~_0 + y~')` with `(phi~', y~') = psi_bar(phi~, y~ - y~_0)`.
#[derive(Clone, Debug)]
pub struct LiftedMap {
    pub factor: ComposedMap,
    pub y0: Vec<f64>,
}

impl LiftedMap {
    fn split(&self, s: &State) -> (Vec<f64>, Vec<f64>) {
        let dy: Vec<f64> = s.y[1..].iter().zip(&self.y0[1..]).map(|(a, b)| a - b).collect();
        (s.phi[1..].to_vec(), dy)
    }

    fn join(&self, s: &State, phi: Vec<f64>, dy: Vec<f64>) -> State {
        let mut p = vec![s.phi[0]];
        p.extend(phi.into_iter().map(wrap_angle));
        let mut y = vec![s.y[0]];
        y.extend(dy.iter().zip(&self.y0[1..]).map(|(a, b)| a + b));
        State { phi: p, y }
    }

    pub fn forward(&self, s: &State) -> Result<State> {
        let (p, q) = self.split(s);
        let (p, q) = self.factor.forward(&p, &q)?;
        Ok(self.join(s, p, q))
    }

    pub fn inverse(&self, s: &State) -> Result<State> {
        let (p, q) = self.split(s);
        let (p, q) = self.factor.inverse(&p, &q)?;
        Ok(self.join(s, p, q))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KamConfig {
    pub knf: KnfConfig,
    pub gamma: f64,
    /// Cutoff of the Diophantine scan of `omega~`.
    pub scan_k_max: u32,
    pub integrator: IntegratorConfig,
    pub t_final: f64,
    pub dt_out: f64,
    /// Samples per angle of the torus grid.
    pub grid: usize,
    pub trajectories: usize,
    /// Every `stride`-th trajectory sample enters the conjugacy error.
    pub conjugacy_stride: usize,
    pub seed: u64,
    pub deviation_factor: f64,
    pub frequency_tol: f64,
    pub conjugacy_tol: f64,
}

impl Default for KamConfig {
    fn default() -> Self {
        Self {
            knf: KnfConfig::default(),
            gamma: 1.0,
            scan_k_max: 50,
            integrator: IntegratorConfig::default(),
            t_final: 200.0,
            dt_out: 0.05,
            grid: 32,
            trajectories: 3,
            conjugacy_stride: 20,
            seed: 7,
            deviation_factor: 10.0,
            frequency_tol: 1e-6,
            conjugacy_tol: 1e-5,
        }
    }
}

impl KamConfig {
    pub fn validate(&self) -> Result<()> {
        self.knf.validate()?;
        self.integrator.validate()?;
        if !(self.t_final > 0.0 && self.dt_out > 0.0 && self.dt_out <= self.t_final) {
            return Err(Error::InvalidParameter("need 0 < dt_out <= t_final".into()));
        }
        if self.grid == 0 || self.trajectories == 0 || self.conjugacy_stride == 0 {
            return Err(Error::InvalidParameter("grid, trajectories and stride must be >= 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KamChecks {
    /// `max_torus_deviation <= factor * eps`.
    pub deviation: bool,
    /// Every measured component within `frequency_tol` of the prediction.
    pub frequency: bool,
    pub conjugacy: bool,
    /// Trajectories started on `Z` kept `y_1 = 0` exactly.
    pub z_invariant: bool,
}

impl KamChecks {
    pub fn all(&self) -> bool {
        self.deviation && self.frequency && self.conjugacy && self.z_invariant
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (ok, name) in [
            (self.deviation, "torus_deviation"),
            (self.frequency, "frequency"),
            (self.conjugacy, "conjugacy"),
            (self.z_invariant, "z_invariance"),
        ] {
            if !ok {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct KamReport {
    pub epsilon: f64,
    pub psi: LiftedMap,
    /// `psi` applied to the torus grid: `grid^(n-1)` factor points times `grid` values of `phi_1`.
    pub torus_points: Vec<State>,
    pub predicted_frequency: Vec<f64>,
    pub measured_frequency: Vec<f64>,
    /// Max over trajectories and components of `|measured - predicted|`.
    pub frequency_error: f64,
    /// Sup of `|y~ - y~_0|` over the torus grid and the flowed samples.
    pub max_torus_deviation: f64,
    pub conjugacy_error: f64,
    /// Sup of `|psi^-1(gamma^t) y - y0|`: distance of the flow to the torus.
    pub invariance_error: f64,
    /// Sup over the torus grid of the distance between `psi` and the identity.
    pub psi_dist: f64,
    pub knf_history: Vec<f64>,
    pub passed: KamChecks,
}

fn factor_grid(m: usize, side: usize) -> Vec<Vec<f64>> {
    let total = side.pow(m as u32);
    (0..total)
        .map(|idx| {
            let mut rest = idx;
            (0..m)
                .map(|_| {
                    let v = rest % side;
                    rest /= side;
                    v as f64 / side as f64
                })
                .collect()
        })
        .collect()
}

pub fn construct_invariant_torus(prob: &BkamProblem, cfg: &KamConfig) -> Result<KamReport> {
    cfg.validate()?;
    let n = prob.space.dof();
    let m = n - 1;
    let (omega, det) = frequency_and_nondegeneracy(prob)?;
    if !(det.abs() > DEGENERACY_TOL) {
        return Err(Error::Degenerate { det });
    }
    let cert = diophantine_scan(&omega, cfg.gamma, cfg.scan_k_max)?;
    if cert.is_resonant() {
        return Err(Error::NotDiophantine { l_lower: cert.l_lower, worst_k: cert.worst_k });
    }

    let basis = cfg.knf.basis(m)?;
    let h_factor = factor_hamiltonian(prob, &basis)?;
    let knf = kolmogorov_iterate(&h_factor, &omega, &cfg.knf)?;
    if !knf.converged {
        let residual = *knf.history.last().expect("history");
        return Err(Error::Divergence { iteration: knf.iterations(), residual });
    }
    let psi = LiftedMap { factor: knf.map, y0: prob.y0.clone() };
    let predicted = prob.predicted_frequency(&omega);
    let y0t = prob.y0_tilde();

    let dev = |s: &State| -> f64 { s.y[1..].iter().zip(y0t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() };

    // Torus grid in the factor, lifted along phi_1.
    let mut factor_images = Vec::new();
    let mut psi_dist: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    for phi in factor_grid(m, cfg.grid) {
        let mut full = vec![0.0];
        full.extend_from_slice(&phi);
        let s = psi.forward(&State { phi: full.clone(), y: prob.y0.clone() })?;
        let ang = s.phi[1..].iter().zip(&phi).map(|(a, b)| angle_distance(*a, *b).abs()).fold(0.0, f64::max);
        let d = dev(&s);
        psi_dist = psi_dist.max(ang.max(d));
        max_dev = max_dev.max(d);
        factor_images.push(s);
    }
    let mut torus_points = Vec::with_capacity(factor_images.len() * cfg.grid);
    for i in 0..cfg.grid {
        let p1 = i as f64 / cfg.grid as f64;
        for s in &factor_images {
            let mut t = s.clone();
            t.phi[0] = p1;
            torus_points.push(t);
        }
    }

    let h_full = prob.hamiltonian();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut measured = Vec::new();
    let mut freq_err: f64 = 0.0;
    let mut conj: f64 = 0.0;
    let mut inv_err: f64 = 0.0;
    let mut z_ok = true;
    for _ in 0..cfg.trajectories {
        let phi0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let s0 = psi.forward(&State { phi: phi0.clone(), y: prob.y0.clone() })?;
        let traj = sample_trajectory(&prob.space, &h_full, &s0, cfg.t_final, cfg.dt_out, &cfg.integrator)?;
        z_ok &= traj.states.iter().all(|s| s.y[0] == 0.0);
        for s in &traj.states {
            max_dev = max_dev.max(dev(s));
        }
        let tf = measure_torus_frequencies(&traj)?;
        for (a, b) in tf.omega.iter().zip(&predicted) {
            freq_err = freq_err.max((a - b).abs());
        }
        if measured.is_empty() {
            measured = tf.omega.clone();
        }
        for (t, s) in traj.times.iter().zip(&traj.states).step_by(cfg.conjugacy_stride) {
            let back = psi.inverse(s)?;
            let lin: Vec<f64> = phi0.iter().zip(&predicted).map(|(p, w)| wrap_angle(p + w * t)).collect();
            let target = State { phi: lin, y: prob.y0.clone() };
            conj = conj.max(back.distance(&target));
            let off = back.y.iter().zip(&prob.y0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            inv_err = inv_err.max(off);
        }
    }

    let passed = KamChecks {
        deviation: max_dev <= cfg.deviation_factor * prob.epsilon,
        frequency: freq_err <= cfg.frequency_tol,
        conjugacy: conj <= cfg.conjugacy_tol,
        z_invariant: z_ok,
    };
    Ok(KamReport {
        epsilon: prob.epsilon,
        psi,
        torus_points,
        predicted_frequency: predicted,
        measured_frequency: measured,
        frequency_error: freq_err,
        max_torus_deviation: max_dev,
        conjugacy_error: conj,
        invariance_error: inv_err,
        psi_dist,
        knf_history: knf.history,
        passed,
    })
}

#[derive(Debug)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub outcome: Result<KamReport>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Log-log slope of `psi_dist` against `eps` over the successful `eps > 0` entries.
    pub psi_slope: Option<f64>,
}

pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn epsilon_sweep(prob: &BkamProblem, eps_list: &[f64], cfg: &KamConfig) -> Result<SweepReport> {
    if eps_list.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("epsilon list must be sorted ascending".into()));
    }
    let entries: Vec<SweepEntry> = eps_list
        .par_iter()
        .map(|&eps| SweepEntry {
            epsilon: eps,
            outcome: prob.with_epsilon(eps).and_then(|p| construct_invariant_torus(&p, cfg)),
        })
        .collect();
    let pts: Vec<(f64, f64)> =
        entries.iter().filter_map(|e| e.outcome.as_ref().ok().map(|r| (e.epsilon, r.psi_dist))).collect();
    Ok(SweepReport { psi_slope: loglog_slope(&pts), entries })
}
