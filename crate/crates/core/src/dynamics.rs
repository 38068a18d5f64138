//! Time integration of b-Hamiltonian flows.
//!
//! With `multiplicative_y1` the singular action is carried as
//! `y_1(t) = y_1(0) exp(L(t))`, `L' = -(1/c) dg/dphi_1`, so a trajectory that
//! starts on `Z` keeps `y_1` bit-identical and the sign of `y_1` never flips.
//! Angles are integrated lifted and reduced mod 1 only when states are emitted.

use std::cell::Cell;

use ode_solvers::dop_shared::IntegrationError;
use ode_solvers::{DVector, Dop853, OutputType, System};

use crate::error::{Error, Result};
use crate::phase_space::{vector_field_into, BHamiltonian, BPhaseSpace, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Dormand-Prince 8(5,3) with PI step-size control.
    AdaptiveRk853,
    /// Fixed-step, time-symmetric 4th-order composition (triple jump) of the
    /// implicit midpoint rule; `max_step` is the step.
    FixedSplitting,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub multiplicative_y1: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::AdaptiveRk853, abs_tol: 1e-12, rel_tol: 1e-12, max_step: 1.0, multiplicative_y1: true }
    }
}

impl IntegratorConfig {
    pub fn fixed(step: f64) -> Self {
        Self { method: Method::FixedSplitting, max_step: step, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("integrator tolerances must be > 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter("max_step must be > 0".into()));
        }
        Ok(())
    }
}

/// Conservation diagnostics collected while sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Drift {
    /// `max |H(t) - H(0)|`; zero for trajectories on `Z`, where `H` is not finite.
    pub energy: f64,
    /// `max |y_1(t) - y_1(0) exp(L(t))|` against the multiplicative propagation.
    pub y1_factor: f64,
    /// `max_t max_i |y_i(t) - y_i(0)|`.
    pub action_change: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub drift: Drift,
    pub method: Method,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing, assuming uniform sampling.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// Internal ODE: `z = (phi_lifted[n], y[n], L)`. With the multiplicative update
/// `z[n]` is ignored and `y_1` is rebuilt from `L`.
struct BFlow<'a> {
    c: f64,
    h: &'a BHamiltonian,
    n: usize,
    y1_start: f64,
    multiplicative: bool,
    radius: f64,
    escape: &'a Cell<Option<f64>>,
}

impl BFlow<'_> {
    fn actions(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z[self.n..2 * self.n].to_vec();
        if self.multiplicative {
            y[0] = self.y1_start * z[2 * self.n].exp();
        }
        y
    }

    fn rhs(&self, z: &[f64], dz: &mut [f64]) {
        let n = self.n;
        let y = self.actions(z);
        let phi = &z[..n];
        vector_field_into(self.c, self.h, phi, &y, &mut dz[..2 * n]);
        let g = self.h.gradient_at(phi, &y);
        dz[2 * n] = -g.dphi[0] / self.c;
        if self.multiplicative {
            dz[n] = 0.0;
        }
    }

    fn escaped(&self, z: &[f64]) -> bool {
        let y = self.actions(z);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        !(norm < self.radius)
    }

    fn to_state(&self, z: &[f64]) -> State {
        State::new(z[..self.n].to_vec(), self.actions(z))
    }
}

impl System<f64, DVector<f64>> for BFlow<'_> {
    fn system(&self, _t: f64, z: &DVector<f64>, dz: &mut DVector<f64>) {
        self.rhs(z.as_slice(), dz.as_mut_slice());
    }

    fn solout(&mut self, t: f64, z: &DVector<f64>, _dz: &DVector<f64>) -> bool {
        if self.escape.get().is_none() && self.escaped(z.as_slice()) {
            self.escape.set(Some(t));
            return true;
        }
        false
    }
}

struct Propagator<'a> {
    sys: BFlow<'a>,
    cfg: IntegratorConfig,
    z: Vec<f64>,
    t: f64,
}

const TRIPLE_JUMP: [f64; 3] = {
    // 2^(1/3)
    let cbrt2 = 1.259_921_049_894_873_2;
    let w1 = 1.0 / (2.0 - cbrt2);
    [w1, -cbrt2 * w1, w1]
};

impl<'a> Propagator<'a> {
    fn new(
        space: &BPhaseSpace,
        h: &'a BHamiltonian,
        s0: &State,
        cfg: IntegratorConfig,
        escape: &'a Cell<Option<f64>>,
    ) -> Result<Self> {
        cfg.validate()?;
        space.check(s0)?;
        let n = space.dof();
        let sys = BFlow {
            c: space.modular_period(),
            h,
            n,
            y1_start: s0.y[0],
            multiplicative: cfg.multiplicative_y1,
            radius: space.radius(),
            escape,
        };
        let mut z = Vec::with_capacity(2 * n + 1);
        z.extend_from_slice(&s0.phi);
        z.extend_from_slice(&s0.y);
        z.push(0.0);
        Ok(Self { sys, cfg, z, t: 0.0 })
    }

    fn advance_to(&mut self, t_end: f64) -> Result<()> {
        if t_end == self.t {
            return Ok(());
        }
        match self.cfg.method {
            Method::AdaptiveRk853 => self.advance_adaptive(t_end),
            Method::FixedSplitting => self.advance_fixed(t_end),
        }
    }

    fn advance_adaptive(&mut self, t_end: f64) -> Result<()> {
        let span = t_end - self.t;
        let h0 = span.abs().min(self.cfg.max_step) * span.signum();
        let sys = BFlow { escape: self.sys.escape, h: self.sys.h, ..self.sys };
        let mut solver = Dop853::from_param(
            sys,
            self.t,
            t_end,
            span,
            DVector::from_vec(self.z.clone()),
            self.cfg.rel_tol,
            self.cfg.abs_tol,
            0.9,
            0.04,
            0.333,
            6.0,
            self.cfg.max_step,
            h0,
            u32::MAX,
            u32::MAX,
            OutputType::Sparse,
        );
        match solver.integrate() {
            Ok(_) => {}
            Err(IntegrationError::StepSizeUnderflow { x }) => return Err(Error::StepSizeUnderflow { time: x }),
            Err(e) => return Err(Error::Integrator(e.to_string())),
        }
        if let Some(time) = self.sys.escape.get() {
            return Err(Error::ChartEscape { time });
        }
        let last = solver.y_out().last().expect("solver output");
        self.z.copy_from_slice(last.as_slice());
        self.t = t_end;
        Ok(())
    }

    fn advance_fixed(&mut self, t_end: f64) -> Result<()> {
        let span = t_end - self.t;
        let steps = (span.abs() / self.cfg.max_step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let m = self.z.len();
        let mut mid = vec![0.0; m];
        let mut dz = vec![0.0; m];
        let mut next = vec![0.0; m];
        for step in 0..steps {
            for w in TRIPLE_JUMP {
                let hs = w * h;
                // Implicit midpoint: z1 = z0 + hs f((z0 + z1) / 2), by fixed-point iteration.
                self.sys.rhs(&self.z, &mut dz);
                for i in 0..m {
                    next[i] = self.z[i] + hs * dz[i];
                }
                let mut converged = false;
                for _ in 0..100 {
                    for i in 0..m {
                        mid[i] = 0.5 * (self.z[i] + next[i]);
                    }
                    self.sys.rhs(&mid, &mut dz);
                    let mut delta: f64 = 0.0;
                    for i in 0..m {
                        let v = self.z[i] + hs * dz[i];
                        delta = delta.max((v - next[i]).abs() / (1.0 + v.abs()));
                        next[i] = v;
                    }
                    if delta <= 4.0 * f64::EPSILON {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::Integrator(
                        "implicit midpoint iteration did not converge; reduce max_step".into(),
                    ));
                }
                self.z.copy_from_slice(&next);
            }
            let t = self.t + (step + 1) as f64 * h;
            if self.sys.escaped(&self.z) {
                return Err(Error::ChartEscape { time: t });
            }
        }
        self.t = t_end;
        Ok(())
    }

    fn state(&self) -> State {
        self.sys.to_state(&self.z)
    }
}

/// Time-`t` map of the b-Hamiltonian flow. `t = 0` returns `s0` unchanged.
pub fn flow(space: &BPhaseSpace, h: &BHamiltonian, s0: &State, t: f64, cfg: &IntegratorConfig) -> Result<State> {
    if !t.is_finite() {
        return Err(Error::InvalidParameter("flow time must be finite".into()));
    }
    let escape = Cell::new(None);
    let mut p = Propagator::new(space, h, s0, *cfg, &escape)?;
    if t == 0.0 {
        return Ok(s0.clone());
    }
    p.advance_to(t)?;
    Ok(p.state())
}

/// Samples the flow at `t = 0, dt_out, 2 dt_out, ..` up to `t_final`.
pub fn sample_trajectory(
    space: &BPhaseSpace,
    h: &BHamiltonian,
    s0: &State,
    t_final: f64,
    dt_out: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if !(dt_out > 0.0) {
        return Err(Error::InvalidParameter("dt_out must be > 0".into()));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter("t_final must be finite and >= 0".into()));
    }
    let escape = Cell::new(None);
    let mut p = Propagator::new(space, h, s0, *cfg, &escape)?;
    let count = (t_final / dt_out + 1e-9).floor() as usize + 1;
    let off_z = s0.y[0] != 0.0;
    let h0 = if off_z { h.value(s0) } else { 0.0 };
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    let mut drift = Drift::default();
    for j in 0..count {
        let t = j as f64 * dt_out;
        p.advance_to(t)?;
        let s = if j == 0 { s0.clone() } else { p.state() };
        let lfac = p.z[2 * space.dof()].exp();
        drift.y1_factor = drift.y1_factor.max((s.y[0] - s0.y[0] * lfac).abs());
        for (a, b) in s.y.iter().zip(&s0.y) {
            drift.action_change = drift.action_change.max((a - b).abs());
        }
        if off_z {
            drift.energy = drift.energy.max((h.value(&s) - h0).abs());
        }
        times.push(t);
        states.push(s);
    }
    Ok(Trajectory { times, states, drift, method: cfg.method })
}
