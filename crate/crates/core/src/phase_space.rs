//! The model b-symplectic chart `T^n x B^n`, its states, b-Hamiltonians and
//! the Poisson bracket.
//!
//! The singular pair sits in the first slot: `Z = {y_1 = 0}` and the bivector is
//! `(1/c) y_1 d/dphi_1 ^ d/dy_1 + sum_{i>=2} d/dphi_i ^ d/dy_i`. Angles live on the
//! unit torus `R/Z`, so frequencies are in cycles per unit time.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Model chart with modular period `c` and action-ball radius `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BPhaseSpace {
    n: usize,
    c: f64,
    r: f64,
}

impl BPhaseSpace {
    pub fn new(n: usize, c: f64, r: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("modular period must be > 0, got {c}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("chart radius must be > 0, got {r}")));
        }
        Ok(Self { n, c, r })
    }

    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn modular_period(&self) -> f64 {
        self.c
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    /// Fails with [`Error::OutsideChart`] when `|y| >= r` or the dimensions are off.
    pub fn check(&self, s: &State) -> Result<()> {
        if s.phi.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: s.phi.len() });
        }
        if s.y.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: s.y.len() });
        }
        let norm = s.action_norm();
        if !(norm < self.r) {
            return Err(Error::OutsideChart { norm, radius: self.r });
        }
        Ok(())
    }
}

/// Reduces an angle into `[0, 1)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid rounds tiny negative inputs up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed distance between two unit-torus angles, in `[-1/2, 1/2)`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// A point `(phi, y)` of the chart with angles reduced mod 1.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
}

impl State {
    /// Builds a state, wrapping the angles into `[0, 1)`.
    pub fn new(phi: Vec<f64>, y: Vec<f64>) -> Self {
        Self { phi: phi.into_iter().map(wrap_angle).collect(), y }
    }

    pub fn dof(&self) -> usize {
        self.phi.len()
    }

    pub fn action_norm(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn on_hypersurface(&self) -> bool {
        self.y[0] == 0.0
    }

    /// Wrapped-angle plus Euclidean-action distance.
    pub fn distance(&self, other: &State) -> f64 {
        let a: f64 = self.phi.iter().zip(&other.phi).map(|(&p, &q)| angle_distance(p, q).powi(2)).sum();
        let b: f64 = self.y.iter().zip(&other.y).map(|(&p, &q)| (p - q).powi(2)).sum();
        (a + b).sqrt()
    }
}

/// Smooth function of `(phi, y)` with analytic first derivatives.
///
/// Angles are passed lifted (not necessarily reduced); periodic evaluators must
/// not care. Implementations must be finite and C^1 on the whole chart,
/// including `y_1 = 0`.
pub trait SmoothPart: Send + Sync + fmt::Debug {
    fn value(&self, phi: &[f64], y: &[f64]) -> f64;

    /// Writes `dg/dphi` and `dg/dy` into the output slices.
    fn gradient(&self, phi: &[f64], y: &[f64], dphi: &mut [f64], dy: &mut [f64]);

    /// Number of degrees of freedom the evaluator expects, if fixed.
    fn dim(&self) -> Option<usize> {
        None
    }
}

/// Identically zero smooth part.
#[derive(Clone, Copy, Debug, Default)]
pub struct Zero;

impl SmoothPart for Zero {
    fn value(&self, _: &[f64], _: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _: &[f64], _: &[f64], dphi: &mut [f64], dy: &mut [f64]) {
        dphi.iter_mut().for_each(|v| *v = 0.0);
        dy.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Coordinate functions. `Angle(i)` returns the lifted angle value and is only
/// meaningful inside brackets, as in the canonical relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Angle(usize),
    Action(usize),
}

impl SmoothPart for Coordinate {
    fn value(&self, phi: &[f64], y: &[f64]) -> f64 {
        match *self {
            Coordinate::Angle(i) => phi[i],
            Coordinate::Action(i) => y[i],
        }
    }

    fn gradient(&self, _: &[f64], _: &[f64], dphi: &mut [f64], dy: &mut [f64]) {
        dphi.iter_mut().for_each(|v| *v = 0.0);
        dy.iter_mut().for_each(|v| *v = 0.0);
        match *self {
            Coordinate::Angle(i) => dphi[i] = 1.0,
            Coordinate::Action(i) => dy[i] = 1.0,
        }
    }
}

/// `a + scale * b`.
#[derive(Clone, Debug)]
pub struct Sum {
    pub a: Arc<dyn SmoothPart>,
    pub b: Arc<dyn SmoothPart>,
    pub scale: f64,
}

impl SmoothPart for Sum {
    fn value(&self, phi: &[f64], y: &[f64]) -> f64 {
        self.a.value(phi, y) + self.scale * self.b.value(phi, y)
    }

    fn gradient(&self, phi: &[f64], y: &[f64], dphi: &mut [f64], dy: &mut [f64]) {
        let n = phi.len();
        let mut bphi = vec![0.0; n];
        let mut by = vec![0.0; n];
        self.a.gradient(phi, y, dphi, dy);
        self.b.gradient(phi, y, &mut bphi, &mut by);
        for j in 0..n {
            dphi[j] += self.scale * bphi[j];
            dy[j] += self.scale * by[j];
        }
    }

    fn dim(&self) -> Option<usize> {
        self.a.dim().or(self.b.dim())
    }
}

/// Pointwise product `a * b`.
#[derive(Clone, Debug)]
pub struct Product {
    pub a: Arc<dyn SmoothPart>,
    pub b: Arc<dyn SmoothPart>,
}

impl SmoothPart for Product {
    fn value(&self, phi: &[f64], y: &[f64]) -> f64 {
        self.a.value(phi, y) * self.b.value(phi, y)
    }

    fn gradient(&self, phi: &[f64], y: &[f64], dphi: &mut [f64], dy: &mut [f64]) {
        let n = phi.len();
        let (va, vb) = (self.a.value(phi, y), self.b.value(phi, y));
        let mut aphi = vec![0.0; n];
        let mut ay = vec![0.0; n];
        let mut bphi = vec![0.0; n];
        let mut by = vec![0.0; n];
        self.a.gradient(phi, y, &mut aphi, &mut ay);
        self.b.gradient(phi, y, &mut bphi, &mut by);
        for j in 0..n {
            dphi[j] = aphi[j] * vb + va * bphi[j];
            dy[j] = ay[j] * vb + va * by[j];
        }
    }

    fn dim(&self) -> Option<usize> {
        self.a.dim().or(self.b.dim())
    }
}

/// `H = kappa * log|y_1| + g(phi, y)`.
#[derive(Clone, Debug)]
pub struct BHamiltonian {
    kappa: f64,
    smooth: Arc<dyn SmoothPart>,
}

/// First partial derivatives of the smooth part, together with the
/// b-derivative `y_1 dH/dy_1 = kappa + y_1 dg/dy_1`, which is finite on `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct BGradient {
    pub dphi: Vec<f64>,
    pub dy: Vec<f64>,
    pub b_dy1: f64,
}

impl BHamiltonian {
    pub fn new(kappa: f64, smooth: Arc<dyn SmoothPart>) -> Self {
        Self { kappa, smooth }
    }

    pub fn smooth(smooth: impl SmoothPart + 'static) -> Self {
        Self::new(0.0, Arc::new(smooth))
    }

    pub fn with_log(kappa: f64, smooth: impl SmoothPart + 'static) -> Self {
        Self::new(kappa, Arc::new(smooth))
    }

    /// `kappa * log|y_1|` with no smooth part.
    pub fn log_only(kappa: f64) -> Self {
        Self::new(kappa, Arc::new(Zero))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn smooth_part(&self) -> &Arc<dyn SmoothPart> {
        &self.smooth
    }

    /// `self + eps * other`: log coefficients add, smooth parts add.
    pub fn perturbed(&self, other: &BHamiltonian, eps: f64) -> Self {
        Self {
            kappa: self.kappa + eps * other.kappa,
            smooth: Arc::new(Sum { a: self.smooth.clone(), b: other.smooth.clone(), scale: eps }),
        }
    }

    /// Scalar multiple `s * H`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { kappa: s * self.kappa, smooth: Arc::new(Sum { a: Arc::new(Zero), b: self.smooth.clone(), scale: s }) }
    }

    /// Value of `H`; `-inf`/`+inf`/`NaN` on `Z` when `kappa != 0`.
    pub fn value(&self, s: &State) -> f64 {
        self.value_at(&s.phi, &s.y)
    }

    pub fn value_at(&self, phi: &[f64], y: &[f64]) -> f64 {
        let g = self.smooth.value(phi, y);
        if self.kappa == 0.0 {
            g
        } else {
            self.kappa * y[0].abs().ln() + g
        }
    }

    pub fn gradient_at(&self, phi: &[f64], y: &[f64]) -> BGradient {
        let n = phi.len();
        let mut dphi = vec![0.0; n];
        let mut dy = vec![0.0; n];
        self.smooth.gradient(phi, y, &mut dphi, &mut dy);
        let b_dy1 = self.kappa + y[0] * dy[0];
        BGradient { dphi, dy, b_dy1 }
    }
}

/// `{F, G}(s)` for the model b-Poisson structure.
///
/// `{y_2, phi_2} = -1` and `{log|y_1|, phi_1} = -1/c`; the value is finite on `Z`.
pub fn poisson_bracket(space: &BPhaseSpace, f: &BHamiltonian, g: &BHamiltonian, s: &State) -> Result<f64> {
    space.check(s)?;
    let df = f.gradient_at(&s.phi, &s.y);
    let dg = g.gradient_at(&s.phi, &s.y);
    Ok(bracket_from_gradients(space.modular_period(), &df, &dg))
}

pub(crate) fn bracket_from_gradients(c: f64, df: &BGradient, dg: &BGradient) -> f64 {
    let mut acc = (df.dphi[0] * dg.b_dy1 - df.b_dy1 * dg.dphi[0]) / c;
    for i in 1..df.dphi.len() {
        acc += df.dphi[i] * dg.dy[i] - df.dy[i] * dg.dphi[i];
    }
    acc
}

/// Velocity `(phi_dot, y_dot)` of the b-Hamiltonian vector field, concatenated.
pub fn hamiltonian_vector_field(space: &BPhaseSpace, h: &BHamiltonian, s: &State) -> Result<Vec<f64>> {
    space.check(s)?;
    let mut out = vec![0.0; 2 * space.dof()];
    vector_field_into(space.modular_period(), h, &s.phi, &s.y, &mut out);
    Ok(out)
}

pub(crate) fn vector_field_into(c: f64, h: &BHamiltonian, phi: &[f64], y: &[f64], out: &mut [f64]) {
    let n = phi.len();
    let g = h.gradient_at(phi, y);
    out[0] = g.b_dy1 / c;
    out[n] = -y[0] * g.dphi[0] / c;
    for i in 1..n {
        out[i] = g.dy[i];
        out[n + i] = -g.dphi[i];
    }
}
