//! Trigonometric polynomials in the angles with polynomial dependence on the
//! actions, `sum c * y^alpha * cos|sin(2 pi k.phi)`.
//!
//! This is the workhorse evaluator of the crate: polynomial integrals, the
//! smooth part of b-Hamiltonians and the structured perturbations are all
//! built from it, and it converts exactly into a Fourier-Taylor series.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::phase_space::SmoothPart;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub coef: f64,
    /// Fourier wave vector, one entry per angle.
    pub k: Vec<i64>,
    /// Exponents of the actions.
    pub alpha: Vec<u32>,
    pub phase: Phase,
}

impl TrigTerm {
    fn angle_arg(&self, phi: &[f64]) -> f64 {
        TAU * self.k.iter().zip(phi).map(|(&k, &p)| k as f64 * p).sum::<f64>()
    }

    pub fn degree(&self) -> u32 {
        self.alpha.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    dim: usize,
    terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn from_terms(dim: usize, terms: Vec<TrigTerm>) -> Result<Self> {
        let mut p = Self::zero(dim);
        for t in terms {
            p.push(t)?;
        }
        Ok(p)
    }

    pub fn push(&mut self, term: TrigTerm) -> Result<()> {
        if term.k.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: term.k.len() });
        }
        if term.alpha.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: term.alpha.len() });
        }
        if !term.coef.is_finite() {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        self.terms.push(term);
        Ok(())
    }

    /// Adds `coef * y^alpha`.
    pub fn with_monomial(mut self, coef: f64, alpha: &[u32]) -> Self {
        let term = TrigTerm { coef, k: vec![0; self.dim], alpha: alpha.to_vec(), phase: Phase::Cos };
        self.push(term).expect("monomial dimension");
        self
    }

    /// Adds `coef * y^alpha * cos|sin(2 pi k.phi)`.
    pub fn with_term(mut self, coef: f64, k: &[i64], alpha: &[u32], phase: Phase) -> Self {
        let term = TrigTerm { coef, k: k.to_vec(), alpha: alpha.to_vec(), phase };
        self.push(term).expect("term dimension");
        self
    }

    /// `omega . y + 1/2 |y|^2` over the actions `first .. first + omega.len()`.
    pub fn linear_plus_half_square(dim: usize, omega: &[f64], first: usize) -> Self {
        let mut p = Self::zero(dim);
        for (j, &w) in omega.iter().enumerate() {
            let mut a = vec![0; dim];
            a[first + j] = 1;
            p = p.with_monomial(w, &a);
            a[first + j] = 2;
            p = p.with_monomial(0.5, &a);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(TrigTerm::degree).max().unwrap_or(0)
    }

    /// True when no term depends on the angles.
    pub fn is_angle_free(&self) -> bool {
        self.terms.iter().all(|t| t.k.iter().all(|&k| k == 0))
    }

    /// Restriction to the hypersurface `y_1 = 0`, dropping the first angle and action.
    ///
    /// Terms carrying a power of `y_1` vanish; surviving terms must not depend on `phi_1`.
    pub fn restrict_to_hypersurface(&self) -> Result<Self> {
        if self.dim < 2 {
            return Err(Error::InvalidParameter("restriction needs at least two degrees of freedom".into()));
        }
        let mut out = Self::zero(self.dim - 1);
        for t in &self.terms {
            if t.alpha[0] > 0 {
                continue;
            }
            if t.k[0] != 0 {
                return Err(Error::InvalidParameter(format!(
                    "term depends on phi_1 on the hypersurface (k = {:?})",
                    t.k
                )));
            }
            out.terms.push(TrigTerm {
                coef: t.coef,
                k: t.k[1..].to_vec(),
                alpha: t.alpha[1..].to_vec(),
                phase: t.phase,
            });
        }
        Ok(out)
    }

    /// Scalar multiple.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coef *= s;
        }
        out
    }
}

fn pow_i(x: f64, e: u32) -> f64 {
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}

impl SmoothPart for TrigPoly {
    fn value(&self, phi: &[f64], y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let poly: f64 = t.alpha.iter().zip(y).map(|(&a, &v)| pow_i(v, a)).product();
                let trig = match t.phase {
                    Phase::Cos => t.angle_arg(phi).cos(),
                    Phase::Sin => t.angle_arg(phi).sin(),
                };
                t.coef * poly * trig
            })
            .sum()
    }

    fn gradient(&self, phi: &[f64], y: &[f64], dphi: &mut [f64], dy: &mut [f64]) {
        dphi.iter_mut().for_each(|v| *v = 0.0);
        dy.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let arg = t.angle_arg(phi);
            let (trig, dtrig) = match t.phase {
                Phase::Cos => (arg.cos(), -arg.sin()),
                Phase::Sin => (arg.sin(), arg.cos()),
            };
            let poly: f64 = t.alpha.iter().zip(y).map(|(&a, &v)| pow_i(v, a)).product();
            if t.k.iter().any(|&k| k != 0) {
                let s = t.coef * poly * dtrig * TAU;
                for (d, &k) in dphi.iter_mut().zip(&t.k) {
                    *d += s * k as f64;
                }
            }
            for j in 0..y.len() {
                let a = t.alpha[j];
                if a == 0 {
                    continue;
                }
                let mut p = a as f64 * pow_i(y[j], a - 1);
                for (i, (&ai, &yi)) in t.alpha.iter().zip(y).enumerate() {
                    if i != j {
                        p *= pow_i(yi, ai);
                    }
                }
                dy[j] += t.coef * p * trig;
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}
