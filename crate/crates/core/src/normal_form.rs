//! Fourier-Taylor series on `T^m x B^m` and the Kolmogorov Newton iteration.
//!
//! A series is `sum_{alpha, k} c_{k,alpha} y^alpha exp(2 pi i k.phi)` with
//! `|k|_inf <= K` and `|alpha| <= D`, stored densely per monomial. Products
//! and brackets go through an FFT grid of side `N >= 3K + 1`, which makes the
//! retained modes of a product of two band-limited series exact.
//!
//! One Newton step is the composition of three canonical maps, each of which
//! keeps the Taylor degree:
//!
//! 1. `y -> y - grad X(phi)`, the time-one flow of `X(phi)`, removes the
//!    oscillating part of `H(phi, 0)`;
//! 2. the translation `y -> y + b` sets the mean frequency to `omega`;
//! 3. the time-one flow of `Y(phi).y` (a torus diffeomorphism lifted to the
//!    actions) removes the oscillating part of `d_y H(phi, 0)`.
//!
//! The translation has to come before the third map: the oscillating part of
//! the action Hessian times `b` would otherwise survive as a first-order
//! defect. A second, quadratically small translation `c` restores the mean
//! frequency after the third map.
//!
//! The pulled-back Hamiltonian is computed by Lie series, the point maps
//! exactly (the torus map by a tight ODE solve), so the inverse is the exact
//! reversal of the four maps.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector as NVector};
use num_complex::Complex64;
use ode_solvers::{DVector, Dop853, OutputType, System};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::trig_poly::{Phase, TrigPoly};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Upper bound on the number of FFT grid points.
pub const MAX_GRID_POINTS: usize = 1 << 22;

/// Cap on Lie-series terms before a transform is declared divergent.
const LIE_MAX_TERMS: usize = 80;

/// Below this residual a step that fails to halve it means round-off floor.
const STALL_FLOOR: f64 = 1e-10;

/// Index sets, multiplication table and FFT plans shared by all series of one shape.
pub struct Basis {
    m: usize,
    k_max: u32,
    degree: u32,
    modes: Vec<Vec<i64>>,
    grid_pos: Vec<usize>,
    monomials: Vec<Vec<u32>>,
    mono_index: HashMap<Vec<u32>, usize>,
    mul: Vec<Vec<Option<usize>>>,
    grid_n: usize,
    grid_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Basis")
            .field("m", &self.m)
            .field("k_max", &self.k_max)
            .field("degree", &self.degree)
            .field("grid_n", &self.grid_n)
            .finish()
    }
}

fn monomials_of(m: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(slot: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slot + 1 == cur.len() {
            cur[slot] = left;
            out.push(cur.clone());
            return;
        }
        for a in (0..=left).rev() {
            cur[slot] = a;
            rec(slot + 1, left - a, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; m];
    for d in 0..=degree {
        rec(0, d, &mut cur, &mut out);
    }
    out
}

impl Basis {
    pub fn new(m: usize, k_max: u32, degree: u32) -> Result<Arc<Self>> {
        if m == 0 {
            return Err(Error::InvalidParameter("series need at least one angle".into()));
        }
        let side = 2 * k_max as usize + 1;
        let grid_n = (3 * k_max as usize + 1).next_power_of_two();
        let grid_len = (0..m).try_fold(1usize, |acc, _| acc.checked_mul(grid_n)).unwrap_or(usize::MAX);
        if grid_len > MAX_GRID_POINTS {
            return Err(Error::InvalidParameter(format!("FFT grid {grid_n}^{m} exceeds {MAX_GRID_POINTS} points")));
        }
        let n_modes = side.pow(m as u32);
        let mut modes = Vec::with_capacity(n_modes);
        let mut grid_pos = Vec::with_capacity(n_modes);
        for idx in 0..n_modes {
            let mut rest = idx;
            let mut k = Vec::with_capacity(m);
            let mut pos = 0;
            let mut stride = 1;
            for _ in 0..m {
                let kj = (rest % side) as i64 - k_max as i64;
                rest /= side;
                pos += (kj.rem_euclid(grid_n as i64) as usize) * stride;
                stride *= grid_n;
                k.push(kj);
            }
            modes.push(k);
            grid_pos.push(pos);
        }
        let monomials = monomials_of(m, degree);
        let mono_index: HashMap<Vec<u32>, usize> = monomials.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let mul = monomials
            .iter()
            .map(|a| {
                monomials
                    .iter()
                    .map(|b| {
                        let c: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                        mono_index.get(&c).copied()
                    })
                    .collect()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            m,
            k_max,
            degree,
            modes,
            grid_pos,
            monomials,
            mono_index,
            mul,
            grid_n,
            grid_len,
            fwd: planner.plan_fft_forward(grid_n),
            inv: planner.plan_fft_inverse(grid_n),
        }))
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_monomials(&self) -> usize {
        self.monomials.len()
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn modes(&self) -> &[Vec<i64>] {
        &self.modes
    }

    pub fn grid_side(&self) -> usize {
        self.grid_n
    }

    pub fn mode_index(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.m {
            return None;
        }
        let side = 2 * self.k_max as i64 + 1;
        let mut idx = 0i64;
        let mut stride = 1i64;
        for &kj in k {
            if kj.abs() > self.k_max as i64 {
                return None;
            }
            idx += (kj + self.k_max as i64) * stride;
            stride *= side;
        }
        Some(idx as usize)
    }

    pub fn monomial_index(&self, alpha: &[u32]) -> Option<usize> {
        self.mono_index.get(alpha).copied()
    }

    fn neg(&self, idx: usize) -> usize {
        self.modes.len() - 1 - idx
    }

    fn unit(&self, j: usize) -> usize {
        let mut a = vec![0; self.m];
        a[j] = 1;
        self.mono_index[&a]
    }

    /// Grid points `phi = n / N` in the same order as the grid arrays.
    pub fn grid_point(&self, idx: usize) -> Vec<f64> {
        let mut rest = idx;
        (0..self.m)
            .map(|_| {
                let v = rest % self.grid_n;
                rest /= self.grid_n;
                v as f64 / self.grid_n as f64
            })
            .collect()
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    fn fft_nd(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let n = self.grid_n;
        if n == 1 {
            return;
        }
        let mut line = vec![ZERO; n];
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        let mut stride = 1;
        for _ in 0..self.m {
            let block = stride * n;
            for outer in (0..self.grid_len).step_by(block) {
                for inner in 0..stride {
                    let start = outer + inner;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[start + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
            stride = block;
        }
    }

    fn to_grid(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut g = vec![ZERO; self.grid_len];
        for (c, &p) in coeffs.iter().zip(&self.grid_pos) {
            g[p] += c;
        }
        self.fft_nd(&mut g, true);
        g
    }

    fn grid_to_coeffs(&self, mut g: Vec<Complex64>) -> Vec<Complex64> {
        self.fft_nd(&mut g, false);
        let s = 1.0 / self.grid_len as f64;
        self.grid_pos.iter().map(|&p| g[p] * s).collect()
    }

    fn same_shape(&self, other: &Basis) -> Result<()> {
        if self.m != other.m {
            return Err(Error::DimensionMismatch { expected: self.m, found: other.m });
        }
        if self.k_max != other.k_max || self.degree != other.degree {
            return Err(Error::InvalidParameter(format!(
                "series shapes differ: (K, D) = ({}, {}) vs ({}, {})",
                self.k_max, self.degree, other.k_max, other.degree
            )));
        }
        Ok(())
    }
}

/// Fourier-Taylor series, optionally with a secular angle part `s.phi`.
#[derive(Clone, Debug)]
pub struct FourierTaylor {
    basis: Arc<Basis>,
    /// Layout `[monomial][mode]`.
    coeffs: Vec<Complex64>,
    secular: Vec<f64>,
}

/// Per-monomial grid values; `None` is an identically zero monomial.
type Grid = Vec<Option<Vec<Complex64>>>;

struct Derivs {
    dphi: Vec<Grid>,
    dy: Vec<Grid>,
}

impl FourierTaylor {
    pub fn zero(basis: &Arc<Basis>) -> Self {
        Self {
            basis: basis.clone(),
            coeffs: vec![ZERO; basis.n_modes() * basis.n_monomials()],
            secular: vec![0.0; basis.m],
        }
    }

    pub fn constant(basis: &Arc<Basis>, c: f64) -> Self {
        let mut s = Self::zero(basis);
        s.add_real_mode(&vec![0; basis.m], &vec![0; basis.m], c, 0.0).expect("constant mode");
        s
    }

    /// The action coordinate `y_j`.
    pub fn action(basis: &Arc<Basis>, j: usize) -> Self {
        let mut s = Self::zero(basis);
        let mut a = vec![0; basis.m];
        a[j] = 1;
        s.add_real_mode(&vec![0; basis.m], &a, 1.0, 0.0).expect("action monomial");
        s
    }

    /// The angle coordinate `phi_j`, a purely secular series.
    pub fn angle(basis: &Arc<Basis>, j: usize) -> Self {
        let mut s = Self::zero(basis);
        s.secular[j] = 1.0;
        s
    }

    pub fn from_trig_poly(basis: &Arc<Basis>, p: &TrigPoly) -> Result<Self> {
        if p.dim() != basis.m {
            return Err(Error::DimensionMismatch { expected: basis.m, found: p.dim() });
        }
        let mut s = Self::zero(basis);
        for t in p.terms() {
            let (a, b) = match t.phase {
                Phase::Cos => (t.coef, 0.0),
                Phase::Sin => (0.0, t.coef),
            };
            s.add_real_mode(&t.k, &t.alpha, a, b)?;
        }
        Ok(s)
    }

    /// Adds `y^alpha (a cos(2 pi k.phi) + b sin(2 pi k.phi))`.
    pub fn add_real_mode(&mut self, k: &[i64], alpha: &[u32], a: f64, b: f64) -> Result<()> {
        let bs = &self.basis;
        let ki = bs
            .mode_index(k)
            .ok_or_else(|| Error::InvalidParameter(format!("mode {k:?} outside |k| <= {}", bs.k_max)))?;
        let mi = bs
            .monomial_index(alpha)
            .ok_or_else(|| Error::InvalidParameter(format!("monomial {alpha:?} outside degree {}", bs.degree)))?;
        let base = mi * bs.n_modes();
        if k.iter().all(|&v| v == 0) {
            self.coeffs[base + ki] += a;
        } else {
            let c = Complex64::new(0.5 * a, -0.5 * b);
            self.coeffs[base + ki] += c;
            self.coeffs[base + bs.neg(ki)] += c.conj();
        }
        Ok(())
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.m
    }

    pub fn secular(&self) -> &[f64] {
        &self.secular
    }

    pub fn is_periodic(&self) -> bool {
        self.secular.iter().all(|&s| s == 0.0)
    }

    fn require_periodic(&self) -> Result<()> {
        if self.is_periodic() {
            Ok(())
        } else {
            Err(Error::NonPeriodic)
        }
    }

    pub fn coeff(&self, k: &[i64], alpha: &[u32]) -> Option<Complex64> {
        let ki = self.basis.mode_index(k)?;
        let mi = self.basis.monomial_index(alpha)?;
        Some(self.coeffs[mi * self.basis.n_modes() + ki])
    }

    fn mono(&self, mi: usize) -> &[Complex64] {
        let n = self.basis.n_modes();
        &self.coeffs[mi * n..(mi + 1) * n]
    }

    fn mono_mut(&mut self, mi: usize) -> &mut [Complex64] {
        let n = self.basis.n_modes();
        &mut self.coeffs[mi * n..(mi + 1) * n]
    }

    /// Angle average of the `y^alpha` coefficient.
    pub fn mean(&self, alpha: &[u32]) -> f64 {
        self.coeff(&vec![0; self.basis.m], alpha).map_or(0.0, |c| c.re)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest `|y^alpha coefficient|` over the FFT grid and all monomials.
    pub fn sup_norm(&self) -> f64 {
        (0..self.basis.n_monomials())
            .filter(|&mi| self.mono(mi).iter().any(|c| *c != ZERO))
            .flat_map(|mi| self.basis.to_grid(self.mono(mi)))
            .fold(0.0, |a: f64, v| a.max(v.re.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.is_periodic() && self.coeffs.iter().all(|c| *c == ZERO)
    }

    /// Largest deviation from `c_{-k} = conj(c_k)`.
    pub fn reality_defect(&self) -> f64 {
        let n = self.basis.n_modes();
        let mut worst: f64 = 0.0;
        for mi in 0..self.basis.n_monomials() {
            let s = self.mono(mi);
            for ki in 0..n {
                worst = worst.max((s[ki] - s[self.basis.neg(ki)].conj()).norm());
            }
        }
        worst
    }

    fn symmetrize(&mut self) {
        let n = self.basis.n_modes();
        for mi in 0..self.basis.n_monomials() {
            let base = mi * n;
            for ki in 0..n {
                let kn = self.basis.neg(ki);
                if kn < ki {
                    continue;
                }
                let c = 0.5 * (self.coeffs[base + ki] + self.coeffs[base + kn].conj());
                self.coeffs[base + ki] = c;
                self.coeffs[base + kn] = c.conj();
            }
        }
    }

    pub fn evaluate(&self, phi: &[f64], y: &[f64]) -> f64 {
        let bs = &self.basis;
        let k = bs.k_max as i64;
        let side = 2 * k as usize + 1;
        let powers: Vec<Vec<Complex64>> =
            phi.iter().map(|&p| (-k..=k).map(|kj| Complex64::from_polar(1.0, TAU * kj as f64 * p)).collect()).collect();
        let exps: Vec<Complex64> = (0..bs.n_modes())
            .map(|idx| {
                let mut rest = idx;
                let mut e = Complex64::new(1.0, 0.0);
                for pw in &powers {
                    e *= pw[rest % side];
                    rest /= side;
                }
                e
            })
            .collect();
        let mut total = 0.0;
        for (mi, alpha) in bs.monomials.iter().enumerate() {
            let s = self.mono(mi);
            if s.iter().all(|c| *c == ZERO) {
                continue;
            }
            let ym: f64 = alpha.iter().zip(y).map(|(&a, &v)| v.powi(a as i32)).product();
            let f: Complex64 = s.iter().zip(&exps).map(|(c, e)| c * e).sum();
            total += ym * f.re;
        }
        total + self.secular.iter().zip(phi).map(|(s, p)| s * p).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out.secular.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.basis.same_shape(&other.basis)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        for (a, b) in out.secular.iter_mut().zip(&other.secular) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// `d/d phi_j` on the unit torus.
    pub fn dphi(&self, j: usize) -> Self {
        let bs = &self.basis;
        let mut out = Self::zero(bs);
        for mi in 0..bs.n_monomials() {
            let src = self.mono(mi);
            let dst = out.mono_mut(mi);
            for ((d, s), k) in dst.iter_mut().zip(src).zip(&bs.modes) {
                if k[j] != 0 {
                    *d = s * Complex64::new(0.0, TAU * k[j] as f64);
                }
            }
        }
        if self.secular[j] != 0.0 {
            let c0 = bs.mode_index(&vec![0; bs.m]).expect("zero mode");
            out.coeffs[c0] += self.secular[j];
        }
        out
    }

    /// `d/d y_j`.
    pub fn dy(&self, j: usize) -> Self {
        let bs = &self.basis;
        let mut out = Self::zero(bs);
        for (mi, alpha) in bs.monomials.iter().enumerate() {
            if alpha[j] == 0 {
                continue;
            }
            let mut lower = alpha.clone();
            lower[j] -= 1;
            let ti = bs.mono_index[&lower];
            let f = alpha[j] as f64;
            let n = bs.n_modes();
            for ki in 0..n {
                out.coeffs[ti * n + ki] += self.coeffs[mi * n + ki] * f;
            }
        }
        out
    }

    /// The `y^alpha` coefficient as an angle-only series.
    pub fn monomial_part(&self, alpha: &[u32]) -> Result<Self> {
        let bs = &self.basis;
        let mi = bs
            .monomial_index(alpha)
            .ok_or_else(|| Error::InvalidParameter(format!("monomial {alpha:?} outside degree {}", bs.degree)))?;
        let mut out = Self::zero(bs);
        out.mono_mut(0).copy_from_slice(self.mono(mi));
        Ok(out)
    }

    fn grid(&self) -> Grid {
        (0..self.basis.n_monomials())
            .map(|mi| {
                let s = self.mono(mi);
                if s.iter().all(|c| *c == ZERO) {
                    None
                } else {
                    Some(self.basis.to_grid(s))
                }
            })
            .collect()
    }

    fn from_grid(basis: &Arc<Basis>, g: Grid) -> Self {
        let mut out = Self::zero(basis);
        for (mi, v) in g.into_iter().enumerate() {
            if let Some(v) = v {
                let c = basis.grid_to_coeffs(v);
                out.mono_mut(mi).copy_from_slice(&c);
            }
        }
        out.symmetrize();
        out
    }

    fn derivs(&self) -> Derivs {
        Derivs {
            dphi: (0..self.basis.m).map(|j| self.dphi(j).grid()).collect(),
            dy: (0..self.basis.m).map(|j| self.dy(j).grid()).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.basis.same_shape(&other.basis)?;
        self.require_periodic()?;
        other.require_periodic()?;
        let mut acc: Grid = vec![None; self.basis.n_monomials()];
        mul_acc(&self.basis, &self.grid(), &other.grid(), 1.0, &mut acc);
        Ok(Self::from_grid(&self.basis, acc))
    }

    /// `{a, b} = sum_j a_phi_j b_y_j - a_y_j b_phi_j`.
    pub fn poisson(&self, other: &Self) -> Result<Self> {
        self.basis.same_shape(&other.basis)?;
        Ok(bracket(&self.basis, &self.derivs(), &other.derivs()))
    }

    /// `H(phi, y + b)`.
    pub fn translate_actions(&self, b: &[f64]) -> Result<Self> {
        let bs = &self.basis;
        if b.len() != bs.m {
            return Err(Error::DimensionMismatch { expected: bs.m, found: b.len() });
        }
        let mut out = Self::zero(bs);
        out.secular = self.secular.clone();
        let n = bs.n_modes();
        for (ai, alpha) in bs.monomials.iter().enumerate() {
            let src = &self.coeffs[ai * n..(ai + 1) * n];
            if src.iter().all(|c| *c == ZERO) {
                continue;
            }
            for (bi, beta) in bs.monomials.iter().enumerate() {
                if beta.iter().zip(alpha).any(|(x, y)| x > y) {
                    continue;
                }
                let f: f64 = alpha
                    .iter()
                    .zip(beta)
                    .zip(b)
                    .map(|((&a, &c), &bv)| binomial(a, c) * bv.powi((a - c) as i32))
                    .product();
                if f == 0.0 {
                    continue;
                }
                for (o, &v) in out.coeffs[bi * n..(bi + 1) * n].iter_mut().zip(src) {
                    *o += v * f;
                }
            }
        }
        Ok(out)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn mul_acc(basis: &Basis, a: &Grid, b: &Grid, s: f64, acc: &mut Grid) {
    for (ia, ga) in a.iter().enumerate() {
        let Some(ga) = ga else { continue };
        for (ib, gb) in b.iter().enumerate() {
            let Some(gb) = gb else { continue };
            let Some(ic) = basis.mul[ia][ib] else { continue };
            let dst = acc[ic].get_or_insert_with(|| vec![ZERO; basis.grid_len]);
            for ((d, x), y) in dst.iter_mut().zip(ga).zip(gb) {
                *d += x * y * s;
            }
        }
    }
}

fn bracket(basis: &Arc<Basis>, a: &Derivs, b: &Derivs) -> FourierTaylor {
    let mut acc: Grid = vec![None; basis.n_monomials()];
    for j in 0..basis.m {
        mul_acc(basis, &a.dphi[j], &b.dy[j], 1.0, &mut acc);
        mul_acc(basis, &a.dy[j], &b.dphi[j], -1.0, &mut acc);
    }
    FourierTaylor::from_grid(basis, acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FtOp {
    Add,
    Mul,
    Poisson,
}

pub fn ft_algebra(a: &FourierTaylor, b: &FourierTaylor, op: FtOp) -> Result<FourierTaylor> {
    match op {
        FtOp::Add => a.add(b),
        FtOp::Mul => a.mul(b),
        FtOp::Poisson => a.poisson(b),
    }
}

/// Distance of a Hamiltonian from Kolmogorov normal form.
#[derive(Clone, Debug, PartialEq)]
pub struct KnfDeviation {
    pub e_dev: f64,
    pub omega_dev: f64,
    pub omega_mean: Vec<f64>,
}

/// Sup norms are taken over the FFT grid, with the mean removed from the
/// coefficients first so that small oscillations are not lost against it.
/// A secular part makes `e_dev` infinite.
pub fn knf_deviation(h: &FourierTaylor) -> KnfDeviation {
    let bs = &h.basis;
    let c0 = bs.mode_index(&vec![0i64; bs.m]).expect("zero mode");
    let oscillation = |mi: usize| -> Vec<f64> {
        let mut s = h.mono(mi).to_vec();
        s[c0] = ZERO;
        if s.iter().all(|c| *c == ZERO) {
            return vec![0.0; bs.grid_len];
        }
        bs.to_grid(&s).into_iter().map(|c| c.re).collect()
    };
    let e_dev =
        if h.is_periodic() { oscillation(0).iter().fold(0.0, |a: f64, v| a.max(v.abs())) } else { f64::INFINITY };
    let mut omega_mean = Vec::with_capacity(bs.m);
    let mut sq = vec![0.0; bs.grid_len];
    for j in 0..bs.m {
        let mi = bs.unit(j);
        omega_mean.push(h.mono(mi)[c0].re);
        for (s, v) in sq.iter_mut().zip(oscillation(mi)) {
            *s += v * v;
        }
    }
    let omega_dev = sq.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt();
    KnfDeviation { e_dev, omega_dev, omega_mean }
}

/// Averaged Hessian in the actions at `y = 0`.
pub fn mean_hessian(h: &FourierTaylor) -> DMatrix<f64> {
    let m = h.basis.m;
    let mut out = DMatrix::zeros(m, m);
    if h.basis.degree < 2 {
        return out;
    }
    for i in 0..m {
        for j in 0..m {
            let mut a = vec![0; m];
            a[i] += 1;
            a[j] += 1;
            let c = h.mean(&a);
            out[(i, j)] = if i == j { 2.0 * c } else { c };
        }
    }
    out
}

/// `det <d_y^2 H(., 0)>`; zero when the Taylor degree is below two.
pub fn nondegeneracy(h: &FourierTaylor) -> f64 {
    mean_hessian(h).determinant()
}

fn check_divisors(basis: &Basis, omega: &[f64], delta: f64) -> Result<()> {
    for k in &basis.modes {
        if k.iter().all(|&v| v == 0) {
            continue;
        }
        let d: f64 = k.iter().zip(omega).map(|(&a, &w)| a as f64 * w).sum();
        if d.abs() <= delta {
            return Err(Error::SmallDivisor { k: k.clone(), divisor: d.abs() });
        }
    }
    Ok(())
}

/// Solves `D_omega u = v - <v>` with `<u> = 0`, monomial by monomial.
pub fn solve_cohomological(v: &FourierTaylor, omega: &[f64], delta: f64) -> Result<FourierTaylor> {
    let bs = &v.basis;
    if omega.len() != bs.m {
        return Err(Error::DimensionMismatch { expected: bs.m, found: omega.len() });
    }
    v.require_periodic()?;
    check_divisors(bs, omega, delta)?;
    let mut u = FourierTaylor::zero(bs);
    let n = bs.n_modes();
    for mi in 0..bs.n_monomials() {
        for (ki, k) in bs.modes.iter().enumerate() {
            let c = v.coeffs[mi * n + ki];
            if c == ZERO || k.iter().all(|&x| x == 0) {
                continue;
            }
            let d: f64 = k.iter().zip(omega).map(|(&a, &w)| a as f64 * w).sum();
            u.coeffs[mi * n + ki] = c / Complex64::new(0.0, TAU * d);
        }
    }
    Ok(u)
}

/// `omega . grad u`.
pub fn directional_derivative(u: &FourierTaylor, omega: &[f64]) -> FourierTaylor {
    let mut out = FourierTaylor::zero(&u.basis);
    for (j, &w) in omega.iter().enumerate() {
        out = out.add(&u.dphi(j).scaled(w)).expect("same basis");
    }
    out
}

/// `exp(L) f` with `L g = {g, chi}`, summed until the terms vanish to round-off.
fn lie_transform(f: &FourierTaylor, chi: &FourierTaylor) -> Result<FourierTaylor> {
    let bs = &f.basis;
    let chi_d = chi.derivs();
    let scale = f.max_abs_coeff().max(f64::MIN_POSITIVE);
    let mut sum = f.clone();
    let mut term = f.clone();
    for j in 1..=LIE_MAX_TERMS {
        term = bracket(bs, &term.derivs(), &chi_d).scaled(1.0 / j as f64);
        let size = term.max_abs_coeff();
        sum = sum.add(&term)?;
        if size <= 1e-17 * scale {
            return Ok(sum);
        }
        if !size.is_finite() {
            break;
        }
    }
    Err(Error::Divergence { iteration: 0, residual: term.max_abs_coeff() })
}

/// Newton solve of `<d_y H(., b)> = omega`.
fn mean_frequency_shift(h: &FourierTaylor, omega: &[f64]) -> Result<Vec<f64>> {
    let bs = &h.basis;
    let m = bs.m;
    let means: Vec<(Vec<u32>, f64)> =
        bs.monomials.iter().map(|a| (a.clone(), h.mean(a))).filter(|(_, c)| *c != 0.0).collect();
    let eval = |b: &[f64]| -> (NVector<f64>, DMatrix<f64>) {
        let mut g = NVector::from_iterator(m, omega.iter().map(|w| -w));
        let mut jac = DMatrix::zeros(m, m);
        for (a, c) in &means {
            for j in 0..m {
                if a[j] == 0 {
                    continue;
                }
                let mut d = a.clone();
                d[j] -= 1;
                g[j] += c * a[j] as f64 * monomial_value(&d, b);
                for l in 0..m {
                    if d[l] == 0 {
                        continue;
                    }
                    let mut e = d.clone();
                    e[l] -= 1;
                    jac[(j, l)] += c * a[j] as f64 * d[l] as f64 * monomial_value(&e, b);
                }
            }
        }
        (g, jac)
    };
    let mut b = vec![0.0; m];
    let (g0, _) = eval(&b);
    if g0.iter().all(|&v| v == 0.0) {
        return Ok(b);
    }
    let scale = omega.iter().fold(1.0f64, |a, w| a.max(w.abs()));
    let mut last = f64::INFINITY;
    for _ in 0..60 {
        let (g, jac) = eval(&b);
        let res = g.amax();
        let step = jac.lu().solve(&(-g)).ok_or_else(|| Error::SingularMatrix("averaged action Hessian".into()))?;
        for (bi, s) in b.iter_mut().zip(step.iter()) {
            *bi += s;
        }
        let size = step.amax();
        if size <= 1e-16 * (1.0 + b.iter().fold(0.0f64, |a, v| a.max(v.abs()))) || (res <= 4e-16 * scale && res >= last)
        {
            return Ok(b);
        }
        last = res;
    }
    let (g, _) = eval(&b);
    if g.amax() <= 1e-12 * scale {
        Ok(b)
    } else {
        Err(Error::NewtonFailure { residual: g.amax() })
    }
}

fn monomial_value(alpha: &[u32], y: &[f64]) -> f64 {
    alpha.iter().zip(y).map(|(&a, &v)| v.powi(a as i32)).product()
}

/// Real trigonometric polynomials in the angles, compiled for point evaluation.
#[derive(Clone, Debug)]
struct AngleField {
    m: usize,
    k_max: i64,
    constant: Vec<f64>,
    /// Wave vector and per-component coefficient; one of each `+-k` pair is kept.
    modes: Vec<(Vec<i64>, Vec<Complex64>)>,
}

/// Modes whose coefficients are all below this contribute nothing at double precision.
const PRUNE: f64 = 1e-20;

impl AngleField {
    fn compile(basis: &Basis, comps: &[&[Complex64]]) -> Self {
        let m = basis.m;
        let c0 = basis.mode_index(&vec![0; m]).expect("zero mode");
        let constant = comps.iter().map(|s| s[c0].re).collect();
        let mut modes = Vec::new();
        for (ki, k) in basis.modes.iter().enumerate() {
            if basis.neg(ki) >= ki {
                continue;
            }
            let cs: Vec<Complex64> = comps.iter().map(|s| s[ki]).collect();
            if cs.iter().all(|c| c.norm() <= PRUNE) {
                continue;
            }
            modes.push((k.clone(), cs));
        }
        Self { m, k_max: basis.k_max as i64, constant, modes }
    }

    fn is_zero(&self) -> bool {
        self.modes.is_empty() && self.constant.iter().all(|&c| c == 0.0)
    }

    /// Values and gradients `grad[c * m + j] = d_j f_c`.
    fn eval(&self, phi: &[f64], val: &mut [f64], grad: &mut [f64]) {
        val.copy_from_slice(&self.constant);
        grad.iter_mut().for_each(|g| *g = 0.0);
        if self.modes.is_empty() {
            return;
        }
        let kk = self.k_max;
        let powers: Vec<Vec<Complex64>> = phi
            .iter()
            .map(|&p| {
                let step = Complex64::from_polar(1.0, TAU * p);
                let mut out = vec![Complex64::new(1.0, 0.0); 2 * kk as usize + 1];
                let mut acc = Complex64::new(1.0, 0.0);
                for i in 1..=kk as usize {
                    acc *= step;
                    out[kk as usize + i] = acc;
                    out[kk as usize - i] = acc.conj();
                }
                out
            })
            .collect();
        for (k, cs) in &self.modes {
            let mut e = Complex64::new(1.0, 0.0);
            for (pw, &kj) in powers.iter().zip(k) {
                e *= pw[(kj + kk) as usize];
            }
            for (c, coef) in cs.iter().enumerate() {
                let z = coef * e;
                val[c] += 2.0 * z.re;
                // d/dphi_j of 2 Re(c e) = -4 pi k_j Im(c e)
                let d = -2.0 * TAU * z.im;
                for j in 0..self.m {
                    grad[c * self.m + j] += d * k[j] as f64;
                }
            }
        }
    }
}

struct LiftedFlow<'a> {
    field: &'a AngleField,
}

impl System<f64, DVector<f64>> for LiftedFlow<'_> {
    fn system(&self, _t: f64, z: &DVector<f64>, dz: &mut DVector<f64>) {
        let m = self.field.m;
        let mut val = vec![0.0; m];
        let mut grad = vec![0.0; m * m];
        self.field.eval(&z.as_slice()[..m], &mut val, &mut grad);
        for i in 0..m {
            dz[i] = val[i];
        }
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..m {
                s += grad[i * m + j] * z[m + i];
            }
            dz[m + j] = -s;
        }
    }
}

/// Generating data of one Newton step and its point maps.
#[derive(Clone, Debug)]
pub struct KolmogorovStep {
    /// Angle-only generator of `y -> y - grad X(phi)`.
    pub x: FourierTaylor,
    /// Action translation before the torus map.
    pub b: Vec<f64>,
    /// Generator `Y(phi).y`.
    pub chi_y: FourierTaylor,
    /// Action translation after the torus map.
    pub c: Vec<f64>,
    grad_x: AngleField,
    y_field: AngleField,
}

const FLOW_TOL: f64 = 1e-14;

fn translate(y: &mut [f64], b: &[f64], sign: f64) {
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += sign * bi;
    }
}

impl KolmogorovStep {
    fn new(x: FourierTaylor, b: Vec<f64>, chi_y: FourierTaylor, c: Vec<f64>) -> Self {
        let bs = x.basis.clone();
        let grad_x = AngleField::compile(&bs, &[x.mono(0)]);
        let ys: Vec<&[Complex64]> = (0..bs.m).map(|i| chi_y.mono(bs.unit(i))).collect();
        let y_field = AngleField::compile(&bs, &ys);
        Self { x, b, chi_y, c, grad_x, y_field }
    }

    pub fn is_identity(&self) -> bool {
        self.grad_x.modes.is_empty() && self.y_field.is_zero() && self.b.iter().chain(&self.c).all(|&v| v == 0.0)
    }

    fn shift_by_grad_x(&self, phi: &[f64], y: &mut [f64], sign: f64) {
        if self.grad_x.modes.is_empty() {
            return;
        }
        let m = phi.len();
        let mut val = [0.0];
        let mut grad = vec![0.0; m];
        self.grad_x.eval(phi, &mut val, &mut grad);
        for (yi, g) in y.iter_mut().zip(&grad) {
            *yi += sign * g;
        }
    }

    fn flow_y(&self, phi: &mut [f64], y: &mut [f64], t: f64) -> Result<()> {
        if self.y_field.is_zero() {
            return Ok(());
        }
        let m = phi.len();
        let z0 = DVector::from_iterator(2 * m, phi.iter().chain(y.iter()).copied());
        let mut solver = Dop853::from_param(
            LiftedFlow { field: &self.y_field },
            0.0,
            t,
            t,
            z0,
            FLOW_TOL,
            FLOW_TOL,
            0.9,
            0.04,
            0.333,
            6.0,
            1.0,
            0.25 * t,
            u32::MAX,
            u32::MAX,
            OutputType::Sparse,
        );
        solver.integrate().map_err(|e| Error::Integrator(e.to_string()))?;
        let z = solver.y_out().last().expect("solver output");
        phi.copy_from_slice(&z.as_slice()[..m]);
        y.copy_from_slice(&z.as_slice()[m..]);
        Ok(())
    }

    /// `Phi_X o T_b o Phi_Y o T_c`, applied in place.
    pub fn apply(&self, phi: &mut [f64], y: &mut [f64]) -> Result<()> {
        translate(y, &self.c, 1.0);
        self.flow_y(phi, y, 1.0)?;
        translate(y, &self.b, 1.0);
        self.shift_by_grad_x(phi, y, -1.0);
        Ok(())
    }

    pub fn apply_inverse(&self, phi: &mut [f64], y: &mut [f64]) -> Result<()> {
        self.shift_by_grad_x(phi, y, 1.0);
        translate(y, &self.b, -1.0);
        self.flow_y(phi, y, -1.0)?;
        translate(y, &self.c, -1.0);
        Ok(())
    }
}

/// `psi = psi_0 o psi_1 o ... o psi_N`; `H o psi` is the final normal form.
#[derive(Clone, Debug)]
pub struct ComposedMap {
    m: usize,
    pub steps: Vec<KolmogorovStep>,
}

impl ComposedMap {
    pub fn identity(m: usize) -> Self {
        Self { m, steps: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_identity(&self) -> bool {
        self.steps.iter().all(KolmogorovStep::is_identity)
    }

    /// Image of `(phi, y)`; angles are returned unwrapped.
    pub fn forward(&self, phi: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(phi, y)?;
        let (mut p, mut q) = (phi.to_vec(), y.to_vec());
        for s in self.steps.iter().rev() {
            s.apply(&mut p, &mut q)?;
        }
        Ok((p, q))
    }

    pub fn inverse(&self, phi: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(phi, y)?;
        let (mut p, mut q) = (phi.to_vec(), y.to_vec());
        for s in &self.steps {
            s.apply_inverse(&mut p, &mut q)?;
        }
        Ok((p, q))
    }

    fn check(&self, phi: &[f64], y: &[f64]) -> Result<()> {
        for v in [phi.len(), y.len()] {
            if v != self.m {
                return Err(Error::DimensionMismatch { expected: self.m, found: v });
            }
        }
        Ok(())
    }
}

/// Newton iteration controls. The series shape `(K, D)` lives in the [`Basis`].
#[derive(Clone, Debug, PartialEq)]
pub struct KnfConfig {
    pub k_max: u32,
    pub degree: u32,
    /// Small-divisor guard on `|k.omega|`.
    pub delta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KnfConfig {
    fn default() -> Self {
        Self { k_max: 16, degree: 3, delta: 1e-10, tol: 1e-12, max_iter: 20 }
    }
}

impl KnfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter("delta must be > 0".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter("tol must be > 0".into()));
        }
        if self.degree < 2 {
            return Err(Error::InvalidParameter("Taylor degree must be >= 2".into()));
        }
        Ok(())
    }

    pub fn basis(&self, m: usize) -> Result<Arc<Basis>> {
        self.validate()?;
        Basis::new(m, self.k_max, self.degree)
    }
}

/// Nondegeneracy below this is treated as singular.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// One Newton step toward normal form with frequency `omega`.
pub fn kolmogorov_step(h: &FourierTaylor, omega: &[f64], delta: f64) -> Result<(KolmogorovStep, FourierTaylor)> {
    let bs = h.basis.clone();
    if omega.len() != bs.m {
        return Err(Error::DimensionMismatch { expected: bs.m, found: omega.len() });
    }
    h.require_periodic()?;
    let det = nondegeneracy(h);
    if !(det.abs() > DEGENERACY_TOL) {
        return Err(Error::Degenerate { det });
    }

    let zero = vec![0; bs.m];
    let x = solve_cohomological(&h.monomial_part(&zero)?, omega, delta)?;
    let h1 = if x.is_zero() { h.clone() } else { lie_transform(h, &x)? };

    let b = mean_frequency_shift(&h1, omega)?;
    let h2 = shifted(h1, &b)?;

    let mut chi_y = FourierTaylor::zero(&bs);
    for i in 0..bs.m {
        let mut e = zero.clone();
        e[i] = 1;
        let yi = solve_cohomological(&h2.monomial_part(&e)?, omega, delta)?;
        let dst = bs.unit(i);
        chi_y.mono_mut(dst).copy_from_slice(yi.mono(0));
    }
    let h3 = if chi_y.is_zero() { h2 } else { lie_transform(&h2, &chi_y)? };

    let c = mean_frequency_shift(&h3, omega)?;
    let h4 = shifted(h3, &c)?;
    Ok((KolmogorovStep::new(x, b, chi_y, c), h4))
}

fn shifted(h: FourierTaylor, b: &[f64]) -> Result<FourierTaylor> {
    if b.iter().all(|&v| v == 0.0) {
        Ok(h)
    } else {
        h.translate_actions(b)
    }
}

/// `max(e_dev, omega_dev, |omega_mean - omega|)`.
pub fn knf_residual(h: &FourierTaylor, omega: &[f64]) -> f64 {
    if h.coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return f64::NAN;
    }
    let d = knf_deviation(h);
    let drift = d.omega_mean.iter().zip(omega).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    d.e_dev.max(d.omega_dev).max(drift)
}

#[derive(Clone, Debug)]
pub struct KnfResult {
    pub map: ComposedMap,
    pub h_star: FourierTaylor,
    /// Residual before the first step and after each step.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl KnfResult {
    pub fn iterations(&self) -> usize {
        self.map.steps.len()
    }

    /// Residuals below this are dominated by coefficient round-off.
    pub fn roundoff_floor(&self) -> f64 {
        16.0 * f64::EPSILON * self.h_star.max_abs_coeff()
    }
}

pub fn kolmogorov_iterate(h: &FourierTaylor, omega: &[f64], cfg: &KnfConfig) -> Result<KnfResult> {
    cfg.validate()?;
    let mut cur = h.clone();
    let mut history = vec![knf_residual(&cur, omega)];
    let mut map = ComposedMap::identity(h.dim());
    if history[0] < cfg.tol {
        return Ok(KnfResult { map, h_star: cur, history, converged: true });
    }
    let mut increases = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iter {
        let (step, next) = kolmogorov_step(&cur, omega, cfg.delta)?;
        let r = knf_residual(&next, omega);
        let prev = *history.last().expect("history");
        if !r.is_finite() {
            return Err(Error::Divergence { iteration: it, residual: r });
        }
        if r > prev {
            increases += 1;
            if increases >= 2 {
                return Err(Error::Divergence { iteration: it, residual: r });
            }
        } else {
            increases = 0;
        }
        map.steps.push(step);
        history.push(r);
        cur = next;
        if r < cfg.tol || (r < STALL_FLOOR && r > 0.5 * prev) {
            converged = true;
            break;
        }
    }
    Ok(KnfResult { map, h_star: cur, history, converged })
}

/// Quadratic-convergence fit over the residual history.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFit {
    /// Number of consecutive `(r_i, r_{i+1})` pairs above the round-off floor.
    pub pairs: usize,
    /// Smallest `C` with `r_{i+1} <= C r_i^2` on those pairs.
    pub c: f64,
    /// Least-squares slope of `log r_{i+1}` against `log r_i`.
    pub slope: f64,
}

/// Uses the leading pairs whose successor stays above `floor`.
pub fn quadratic_fit(history: &[f64], floor: f64) -> QuadraticFit {
    let pairs: Vec<(f64, f64)> =
        history.windows(2).map(|w| (w[0], w[1])).take_while(|&(a, b)| b > floor && a > 0.0).collect();
    let c = pairs.iter().map(|(a, b)| b / (a * a)).fold(0.0, f64::max);
    let slope = if pairs.len() >= 2 {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    QuadraticFit { pairs: pairs.len(), c, slope }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(m: usize, k: u32) -> Arc<Basis> {
        Basis::new(m, k, 3).unwrap()
    }

    fn knf(bs: &Arc<Basis>, omega: &[f64]) -> FourierTaylor {
        let p = TrigPoly::linear_plus_half_square(bs.dim(), omega, 0);
        FourierTaylor::from_trig_poly(bs, &p).unwrap()
    }

    fn random_series(bs: &Arc<Basis>, rng: &mut ChaCha8Rng, terms: usize, amp: f64) -> FourierTaylor {
        let mut s = FourierTaylor::zero(bs);
        let k = bs.k_max() as i64;
        for _ in 0..terms {
            let kv: Vec<i64> = (0..bs.dim()).map(|_| rng.random_range(-k..=k)).collect();
            let mi = rng.random_range(0..bs.n_monomials());
            let alpha = bs.monomials()[mi].clone();
            s.add_real_mode(&kv, &alpha, amp * rng.random_range(-1.0..1.0), amp * rng.random_range(-1.0..1.0)).unwrap();
        }
        s
    }

    #[test]
    fn canonical_pair() {
        let bs = basis(2, 2);
        for j in 0..2 {
            let b = FourierTaylor::action(&bs, j).poisson(&FourierTaylor::angle(&bs, j)).unwrap();
            assert!((b.evaluate(&[0.3, 0.1], &[0.2, -0.4]) + 1.0).abs() < 1e-15);
            assert!((b.mean(&[0, 0]) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_of_linear_form() {
        let bs = basis(2, 1);
        let w = [1.3, -0.7];
        let mut lin = FourierTaylor::zero(&bs);
        lin.add_real_mode(&[0, 0], &[1, 0], w[0], 0.0).unwrap();
        lin.add_real_mode(&[0, 0], &[0, 1], w[1], 0.0).unwrap();
        let sq = lin.mul(&lin).unwrap();
        for alpha in bs.monomials() {
            let c = sq.coeff(&[0, 0], alpha).unwrap();
            let want = match alpha.as_slice() {
                [2, 0] => w[0] * w[0],
                [0, 2] => w[1] * w[1],
                [1, 1] => 2.0 * w[0] * w[1],
                _ => 0.0,
            };
            assert!((c.re - want).abs() < 1e-14 && c.im.abs() < 1e-14, "{alpha:?}");
        }
    }

    #[test]
    fn cosine_against_linear_form() {
        // d/dphi cos(2 pi k.phi) = -2 pi k sin, so {cos, w.y} = -2 pi (k.w) sin.
        let bs = basis(2, 3);
        let w = [1.0, 0.618];
        let k = [2i64, -1];
        let mut c = FourierTaylor::zero(&bs);
        c.add_real_mode(&k, &[0, 0], 1.0, 0.0).unwrap();
        let lin = knf(&bs, &w)
            .sub(
                &FourierTaylor::from_trig_poly(
                    &bs,
                    &TrigPoly::zero(2).with_monomial(0.5, &[2, 0]).with_monomial(0.5, &[0, 2]),
                )
                .unwrap(),
            )
            .unwrap();
        let b = c.poisson(&lin).unwrap();
        let kw = 2.0 * 1.0 - 0.618;
        let mut want = FourierTaylor::zero(&bs);
        want.add_real_mode(&k, &[0, 0], 0.0, -TAU * kw).unwrap();
        assert!(b.sub(&want).unwrap().max_abs_coeff() < 1e-13);
    }

    #[test]
    fn deviation_readouts() {
        let bs = basis(2, 2);
        let w = [1.0, 0.5];
        let h = knf(&bs, &w);
        let d = knf_deviation(&h);
        assert_eq!(d.e_dev, 0.0);
        assert_eq!(d.omega_dev, 0.0);
        assert_eq!(d.omega_mean, w.to_vec());

        let eps = 1e-3;
        let mut a = h.clone();
        a.add_real_mode(&[1, 0], &[0, 0], eps, 0.0).unwrap();
        assert!((knf_deviation(&a).e_dev - eps).abs() < 1e-15);
        let mut b = h.clone();
        b.add_real_mode(&[1, 0], &[1, 0], eps, 0.0).unwrap();
        let d = knf_deviation(&b);
        assert!((d.omega_dev - eps).abs() < 1e-15);
        assert_eq!(d.e_dev, 0.0);
    }

    #[test]
    fn nondegeneracy_examples() {
        let bs = basis(2, 1);
        assert!((nondegeneracy(&knf(&bs, &[1.0, 0.3])) - 1.0).abs() < 1e-15);
        let q = TrigPoly::zero(2).with_monomial(1.0, &[2, 0]).with_monomial(3.0, &[0, 2]);
        assert!((nondegeneracy(&FourierTaylor::from_trig_poly(&bs, &q).unwrap()) - 12.0).abs() < 1e-13);
        let q = TrigPoly::zero(2).with_monomial(1.0, &[1, 1]);
        assert!((nondegeneracy(&FourierTaylor::from_trig_poly(&bs, &q).unwrap()) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cohomological_examples() {
        let bs = basis(2, 4);
        let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
        let u = solve_cohomological(&FourierTaylor::constant(&bs, 2.5), &w, 1e-10).unwrap();
        assert!(u.is_zero());

        let k = [3i64, -2];
        let mut v = FourierTaylor::zero(&bs);
        v.add_real_mode(&k, &[0, 0], 1.0, 0.0).unwrap();
        let u = solve_cohomological(&v, &w, 1e-10).unwrap();
        let kw = 3.0 * w[0] - 2.0 * w[1];
        let mut want = FourierTaylor::zero(&bs);
        want.add_real_mode(&k, &[0, 0], 0.0, 1.0 / (TAU * kw)).unwrap();
        assert!(u.sub(&want).unwrap().max_abs_coeff() < 1e-15);
        let back = directional_derivative(&u, &w);
        assert!(back.sub(&v).unwrap().max_abs_coeff() < 1e-12);

        let err = solve_cohomological(&v, &[1.0, 0.5], 1e-10).unwrap_err();
        match err {
            Error::SmallDivisor { k, divisor } => {
                assert_eq!(k[0] as f64 + 0.5 * k[1] as f64, 0.0);
                assert_eq!(divisor, 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn secular_products_are_rejected() {
        let bs = basis(2, 1);
        let p = FourierTaylor::angle(&bs, 0);
        assert_eq!(p.mul(&FourierTaylor::action(&bs, 1)).unwrap_err(), Error::NonPeriodic);
    }

    #[test]
    fn translation_matches_pointwise_shift() {
        let bs = basis(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_series(&bs, &mut rng, 12, 1.0);
        let b = [0.13, -0.07];
        let t = s.translate_actions(&b).unwrap();
        let (phi, y) = ([0.21, 0.77], [0.05, 0.11]);
        let want = s.evaluate(&phi, &[y[0] + b[0], y[1] + b[1]]);
        assert!((t.evaluate(&phi, &y) - want).abs() < 1e-13);
    }

    #[test]
    fn knf_is_a_fixed_point() {
        let bs = basis(2, 4);
        let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
        let h = knf(&bs, &w);
        let (step, h_new) = kolmogorov_step(&h, &w, 1e-10).unwrap();
        assert!(step.is_identity());
        assert_eq!(h_new.coeffs, h.coeffs);
    }

    #[test]
    fn one_step_is_quadratic() {
        let bs = basis(2, 6);
        let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
        let mut ratios = Vec::new();
        for eps in [1e-3, 1e-4] {
            let mut h = knf(&bs, &w);
            h.add_real_mode(&[1, 0], &[0, 0], eps, 0.0).unwrap();
            let r0 = knf_residual(&h, &w);
            let (_, h1) = kolmogorov_step(&h, &w, 1e-10).unwrap();
            let r1 = knf_residual(&h1, &w);
            assert!(r1 < 10.0 * eps * r0, "eps {eps}: {r0} -> {r1}");
            ratios.push((r0, r1));
        }
        let slope = (ratios[0].1 / ratios[1].1).ln() / (ratios[0].0 / ratios[1].0).ln();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn mean_linear_defect_is_absorbed_by_translation() {
        let bs = basis(2, 2);
        let w = [1.0, 0.3];
        let eps = 1e-3;
        let mut h = knf(&bs, &w);
        h.add_real_mode(&[0, 0], &[1, 0], eps, 0.0).unwrap();
        let (step, h1) = kolmogorov_step(&h, &w, 1e-10).unwrap();
        assert!((step.b[0] + eps).abs() < 1e-15 && step.b[1].abs() < 1e-15);
        let d = knf_deviation(&h1);
        assert!((d.omega_mean[0] - w[0]).abs() < 1e-15 && (d.omega_mean[1] - w[1]).abs() < 1e-15);
        assert!(d.omega_dev <= eps * eps);
    }

    fn desk_like(bs: &Arc<Basis>, eps: f64) -> (FourierTaylor, [f64; 2]) {
        let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
        let f = TrigPoly::zero(2)
            .with_term(1.0, &[1, 0], &[0, 0], Phase::Cos)
            .with_term(0.5, &[1, -1], &[0, 1], Phase::Sin)
            .with_term(0.4, &[0, 1], &[1, 0], Phase::Cos)
            .with_term(0.2, &[1, 1], &[1, 1], Phase::Cos);
        let h = knf(bs, &w).add(&FourierTaylor::from_trig_poly(bs, &f).unwrap().scaled(eps)).unwrap();
        (h, w)
    }

    #[test]
    fn iteration_stops_immediately_above_tolerance() {
        let bs = basis(2, 8);
        let (h, w) = desk_like(&bs, 1e-6);
        let cfg = KnfConfig { tol: 1.0, ..KnfConfig::default() };
        let out = kolmogorov_iterate(&h, &w, &cfg).unwrap();
        assert_eq!(out.iterations(), 0);
        assert!(out.map.is_identity());
        let (p, y) = out.map.forward(&[0.3, 0.4], &[0.01, 0.02]).unwrap();
        assert_eq!((p, y), (vec![0.3, 0.4], vec![0.01, 0.02]));
    }

    #[test]
    fn iteration_converges_and_map_conjugates() {
        let bs = basis(2, 12);
        let (h, w) = desk_like(&bs, 1e-3);
        let out = kolmogorov_iterate(&h, &w, &KnfConfig::default()).unwrap();
        assert!(out.converged, "{:?}", out.history);
        let fit = quadratic_fit(&out.history, out.roundoff_floor());
        assert!(fit.pairs >= 2 && (fit.slope - 2.0).abs() < 0.3, "{:?} {fit:?}", out.history);

        // H o psi agrees with the returned normal form.
        for (phi, y) in [([0.1, 0.7], [0.01, -0.02]), ([0.55, 0.25], [-0.015, 0.005])] {
            let (p, q) = out.map.forward(&phi, &y).unwrap();
            let lhs = h.evaluate(&p, &q);
            assert!((lhs - out.h_star.evaluate(&phi, &y)).abs() < 1e-12);
            let (p2, q2) = out.map.inverse(&p, &q).unwrap();
            for j in 0..2 {
                assert!((p2[j] - phi[j]).abs() < 1e-12 && (q2[j] - y[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composed_map_is_symplectic() {
        let bs = basis(2, 10);
        let (h, w) = desk_like(&bs, 1e-2);
        let out = kolmogorov_iterate(&h, &w, &KnfConfig::default()).unwrap();
        let hstep = 1e-5;
        for (phi, y) in [([0.1, 0.2], [0.0, 0.0]), ([0.6, 0.9], [0.02, -0.01]), ([0.35, 0.45], [-0.01, 0.03])] {
            let z = [phi[0], phi[1], y[0], y[1]];
            let mut jac = DMatrix::zeros(4, 4);
            for c in 0..4 {
                let mut a = z;
                let mut b = z;
                a[c] += hstep;
                b[c] -= hstep;
                let (pa, qa) = out.map.forward(&a[..2], &a[2..]).unwrap();
                let (pb, qb) = out.map.forward(&b[..2], &b[2..]).unwrap();
                for r in 0..2 {
                    jac[(r, c)] = (pa[r] - pb[r]) / (2.0 * hstep);
                    jac[(r + 2, c)] = (qa[r] - qb[r]) / (2.0 * hstep);
                }
            }
            let mut omega = DMatrix::zeros(4, 4);
            for i in 0..2 {
                omega[(i, i + 2)] = 1.0;
                omega[(i + 2, i)] = -1.0;
            }
            let defect = (jac.transpose() * &omega * &jac - &omega).amax();
            assert!(defect < 1e-8, "defect {defect}");
        }
    }

    #[test]
    fn cohomological_round_trip_random() {
        let bs = basis(2, 16);
        let w = [1.0, (5f64.sqrt() - 1.0) / 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let v = random_series(&bs, &mut rng, 40, 1.0);
            let u = solve_cohomological(&v, &w, 1e-10).unwrap();
            let mut centered = v.clone();
            for alpha in bs.monomials() {
                let m = v.mean(alpha);
                centered.add_real_mode(&[0, 0], alpha, -m, 0.0).unwrap();
            }
            let d = directional_derivative(&u, &w).sub(&centered).unwrap();
            assert!(d.max_abs_coeff() <= 1e-12);
            assert!(d.sup_norm() <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn operations_keep_reality(seed in any::<u64>()) {
            let bs = basis(2, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_series(&bs, &mut rng, 8, 1.0);
            let b = random_series(&bs, &mut rng, 8, 1.0);
            for op in [FtOp::Add, FtOp::Mul, FtOp::Poisson] {
                let c = ft_algebra(&a, &b, op).unwrap();
                prop_assert!(c.reality_defect() < 1e-14);
            }
        }

        #[test]
        fn product_evaluates_pointwise(seed in any::<u64>(), p0 in 0.0..1.0f64, p1 in 0.0..1.0f64) {
            // Degree-1 factors so no Taylor truncation occurs; modes up to K/2 avoid Fourier truncation.
            let bs = basis(2, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || {
                let mut s = FourierTaylor::zero(&bs);
                for _ in 0..4 {
                    let k = [rng.random_range(-2..=2), rng.random_range(-2..=2)];
                    let alpha = [[0, 0], [1, 0], [0, 1]][rng.random_range(0..3)];
                    s.add_real_mode(&k, &alpha, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).unwrap();
                }
                s
            };
            let a = mk();
            let b = mk();
            let phi = [p0, p1];
            let y = [0.3, -0.2];
            let c = a.mul(&b).unwrap();
            prop_assert!((c.evaluate(&phi, &y) - a.evaluate(&phi, &y) * b.evaluate(&phi, &y)).abs() < 1e-12);
        }
    }
}
