//! Period lattices of integrable b-systems and canonical-relation checks.
//!
//! The joint flow of `n` commuting integrals `F = (F_1, .., F_n)` defines an
//! action of `R^n` on each regular level set; its isotropy at a point is the
//! period lattice. At points of `Z` with `F_n = log|y_1|` the last generator
//! is `c e_n`, so the modular period can be read off the lattice.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{flow, sample_trajectory, IntegratorConfig};
use crate::error::{Error, Result};
use crate::frequency::measure_torus_frequencies;
use crate::phase_space::{angle_distance, hamiltonian_vector_field, poisson_bracket, BHamiltonian, BPhaseSpace, State};

/// Pairwise brackets above this reject a family as not integrable.
pub const COMMUTATION_TOL: f64 = 1e-8;
/// Required return residual after Newton.
pub const LATTICE_TOL: f64 = 1e-8;
/// Finite-difference step for the Jacobian of the return map.
pub const FD_STEP: f64 = 1e-6;
/// Largest denominator accepted when generator components are compared.
pub const MAX_DENOMINATOR: u64 = 64;

const NAFF_SAMPLES: usize = 1024;
const NEWTON_MAX_ITER: usize = 30;

/// `n` integrals on the model chart together with the integrator used for their flows.
#[derive(Clone, Debug)]
pub struct IntegrableSystem {
    pub space: BPhaseSpace,
    pub integrals: Vec<BHamiltonian>,
    pub integrator: IntegratorConfig,
}

impl IntegrableSystem {
    pub fn new(space: BPhaseSpace, integrals: Vec<BHamiltonian>) -> Result<Self> {
        if integrals.len() != space.dof() {
            return Err(Error::DimensionMismatch { expected: space.dof(), found: integrals.len() });
        }
        let integrator = IntegratorConfig { abs_tol: 1e-13, rel_tol: 1e-13, ..IntegratorConfig::default() };
        Ok(Self { space, integrals, integrator })
    }

    pub fn dof(&self) -> usize {
        self.space.dof()
    }

    /// Fails with [`Error::NotIntegrable`] if some `|{F_i, F_j}(m)|` exceeds [`COMMUTATION_TOL`].
    pub fn check_commuting(&self, m: &State) -> Result<()> {
        for i in 0..self.dof() {
            for j in i + 1..self.dof() {
                let bracket = poisson_bracket(&self.space, &self.integrals[i], &self.integrals[j], m)?;
                if !(bracket.abs() <= COMMUTATION_TOL) {
                    return Err(Error::NotIntegrable { i, j, bracket });
                }
            }
        }
        Ok(())
    }
}

/// `Phi(s, m)`: flow of `F_1` for time `s_1`, then `F_2` for `s_2`, and so on.
/// Commutation is checked at the start and end point.
pub fn joint_flow(system: &IntegrableSystem, s: &[f64], m: &State) -> Result<State> {
    if s.len() != system.dof() {
        return Err(Error::DimensionMismatch { expected: system.dof(), found: s.len() });
    }
    system.check_commuting(m)?;
    let out = joint_flow_unchecked(system, s, m)?;
    system.check_commuting(&out)?;
    Ok(out)
}

fn joint_flow_unchecked(system: &IntegrableSystem, s: &[f64], m: &State) -> Result<State> {
    let mut cur = m.clone();
    for (f, &t) in system.integrals.iter().zip(s) {
        cur = flow(&system.space, f, &cur, t, &system.integrator)?;
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodLattice {
    /// Row `i` is the generator `lambda_i`, in flow-time units.
    pub basis: DMatrix<f64>,
    pub base_point: State,
    /// Largest `|Phi(lambda_i, m) - m|` over the rows.
    pub residual: f64,
}

impl PeriodLattice {
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.basis.row(i).iter().copied().collect()
    }
}

/// `Phi(s, m) - m` with wrapped angle differences.
pub fn return_defect(system: &IntegrableSystem, s: &[f64], m: &State) -> Result<Vec<f64>> {
    let out = joint_flow_unchecked(system, s, m)?;
    let n = system.dof();
    let mut r = Vec::with_capacity(2 * n);
    r.extend((0..n).map(|a| angle_distance(out.phi[a], m.phi[a])));
    r.extend((0..n).map(|a| out.y[a] - m.y[a]));
    Ok(r)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

/// Gauss-Newton on the return condition with a central-difference Jacobian.
fn refine_period(system: &IntegrableSystem, seed: &[f64], m: &State) -> Result<(Vec<f64>, f64)> {
    let n = system.dof();
    let mut s = seed.to_vec();
    let mut r = return_defect(system, &s, m)?;
    for _ in 0..NEWTON_MAX_ITER {
        if sup(&r) <= 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(2 * n, n);
        for j in 0..n {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp[j] += FD_STEP;
            sm[j] -= FD_STEP;
            let rp = return_defect(system, &sp, m)?;
            let rm = return_defect(system, &sm, m)?;
            for a in 0..2 * n {
                jac[(a, j)] = (rp[a] - rm[a]) / (2.0 * FD_STEP);
            }
        }
        let step = jac
            .svd(true, true)
            .solve(&DVector::from_vec(r.clone()), 1e-10)
            .map_err(|e| Error::SingularMatrix(e.to_string()))?;
        let cand: Vec<f64> = s.iter().zip(step.iter()).map(|(a, d)| a - d).collect();
        let rc = return_defect(system, &cand, m)?;
        if sup(&rc) >= sup(&r) {
            break;
        }
        s = cand;
        r = rc;
    }
    let res = sup(&r);
    if !(res <= LATTICE_TOL) {
        return Err(Error::NewtonFailure { residual: res });
    }
    Ok((s, res))
}

/// Measured angle frequencies of each single flow; column `j` belongs to `F_j`.
fn frequency_matrix(system: &IntegrableSystem, m: &State) -> Result<DMatrix<f64>> {
    let n = system.dof();
    let mut w = DMatrix::zeros(n, n);
    for (j, f) in system.integrals.iter().enumerate() {
        let v = hamiltonian_vector_field(&system.space, f, m)?;
        let speed = sup(&v[..n]);
        if !(speed > 0.0) {
            return Err(Error::RankDeficient(format!("the flow of F_{} does not move the angles", j + 1)));
        }
        let dt = 0.2 / speed;
        let traj = sample_trajectory(&system.space, f, m, (NAFF_SAMPLES - 1) as f64 * dt, dt, &system.integrator)?;
        let tf = measure_torus_frequencies(&traj)?;
        for a in 0..n {
            w[(a, j)] = tf.omega[a];
        }
    }
    Ok(w)
}

/// Best rational approximation `p/q` of `x` with `q <= max_den`, if within `tol`.
pub fn rational_approx(x: f64, max_den: u64, tol: f64) -> Option<(i64, u64)> {
    if !x.is_finite() {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1u64, 1i64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a as i64 * p1 + p0, a as u64 * q1 + q0);
        if q2 > max_den {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        if (x - p1 as f64 / q1 as f64).abs() <= tol {
            return Some((p1, q1));
        }
        let frac = r - a;
        if frac.abs() < 1e-300 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// Unimodular row reduction making the last column `(0, .., 0, +g)`.
fn normalize_on_z(basis: &mut DMatrix<f64>) -> Result<()> {
    let n = basis.nrows();
    let last = n - 1;
    let scale = basis.column(last).iter().fold(0.0, |a: f64, b| a.max(b.abs()));
    if scale == 0.0 {
        return Err(Error::RankDeficient("no generator moves the singular angle".into()));
    }
    let tiny = 1e-9 * scale;
    for _ in 0..64 * n {
        let active: Vec<usize> = (0..n).filter(|&i| basis[(i, last)].abs() > tiny).collect();
        if active.len() <= 1 {
            break;
        }
        let p = *active
            .iter()
            .min_by(|&&a, &&b| basis[(a, last)].abs().total_cmp(&basis[(b, last)].abs()))
            .expect("non-empty");
        for &j in &active {
            if j == p {
                continue;
            }
            let ratio = basis[(j, last)] / basis[(p, last)];
            if rational_approx(ratio, MAX_DENOMINATOR, 1e-7 * ratio.abs().max(1.0)).is_none() {
                return Err(Error::RankDeficient(format!(
                    "singular-angle periods are incommensurable (ratio {ratio})"
                )));
            }
            let rounded = ratio.round();
            let q = if (ratio - rounded).abs() <= 1e-7 * ratio.abs().max(1.0) { rounded } else { ratio.floor() };
            let row_p = basis.row(p).clone_owned();
            let mut row_j = basis.row_mut(j);
            row_j -= row_p * q;
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| basis[(i, last)].abs() > tiny).collect();
    if active.len() != 1 {
        return Err(Error::RankDeficient("reduction of the singular-angle periods did not terminate".into()));
    }
    let k = active[0];
    if k != last {
        let row = basis.row(k).clone_owned();
        for i in k..last {
            let next = basis.row(i + 1).clone_owned();
            basis.set_row(i, &next);
        }
        basis.set_row(last, &row);
    }
    if basis[(last, last)] < 0.0 {
        let neg = -basis.row(last).clone_owned();
        basis.set_row(last, &neg);
    }
    Ok(())
}

/// Period lattice at `m`, seeded from measured frequencies and polished by Newton.
/// On `Z` the rows are reduced so that `lambda_i^n = 0` for `i < n` and `lambda_n^n > 0`.
pub fn period_lattice(system: &IntegrableSystem, m: &State) -> Result<PeriodLattice> {
    system.space.check(m)?;
    system.check_commuting(m)?;
    let n = system.dof();
    let w = frequency_matrix(system, m)?;
    let sv = w.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-8 * smax) {
        return Err(Error::RankDeficient(format!(
            "measured frequency matrix is singular (singular values {smin:e} / {smax:e})"
        )));
    }
    // The return times satisfy W s in Z^n, so the columns of W^-1 seed a basis.
    let winv = w.try_inverse().ok_or_else(|| Error::SingularMatrix("frequency matrix".into()))?;
    let mut basis = DMatrix::zeros(n, n);
    for i in 0..n {
        let seed: Vec<f64> = winv.column(i).iter().copied().collect();
        let (s, _) = refine_period(system, &seed, m)?;
        for j in 0..n {
            basis[(i, j)] = s[j];
        }
    }
    if m.on_hypersurface() {
        normalize_on_z(&mut basis)?;
    }
    let mut residual: f64 = 0.0;
    for i in 0..n {
        let row: Vec<f64> = basis.row(i).iter().copied().collect();
        let (s, res) = refine_period(system, &row, m)?;
        residual = residual.max(res);
        for j in 0..n {
            basis[(i, j)] = s[j];
        }
    }
    let det = basis.determinant();
    let vol = basis.row_iter().map(|r| r.norm()).product::<f64>();
    if !(det.abs() > 1e-8 * vol) {
        return Err(Error::RankDeficient(format!("lattice basis is degenerate (det {det:e})")));
    }
    Ok(PeriodLattice { basis, base_point: m.clone(), residual })
}

/// `|lambda_n^n|` of the lattice at a point of `Z`.
pub fn modular_period_estimate(system: &IntegrableSystem, m_on_z: &State) -> Result<f64> {
    if !m_on_z.on_hypersurface() {
        return Err(Error::InvalidParameter(format!("base point must lie on Z, got y_1 = {}", m_on_z.y[0])));
    }
    let lat = period_lattice(system, m_on_z)?;
    let n = system.dof();
    Ok(lat.basis[(n - 1, n - 1)].abs())
}

/// Largest violation of `{theta_j, sigma_i} = delta_ij` and `{theta_i, theta_j} = 0` over `points`.
///
/// With the bracket of this chart `{phi_i, y_i} = 1` and `{phi_1, c log|y_1|} = 1`,
/// so the angles come first.
pub fn canonical_relations_check(
    space: &BPhaseSpace,
    sigma: &[BHamiltonian],
    theta: &[BHamiltonian],
    points: &[State],
) -> Result<f64> {
    let n = space.dof();
    if sigma.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: sigma.len() });
    }
    if theta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: theta.len() });
    }
    let mut worst: f64 = 0.0;
    for p in points {
        for j in 0..n {
            for i in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((poisson_bracket(space, &theta[j], &sigma[i], p)? - delta).abs());
                if i < j {
                    worst = worst.max(poisson_bracket(space, &theta[i], &theta[j], p)?.abs());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::phase_space::{Coordinate, Sum};
    use crate::trig_poly::{Phase, TrigPoly};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard(n: usize, c: f64) -> IntegrableSystem {
        let space = BPhaseSpace::new(n, c, 1.0).unwrap();
        let mut f: Vec<BHamiltonian> = (1..n).map(|i| BHamiltonian::smooth(Coordinate::Action(i))).collect();
        f.push(BHamiltonian::log_only(1.0));
        IntegrableSystem::new(space, f).unwrap()
    }

    fn on_z(n: usize) -> State {
        let mut y = vec![0.0; n];
        y[1] = 0.1;
        State::new((0..n).map(|i| 0.13 + 0.21 * i as f64).collect(), y)
    }

    fn assert_basis(lat: &PeriodLattice, expect: &[Vec<f64>], tol: f64) {
        for (i, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((lat.basis[(i, j)] - v).abs() < tol, "row {i}: {:?}", lat.row(i));
            }
        }
    }

    #[test]
    fn joint_flow_shifts_angles() {
        let space = BPhaseSpace::new(3, 1.0, 1.0).unwrap();
        let f = (0..3).map(|i| BHamiltonian::smooth(Coordinate::Action(i))).collect();
        let sys = IntegrableSystem::new(space, f).unwrap();
        let m = State::new(vec![0.1, 0.2, 0.3], vec![0.2, -0.1, 0.05]);
        let out = joint_flow(&sys, &[0.0, 0.25, 0.4], &m).unwrap();
        // y_1 is not a unit-speed generator: phi_1' = y_1 / c.
        assert!(angle_distance(out.phi[0], 0.1).abs() < 1e-14);
        assert!(angle_distance(out.phi[1], 0.45).abs() < 1e-12);
        assert!(angle_distance(out.phi[2], 0.7).abs() < 1e-12);
        assert_eq!(out.y, m.y);
    }

    #[test]
    fn joint_flow_is_order_independent() {
        let space = BPhaseSpace::new(2, 1.5, 1.0).unwrap();
        let f1 = BHamiltonian::smooth(TrigPoly::zero(2).with_monomial(0.5, &[0, 2]).with_monomial(1.0, &[0, 1]));
        let f2 = BHamiltonian::with_log(1.0, TrigPoly::zero(2).with_monomial(0.3, &[0, 1]));
        let ab = IntegrableSystem::new(space, vec![f1.clone(), f2.clone()]).unwrap();
        let ba = IntegrableSystem::new(space, vec![f2, f1]).unwrap();
        let m = State::new(vec![0.3, 0.6], vec![0.0, 0.2]);
        let p = joint_flow(&ab, &[0.7, 1.1], &m).unwrap();
        let q = joint_flow(&ba, &[1.1, 0.7], &m).unwrap();
        assert!(p.distance(&q) <= 1e-8, "{p:?} {q:?}");
    }

    #[test]
    fn joint_flow_rejects_non_commuting() {
        let space = BPhaseSpace::new(2, 1.0, 1.0).unwrap();
        let f1 = BHamiltonian::smooth(Coordinate::Action(1));
        let f2 = BHamiltonian::smooth(TrigPoly::zero(2).with_term(1.0, &[0, 1], &[0, 0], Phase::Cos));
        let sys = IntegrableSystem::new(space, vec![f1, f2]).unwrap();
        let m = State::new(vec![0.0, 0.1], vec![0.0, 0.0]);
        assert!(matches!(joint_flow(&sys, &[0.1, 0.1], &m), Err(Error::NotIntegrable { i: 0, j: 1, .. })));
    }

    #[test]
    fn log_flow_turns_once_in_time_c() {
        let c = 2.5;
        let sys = standard(2, c);
        let m = on_z(2);
        let half = joint_flow(&sys, &[0.0, 0.5 * c], &m).unwrap();
        assert!((angle_distance(half.phi[0], m.phi[0]).abs() - 0.5).abs() < 1e-12);
        let full = joint_flow(&sys, &[0.0, c], &m).unwrap();
        assert!(full.distance(&m) < 1e-12);
    }

    #[test]
    fn standard_lattice_on_z() {
        let c = 2.5;
        let sys = standard(3, c);
        let lat = period_lattice(&sys, &on_z(3)).unwrap();
        assert_basis(&lat, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, c]], 1e-8);
        assert!(lat.residual <= LATTICE_TOL);
        let sum: Vec<f64> = (0..3).map(|j| lat.basis[(0, j)] + lat.basis[(1, j)]).collect();
        assert!(sup(&return_defect(&sys, &sum, &on_z(3)).unwrap()) <= 2.0 * LATTICE_TOL);
    }

    #[test]
    fn unit_period_gives_unit_modular_period() {
        let est = modular_period_estimate(&standard(2, 1.0), &on_z(2)).unwrap();
        assert!((est - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rescaled_integral_halves_its_period() {
        let mut sys = standard(3, 1.5);
        sys.integrals[0] = BHamiltonian::smooth(TrigPoly::zero(3).with_monomial(2.0, &[0, 1, 0]));
        let lat = period_lattice(&sys, &on_z(3)).unwrap();
        assert_basis(&lat, &[vec![0.5, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.5]], 1e-8);
    }

    #[test]
    fn unit_frequencies_off_z_give_identity() {
        let c = 1.7;
        let space = BPhaseSpace::new(2, c, 1.0).unwrap();
        let sys =
            IntegrableSystem::new(space, vec![BHamiltonian::log_only(c), BHamiltonian::smooth(Coordinate::Action(1))])
                .unwrap();
        let m = State::new(vec![0.4, 0.9], vec![0.3, -0.2]);
        let lat = period_lattice(&sys, &m).unwrap();
        assert_basis(&lat, &[vec![1.0, 0.0], vec![0.0, 1.0]], 1e-8);
    }

    #[test]
    fn reparameterized_integrals_keep_the_modular_period() {
        // (y_2 + y_2^2, y_3, log|y_1| + y_2) is a diffeomorphic image of the standard family.
        let c = 2.5;
        let mut sys = standard(3, c);
        sys.integrals[0] =
            BHamiltonian::smooth(TrigPoly::zero(3).with_monomial(1.0, &[0, 1, 0]).with_monomial(1.0, &[0, 2, 0]));
        sys.integrals[2] = BHamiltonian::with_log(1.0, TrigPoly::zero(3).with_monomial(1.0, &[0, 1, 0]));
        let m = on_z(3);
        let lat = period_lattice(&sys, &m).unwrap();
        for i in 0..2 {
            assert!(lat.basis[(i, 2)].abs() < 1e-8, "{:?}", lat.row(i));
        }
        assert!((modular_period_estimate(&sys, &m).unwrap() - c).abs() < 1e-8);
    }

    #[test]
    fn modular_period_needs_a_point_on_z() {
        let m = State::new(vec![0.0, 0.0], vec![0.1, 0.0]);
        assert!(matches!(modular_period_estimate(&standard(2, 1.0), &m), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn rational_approximations() {
        assert_eq!(rational_approx(0.75, 64, 1e-12), Some((3, 4)));
        assert_eq!(rational_approx(-2.0, 64, 1e-12), Some((-2, 1)));
        assert_eq!(rational_approx(1.0 / 63.0, 64, 1e-12), Some((1, 63)));
        assert_eq!(rational_approx(std::f64::consts::PI, 64, 1e-9), None);
    }

    fn random_points(n: usize, count: usize, seed: u64) -> Vec<State> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let phi = (0..n).map(|_| rng.random::<f64>()).collect();
                let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
                if i % 4 == 0 {
                    y[0] = 0.0;
                }
                State::new(phi, y)
            })
            .collect()
    }

    fn model_coordinates(n: usize, c: f64) -> (Vec<BHamiltonian>, Vec<BHamiltonian>) {
        let mut sigma = vec![BHamiltonian::log_only(c)];
        sigma.extend((1..n).map(|i| BHamiltonian::smooth(Coordinate::Action(i))));
        let theta = (0..n).map(|i| BHamiltonian::smooth(Coordinate::Angle(i))).collect();
        (sigma, theta)
    }

    #[test]
    fn model_coordinates_are_canonical() {
        let c = 2.5;
        let space = BPhaseSpace::new(3, c, 1.0).unwrap();
        let (sigma, theta) = model_coordinates(3, c);
        let pts = random_points(3, 100, 3);
        assert!(canonical_relations_check(&space, &sigma, &theta, &pts).unwrap() <= 1e-12);
    }

    #[test]
    fn sheared_angle_has_the_hand_computed_defect() {
        // theta_2 = phi_2 + y_3^2 / 2 gives {theta_2, theta_3} = -y_3.
        let space = BPhaseSpace::new(3, 1.0, 1.0).unwrap();
        let (sigma, mut theta) = model_coordinates(3, 1.0);
        theta[1] = BHamiltonian::smooth(Sum {
            a: Arc::new(Coordinate::Angle(1)),
            b: Arc::new(TrigPoly::zero(3).with_monomial(0.5, &[0, 0, 2])),
            scale: 1.0,
        });
        let pts = random_points(3, 50, 9);
        let expect = pts.iter().map(|p| p.y[2].abs()).fold(0.0, f64::max);
        let got = canonical_relations_check(&space, &sigma, &theta, &pts).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }
}
