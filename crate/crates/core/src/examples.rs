//! Named systems used by the tests, the acceptance harness and the CLI.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix4;
use ode_solvers::{DVector, Dop853, OutputType, System};

use crate::bkam::{BkamProblem, Perturbation};
use crate::error::{Error, Result};
use crate::phase_space::{BHamiltonian, BPhaseSpace, Coordinate};
use crate::trig_poly::{Phase, TrigPoly};

pub const CATALOG: [&str; 4] = ["sphere-product", "desk-kam-n3", "standard-lattice", "kepler-mcgehee"];

/// Modular period of the standard lattice system.
pub const STANDARD_LATTICE_C: f64 = 2.5;

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Chart {
        space: BPhaseSpace,
        hamiltonian: BHamiltonian,
        /// Commuting integrals, last one carrying the log term when present.
        integrals: Vec<BHamiltonian>,
        kam: Option<BkamProblem>,
    },
    McGehee(KeplerMcGehee),
}

#[derive(Clone, Debug)]
pub struct NamedSystem {
    pub name: &'static str,
    pub notes: &'static str,
    pub model: Model,
}

impl NamedSystem {
    pub fn space(&self) -> Option<&BPhaseSpace> {
        match &self.model {
            Model::Chart { space, .. } => Some(space),
            Model::McGehee(_) => None,
        }
    }

    pub fn hamiltonian(&self) -> Option<&BHamiltonian> {
        match &self.model {
            Model::Chart { hamiltonian, .. } => Some(hamiltonian),
            Model::McGehee(_) => None,
        }
    }

    pub fn kam_problem(&self) -> Option<&BkamProblem> {
        match &self.model {
            Model::Chart { kam, .. } => kam.as_ref(),
            Model::McGehee(_) => None,
        }
    }

    pub fn integrals(&self) -> &[BHamiltonian] {
        match &self.model {
            Model::Chart { integrals, .. } => integrals,
            Model::McGehee(_) => &[],
        }
    }
}

pub fn make_example(name: &str) -> Result<NamedSystem> {
    match name {
        "sphere-product" => Ok(sphere_product()),
        "desk-kam-n3" => {
            let prob = desk_kam_problem(0.0)?;
            let space = prob.space;
            Ok(NamedSystem {
                name: "desk-kam-n3",
                notes: "n = 3, c = 1, k = k' = 1, h = w.y~ + |y~|^2/2 with w = (1, (sqrt 5 - 1)/2); \
                        call with_epsilon to switch on the structured perturbation",
                model: Model::Chart { space, hamiltonian: prob.hamiltonian(), integrals: Vec::new(), kam: Some(prob) },
            })
        }
        "standard-lattice" => Ok(standard_lattice(3, STANDARD_LATTICE_C)?),
        "kepler-mcgehee" => Ok(NamedSystem {
            name: "kepler-mcgehee",
            notes: "two-body problem H = p^2/2 - 1/r in the chart r = 2/x^2, form -(4/x^3) dx^dy + da^dG",
            model: Model::McGehee(KeplerMcGehee),
        }),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

fn sphere_product() -> NamedSystem {
    let space = BPhaseSpace::new(2, 1.0, 1.0).expect("static parameters");
    let half_sq = TrigPoly::zero(2).with_monomial(0.5, &[0, 2]);
    let h = BHamiltonian::with_log(1.0, half_sq);
    NamedSystem {
        name: "sphere-product",
        notes: "log|y_1| + y_2^2/2: a log integral on the sphere factor times a symplectic factor",
        model: Model::Chart {
            space,
            hamiltonian: h,
            integrals: vec![BHamiltonian::smooth(Coordinate::Action(1)), BHamiltonian::log_only(1.0)],
            kam: None,
        },
    }
}

/// `F = (y_2, ..., y_n, log|y_1|)` on the model chart with modular period `c`.
pub fn standard_lattice(n: usize, c: f64) -> Result<NamedSystem> {
    let space = BPhaseSpace::new(n, c, 1.0)?;
    let mut integrals: Vec<BHamiltonian> = (1..n).map(|i| BHamiltonian::smooth(Coordinate::Action(i))).collect();
    integrals.push(BHamiltonian::log_only(1.0));
    Ok(NamedSystem {
        name: "standard-lattice",
        notes: "integrals y_2..y_n and log|y_1|; the period lattice is (e_1, ..., e_(n-1), c e_n)",
        model: Model::Chart { space, hamiltonian: BHamiltonian::log_only(1.0), integrals, kam: None },
    })
}

/// Frequency of the desk system on `Z`.
pub fn desk_omega() -> [f64; 2] {
    [1.0, (5f64.sqrt() - 1.0) / 2.0]
}

fn desk_perturbation() -> Perturbation {
    let f1 = TrigPoly::zero(3)
        .with_term(0.2, &[0, 1, 0], &[0, 0, 0], Phase::Cos)
        .with_term(0.15, &[0, 1, -1], &[0, 0, 0], Phase::Sin)
        .with_term(0.08, &[0, 2, -3], &[0, 0, 0], Phase::Cos)
        .with_term(0.15, &[0, 0, 1], &[0, 1, 0], Phase::Cos)
        .with_term(0.1, &[0, 1, 1], &[0, 0, 1], Phase::Sin)
        .with_term(0.1, &[0, 1, 0], &[0, 0, 2], Phase::Cos)
        .with_monomial(0.1, &[0, 1, 1])
        .with_term(0.7, &[0, 0, 1], &[1, 0, 0], Phase::Cos);
    let f2 = TrigPoly::zero(3).with_term(0.5, &[1, 1, 0], &[0, 1, 0], Phase::Cos).with_term(
        0.2,
        &[1, 0, -1],
        &[1, 0, 0],
        Phase::Sin,
    );
    let f3 = TrigPoly::zero(3).with_term(0.3, &[1, 0, 0], &[0, 0, 0], Phase::Sin).with_term(
        0.2,
        &[1, 0, 0],
        &[1, 0, 0],
        Phase::Cos,
    );
    Perturbation::new(1.0, f1, Arc::new(f2), f3).expect("static perturbation")
}

/// The three-degree-of-freedom KAM problem on `Z` at perturbation size `eps`.
pub fn desk_kam_problem(epsilon: f64) -> Result<BkamProblem> {
    let space = BPhaseSpace::new(3, 1.0, 1.0)?;
    let h = TrigPoly::linear_plus_half_square(3, &desk_omega(), 1);
    BkamProblem::new(space, 1.0, h, desk_perturbation(), epsilon, vec![0.0; 3])
}

/// A point of the McGehee chart: `r = 2 / x^2`, polar angle `alpha` in radians,
/// radial momentum `y`, angular momentum `G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McGeheeState {
    pub x: f64,
    pub alpha: f64,
    pub y: f64,
    pub g: f64,
}

impl McGeheeState {
    fn to_array(self) -> [f64; 4] {
        [self.x, self.alpha, self.y, self.g]
    }
}

pub fn mcgehee_transform(q: [f64; 2], p: [f64; 2]) -> Result<McGeheeState> {
    let r = q[0].hypot(q[1]);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::SingularPoint("q = 0 has no polar angle".into()));
    }
    Ok(McGeheeState {
        x: (2.0 / r).sqrt(),
        alpha: q[1].atan2(q[0]),
        y: (q[0] * p[0] + q[1] * p[1]) / r,
        g: q[0] * p[1] - q[1] * p[0],
    })
}

pub fn mcgehee_inverse(s: &McGeheeState) -> Result<([f64; 2], [f64; 2])> {
    if !(s.x > 0.0) {
        return Err(Error::SingularPoint("x = 0 is the set at infinity".into()));
    }
    let r = 2.0 / (s.x * s.x);
    let (sa, ca) = s.alpha.sin_cos();
    let q = [r * ca, r * sa];
    let p = [s.y * ca - s.g / r * sa, s.y * sa + s.g / r * ca];
    Ok((q, p))
}

/// `y^2/2 + G^2 x^4/8 - x^2/2`.
pub fn kepler_mcgehee_energy(s: &McGeheeState) -> f64 {
    let x2 = s.x * s.x;
    0.5 * s.y * s.y + s.g * s.g * x2 * x2 / 8.0 - 0.5 * x2
}

pub fn mcgehee_vector_field(s: &McGeheeState) -> Result<McGeheeState> {
    if !(s.x > 0.0) {
        return Err(Error::SingularPoint("x = 0 is excluded from integration".into()));
    }
    let x = s.x;
    let x3 = x * x * x;
    let dh_dx = s.g * s.g * x3 / 2.0 - x;
    Ok(McGeheeState { x: -x3 / 4.0 * s.y, alpha: s.g * x3 * x / 4.0, y: x3 / 4.0 * dh_dx, g: 0.0 })
}

/// Kepler problem with `mu = 0` in the McGehee chart.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KeplerMcGehee;

struct ChartFlow;

impl System<f64, DVector<f64>> for ChartFlow {
    fn system(&self, _t: f64, z: &DVector<f64>, dz: &mut DVector<f64>) {
        let s = McGeheeState { x: z[0], alpha: z[1], y: z[2], g: z[3] };
        match mcgehee_vector_field(&s) {
            Ok(v) => {
                for (d, v) in dz.iter_mut().zip(v.to_array()) {
                    *d = v;
                }
            }
            Err(_) => dz.iter_mut().for_each(|d| *d = f64::NAN),
        }
    }
}

struct CartesianFlow;

impl System<f64, DVector<f64>> for CartesianFlow {
    fn system(&self, _t: f64, z: &DVector<f64>, dz: &mut DVector<f64>) {
        let r3 = z[0].hypot(z[1]).powi(3);
        dz[0] = z[2];
        dz[1] = z[3];
        dz[2] = -z[0] / r3;
        dz[3] = -z[1] / r3;
    }
}

fn dop853_samples<S: System<f64, DVector<f64>>>(
    make: impl Fn() -> S,
    z0: Vec<f64>,
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut z = z0;
    let mut t = 0.0;
    for &te in times {
        if te != t {
            let mut solver = Dop853::from_param(
                make(),
                t,
                te,
                te - t,
                DVector::from_vec(z.clone()),
                tol,
                tol,
                0.9,
                0.04,
                0.333,
                6.0,
                0.5,
                0.01 * (te - t),
                u32::MAX,
                u32::MAX,
                OutputType::Sparse,
            );
            solver.integrate().map_err(|e| Error::Integrator(e.to_string()))?;
            z = solver.y_out().last().expect("solver output").as_slice().to_vec();
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularPoint("trajectory reached x = 0".into()));
            }
            t = te;
        }
        out.push(z.clone());
    }
    Ok(out)
}

impl KeplerMcGehee {
    /// Chart states at the requested increasing times.
    pub fn integrate_chart(&self, s0: &McGeheeState, times: &[f64], tol: f64) -> Result<Vec<McGeheeState>> {
        mcgehee_vector_field(s0)?;
        let raw = dop853_samples(|| ChartFlow, s0.to_array().to_vec(), times, tol)?;
        Ok(raw.into_iter().map(|z| McGeheeState { x: z[0], alpha: z[1], y: z[2], g: z[3] }).collect())
    }

    /// Cartesian reference `q'' = -q/|q|^3` at the requested increasing times.
    pub fn integrate_cartesian(
        &self,
        q: [f64; 2],
        p: [f64; 2],
        times: &[f64],
        tol: f64,
    ) -> Result<Vec<([f64; 2], [f64; 2])>> {
        let raw = dop853_samples(|| CartesianFlow, vec![q[0], q[1], p[0], p[1]], times, tol)?;
        Ok(raw.into_iter().map(|z| ([z[0], z[1]], [z[2], z[3]])).collect())
    }
}

/// Residual `J^T Omega_1 J - Omega_0` of the chart change at `(q, p)`,
/// with `J` from a five-point stencil and `Omega_1` the McGehee 2-form.
pub fn mcgehee_form_defect(q: [f64; 2], p: [f64; 2], h: f64) -> Result<f64> {
    let base = mcgehee_transform(q, p)?;
    let z0 = [q[0], q[1], p[0], p[1]];
    let eval = |z: [f64; 4]| -> Result<[f64; 4]> {
        let s = mcgehee_transform([z[0], z[1]], [z[2], z[3]])?;
        let mut a = s.to_array();
        // keep alpha on the branch of the base point
        a[1] = base.alpha + (a[1] - base.alpha + PI).rem_euclid(2.0 * PI) - PI;
        Ok(a)
    };
    let mut jac = Matrix4::<f64>::zeros();
    for c in 0..4 {
        let shifted = |d: f64| {
            let mut z = z0;
            z[c] += d;
            eval(z)
        };
        let (p2, p1, m1, m2) = (shifted(2.0 * h)?, shifted(h)?, shifted(-h)?, shifted(-2.0 * h)?);
        for r in 0..4 {
            jac[(r, c)] = (-p2[r] + 8.0 * p1[r] - 8.0 * m1[r] + m2[r]) / (12.0 * h);
        }
    }
    let mut om0 = Matrix4::<f64>::zeros();
    om0[(0, 2)] = 1.0;
    om0[(1, 3)] = 1.0;
    om0[(2, 0)] = -1.0;
    om0[(3, 1)] = -1.0;
    let w = 4.0 / base.x.powi(3);
    let mut om1 = Matrix4::<f64>::zeros();
    om1[(0, 2)] = -w;
    om1[(2, 0)] = w;
    om1[(1, 3)] = 1.0;
    om1[(3, 1)] = -1.0;
    Ok((jac.transpose() * om1 * jac - om0).amax())
}
