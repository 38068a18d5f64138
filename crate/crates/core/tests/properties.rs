//! Cross-module properties checked on random inputs.

use std::sync::OnceLock;

use bkam_core::action_angle::{period_lattice, return_defect, IntegrableSystem, LATTICE_TOL};
use bkam_core::bkam::{construct_invariant_torus, KamConfig, KamReport};
use bkam_core::dynamics::{flow, IntegratorConfig};
use bkam_core::examples::{desk_kam_problem, kepler_mcgehee_energy, mcgehee_transform, standard_lattice};
use bkam_core::frequency::diophantine_scan;
use bkam_core::State;
use proptest::collection::vec;
use proptest::prelude::*;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn desk_torus() -> &'static KamReport {
    static REPORT: OnceLock<KamReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let prob = desk_kam_problem(1e-3).unwrap();
        let cfg = KamConfig { t_final: 60.0, trajectories: 1, grid: 8, ..KamConfig::default() };
        construct_invariant_torus(&prob, &cfg).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flows_never_cross_the_hypersurface(
        eps in 0.0f64..1e-2,
        phi in vec(0.0f64..1.0, 3),
        y in vec(-0.05f64..0.05, 3),
        on_z in any::<bool>(),
    ) {
        let prob = desk_kam_problem(eps).unwrap();
        let mut y = y;
        if on_z {
            y[0] = 0.0;
        }
        let s0 = State::new(phi, y);
        let s = flow(&prob.space, &prob.hamiltonian(), &s0, 5.0, &IntegratorConfig::default()).unwrap();
        if on_z {
            prop_assert_eq!(s.y[0], 0.0);
        } else {
            prop_assert_eq!(s.y[0].signum(), s0.y[0].signum());
            prop_assert!(s.y[0] != 0.0);
        }
    }

    #[test]
    fn backward_flow_undoes_forward_flow(
        eps in 0.0f64..1e-2,
        phi in vec(0.0f64..1.0, 3),
        y in vec(0.01f64..0.05, 3),
        t in 0.5f64..10.0,
    ) {
        let prob = desk_kam_problem(eps).unwrap();
        let h = prob.hamiltonian();
        let cfg = IntegratorConfig::default();
        let s0 = State::new(phi, y);
        let s1 = flow(&prob.space, &h, &s0, t, &cfg).unwrap();
        let back = flow(&prob.space, &h, &s1, -t, &cfg).unwrap();
        prop_assert!(back.distance(&s0) <= 1e-8, "distance {}", back.distance(&s0));
    }

    #[test]
    fn diophantine_bound_only_shrinks_with_the_cutoff(
        omega in vec(0.1f64..2.0, 2),
        gamma in 0.5f64..2.0,
        k1 in 1u32..12,
        dk in 0u32..8,
    ) {
        let a = diophantine_scan(&omega, gamma, k1).unwrap();
        let b = diophantine_scan(&omega, gamma, k1 + dk).unwrap();
        prop_assert!(b.l_lower <= a.l_lower);
        let dot: f64 = omega.iter().zip(&b.worst_k).map(|(w, &k)| w * k as f64).sum();
        let norm: i64 = b.worst_k.iter().map(|k| k.abs()).sum();
        if !b.is_resonant() {
            prop_assert!((b.l_lower - dot.abs() * (norm as f64).powf(gamma)).abs() <= 1e-12 * b.l_lower.max(1.0));
        }
    }

    #[test]
    fn integer_combinations_of_periods_return(
        c in 0.5f64..3.0,
        phi in vec(0.0f64..1.0, 3),
        y in vec(-0.3f64..0.3, 2),
        a in -2i32..=2,
        b in -2i32..=2,
    ) {
        let named = standard_lattice(3, c).unwrap();
        let space = *named.space().unwrap();
        let system = IntegrableSystem::new(space, named.integrals().to_vec()).unwrap();
        let m = State::new(phi, vec![0.0, y[0], y[1]]);
        let lat = period_lattice(&system, &m).unwrap();
        prop_assert!(lat.residual <= LATTICE_TOL);
        prop_assert!((lat.basis[(2, 2)] - c).abs() <= 1e-8);
        let combo: Vec<f64> = (0..3).map(|j| a as f64 * lat.basis[(0, j)] + b as f64 * lat.basis[(2, j)]).collect();
        prop_assert!(sup(&return_defect(&system, &combo, &m).unwrap()) <= 2.0 * LATTICE_TOL);
    }

    #[test]
    fn mcgehee_energy_is_the_kepler_energy(
        r in 0.2f64..20.0,
        theta in -3.0f64..3.0,
        p in vec(-2.0f64..2.0, 2),
    ) {
        let q = [r * theta.cos(), r * theta.sin()];
        let s = mcgehee_transform(q, [p[0], p[1]]).unwrap();
        let cartesian = 0.5 * (p[0] * p[0] + p[1] * p[1]) - 1.0 / r;
        prop_assert!((kepler_mcgehee_energy(&s) - cartesian).abs() <= 1e-12 * (1.0 + cartesian.abs()));
    }

    #[test]
    fn lifted_map_fixes_the_singular_pair(
        phi in vec(0.0f64..1.0, 3),
        dy in vec(-1e-3f64..1e-3, 2),
        y1 in -0.05f64..0.05,
    ) {
        let rep = desk_torus();
        let y = vec![y1, rep.psi.y0[1] + dy[0], rep.psi.y0[2] + dy[1]];
        let s = State::new(phi, y);
        let f = rep.psi.forward(&s).unwrap();
        prop_assert_eq!(f.phi[0], s.phi[0]);
        prop_assert_eq!(f.y[0], s.y[0]);
        let back = rep.psi.inverse(&f).unwrap();
        prop_assert!(back.distance(&s) <= 1e-10, "round trip {}", back.distance(&s));
    }
}

#[test]
fn torus_points_lie_on_the_hypersurface() {
    let rep = desk_torus();
    assert_eq!(rep.torus_points.len(), 8 * 8 * 8);
    assert!(rep.torus_points.iter().all(|p| p.y[0] == 0.0));
    assert!(rep.passed.all(), "{:?}", rep.passed.failures());
}
