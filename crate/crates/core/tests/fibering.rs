mod common;

use std::sync::Arc;

use fracnehari::assembly::{assemble_stiffness, StiffnessOperator};
use fracnehari::fibering::{
    classify_nehari, fibering_report, fibering_roots, g_function, nehari_projection_derivative, thresholds, Fiber,
};
use fracnehari::{DiscreteFunction, Error, Mesh, NehariClass, ProblemParams};
use proptest::prelude::*;

fn setup(mu: f64) -> (StiffnessOperator, ProblemParams, Arc<Mesh>) {
    let params = ProblemParams::fractional(0.3, 0.5, 2.0, mu, 1.0, -1.0, 1.0);
    let mesh = Arc::new(Mesh::uniform(-1.0, 1.0, 16, 4).unwrap());
    (assemble_stiffness(&mesh, &params).unwrap(), params, mesh)
}

fn func(mesh: &Arc<Mesh>, c: &[f64]) -> DiscreteFunction {
    DiscreteFunction::from_vec(mesh.clone(), c.to_vec()).unwrap()
}

#[test]
fn t0_is_the_maximizer_of_phi() {
    let (a, params, mesh) = setup(0.1);
    let u = DiscreteFunction::interpolate(mesh, |x| 1.0 - x.abs());
    let fiber = Fiber::new(&a, &u, &params).unwrap();
    let t0 = fiber.t_zero().unwrap();
    let oracle = common::golden_max(|t| fiber.phi(t), 1e-6, 100.0 * t0, 1e-12);
    assert!((t0 - oracle).abs() < 1e-6 * t0, "{t0} vs {oracle}");
    assert!(fiber.phi_prime(t0).abs() < 1e-10 * fiber.x0_sq);
}

#[test]
fn large_mu_has_no_roots() {
    let (a, params, mesh) = setup(1e6);
    let u = DiscreteFunction::interpolate(mesh, |x| 1.0 - x * x);
    assert!(matches!(fibering_roots(&u, &a, &params), Err(Error::NoRoots { .. })));
    let report = fibering_report(&u, &a, &params).unwrap();
    assert!(report.t_minus.is_none() && report.t_plus.is_none());
    assert!(report.mu_rhs >= report.phi_t0);
}

#[test]
fn nonpositive_mu_gives_only_the_upper_root() {
    for mu in [0.0, -0.5] {
        let (a, params, mesh) = setup(mu);
        let u = DiscreteFunction::interpolate(mesh, |x| 1.0 - x * x);
        let r = fibering_roots(&u, &a, &params).unwrap();
        assert!(r.t_minus.is_none());
        let fiber = Fiber::new(&a, &u, &params).unwrap();
        assert!(fiber.nehari_residual_at(r.t_plus.unwrap()).abs() < 1e-10 * fiber.x0_sq);
    }
}

#[test]
fn g_argmin_is_the_minimizer() {
    let params = ProblemParams::critical(0.2, 0.5, 0.3, -1.0, 1.0);
    let t = thresholds(&params, 10.9).unwrap();
    let oracle = common::golden_max(|x| -g_function(&params, x), 1e-8, 10.0 * t.g_argmin, 1e-13);
    assert!((t.g_argmin - oracle).abs() < 1e-6 * oracle);
    assert!((t.g_min - g_function(&params, oracle)).abs() < 1e-10 * t.g_min.abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roots_bracket_t0_and_lie_on_their_branches(
        c in prop::collection::vec(-1.0f64..1.0, 16),
        mu in 1e-3f64..0.5,
    ) {
        let (a, params, mesh) = setup(mu);
        let u = func(&mesh, &c);
        let r = match fibering_roots(&u, &a, &params) {
            Ok(r) => r,
            Err(Error::NoRoots { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let (tm, tp) = (r.t_minus.unwrap(), r.t_plus.unwrap());
        prop_assert!(tm < r.t0 && r.t0 < tp);
        let fiber = Fiber::new(&a, &u, &params).unwrap();
        for t in [tm, tp] {
            prop_assert!(fiber.nehari_residual_at(t).abs() < 1e-9 * t * t * fiber.x0_sq);
        }
        prop_assert_eq!(classify_nehari(&u.scaled(tm), &a, &params, 1e-8).unwrap(), NehariClass::NPlus);
        prop_assert_eq!(classify_nehari(&u.scaled(tp), &a, &params, 1e-8).unwrap(), NehariClass::NMinus);
        // t⁻ is the local minimum of the fiber energy and t⁺ its maximum
        let e = |t: f64| fiber.energy_at(t);
        prop_assert!(e(tm) <= e(0.99 * tm) && e(tm) <= e(1.01 * tm));
        prop_assert!(e(tp) >= e(0.99 * tp) && e(tp) >= e(1.01 * tp));
        prop_assert!(e(tm) < 0.0);
    }

    #[test]
    fn projection_derivative_matches_root_difference(
        c in prop::collection::vec(0.1f64..1.0, 16),
        v in prop::collection::vec(-1.0f64..1.0, 16),
        upper in any::<bool>(),
    ) {
        let (a, params, mesh) = setup(0.05);
        let base = func(&mesh, &c);
        let r = fibering_roots(&base, &a, &params).unwrap();
        let t = if upper { r.t_plus.unwrap() } else { r.t_minus.unwrap() };
        let u = base.scaled(t);
        let v = func(&mesh, &v).scaled(t);
        let pick = |w: &DiscreteFunction| {
            let r = fibering_roots(w, &a, &params).unwrap();
            if upper { r.t_plus.unwrap() } else { r.t_minus.unwrap() }
        };
        let h = 1e-6;
        let fd = (pick(&u.axpy(h, &v)) - pick(&u.axpy(-h, &v))) / (2.0 * h);
        let exact = nehari_projection_derivative(&u, &a, &params, &v).unwrap();
        prop_assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()), "fd {fd} exact {exact}");
    }
}
