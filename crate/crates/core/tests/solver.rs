use std::sync::Arc;

use fracnehari::assembly::{assemble_stiffness, mass_matrix, StiffnessOperator};
use fracnehari::functional::gradient;
use fracnehari::solver::{minimize_on_nehari, multi_solution_search, project_positive, residual_norm};
use fracnehari::{Branch, DiscreteFunction, Error, Mesh, NehariClass, ProblemParams, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (StiffnessOperator, ProblemParams, Arc<Mesh>) {
    let params = ProblemParams::fractional(0.2, 0.5, 2.0, 1.0, 1.0, -1.0, 1.0);
    let mesh = Arc::new(Mesh::uniform(-1.0, 1.0, n, 4).unwrap());
    (assemble_stiffness(&mesh, &params).unwrap(), params, mesh)
}

fn quiet() -> SolverConfig {
    SolverConfig { keep_trace: false, ..Default::default() }
}

#[test]
fn solutions_are_weak_solutions() {
    let (a, params, mesh) = setup(40);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for branch in [Branch::NPlus, Branch::NMinus] {
        let rec = minimize_on_nehari(&a, &params, branch, None, &quiet()).unwrap();
        let u = rec.function(&a).unwrap();
        let g = gradient(&a, &u, &params).unwrap();
        let scale = a.inner(&u, &u).unwrap().sqrt().max(1.0);
        for _ in 0..20 {
            let v = DiscreteFunction::from_vec(mesh.clone(), (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let pairing = g.coeffs().dot(v.coeffs()).abs();
            let vn = a.inner(&v, &v).unwrap().sqrt();
            assert!(pairing <= 1e-8 * vn * scale, "{branch:?}: {pairing:.3e}");
        }
        assert!(rec.coefficients.iter().all(|c| *c >= 0.0));
        let expected = if branch == Branch::NPlus { NehariClass::NPlus } else { NehariClass::NMinus };
        assert_eq!(rec.nehari_class, expected);
        assert!((residual_norm(&a, &u, &params).unwrap() - rec.residual).abs() < 1e-12 * scale);
    }
}

#[test]
fn solutions_on_a_symmetric_interval_are_even() {
    let (a, params, _) = setup(41);
    for branch in [Branch::NPlus, Branch::NMinus] {
        let c = minimize_on_nehari(&a, &params, branch, None, &quiet()).unwrap().coefficients;
        let peak = c.iter().cloned().fold(0.0, f64::max);
        for i in 0..c.len() {
            assert!((c[i] - c[c.len() - 1 - i]).abs() < 1e-7 * peak);
        }
        // the centre node is the maximum
        assert_eq!(c[20], peak);
    }
}

#[test]
fn negative_energy_below_positive_energy() {
    let (a, params, _) = setup(32);
    let w0 = minimize_on_nehari(&a, &params, Branch::NPlus, None, &quiet()).unwrap();
    let w1 = minimize_on_nehari(&a, &params, Branch::NMinus, None, &quiet()).unwrap();
    assert!(w0.energy.total < 0.0 && w1.energy.total > 0.0);
}

#[test]
fn nonconvergence_returns_the_best_iterate() {
    let (a, params, _) = setup(32);
    let cfg = SolverConfig { max_iters: 2, residual_tol: 1e-14, ..quiet() };
    match minimize_on_nehari(&a, &params, Branch::NMinus, None, &cfg) {
        Err(Error::NonConvergence { iterations, residual, best }) => {
            assert_eq!(iterations, best.iterations);
            assert_eq!(residual, best.residual);
            assert!(!best.converged && best.coefficients.len() == 32);
            assert!(best.energy.total.is_finite());
        }
        other => panic!("expected NonConvergence, got {:?}", other.map(|r| r.residual)),
    }
}

#[test]
fn projection_lands_on_the_requested_branch() {
    let (a, params, mesh) = setup(24);
    let w = DiscreteFunction::interpolate(mesh, |x| (1.0 - x * x).powi(2));
    let plus = project_positive(&a, &params, Branch::NPlus, &w).unwrap();
    let minus = project_positive(&a, &params, Branch::NMinus, &w).unwrap();
    let cls = |u| fracnehari::fibering::classify_nehari(u, &a, &params, 1e-8).unwrap();
    assert_eq!(cls(&plus), NehariClass::NPlus);
    assert_eq!(cls(&minus), NehariClass::NMinus);
    assert!(project_positive(&a, &params, Branch::NPlus, &w.scaled(-1.0)).is_err());
}

#[test]
fn multi_solve_returns_distinct_critical_points() {
    let (a, params, _) = setup(32);
    let cfg = SolverConfig { max_iters: 3000, ..quiet() };
    let report = multi_solution_search(&a, &params, 4, &cfg).unwrap();
    assert!(report.records.len() >= 2, "{} found", report.records.len());
    let mass = mass_matrix(a.mesh());
    let l2 = |v: &nalgebra::DVector<f64>| v.dot(&(&mass * v)).sqrt();
    for (i, r) in report.records.iter().enumerate() {
        let u = nalgebra::DVector::from_column_slice(&r.coefficients);
        assert!(r.residual <= 1e-6 * l2(&u).max(1.0) || !r.converged);
        for s in &report.records[i + 1..] {
            let v = nalgebra::DVector::from_column_slice(&s.coefficients);
            let d = l2(&(&u - &v)).min(l2(&(&u + &v)));
            assert!(d > cfg.dedup_tol * l2(&u).max(l2(&v)));
        }
    }
    assert!(report.records.windows(2).all(|w| w[0].energy.total <= w[1].energy.total));
}
