use approx::assert_relative_eq;
use proptest::prelude::*;
use snls_core::corpus::{brute_force_minimax, exp_sum_model, gaussian_peaks_model, midrange_oracle, polynomial_model};
use snls_core::lls::{column_space_projector, pseudoinverse, solve_lls, LinearLsProblem};
use snls_core::minimax::{
    project_onto_simplex, simplex_max_identity, solve_minimax, step_size, subgradient_update, DualConfig,
    MinimaxProblem, MultiplierUpdate, MultiplierVector,
};
use snls_core::nls::{fd_jacobian, gauss_newton_step, solve_nls, varpro_problem, NlsProblem, SolverConfig};
use snls_core::separable::{eliminate_linear, eval_design_matrix, full_residual, vp_residual, Dataset};
use snls_core::{DMatrix, DVector};

fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, bool)> {
    (1usize..=12, 1usize..=6, any::<bool>()).prop_flat_map(|(m, n, deficient)| {
        prop::collection::vec(-3.0f64..3.0, m * n * 2).prop_map(move |v| {
            let mut a = DMatrix::from_column_slice(m, n, &v[..m * n]);
            if deficient && n >= 2 {
                // duplicate a scaled column to force rank loss
                let c = a.column(0) * 2.0;
                a.set_column(n - 1, &c);
            }
            (a, deficient)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penrose_identities((a, _) in matrix_strategy()) {
        let (p, _) = pseudoinverse(&a, 0.0).unwrap();
        let scale = 1.0 + a.norm() * p.norm();
        prop_assert!((&a * &p * &a - &a).norm() <= 1e-9 * scale * a.norm().max(1.0));
        prop_assert!((&p * &a * &p - &p).norm() <= 1e-9 * scale * p.norm().max(1.0));
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.transpose()).norm() <= 1e-9 * scale);
        prop_assert!((&pa - pa.transpose()).norm() <= 1e-9 * scale);
    }

    #[test]
    fn solve_matches_pinv_and_projector_is_orthogonal((a, _) in matrix_strategy(), seed in any::<u64>()) {
        let mut rng = snls_core::corpus::Lcg64::new(seed);
        let b = DVector::from_fn(a.nrows(), |_, _| rng.next_normal());
        let x = solve_lls(&LinearLsProblem::new(a.clone(), b.clone()).unwrap()).unwrap();
        let (p, _) = pseudoinverse(&a, 0.0).unwrap();
        prop_assert!((&x - &p * &b).norm() <= 1e-9 * (1.0 + x.norm()));
        let proj = column_space_projector(&a, 0.0).unwrap();
        let r = &b - &proj * &b;
        prop_assert!((a.transpose() * &r).norm() <= 1e-8 * (1.0 + a.norm() * b.norm()));
        prop_assert!((&proj * &proj - &proj).norm() <= 1e-8);
    }

    #[test]
    fn projected_multipliers_stay_on_simplex(
        lam in prop::collection::vec(0.0f64..1.0, 1..8),
        r in prop::collection::vec(-5.0f64..5.0, 8),
        k in 1usize..500,
        alpha0 in 0.1f64..10.0,
    ) {
        let total: f64 = lam.iter().sum();
        let m = lam.len();
        let lam = if total > 0.0 { lam.iter().map(|v| v / total).collect() } else { vec![1.0 / m as f64; m] };
        let lam = MultiplierVector::new(lam).unwrap();
        for rule in [MultiplierUpdate::Project, MultiplierUpdate::Renormalize] {
            let out = subgradient_update(&lam, &r[..m], k, alpha0, rule).unwrap();
            prop_assert!(out.as_slice().iter().all(|v| *v >= 0.0));
            prop_assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(step_size(k, alpha0), 1.0 / (k as f64 + alpha0));
    }

    #[test]
    fn simplex_projection_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..10)) {
        let p = project_onto_simplex(&v);
        let q = project_onto_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_simplex_maximum_equals_largest_square(r in prop::collection::vec(-4.0f64..4.0, 1..=3)) {
        let best = grid_max(&r);
        prop_assert!((best - simplex_max_identity(&r)).abs() <= 1e-9);
    }

    #[test]
    fn vp_identity_on_exponentials(alpha in prop::collection::vec(0.05f64..4.0, 2), seed in any::<u64>()) {
        let model = exp_sum_model(2).unwrap();
        let mut rng = snls_core::corpus::Lcg64::new(seed);
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|_| rng.next_normal()).collect();
        let data = Dataset::new(t, y).unwrap();
        let a = eliminate_linear(&model, &alpha, &data, 0.0).unwrap();
        let r2 = vp_residual(&model, &alpha, &data, 0.0).unwrap();
        let full = full_residual(&model, a.as_slice(), &alpha, &data).unwrap();
        assert_relative_eq!(r2.norm_squared(), full.norm_squared(), max_relative = 1e-9, epsilon = 1e-14);
        let phi = eval_design_matrix(&model, &alpha, &data).unwrap();
        prop_assert!((phi.transpose() * &r2).amax() <= 1e-8);
    }
}

/// Grid over the simplex for m ≤ 3 with step 0.01.
fn grid_max(r: &[f64]) -> f64 {
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    let n = 100;
    let mut best = f64::NEG_INFINITY;
    match sq.len() {
        1 => best = sq[0],
        2 => {
            for i in 0..=n {
                let l = i as f64 / n as f64;
                best = best.max(l * sq[0] + (1.0 - l) * sq[1]);
            }
        }
        _ => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let (l0, l1) = (i as f64 / n as f64, j as f64 / n as f64);
                    let l2 = (1.0 - l0 - l1).max(0.0);
                    best = best.max(l0 * sq[0] + l1 * sq[1] + l2 * sq[2]);
                }
            }
        }
    }
    best
}

#[test]
fn basis_derivatives_match_finite_differences() {
    let t: Vec<f64> = (0..8).map(|i| i as f64 * 0.4).collect();
    for (model, alpha) in [
        (exp_sum_model(3).unwrap(), vec![0.3, 1.1, 2.5]),
        (gaussian_peaks_model(2).unwrap(), vec![1.0, 0.5, 2.2, 0.8]),
    ] {
        for &ti in &t {
            let d = model.basis_derivative(&alpha, ti).unwrap().unwrap();
            for l in 0..alpha.len() {
                let h = 1e-6 * (1.0 + alpha[l].abs());
                let mut ap = alpha.clone();
                let mut am = alpha.clone();
                ap[l] += h;
                am[l] -= h;
                let fp = model.basis(&ap, ti).unwrap();
                let fm = model.basis(&am, ti).unwrap();
                for j in 0..model.n_linear() {
                    let fd = (fp[j] - fm[j]) / (2.0 * h);
                    assert!((fd - d[(j, l)]).abs() <= 1e-6 * (1.0 + fd.abs()), "{} t={ti} j={j} l={l}", model.name());
                }
            }
        }
    }
}

#[test]
fn varpro_gradient_matches_finite_differences_of_objective() {
    let model = exp_sum_model(2).unwrap();
    let t: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
    let y: Vec<f64> = t.iter().map(|t| 1.5 * (-0.7 * t).exp() - 0.4 * (-2.0 * t).exp() + 0.05 * (3.0 * t).sin()).collect();
    let data = Dataset::new(t, y).unwrap();
    let p = varpro_problem(&model, &data, 0.0);
    let x = DVector::from_vec(vec![0.6, 1.8]);
    let j = p.analytic_jacobian(&x).unwrap().unwrap();
    let f = p.residual(&x).unwrap();
    let g = j.transpose() * &f;
    for l in 0..2 {
        let h = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[l] += h;
        xm[l] -= h;
        let fd = (p.residual(&xp).unwrap().norm_squared() - p.residual(&xm).unwrap().norm_squared()) / (4.0 * h);
        assert_relative_eq!(g[l], fd, max_relative = 1e-5);
    }
}

#[test]
fn lm_objective_never_increases_on_accepted_steps() {
    let model = exp_sum_model(2).unwrap();
    let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y: Vec<f64> = t.iter().map(|t| (-t).exp() + 5.0 * (-3.0 * t).exp()).collect();
    let data = Dataset::new(t, y).unwrap();
    let p = varpro_problem(&model, &data, 0.0);
    let r = solve_nls(&p, &DVector::from_vec(vec![0.2, 7.0]), &SolverConfig::default()).unwrap();
    let accepted: Vec<f64> = r.trace.iter().filter(|rec| rec.accepted).map(|rec| rec.objective).collect();
    for w in accepted.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(r.status.is_converged());
}

#[test]
fn gauss_newton_step_is_minimum_norm_for_rank_deficient_jacobian() {
    let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
    let f = DVector::from_vec(vec![1.0, 0.5, -2.0]);
    let s = gauss_newton_step(&j, &f).unwrap();
    // every minimizer of ‖J s + f‖ is s + null(J); the minimum-norm one is orthogonal to the null vector (2, −1)
    assert!((2.0 * s[0] - s[1]).abs() <= 1e-12);
    let (p, _) = pseudoinverse(&j, 0.0).unwrap();
    assert!((s + p * f).norm() <= 1e-12);
}

#[test]
fn fd_jacobian_of_affine_problem_is_exact() {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 4.0, 0.0]);
    let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let p = NlsProblem::affine(a.clone(), b).unwrap();
    let j = fd_jacobian(&p, &DVector::from_vec(vec![10.0, -3.0]), 1e-6).unwrap();
    assert!((j - a).amax() <= 1e-8);
}

fn constant_fit(values: &[f64]) -> MinimaxProblem {
    let t: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    MinimaxProblem::from_separable(polynomial_model(0).unwrap(), Dataset::new(t, values.to_vec()).unwrap())
}

#[test]
fn weak_duality_holds_on_every_outer_iteration() {
    let p = constant_fit(&[0.3, -1.2, 2.5, 0.9, -0.1]);
    let r = solve_minimax(&p, &[0.0], &[], &DualConfig::default()).unwrap();
    for rec in &r.trace {
        assert!(rec.weighted_objective <= rec.primal_value * rec.primal_value + 1e-9);
    }
    let (_, err) = midrange_oracle(&[0.3, -1.2, 2.5, 0.9, -0.1]).unwrap();
    assert!(r.dual_value_sq <= err * err + 1e-9);
}

#[test]
fn line_minimax_agrees_with_brute_force() {
    let t: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
    let y: Vec<f64> = t.iter().map(|t| 0.4 + 1.3 * t + 0.2 * (2.0 * t).sin()).collect();
    let data = Dataset::new(t, y).unwrap();
    let p = MinimaxProblem::from_separable(polynomial_model(1).unwrap(), data);
    let r = solve_minimax(&p, &[0.0, 0.0], &[], &DualConfig::default()).unwrap();
    let bf = brute_force_minimax(&p, &[(-2.0, 2.0), (0.0, 3.0)], 201).unwrap();
    assert!((r.primal_value - bf.value).abs() <= 2e-2 * bf.value, "{} vs {}", r.primal_value, bf.value);
}

#[test]
fn brute_force_bounds_every_evaluated_point_from_below() {
    let p = constant_fit(&[1.0, 4.0, 2.0]);
    let bf = brute_force_minimax(&p, &[(-10.0, 10.0)], 401).unwrap();
    for x in [-1.0, 0.0, 2.0, 2.5, 3.0, 7.0] {
        assert!(bf.value <= snls_core::minimax::primal_value(&p, &[x], &[]).unwrap() + 1e-12);
    }
}
