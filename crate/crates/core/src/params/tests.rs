use nalgebra::{DMatrix, DVector};

use super::*;
use crate::mixgk::{MixGk, MixGkOptions};
use crate::operators::Mixing;
use crate::testproblems::{random_dense_problem, DenseProblem};

fn run_to(p: &DenseProblem, k: usize) -> MixGk {
    let mut g = MixGk::new(
        p.a_op(),
        p.whitener(),
        p.q1_op(),
        p.q2_op(),
        &p.b,
        MixGkOptions::default(),
    )
    .unwrap();
    while g.k() < k && !g.is_terminal() {
        g.step().unwrap();
    }
    g
}

fn no_inputs() -> SelectionInputs<'static> {
    SelectionInputs {
        sigma2: None,
        truth: None,
        omega: None,
    }
}

#[test]
fn limits_at_large_lambda() {
    let p = random_dense_problem(12, 9, 3, 4);
    let g = run_to(&p, 4);
    let sys = ProjectedSystem::new(&ProjectionParts::from_state(&g).unwrap(), 0.6).unwrap();
    let rows = 9.0;
    let b2 = g.beta1() * g.beta1();
    let lam = 1e9;
    let u = upre_objective(&sys, lam, 0.7).unwrap();
    assert!((u - (b2 / rows - 0.7)).abs() < 1e-9 * b2);
    let gcv = gcv_objective(&sys, lam).unwrap();
    assert!((gcv - b2 / (rows * rows)).abs() < 1e-9 * gcv);
    let w = wgcv_objective(&sys, lam, 0.3).unwrap();
    assert!((w - b2 / (rows * rows)).abs() < 1e-9 * w);
}

#[test]
fn scalar_case_by_hand() {
    let p = random_dense_problem(6, 4, 2, 8);
    let g = run_to(&p, 1);
    let gamma = 0.4;
    let sys = ProjectedSystem::new(&ProjectionParts::from_state(&g).unwrap(), gamma).unwrap();
    let d = sys.d().column(0).clone_owned();
    let pen = gamma + (1.0 - gamma) * g.g()[(0, 0)];
    let rhs = DVector::from_vec(vec![g.beta1(), 0.0, 0.0]);
    let (lam, s2) = (0.3, 0.2);
    let dd = d.norm_squared();
    let y = d.dot(&rhs) / (dd + lam * lam * pen);
    let r2 = (&d * y - &rhs).norm_squared();
    let tr = dd / (dd + lam * lam * pen);
    let u = r2 / 3.0 + 2.0 * s2 * tr / 3.0 - s2;
    assert!((upre_objective(&sys, lam, s2).unwrap() - u).abs() < 1e-13 * u.abs().max(1.0));
    let gcv = r2 / (3.0 - tr).powi(2);
    assert!((gcv_objective(&sys, lam).unwrap() - gcv).abs() < 1e-13 * gcv);
}

#[test]
fn wgcv_with_unit_weight_is_gcv() {
    for seed in 0..10 {
        let p = random_dense_problem(15, 10, 3, 40 + seed);
        let g = run_to(&p, 1 + seed as usize % 6);
        let parts = ProjectionParts::from_state(&g).unwrap();
        for &gamma in &[0.05, 0.5, 1.0] {
            let sys = ProjectedSystem::new(&parts, gamma).unwrap();
            for &lam in &[1e-4, 0.1, 3.0] {
                let a = wgcv_objective(&sys, lam, 1.0).unwrap();
                let b = gcv_objective(&sys, lam).unwrap();
                assert!((a - b).abs() <= 1e-14 * b);
            }
        }
    }
}

#[test]
fn domain_errors() {
    let p = random_dense_problem(10, 6, 2, 2);
    let g = run_to(&p, 2);
    let sys = ProjectedSystem::new(&ProjectionParts::from_state(&g).unwrap(), 0.5).unwrap();
    assert!(matches!(upre_objective(&sys, 1.0, 0.0), Err(Error::Configuration(_))));
    assert!(matches!(wgcv_objective(&sys, 1.0, 0.0), Err(Error::ParameterDomain(_))));
    // ω chosen so the denominator vanishes.
    let omega = 5.0 / sys.trace(0.1).unwrap();
    assert!(matches!(
        wgcv_objective(&sys, 0.1, omega),
        Err(Error::DegenerateTrace(_))
    ));

    let prior = p.prior(Mixing::Estimated).unwrap();
    let cfg = SearchConfig::default();
    let r = select_params(Method::Upre, &g, &prior, no_inputs(), &cfg);
    assert!(matches!(r, Err(Error::Configuration(m)) if m.contains("sigma2")));
    let r = select_params(Method::Optimal, &g, &prior, no_inputs(), &cfg);
    assert!(matches!(r, Err(Error::Configuration(_))));
    assert!(matches!(
        optimal_objective(&g, &prior, 0.5, 1.0, None),
        Err(Error::Configuration(_))
    ));
    let bad = SearchConfig {
        log_lambda_max: 9.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn method_names_round_trip() {
    for m in [Method::Optimal, Method::Upre, Method::Gcv, Method::Wgcv] {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("lcurve".parse::<Method>().is_err());
}

#[test]
fn grids_and_tie_breaks() {
    let cfg = SearchConfig::default();
    let gs = cfg.gammas();
    assert_eq!(gs.len(), 15);
    assert!((gs[0] - 0.01).abs() < 1e-15 && gs[14] == 1.0);
    assert!(gs.windows(2).all(|w| w[0] < w[1]));
    let ls = cfg.lambdas();
    assert!((ls[0] - 1e-6).abs() < 1e-20 && (ls[14] - 100.0).abs() < 1e-12);

    let v = vec![vec![3.0, 1.0, 1.0], vec![1.0, 2.0, 0.5], vec![1.0, 9.0, 9.0]];
    assert_eq!(grid_argmin(&v), Some((1, 2)));
    let v = vec![vec![3.0, 1.0], vec![1.0, 2.0], vec![1.0, 9.0]];
    // Tie at value 1: smallest λ column first, then smallest γ row.
    assert_eq!(grid_argmin(&v), Some((1, 0)));
    let v = vec![vec![f64::NAN, f64::INFINITY]];
    assert_eq!(grid_argmin(&v), None);
    assert!(grid_is_flat(&[vec![2.0, 2.0], vec![2.0, f64::NAN]]));
    assert!(!grid_is_flat(&[vec![2.0, 2.1]]));
}

fn full_system(p: &DenseProblem, gamma: f64) -> full::FullSystem {
    full::FullSystem::new(&p.a, &p.whitening_root(), &p.mixed(gamma), &p.b).unwrap()
}

fn shared_grid() -> (Vec<f64>, Vec<f64>) {
    let cfg = SearchConfig {
        grid_gamma: 40,
        grid_lambda: 40,
        log_lambda_min: -3.0,
        log_lambda_max: 2.0,
        ..Default::default()
    };
    (cfg.gammas(), cfg.lambdas())
}

#[test]
fn projected_rules_match_full_rules_at_full_dimension() {
    for seed in [11, 12, 13] {
        let p = random_dense_problem(20, 15, 4, seed);
        let g = run_to(&p, 15);
        assert_eq!(g.k(), 15);
        let prior = p.prior(Mixing::Estimated).unwrap();
        let (gammas, lambdas) = shared_grid();
        let fulls: Vec<_> = gammas.iter().map(|&gm| full_system(&p, gm)).collect();

        let sigma2 = 1.0;
        let upre = Selector::new(
            Method::Upre,
            &g,
            &prior,
            SelectionInputs {
                sigma2: Some(sigma2),
                ..no_inputs()
            },
        )
        .unwrap();
        let proj = upre.grid(&gammas, &lambdas);
        let full: Vec<Vec<f64>> = fulls
            .iter()
            .map(|f| lambdas.iter().map(|&l| f.upre(l, sigma2)).collect())
            .collect();
        assert_eq!(grid_argmin(&proj), grid_argmin(&full), "UPRE seed {seed}");

        let wgcv = Selector::new(Method::Wgcv, &g, &prior, no_inputs()).unwrap();
        let proj = wgcv.grid(&gammas, &lambdas);
        let full: Vec<Vec<f64>> = fulls
            .iter()
            .map(|f| lambdas.iter().map(|&l| f.gcv(l)).collect())
            .collect();
        assert_eq!(grid_argmin(&proj), grid_argmin(&full), "WGCV seed {seed}");

        // Residual and trace agree; the objectives differ only by the
        // normalizations: (2k+1 − ω t)² = ((2k+1)/m)² (m − t)².
        let parts = ProjectionParts::from_state(&g).unwrap();
        let omega = default_omega(15, 20);
        for (gi, &gm) in gammas.iter().enumerate().step_by(13) {
            let sys = ProjectedSystem::new(&parts, gm).unwrap();
            for &l in lambdas.iter().step_by(7) {
                let (r2, t) = (sys.residual_norm_sq(l).unwrap(), sys.trace(l).unwrap());
                let f = &fulls[gi];
                assert!((r2 - f.residual_norm_sq(l)).abs() <= 1e-9 * r2.max(1.0));
                assert!((t - f.trace(l)).abs() <= 1e-9 * t.max(1.0));
                let lhs = (31.0 - omega * t).powi(2);
                let rhs = omega * omega * (20.0 - f.trace(l)).powi(2);
                assert!((lhs - rhs).abs() <= 1e-10 * lhs);
            }
        }
    }
}

#[test]
fn gcv_argmin_is_scale_invariant() {
    let p = random_dense_problem(18, 12, 3, 21);
    let g = run_to(&p, 6);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let (gammas, lambdas) = shared_grid();
    let base = Selector::new(Method::Gcv, &g, &prior, no_inputs())
        .unwrap()
        .grid(&gammas, &lambdas);
    for c in [0.1, 10.0] {
        let mut q = p.clone();
        q.b *= c;
        let gc = run_to(&q, 6);
        let vals = Selector::new(Method::Gcv, &gc, &prior, no_inputs())
            .unwrap()
            .grid(&gammas, &lambdas);
        assert_eq!(grid_argmin(&vals), grid_argmin(&base));
        let (i, j) = grid_argmin(&base).unwrap();
        assert!((vals[i][j] - c * c * base[i][j]).abs() <= 1e-10 * vals[i][j]);
    }
}

#[test]
fn optimal_objective_limits_and_collapse() {
    let p = random_dense_problem(14, 10, 3, 6);
    let g = run_to(&p, 5);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let at_mean = optimal_objective(&g, &prior, 0.5, 1e12, Some(&p.mean)).unwrap();
    assert!(at_mean < 1e-20);

    // At γ = 1 the Q₂ branch is irrelevant.
    let mut plain = p.clone();
    plain.q2 = DMatrix::zeros(10, 10);
    let g0 = run_to(&plain, 5);
    let prior0 = plain.prior(Mixing::Estimated).unwrap();
    let truth = DVector::from_fn(10, |i, _| (i as f64 * 0.7).sin());
    for lam in [0.01, 0.3, 5.0] {
        let a = optimal_objective(&g, &prior, 1.0, lam, Some(&truth)).unwrap();
        let b = optimal_objective(&g0, &prior0, 1.0, lam, Some(&truth)).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    // Gram-based fast path agrees with the full-space evaluation.
    let sel = Selector::new(
        Method::Optimal,
        &g,
        &prior,
        SelectionInputs {
            truth: Some(&truth),
            ..no_inputs()
        },
    )
    .unwrap();
    for gm in [0.02, 0.4, 1.0] {
        for lam in [1e-3, 0.2, 20.0] {
            let a = sel.eval_fast(gm, lam).unwrap();
            let b = sel.eval(gm, lam).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.max(1e-12));
        }
    }
}

#[test]
fn fixed_gamma_optimal_matches_fine_grid() {
    let p = random_dense_problem(30, 20, 4, 17);
    let g = run_to(&p, 8);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let truth = DVector::from_fn(20, |i, _| 0.3 * (i as f64 * 0.4).cos());
    let inputs = SelectionInputs {
        truth: Some(&truth),
        ..no_inputs()
    };
    let cfg = SearchConfig {
        fixed_gamma: Some(0.3),
        ..Default::default()
    };
    let r = select_params(Method::Optimal, &g, &prior, inputs, &cfg).unwrap();
    let fine = log_grid(-6.0, 2.0, 1000);
    let sel = Selector::new(Method::Optimal, &g, &prior, inputs).unwrap();
    let vals = sel.grid(&[0.3], &fine);
    let (_, j) = grid_argmin(&vals).unwrap();
    assert_eq!(r.gamma, 0.3);
    assert!(r.objective <= vals[0][j] * (1.0 + 1e-9));
    let cell = 8.0 / 999.0;
    assert!((r.lambda.log10() - fine[j].log10()).abs() <= cell);
    let direct = optimal_objective(&g, &prior, r.gamma, r.lambda, Some(&truth)).unwrap();
    assert!((direct - r.objective).abs() <= 1e-12 * direct);
}

#[test]
fn upre_slice_within_one_cell_of_fine_grid() {
    let p = random_dense_problem(30, 20, 4, 23);
    let g = run_to(&p, 10);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let inputs = SelectionInputs {
        sigma2: Some(1.0),
        ..no_inputs()
    };
    let cfg = SearchConfig {
        fixed_gamma: Some(1.0),
        ..Default::default()
    };
    let r = select_params(Method::Upre, &g, &prior, inputs, &cfg).unwrap();
    let fine = log_grid(-6.0, 2.0, 1000);
    let vals = Selector::new(Method::Upre, &g, &prior, inputs)
        .unwrap()
        .grid(&[1.0], &fine);
    let (_, j) = grid_argmin(&vals).unwrap();
    let coarse_cell = 8.0 / 14.0;
    assert!((r.lambda.log10() - fine[j].log10()).abs() <= coarse_cell);
    assert!(r.objective <= vals[0][j] + 1e-9 * vals[0][j].abs());
}

#[test]
fn joint_search_beats_its_grid_and_reports_consistent_value() {
    let p = random_dense_problem(30, 20, 4, 29);
    let g = run_to(&p, 10);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let cfg = SearchConfig::default();
    for method in [Method::Gcv, Method::Wgcv] {
        let r = select_params(method, &g, &prior, no_inputs(), &cfg).unwrap();
        assert!(r.gamma >= 0.01 && r.gamma <= 1.0);
        assert!(r.lambda >= 1e-6 * (1.0 - 1e-12) && r.lambda <= 100.0 * (1.0 + 1e-12));
        let sel = Selector::new(method, &g, &prior, no_inputs()).unwrap();
        let vals = sel.grid(&cfg.gammas(), &cfg.lambdas());
        let (i, j) = grid_argmin(&vals).unwrap();
        assert!(r.objective <= vals[i][j] * (1.0 + 1e-12));
        assert!((sel.eval(r.gamma, r.lambda).unwrap() - r.objective).abs() <= 1e-12 * r.objective);
        assert!(r.evaluations > 225 && r.evaluations <= 225 + 200 + 5);
    }
}

#[test]
fn flat_objective_returns_lower_left_corner() {
    // A negligible operator makes every selection function constant.
    let mut p = random_dense_problem(8, 5, 2, 3);
    p.a *= 1e-30;
    let g = run_to(&p, 2);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let cfg = SearchConfig::default();
    let r = select_params(Method::Gcv, &g, &prior, no_inputs(), &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!((r.gamma, r.lambda), (cfg.gammas()[0], cfg.lambdas()[0]));
}

#[test]
fn selection_is_deterministic() {
    let p = random_dense_problem(25, 18, 5, 31);
    let g = run_to(&p, 9);
    let prior = p.prior(Mixing::Estimated).unwrap();
    let inputs = SelectionInputs {
        sigma2: Some(0.8),
        ..no_inputs()
    };
    let cfg = SearchConfig::default();
    let a = select_params(Method::Upre, &g, &prior, inputs, &cfg).unwrap();
    let b = select_params(Method::Upre, &g, &prior, inputs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
    assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
}

#[test]
fn stopping_rule() {
    let policy = StoppingPolicy::default();
    assert_eq!(stopping_check(&[5.0, 4.0, 3.0, 2.0], 0.5, &policy), None);
    let flat = StoppingPolicy {
        flat_tol: 1e-6,
        window: 2,
        ..policy
    };
    assert_eq!(
        stopping_check(&[5.0, 5.0 * (1.0 - 1e-9)], 0.5, &flat),
        Some(StopReason::ObjectiveFlat)
    );
    assert_eq!(
        stopping_check(&[5.0], 1e-7, &policy),
        Some(StopReason::ResidualTolerance)
    );
    assert_eq!(
        stopping_check(&[4.0, 2.0, 2.5], 0.5, &flat),
        Some(StopReason::ObjectiveIncreased)
    );
    let short = StoppingPolicy {
        max_iter: 3,
        ..policy
    };
    assert_eq!(
        stopping_check(&[9.0, 5.0, 1.0], 0.5, &short),
        Some(StopReason::MaxIterations)
    );
    assert!(StoppingPolicy {
        flat_tol: 0.0,
        ..policy
    }
    .validate()
    .is_err());
}

#[test]
fn full_scale_objective_is_the_m_row_normalization() {
    let p = random_dense_problem(20, 15, 3, 4);
    let g = run_to(&p, 6);
    let parts = crate::projected::ProjectionParts::from_state(&g).unwrap();
    let sys = crate::projected::ProjectedSystem::new(&parts, 0.5).unwrap();
    let (m, k, lambda) = (20, 6, 0.7);
    let (r2, t) = (sys.residual_norm_sq(lambda).unwrap(), sys.trace(lambda).unwrap());
    let w = wgcv_objective(&sys, lambda, default_omega(k, m)).unwrap();
    let full = full_scale_objective(Method::Wgcv, w, k, m, None);
    assert!((full - r2 / (m as f64 - t).powi(2)).abs() <= 1e-12 * full);
    let u = upre_objective(&sys, lambda, 2.0).unwrap();
    let full = full_scale_objective(Method::Upre, u, k, m, Some(2.0));
    let expect = r2 / m as f64 + 4.0 * t / m as f64 - 2.0;
    assert!((full - expect).abs() <= 1e-12 * expect.abs());
    // 2k+1 = m leaves values unchanged.
    assert_eq!(full_scale_objective(Method::Gcv, 3.5, 5, 11, None), 3.5);
    assert_eq!(full_scale_objective(Method::Optimal, 3.5, 2, 11, None), 3.5);
}
