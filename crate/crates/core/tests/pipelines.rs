use mixkry::experiments::{crosswell_experiment, spherical_experiment, CrosswellPreset, SphericalPreset, Variant};
use mixkry::hybrid::HybridConfig;
use mixkry::operators::LinearOperator;
use mixkry::params::{Method, StoppingPolicy};
use mixkry::testproblems::spherical_operator;

#[test]
fn full_size_spherical_geometry() {
    let a = spherical_operator(128, 64, 90).unwrap();
    assert_eq!((a.nrows(), a.ncols()), (5760, 16384));
    assert!(a.matrix().nnz() > 0);
}

fn short(method: Method) -> HybridConfig {
    HybridConfig {
        method,
        stopping: StoppingPolicy {
            max_iter: 12,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn small_spherical_experiment_runs_every_variant() {
    let e = spherical_experiment(&SphericalPreset {
        size: 16,
        n_angles: 8,
        n_circles: 12,
        n_training: 20,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(e.n(), 256);
    let fit = e.fit.as_ref().unwrap();
    assert!(fit.nu > 0.0 && fit.ell > 0.0);
    for v in Variant::ALL {
        let o = e.run(v, &short(Method::Optimal)).unwrap();
        assert!(o.iterations() >= 1 && o.iterations() <= 12, "{v}");
        assert!(o.final_error().unwrap() < o.initial_error.unwrap(), "{v}");
        assert!(o.solution.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn crosswell_runs_under_every_selection_method() {
    let e = crosswell_experiment(&CrosswellPreset {
        size: 24,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(e.m(), 200);
    for method in [Method::Upre, Method::Gcv, Method::Wgcv, Method::Optimal] {
        let mut cfg = short(method);
        cfg.sigma2 = Some(1.0);
        let o = e.run(Variant::Mix, &cfg).unwrap();
        assert_eq!(o.selections.len(), o.iterations(), "{method}");
        assert!(o.selections.iter().all(|s| s.lambda > 0.0 && s.gamma > 0.0 && s.gamma <= 1.0));
        assert!(o.final_error().unwrap() < 1.0, "{method}");
    }
}
