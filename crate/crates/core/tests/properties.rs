use proptest::prelude::*;

use mixkry::mixgk::{MixGk, MixGkOptions};
use mixkry::operators::Grid;
use mixkry::params::{default_omega, gcv_objective, wgcv_objective};
use mixkry::projected::build_projected;
use mixkry::testproblems::{random_dense_problem, ray_lengths};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // A segment crossing the domain deposits its clipped length, cell by cell.
    #[test]
    fn ray_lengths_sum_to_the_clipped_length(
        nx in 1usize..12, ny in 1usize..12,
        y0 in 0.01f64..0.99, y1 in 0.01f64..0.99,
    ) {
        let grid = Grid::new(nx, ny, 1.0 / nx as f64, 1.0 / ny as f64).unwrap();
        let cells = ray_lengths(&grid, (0.0, y0), (1.0, y1));
        let total: f64 = cells.iter().map(|c| c.1).sum();
        let expected = (1.0 + (y1 - y0).powi(2)).sqrt();
        prop_assert!((total - expected).abs() <= 1e-12);
        prop_assert!(cells.iter().all(|&(i, l)| i < nx * ny && l > 0.0));
    }

    #[test]
    fn rays_outside_the_domain_touch_nothing(y in 1.01f64..3.0, nx in 1usize..8) {
        let grid = Grid::new(nx, nx, 1.0 / nx as f64, 1.0 / nx as f64).unwrap();
        prop_assert!(ray_lengths(&grid, (0.0, y), (1.0, y)).is_empty());
    }

    #[test]
    fn unit_weight_wgcv_is_gcv(
        seed in 0u64..1000, k in 1usize..8,
        gamma in 0.05f64..1.0, log_lambda in -3.0f64..2.0,
    ) {
        let p = random_dense_problem(24, 16, 4, seed);
        let mut g = MixGk::new(p.a_op(), p.whitener(), p.q1_op(), p.q2_op(), &p.b, MixGkOptions::default()).unwrap();
        while g.k() < k && !g.is_terminal() {
            g.step().unwrap();
        }
        let sys = build_projected(&g, gamma).unwrap();
        let lambda = 10f64.powf(log_lambda);
        let a = wgcv_objective(&sys, lambda, 1.0).unwrap();
        let b = gcv_objective(&sys, lambda).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(default_omega(g.k(), 24) > 0.0);
    }
}
