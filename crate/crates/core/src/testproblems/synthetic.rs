//! Small dense random problems for verification and benchmarking.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::operators::{
    noise_whitener, DenseOperator, Mixing, OpRef, PriorSpec, Whitener,
};

/// Dense `A`, SPD `Q₁`, PSD `Q₂` of prescribed rank, diagonal `R`, and a
/// right-hand side `b = d − Aμ`.
#[derive(Clone, Debug)]
pub struct DenseProblem {
    pub a: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub noise_var: DVector<f64>,
    pub mean: DVector<f64>,
    pub b: DVector<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
}

/// Random problem: `Q₁ = MMᵀ/n + I/2`, `Q₂ = PPᵀ/rank` with `P` of
/// `q2_rank` columns (zero when the rank is 0), `R` diagonal in `[0.5, 2]`.
pub fn random_dense_problem(m: usize, n: usize, q2_rank: usize, seed: u64) -> DenseProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform_matrix(&mut rng, m, n);
    let mq = uniform_matrix(&mut rng, n, n);
    let q1 = &mq * mq.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    let q2 = if q2_rank == 0 {
        DMatrix::zeros(n, n)
    } else {
        let p = uniform_matrix(&mut rng, n, q2_rank);
        &p * p.transpose() / q2_rank as f64
    };
    let noise_var = DVector::from_fn(m, |_, _| 0.5 + 1.5 * rng.gen::<f64>());
    let mean = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let b = DVector::from_fn(m, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    DenseProblem {
        a,
        q1,
        q2,
        noise_var,
        mean,
        b,
    }
}

impl DenseProblem {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a_op(&self) -> OpRef {
        Arc::new(DenseOperator::new(self.a.clone()))
    }

    pub fn q1_op(&self) -> OpRef {
        Arc::new(DenseOperator::new(self.q1.clone()))
    }

    pub fn q2_op(&self) -> OpRef {
        Arc::new(DenseOperator::new(self.q2.clone()))
    }

    pub fn whitener(&self) -> Whitener {
        noise_whitener(&self.noise_var).expect("generated variances are positive")
    }

    pub fn prior(&self, mixing: Mixing) -> Result<PriorSpec> {
        PriorSpec::new(self.mean.clone(), self.q1_op(), self.q2_op(), mixing)
    }

    /// Dense `L_R = diag(1/√r)`.
    pub fn whitening_root(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_var.map(|v| 1.0 / v.sqrt()))
    }

    /// Dense `γQ₁ + (1−γ)Q₂`.
    pub fn mixed(&self, gamma: f64) -> DMatrix<f64> {
        &self.q1 * gamma + &self.q2 * (1.0 - gamma)
    }
}
