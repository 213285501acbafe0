use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use super::LinearOperator;
use crate::error::{check_len, Error, Result};

/// Centered, scaled training samples: `Q̂ = S Sᵀ` with column
/// `j` of `S` equal to `(s⁽ʲ⁾ − s̄)/√N`.
///
/// The 1/N normalization is kept even though 1/(N−1) would be unbiased.
#[derive(Clone, Debug)]
pub struct SampleFactor {
    pub factor: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub count: usize,
}

impl SampleFactor {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// tr(Q̂) = ‖S‖_F².
    pub fn trace(&self) -> f64 {
        self.factor.norm_squared()
    }

    /// tr(Q̂²) = ‖SᵀS‖_F².
    pub fn trace_of_square(&self) -> f64 {
        self.factor.tr_mul(&self.factor).norm_squared()
    }

    /// Dense Q̂. Oracles and tiny problems only.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Sample mean and covariance factor of a list of equally sized samples.
pub fn sample_covariance(samples: &[DVector<f64>]) -> Result<SampleFactor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("sample list is empty".into()))?;
    let n = first.len();
    for s in samples {
        check_len("training sample", n, s.len())?;
    }
    let count = samples.len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= count as f64;
    let scale = 1.0 / (count as f64).sqrt();
    let factor = DMatrix::from_fn(n, count, |i, j| (samples[j][i] - mean[i]) * scale);
    Ok(SampleFactor {
        factor,
        mean,
        count,
    })
}

/// `Q̂ x` evaluated as `S(Sᵀx)`; never forms Q̂.
///
/// Counts factor products so callers can verify the access pattern.
#[derive(Debug)]
pub struct SampleCovarianceOperator {
    factor: DMatrix<f64>,
    factor_products: AtomicUsize,
}

impl SampleCovarianceOperator {
    pub fn new(sample: &SampleFactor) -> Self {
        Self::from_factor(sample.factor.clone())
    }

    pub fn from_factor(factor: DMatrix<f64>) -> Self {
        Self {
            factor,
            factor_products: AtomicUsize::new(0),
        }
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Number of products with `S` or `Sᵀ` performed so far.
    pub fn factor_products(&self) -> usize {
        self.factor_products.load(Ordering::Relaxed)
    }
}

impl LinearOperator for SampleCovarianceOperator {
    fn nrows(&self) -> usize {
        self.factor.nrows()
    }
    fn ncols(&self) -> usize {
        self.factor.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor_products.fetch_add(2, Ordering::Relaxed);
        &self.factor * self.factor.tr_mul(x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.apply(y))
    }
}
