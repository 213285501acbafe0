use std::sync::Arc;

use nalgebra::DVector;

use super::{DiagonalOperator, LinearOperator, OpRef};
use crate::error::{Error, Result};

/// Noise covariance `R` (diagonal) with `R⁻¹ = L_Rᵀ L_R`.
#[derive(Clone, Debug)]
pub struct Whitener {
    variance: DVector<f64>,
    inverse: Arc<DiagonalOperator>,
    root: Arc<DiagonalOperator>,
}

impl Whitener {
    pub fn identity(m: usize) -> Self {
        Self::scaled_identity(m, 1.0).expect("unit variance is positive")
    }

    /// `R = σ² I`.
    pub fn scaled_identity(m: usize, sigma2: f64) -> Result<Self> {
        noise_whitener(&DVector::from_element(m, sigma2))
    }

    pub fn dim(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &DVector<f64> {
        &self.variance
    }

    /// `R⁻¹` as an operator.
    pub fn inverse(&self) -> OpRef {
        self.inverse.clone()
    }

    /// `L_R` as an operator.
    pub fn root(&self) -> OpRef {
        self.root.clone()
    }

    pub fn apply_inverse(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inverse.apply(x)
    }

    pub fn apply_root(&self, x: &DVector<f64>) -> DVector<f64> {
        self.root.apply(x)
    }

    /// `‖x‖_{R⁻¹}`.
    pub fn weighted_norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.apply_inverse(x)).max(0.0).sqrt()
    }
}

/// Builds `R⁻¹` and `L_R` for a diagonal noise covariance given by its diagonal.
pub fn noise_whitener(variance: &DVector<f64>) -> Result<Whitener> {
    if let Some((i, v)) = variance
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::Definiteness(format!(
            "noise variance entry {i} is {v}; all entries must be positive"
        )));
    }
    let inverse = variance.map(|v| 1.0 / v);
    let root = variance.map(|v| 1.0 / v.sqrt());
    Ok(Whitener {
        variance: variance.clone(),
        inverse: Arc::new(DiagonalOperator::new(inverse)),
        root: Arc::new(DiagonalOperator::new(root)),
    })
}

/// Builds the whitener from an operator form of `R`, which must be diagonal.
pub fn noise_whitener_from_operator(r: &dyn LinearOperator) -> Result<Whitener> {
    let m = r.nrows();
    if r.ncols() != m {
        return Err(Error::Argument("noise covariance must be square".into()));
    }
    let mut diag = DVector::zeros(m);
    let mut e = DVector::zeros(m);
    for j in 0..m {
        e[j] = 1.0;
        let col = r.apply(&e);
        e[j] = 0.0;
        diag[j] = col[j];
        if col.iter().enumerate().any(|(i, &v)| i != j && v != 0.0) {
            return Err(Error::Argument(
                "only diagonal noise covariances are supported".into(),
            ));
        }
    }
    noise_whitener(&diag)
}
