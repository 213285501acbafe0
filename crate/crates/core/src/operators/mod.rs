//! Linear operators and covariance constructions.
//!
//! Everything the solver touches (forward model, prior covariances, noise
//! whitening) goes through [`LinearOperator`], so a dense matrix, a sparse
//! ray-tracing matrix and a kernel matrix evaluated on the fly are
//! interchangeable.

mod bessel;
mod kernel;
mod sample;
mod whitener;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{check_len, Error, Result};

pub use bessel::{bessel_k_scaled, ln_bessel_k_scaled};
pub use kernel::{
    build_kernel_operator, kernel_eval, Grid, KernelFamily, KernelOperator, KernelSpec,
    DEFAULT_DENSE_CAP,
};
pub use sample::{sample_covariance, SampleCovarianceOperator, SampleFactor};
pub use whitener::{noise_whitener, noise_whitener_from_operator, Whitener};

/// A matrix-free linear map `y = Op x` with declared dimensions.
///
/// Implementations must be immutable after construction; `apply` may be
/// called concurrently from several threads.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `Op x`. Callers guarantee `x.len() == self.ncols()`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `Opᵀ y`, if the operator exposes its transpose.
    fn apply_transpose(&self, _y: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

/// Shared handle to an operator.
pub type OpRef = Arc<dyn LinearOperator>;

/// `Op x` with a dimension check.
pub fn apply_checked(op: &dyn LinearOperator, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("operator input", op.ncols(), x.len())?;
    Ok(op.apply(x))
}

/// `Opᵀ y` with a dimension check; errors if no transpose is available.
pub fn apply_transpose_checked(op: &dyn LinearOperator, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("operator transpose input", op.nrows(), y.len())?;
    op.apply_transpose(y)
        .ok_or_else(|| Error::Argument("operator does not expose a transpose".into()))
}

/// Materializes an operator column by column. Test and oracle use only.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (m, n) = (op.nrows(), op.ncols());
    let mut out = DMatrix::zeros(m, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        out.set_column(j, &op.apply(&e));
        e[j] = 0.0;
    }
    out
}

#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }
    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.matrix.tr_mul(y))
    }
}

/// Sparse operator in CSR form with a precomputed transpose.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    a: CsrMatrix<f64>,
    at: CsrMatrix<f64>,
}

impl SparseOperator {
    pub fn new(a: CsrMatrix<f64>) -> Self {
        let at = a.transpose();
        Self { a, at }
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.a
    }

    pub fn nnz(&self) -> usize {
        self.a.nnz()
    }

    /// Sum of the stored entries of each row.
    pub fn row_sums(&self) -> Vec<f64> {
        self.a.row_iter().map(|row| row.values().iter().sum()).collect()
    }
}

fn csr_mul(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut acc = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            acc += v * x[j];
        }
        y[i] = acc;
    }
    y
}

impl LinearOperator for SparseOperator {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }
    fn ncols(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        csr_mul(&self.a, x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(csr_mul(&self.at, y))
    }
}

#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: DVector<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: DVector<f64>) -> Self {
        Self { diag }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Self::new(DVector::from_element(n, scale))
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }
}

impl LinearOperator for DiagonalOperator {
    fn nrows(&self) -> usize {
        self.diag.len()
    }
    fn ncols(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.diag.component_mul(x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.apply(y))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroOperator {
    rows: usize,
    cols: usize,
}

impl ZeroOperator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }
}

impl LinearOperator for ZeroOperator {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.rows)
    }
    fn apply_transpose(&self, _y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.cols))
    }
}

/// Symmetric restriction `D K D` of a square operator `K` by a diagonal
/// weight `D`, typically a 0/1 support mask.
#[derive(Clone)]
pub struct MaskedOperator {
    inner: OpRef,
    weights: DVector<f64>,
}

impl MaskedOperator {
    pub fn new(inner: OpRef, weights: DVector<f64>) -> Result<Self> {
        check_len("mask", inner.ncols(), weights.len())?;
        check_len("mask", inner.nrows(), weights.len())?;
        Ok(Self { inner, weights })
    }

    pub fn from_mask(inner: OpRef, mask: &[bool]) -> Result<Self> {
        let w = DVector::from_iterator(mask.len(), mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        Self::new(inner, w)
    }
}

impl fmt::Debug for MaskedOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskedOperator")
            .field("n", &self.weights.len())
            .field("support", &self.weights.iter().filter(|&&w| w != 0.0).count())
            .finish()
    }
}

impl LinearOperator for MaskedOperator {
    fn nrows(&self) -> usize {
        self.weights.len()
    }
    fn ncols(&self) -> usize {
        self.weights.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner
            .apply(&self.weights.component_mul(x))
            .component_mul(&self.weights)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        let inner = self.inner.apply_transpose(&self.weights.component_mul(y))?;
        Some(inner.component_mul(&self.weights))
    }
}

type MapFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Operator defined by closures.
pub struct FnOperator {
    rows: usize,
    cols: usize,
    forward: MapFn,
    transpose: Option<MapFn>,
}

impl FnOperator {
    pub fn new(
        rows: usize,
        cols: usize,
        forward: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            rows,
            cols,
            forward: Box::new(forward),
            transpose: None,
        }
    }

    pub fn with_transpose(
        mut self,
        transpose: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.transpose = Some(Box::new(transpose));
        self
    }
}

impl fmt::Debug for FnOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnOperator")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("transpose", &self.transpose.is_some())
            .finish()
    }
}

impl LinearOperator for FnOperator {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.forward)(x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        self.transpose.as_ref().map(|t| t(y))
    }
}

/// How the mixing weight between the two prior components is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mixing {
    Fixed(f64),
    Estimated,
}

/// Gaussian prior `N(μ, λ⁻²(γ Q₁ + (1−γ) Q₂))`.
#[derive(Clone)]
pub struct PriorSpec {
    pub mean: DVector<f64>,
    pub q1: OpRef,
    pub q2: OpRef,
    pub mixing: Mixing,
}

impl PriorSpec {
    pub fn new(mean: DVector<f64>, q1: OpRef, q2: OpRef, mixing: Mixing) -> Result<Self> {
        let n = mean.len();
        for (what, op) in [("prior Q1", &q1), ("prior Q2", &q2)] {
            check_len(what, n, op.nrows())?;
            check_len(what, n, op.ncols())?;
        }
        if let Mixing::Fixed(g) = mixing {
            check_gamma(g)?;
        }
        Ok(Self {
            mean,
            q1,
            q2,
            mixing,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PriorSpec")
            .field("n", &self.mean.len())
            .field("mixing", &self.mixing)
            .finish()
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "mixing parameter must lie in (0, 1], got {gamma}"
        )))
    }
}

/// `γ Q₁x + (1−γ) Q₂x`.
pub fn mixed_apply(prior: &PriorSpec, gamma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    check_len("mixed prior input", prior.dim(), x.len())?;
    let mut out = prior.q1.apply(x);
    if gamma < 1.0 {
        out *= gamma;
        out.axpy(1.0 - gamma, &prior.q2.apply(x), 1.0);
    }
    Ok(out)
}
