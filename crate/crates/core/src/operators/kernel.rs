use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::bessel::ln_bessel_k_scaled;
use super::LinearOperator;
use crate::error::{Error, Result};

/// Largest grid for which a kernel operator is built densely.
pub const DEFAULT_DENSE_CAP: usize = 16_384;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponential,
    Matern,
    GammaExponential,
    RationalQuadratic,
    Sinc,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-exponential" | "se" => Ok(Self::SquaredExponential),
            "matern" => Ok(Self::Matern),
            "gamma-exponential" => Ok(Self::GammaExponential),
            "rational-quadratic" | "rq" => Ok(Self::RationalQuadratic),
            "sinc" => Ok(Self::Sinc),
            other => Err(Error::Parse(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Stationary isotropic covariance kernel `κ(r)`.
///
/// `nu` is the shape parameter (smoothness for Matérn, tail exponent for
/// rational quadratic, frequency for sinc); `gamma_exp` is the exponent of
/// the γ-exponential family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub ell: f64,
    pub nu: f64,
    pub gamma_exp: f64,
}

impl KernelSpec {
    pub fn squared_exponential(ell: f64) -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            ell,
            nu: 1.0,
            gamma_exp: 2.0,
        }
    }

    pub fn matern(nu: f64, ell: f64) -> Self {
        Self {
            family: KernelFamily::Matern,
            ell,
            nu,
            gamma_exp: 2.0,
        }
    }

    pub fn gamma_exponential(ell: f64, exponent: f64) -> Self {
        Self {
            family: KernelFamily::GammaExponential,
            ell,
            nu: 1.0,
            gamma_exp: exponent,
        }
    }

    pub fn rational_quadratic(nu: f64, ell: f64) -> Self {
        Self {
            family: KernelFamily::RationalQuadratic,
            ell,
            nu,
            gamma_exp: 2.0,
        }
    }

    /// `sin(νr)/(νr)`; the length scale is unused.
    pub fn sinc(nu: f64) -> Self {
        Self {
            family: KernelFamily::Sinc,
            ell: 1.0,
            nu,
            gamma_exp: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::ParameterDomain(format!(
                "{:?} kernel: {what} = {v} is out of range",
                self.family
            )))
        };
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return bad("ell", self.ell);
        }
        let uses_nu = !matches!(
            self.family,
            KernelFamily::SquaredExponential | KernelFamily::GammaExponential
        );
        if uses_nu && !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu", self.nu);
        }
        if self.family == KernelFamily::GammaExponential
            && !(self.gamma_exp > 0.0 && self.gamma_exp <= 2.0)
        {
            return bad("gamma exponent", self.gamma_exp);
        }
        Ok(())
    }

    /// κ(r) without validation; `r ≥ 0`.
    pub(crate) fn value(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-(r * r) / (2.0 * self.ell * self.ell)).exp(),
            KernelFamily::Matern => matern(self.nu, r / self.ell),
            KernelFamily::GammaExponential => (-(r / self.ell).powf(self.gamma_exp)).exp(),
            KernelFamily::RationalQuadratic => {
                (1.0 + r * r / (2.0 * self.nu * self.ell * self.ell)).powf(-self.nu)
            }
            KernelFamily::Sinc => {
                let t = self.nu * r;
                if t.abs() < 1e-8 {
                    1.0 - t * t / 6.0
                } else {
                    t.sin() / t
                }
            }
        }
    }
}

/// Matérn correlation at scaled distance `s = r/ℓ`.
fn matern(nu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-s).exp();
    }
    if nu == 1.5 {
        let t = 3f64.sqrt() * s;
        return (1.0 + t) * (-t).exp();
    }
    if nu == 2.5 {
        let t = 5f64.sqrt() * s;
        return (1.0 + t + t * t / 3.0) * (-t).exp();
    }
    let z = (2.0 * nu).sqrt() * s;
    let log_val =
        (1.0 - nu) * LN_2 - libm::lgamma(nu) + nu * z.ln() + ln_bessel_k_scaled(nu, z) - z;
    log_val.exp().min(1.0)
}

/// Evaluates the covariance function at distance `r`.
pub fn kernel_eval(spec: &KernelSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if !(r >= 0.0) {
        return Err(Error::ParameterDomain(format!(
            "distance must be nonnegative, got {r}"
        )));
    }
    Ok(spec.value(r))
}

/// Regular 2-D grid of points, enumerated row-major (`index = iy·nx + ix`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Argument("grid shape must be positive".into()));
        }
        if !(hx > 0.0 && hy > 0.0) {
            return Err(Error::Argument("grid spacing must be positive".into()));
        }
        Ok(Self { nx, ny, hx, hy })
    }

    /// Cell-centred grid on the unit square.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0 / nx as f64, 1.0 / ny.max(1) as f64)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> (f64, f64) {
        let (ix, iy) = (index % self.nx, index / self.nx);
        ((ix as f64 + 0.5) * self.hx, (iy as f64 + 0.5) * self.hy)
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn diameter(&self) -> f64 {
        (self.nx as f64 * self.hx).hypot(self.ny as f64 * self.hy)
    }
}

/// Kernel matrix `Q_ij = κ(|z_i − z_j|)` on a grid.
///
/// For a stationary kernel on a regular grid every entry is a function of
/// the index offset, so only an `ny × nx` table is stored; `apply` is the
/// exact dense matrix-vector product.
#[derive(Clone, Debug)]
pub struct KernelOperator {
    spec: KernelSpec,
    grid: Grid,
    table: Vec<f64>,
}

impl KernelOperator {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let nx = self.grid.nx;
        let dx = (i % nx).abs_diff(j % nx);
        let dy = (i / nx).abs_diff(j / nx);
        self.table[dy * nx + dx]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }

    fn apply_row_block(&self, iy: usize, x: &[f64], out: &mut [f64]) {
        let nx = self.grid.nx;
        out.iter_mut().for_each(|v| *v = 0.0);
        for jy in 0..self.grid.ny {
            let trow = &self.table[iy.abs_diff(jy) * nx..][..nx];
            let xrow = &x[jy * nx..][..nx];
            for (ix, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (jx, &xv) in xrow.iter().enumerate() {
                    acc += trow[ix.abs_diff(jx)] * xv;
                }
                *o += acc;
            }
        }
    }

    /// Applies the operator to every column of `x`.
    pub fn apply_many(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|j| self.apply(&x.column(j).into_owned()))
            .collect();
        DMatrix::from_columns(&cols)
    }
}

impl LinearOperator for KernelOperator {
    fn nrows(&self) -> usize {
        self.grid.len()
    }
    fn ncols(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let nx = self.grid.nx;
        let mut y = DVector::zeros(self.grid.len());
        let xs = x.as_slice();
        y.as_mut_slice()
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(iy, out)| self.apply_row_block(iy, xs, out));
        y
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.apply(y))
    }
}

/// Builds the kernel covariance operator of `spec` on `grid`.
pub fn build_kernel_operator(spec: KernelSpec, grid: Grid) -> Result<KernelOperator> {
    build_kernel_operator_with_cap(spec, grid, DEFAULT_DENSE_CAP)
}

pub fn build_kernel_operator_with_cap(
    spec: KernelSpec,
    grid: Grid,
    cap: usize,
) -> Result<KernelOperator> {
    spec.validate()?;
    let n = grid.len();
    if n > cap {
        return Err(Error::Capacity { n, cap });
    }
    let table = (0..grid.ny)
        .flat_map(|dy| (0..grid.nx).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| spec.value((dx as f64 * grid.hx).hypot(dy as f64 * grid.hy)))
        .collect();
    Ok(KernelOperator { spec, grid, table })
}
