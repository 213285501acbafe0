//! Data-driven prior construction.
//!
//! Matérn parameters are fit to a sample covariance `Q̂ = SSᵀ` by minimizing
//! a Hutchinson estimate of `‖Q(ν, ℓ) − Q̂‖_F²`. The probe set is drawn once
//! and reused for every evaluation, so the optimizer sees a smooth,
//! deterministic objective. `Q̂` is only ever applied as `S(Sᵀξ)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::operators::{
    build_kernel_operator, Grid, KernelSpec, LinearOperator, SampleCovarianceOperator,
    SampleFactor,
};
use crate::optim::{nelder_mead, NelderMeadOptions};

pub const NU_RANGE: (f64, f64) = (0.1, 10.0);
pub const ELL_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub nu: f64,
    pub ell: f64,
    pub objective: f64,
    pub probes: usize,
    pub seed: u64,
    pub evaluations: usize,
}

/// `M` Rademacher vectors of length `n`. The first `M` probes of a larger
/// draw with the same seed are identical.
pub fn rademacher_probes(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 }))
        .collect()
}

fn check_probes(n: usize, probes: &[DVector<f64>]) -> Result<()> {
    if probes.is_empty() {
        return Err(Error::Argument("need at least one probe".into()));
    }
    for p in probes {
        check_len("probe", n, p.len())?;
        if p.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Argument("probe entries must be ±1".into()));
        }
    }
    Ok(())
}

/// Per-probe values `‖E ξᵢ‖²` for an operator `E` given by `apply`.
pub fn hutchinson_terms(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    probes: &[DVector<f64>],
) -> Vec<f64> {
    probes.iter().map(|p| apply(p).norm_squared()).collect()
}

/// `(1/M) Σ ‖E ξᵢ‖²`, an unbiased estimate of `‖E‖_F²`.
pub fn hutchinson_estimate(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    probes: &[DVector<f64>],
) -> Result<f64> {
    let n = probes.first().map_or(0, |p| p.len());
    check_probes(n, probes)?;
    let terms = hutchinson_terms(apply, probes);
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Hutchinson estimate of `‖Q(spec) − Q̂‖_F²` on `grid`.
pub fn hutchinson_objective(
    spec: KernelSpec,
    grid: Grid,
    qhat: &SampleCovarianceOperator,
    probes: &[DVector<f64>],
) -> Result<f64> {
    check_len("sample covariance", grid.len(), qhat.nrows())?;
    check_probes(grid.len(), probes)?;
    let q = build_kernel_operator(spec, grid)?;
    Ok(hutchinson_terms(|x| q.apply(x) - qhat.apply(x), probes)
        .iter()
        .sum::<f64>()
        / probes.len() as f64)
}

/// Fixed-probe objective with the `Q̂ ξ` products computed once.
pub struct FitObjective {
    grid: Grid,
    probes: DMatrix<f64>,
    qhat_probes: DMatrix<f64>,
    /// When set, the model is `D Q D` with `D = diag(support)`.
    support: Option<Vec<bool>>,
}

impl FitObjective {
    pub fn new(grid: Grid, qhat: &SampleCovarianceOperator, probes: &[DVector<f64>]) -> Result<Self> {
        check_len("sample covariance", grid.len(), qhat.nrows())?;
        check_probes(grid.len(), probes)?;
        let qhat_probes: Vec<DVector<f64>> = probes.iter().map(|p| qhat.apply(p)).collect();
        Ok(Self {
            grid,
            probes: DMatrix::from_columns(probes),
            qhat_probes: DMatrix::from_columns(&qhat_probes),
            support: None,
        })
    }

    /// Restricts the kernel model to the pixels where `support` is true.
    pub fn with_support(mut self, support: &[bool]) -> Result<Self> {
        check_len("support mask", self.grid.len(), support.len())?;
        self.support = Some(support.to_vec());
        Ok(self)
    }

    pub fn probes(&self) -> usize {
        self.probes.ncols()
    }

    /// Per-probe values `‖(Q − Q̂) ξᵢ‖²`.
    pub fn terms(&self, nu: f64, ell: f64) -> Result<Vec<f64>> {
        let q = build_kernel_operator(KernelSpec::matern(nu, ell), self.grid)?;
        let zero_off = |mut m: DMatrix<f64>, support: &[bool]| {
            for (i, _) in support.iter().enumerate().filter(|(_, &s)| !s) {
                m.row_mut(i).fill(0.0);
            }
            m
        };
        let qx = match &self.support {
            None => q.apply_many(&self.probes),
            Some(sup) => zero_off(q.apply_many(&zero_off(self.probes.clone(), sup)), sup),
        };
        let diff = qx - &self.qhat_probes;
        Ok(diff.column_iter().map(|c| c.norm_squared()).collect())
    }

    pub fn value(&self, nu: f64, ell: f64) -> Result<f64> {
        let t = self.terms(nu, ell)?;
        Ok(t.iter().sum::<f64>() / t.len() as f64)
    }
}

/// The objective minimized by [`learn_matern`]: `Q̂` rescaled to unit mean
/// variance over the support (or the whole grid), against the kernel
/// restricted to that support.
pub fn normalized_objective(
    samples: &SampleFactor,
    grid: Grid,
    support: Option<&[bool]>,
    probes: &[DVector<f64>],
) -> Result<FitObjective> {
    check_len("training sample", grid.len(), samples.dim())?;
    // Kernels are correlation functions; compare against Q̂ at unit mean
    // variance so the fit sees shape, not amplitude.
    let active = support.map_or(grid.len(), |s| s.iter().filter(|&&b| b).count());
    let scale = samples.trace() / active.max(1) as f64;
    let factor = if scale > 0.0 {
        &samples.factor / scale.sqrt()
    } else {
        samples.factor.clone()
    };
    let qhat = SampleCovarianceOperator::from_factor(factor);
    let obj = FitObjective::new(grid, &qhat, probes)?;
    match support {
        Some(sup) => obj.with_support(sup),
        None => Ok(obj),
    }
}

/// Largest admissible length scale: the domain diameter.
pub fn ell_max(grid: &Grid) -> f64 {
    grid.diameter().max(ELL_MIN * 10.0)
}

/// Fits Matérn `(ν, ℓ)` to the samples with `m` probes.
///
/// The sample covariance is first rescaled to unit mean variance over the
/// support, since the kernel has unit variance and the overall amplitude is
/// carried by the regularization parameter. With a `support` mask the model
/// is the kernel restricted to it, `D Q D`.
///
/// A coarse 6 × 8 log grid seeds Nelder–Mead in `(log ν, log ℓ)`.
pub fn learn_matern(
    samples: &SampleFactor,
    grid: Grid,
    support: Option<&[bool]>,
    m: usize,
    seed: u64,
) -> Result<FitResult> {
    if m == 0 {
        return Err(Error::Argument("need at least one probe".into()));
    }
    let obj = normalized_objective(samples, grid, support, &rademacher_probes(grid.len(), m, seed))?;

    let lower = [NU_RANGE.0.ln(), ELL_MIN.ln()];
    let upper = [NU_RANGE.1.ln(), ell_max(&grid).ln()];
    let (gn, gl) = (6, 8);
    let coarse: Vec<(f64, f64)> = (0..gn)
        .flat_map(|i| {
            (0..gl).map(move |j| {
                (
                    lower[0] + (upper[0] - lower[0]) * i as f64 / (gn - 1) as f64,
                    lower[1] + (upper[1] - lower[1]) * j as f64 / (gl - 1) as f64,
                )
            })
        })
        .collect();
    let values: Vec<f64> = coarse
        .par_iter()
        .map(|&(a, b)| obj.value(a.exp(), b.exp()).unwrap_or(f64::NAN))
        .collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::FitFailure("objective is non-finite on the whole search box".into()))?;
    let step = [
        (upper[0] - lower[0]) / (gn - 1) as f64 / 2.0,
        (upper[1] - lower[1]) / (gl - 1) as f64 / 2.0,
    ];
    let r = nelder_mead(
        |x| obj.value(x[0].exp(), x[1].exp()).unwrap_or(f64::NAN),
        &[coarse[best].0, coarse[best].1],
        &step,
        &lower,
        &upper,
        NelderMeadOptions {
            max_evals: 200,
            xtol: 1e-4,
            ftol: 1e-10,
        },
    );
    let (x, f) = if r.f <= values[best] {
        (r.x, r.f)
    } else {
        (vec![coarse[best].0, coarse[best].1], values[best])
    };
    if !f.is_finite() {
        return Err(Error::FitFailure("no finite objective value found".into()));
    }
    Ok(FitResult {
        nu: x[0].exp().clamp(NU_RANGE.0, NU_RANGE.1),
        ell: x[1].exp().clamp(ELL_MIN, ell_max(&grid)),
        objective: f.max(0.0),
        probes: m,
        seed,
        evaluations: coarse.len() + r.evals,
    })
}

/// Rao–Blackwellized Ledoit–Wolf shrinkage intensity toward the scaled
/// identity `(tr Q̂ / n) I`:
///
/// ```text
///     ρ = ((N−2)/N · tr(Q̂²) + tr²(Q̂)) / ((N+2) (tr(Q̂²) − tr²(Q̂)/n))
/// ```
///
/// clipped to `(0, 1]`. Returns 1 when `Q̂` has no dispersion.
pub fn rblw_gamma(samples: &SampleFactor) -> Result<f64> {
    let big_n = samples.count;
    if big_n < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {big_n}")));
    }
    let n = samples.dim() as f64;
    let nn = big_n as f64;
    let tr = samples.trace();
    let tr2 = samples.trace_of_square();
    let dispersion = tr2 - tr * tr / n;
    if tr == 0.0 || dispersion <= 1e-14 * tr2 {
        return Ok(1.0);
    }
    let rho = ((nn - 2.0) / nn * tr2 + tr * tr) / ((nn + 2.0) * dispersion);
    Ok(rho.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Scale of the identity shrinkage target, `tr(Q̂)/n`.
pub fn shrinkage_target_scale(samples: &SampleFactor) -> f64 {
    samples.trace() / samples.dim() as f64
}

/// Mean and standard error of per-probe values.
pub fn mean_and_standard_error(terms: &[f64]) -> (f64, f64) {
    let m = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / m;
    if terms.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}
