//! Selection of the regularization parameter λ and mixing parameter γ.
//!
//! The projected UPRE, GCV and weighted GCV functions are normalized by
//! the nominal `2k + 1` rows of the projected system, even when dependent
//! `Q₂` columns were dropped from `Y` (equivalently, `D` is padded with zero
//! rows). The search is a log-uniform grid followed by Nelder–Mead.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::mixgk::MixGk;
use crate::operators::{check_gamma, PriorSpec};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::projected::{ProjectedSystem, ProjectionParts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Optimal,
    Upre,
    Gcv,
    Wgcv,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::Upre => "upre",
            Self::Gcv => "gcv",
            Self::Wgcv => "wgcv",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "upre" => Ok(Self::Upre),
            "gcv" => Ok(Self::Gcv),
            "wgcv" => Ok(Self::Wgcv),
            other => Err(Error::Parse(format!("unknown selection method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub gamma: f64,
    pub lambda: f64,
    pub objective: f64,
    pub method: Method,
    pub evaluations: usize,
    pub converged: bool,
}

/// `‖r‖²/(2k+1) + 2σ² tr/(2k+1) − σ²`.
pub fn upre_objective(sys: &ProjectedSystem, lambda: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Configuration(format!(
            "UPRE needs a positive noise variance, got {sigma2}"
        )));
    }
    let rows = sys.nominal_rows() as f64;
    let r2 = sys.residual_norm_sq(lambda)?;
    let tr = sys.trace(lambda)?;
    Ok(r2 / rows + 2.0 * sigma2 * tr / rows - sigma2)
}

/// `‖r‖² / (2k+1 − tr)²`.
pub fn gcv_objective(sys: &ProjectedSystem, lambda: f64) -> Result<f64> {
    wgcv_objective(sys, lambda, 1.0)
}

/// `‖r‖² / (2k+1 − ω tr)²`.
///
/// `ω = (2k+1)/m` may exceed one once `2k+1 > m`; any positive ω is
/// accepted.
pub fn wgcv_objective(sys: &ProjectedSystem, lambda: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::ParameterDomain(format!(
            "GCV weight must be positive, got {omega}"
        )));
    }
    let rows = sys.nominal_rows() as f64;
    let r2 = sys.residual_norm_sq(lambda)?;
    let denom = rows - omega * sys.trace(lambda)?;
    if denom.abs() <= 1e-14 * rows {
        return Err(Error::DegenerateTrace(format!(
            "GCV denominator vanishes at λ = {lambda}"
        )));
    }
    Ok(r2 / (denom * denom))
}

/// Default WGCV weight `(2k+1)/m`.
pub fn default_omega(k: usize, m: usize) -> f64 {
    (2 * k + 1) as f64 / m as f64
}

/// `‖s_k(γ, λ) − s_true‖²`, computed in the full space.
pub fn optimal_objective(
    state: &MixGk,
    prior: &PriorSpec,
    gamma: f64,
    lambda: f64,
    s_true: Option<&DVector<f64>>,
) -> Result<f64> {
    let truth = s_true.ok_or_else(|| {
        Error::Configuration("optimal selection needs the true solution".into())
    })?;
    check_len("true solution", prior.dim(), truth.len())?;
    let sys = ProjectedSystem::new(&ProjectionParts::from_state(state)?, gamma)?;
    let y = sys.solve(lambda)?;
    let s = crate::projected::recover_iterate(state, prior, gamma, &y)?;
    Ok((s - truth).norm_squared())
}

/// Inputs a selection rule may need beyond the projected system.
#[derive(Clone, Copy, Debug)]
pub struct SelectionInputs<'a> {
    pub sigma2: Option<f64>,
    pub truth: Option<&'a DVector<f64>>,
    /// WGCV weight; defaults to `(2k+1)/m`.
    pub omega: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub gamma_min: f64,
    pub log_lambda_min: f64,
    pub log_lambda_max: f64,
    pub grid_gamma: usize,
    pub grid_lambda: usize,
    /// Evaluation cap for the refinement stage.
    pub max_refine_evals: usize,
    /// Fix γ instead of searching over it.
    pub fixed_gamma: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            gamma_min: 0.01,
            log_lambda_min: -6.0,
            log_lambda_max: 2.0,
            grid_gamma: 15,
            grid_lambda: 15,
            max_refine_evals: 200,
            fixed_gamma: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if !(self.gamma_min > 0.0 && self.gamma_min <= 1.0) {
            return bad(format!("gamma_min must lie in (0, 1], got {}", self.gamma_min));
        }
        if !(self.log_lambda_min >= -8.0
            && self.log_lambda_max <= 8.0
            && self.log_lambda_min < self.log_lambda_max)
        {
            return bad(format!(
                "log10 lambda range [{}, {}] must be increasing and inside [-8, 8]",
                self.log_lambda_min, self.log_lambda_max
            ));
        }
        if self.grid_gamma == 0 || self.grid_lambda < 2 {
            return bad("search grid needs at least 1 γ and 2 λ points".into());
        }
        if let Some(g) = self.fixed_gamma {
            check_gamma(g)?;
        }
        Ok(())
    }

    /// γ grid, log-uniform on `[gamma_min, 1]` (just the fixed value if set).
    pub fn gammas(&self) -> Vec<f64> {
        if let Some(g) = self.fixed_gamma {
            return vec![g];
        }
        let n = self.grid_gamma;
        if n == 1 {
            return vec![1.0];
        }
        let lo = self.gamma_min.ln();
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    1.0
                } else {
                    (lo * (1.0 - i as f64 / (n - 1) as f64)).exp()
                }
            })
            .collect()
    }

    /// λ grid, log-uniform.
    pub fn lambdas(&self) -> Vec<f64> {
        log_grid(self.log_lambda_min, self.log_lambda_max, self.grid_lambda)
    }
}

/// `n` points `10^t` with `t` uniform on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// γ-independent precomputation for the optimal objective:
/// `‖μ + (γQ₁V + (1−γ)W) y − s_true‖²` expands into Gram matrices of
/// `Q₁V`, `W` and `d = μ − s_true`.
struct OptimalGram {
    aa: DMatrix<f64>,
    aw: DMatrix<f64>,
    ww: DMatrix<f64>,
    ad: DVector<f64>,
    wd: DVector<f64>,
    dd: f64,
}

impl OptimalGram {
    fn new(state: &MixGk, prior: &PriorSpec, truth: &DVector<f64>) -> Self {
        let q1v = DMatrix::from_columns(state.q1v());
        let w = DMatrix::from_columns(state.w());
        let d = &prior.mean - truth;
        Self {
            aa: q1v.tr_mul(&q1v),
            aw: q1v.tr_mul(&w),
            ww: w.tr_mul(&w),
            ad: q1v.tr_mul(&d),
            wd: w.tr_mul(&d),
            dd: d.norm_squared(),
        }
    }

    fn value(&self, gamma: f64, y: &DVector<f64>) -> f64 {
        let h = 1.0 - gamma;
        let zz = &self.aa * (gamma * gamma)
            + (&self.aw + self.aw.transpose()) * (gamma * h)
            + &self.ww * (h * h);
        let zd = &self.ad * gamma + &self.wd * h;
        (y.dot(&(zz * y)) + 2.0 * y.dot(&zd) + self.dd).max(0.0)
    }
}

/// Everything needed to evaluate one selection function at any (γ, λ).
pub struct Selector<'a> {
    method: Method,
    state: &'a MixGk,
    prior: &'a PriorSpec,
    parts: ProjectionParts,
    sigma2: f64,
    omega: f64,
    truth: Option<&'a DVector<f64>>,
    gram: Option<OptimalGram>,
}

impl<'a> Selector<'a> {
    pub fn new(
        method: Method,
        state: &'a MixGk,
        prior: &'a PriorSpec,
        inputs: SelectionInputs<'a>,
    ) -> Result<Self> {
        let parts = ProjectionParts::from_state(state)?;
        let m = state.operator().nrows();
        let mut sigma2 = f64::NAN;
        let mut gram = None;
        match method {
            Method::Upre => {
                sigma2 = inputs.sigma2.ok_or_else(|| {
                    Error::Configuration("UPRE needs the noise variance select.sigma2".into())
                })?;
                if !(sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::Configuration(format!(
                        "noise variance must be positive, got {sigma2}"
                    )));
                }
            }
            Method::Optimal => {
                let truth = inputs.truth.ok_or_else(|| {
                    Error::Configuration("optimal selection needs the true solution".into())
                })?;
                check_len("true solution", prior.dim(), truth.len())?;
                gram = Some(OptimalGram::new(state, prior, truth));
            }
            Method::Gcv | Method::Wgcv => {}
        }
        let omega = match method {
            Method::Wgcv => inputs.omega.unwrap_or(default_omega(parts.k(), m)),
            _ => 1.0,
        };
        Ok(Self {
            method,
            state,
            prior,
            parts,
            sigma2,
            omega,
            truth: inputs.truth,
            gram,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn system(&self, gamma: f64) -> Result<ProjectedSystem> {
        ProjectedSystem::new(&self.parts, gamma)
    }

    /// Fast evaluation on a prebuilt system (search hot path).
    pub fn eval_on(&self, sys: &ProjectedSystem, lambda: f64) -> Result<f64> {
        match self.method {
            Method::Upre => upre_objective(sys, lambda, self.sigma2),
            Method::Gcv => gcv_objective(sys, lambda),
            Method::Wgcv => wgcv_objective(sys, lambda, self.omega),
            Method::Optimal => {
                let y = sys.solve(lambda)?;
                Ok(self.gram.as_ref().expect("built for optimal").value(sys.gamma(), &y))
            }
        }
    }

    /// Canonical evaluation of the selection function at (γ, λ).
    pub fn eval(&self, gamma: f64, lambda: f64) -> Result<f64> {
        match self.method {
            Method::Optimal => {
                optimal_objective(self.state, self.prior, gamma, lambda, self.truth)
            }
            _ => self.eval_on(&self.system(gamma)?, lambda),
        }
    }

    /// Same value as [`Selector::eval`] up to rounding, without forming the
    /// full-space iterate.
    pub fn eval_fast(&self, gamma: f64, lambda: f64) -> Result<f64> {
        self.eval_on(&self.system(gamma)?, lambda)
    }

    /// Objective on the grid `gammas × lambdas` (row per γ); failed
    /// evaluations are `NaN`. Rows run in parallel.
    pub fn grid(&self, gammas: &[f64], lambdas: &[f64]) -> Vec<Vec<f64>> {
        gammas
            .par_iter()
            .map(|&g| match self.system(g) {
                Ok(sys) => lambdas
                    .iter()
                    .map(|&l| self.eval_on(&sys, l).unwrap_or(f64::NAN))
                    .collect(),
                Err(_) => vec![f64::NAN; lambdas.len()],
            })
            .collect()
    }
}

/// Index `(iγ, iλ)` of the smallest finite value; ties go to the smallest λ,
/// then the smallest γ.
pub fn grid_argmin(values: &[Vec<f64>]) -> Option<(usize, usize)> {
    let nl = values.first()?.len();
    let mut best: Option<(usize, usize, f64)> = None;
    for il in 0..nl {
        for (ig, row) in values.iter().enumerate() {
            let v = row[il];
            if v.is_finite() && best.map_or(true, |(_, _, b)| v < b) {
                best = Some((ig, il, v));
            }
        }
    }
    best.map(|(g, l, _)| (g, l))
}

/// Whether the finite grid values agree to rounding.
pub fn grid_is_flat(values: &[Vec<f64>]) -> bool {
    let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    lo <= hi && hi - lo <= 1e-12 * lo.abs().max(hi.abs())
}

/// Joint selection of (γ, λ) for the current state.
pub fn select_params(
    method: Method,
    state: &MixGk,
    prior: &PriorSpec,
    inputs: SelectionInputs<'_>,
    config: &SearchConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let selector = Selector::new(method, state, prior, inputs)?;
    let gammas = config.gammas();
    let lambdas = config.lambdas();
    let values = selector.grid(&gammas, &lambdas);
    let mut evaluations = gammas.len() * lambdas.len();

    let (ig, il) = grid_argmin(&values).ok_or_else(|| {
        Error::SearchFailure(format!(
            "{method}: objective is non-finite on the whole search grid"
        ))
    })?;
    if grid_is_flat(&values) {
        // Flat objective: nothing to choose; report the lower-left corner.
        let (gamma, lambda) = (gammas[0], lambdas[0]);
        return Ok(SelectionResult {
            gamma,
            lambda,
            objective: selector.eval(gamma, lambda)?,
            method,
            evaluations: evaluations + 1,
            converged: false,
        });
    }

    let lg = |g: f64| g.ln();
    let ll = |l: f64| l.log10();
    let grid_best = values[ig][il];
    let step_l = (config.log_lambda_max - config.log_lambda_min) / (lambdas.len() - 1) as f64;
    let opts = NelderMeadOptions {
        max_evals: config.max_refine_evals,
        xtol: 1e-6,
        ftol: 1e-12,
    };
    let (gamma, lambda, converged) = if gammas.len() == 1 {
        let g = gammas[0];
        let sys = selector.system(g)?;
        let r = nelder_mead(
            |x| selector.eval_on(&sys, 10f64.powf(x[0])).unwrap_or(f64::NAN),
            &[ll(lambdas[il])],
            &[0.5 * step_l],
            &[config.log_lambda_min],
            &[config.log_lambda_max],
            opts,
        );
        evaluations += r.evals;
        if r.f < grid_best {
            (g, 10f64.powf(r.x[0]), r.converged)
        } else {
            (g, lambdas[il], r.converged)
        }
    } else {
        let step_g = (lg(1.0) - lg(config.gamma_min)) / (gammas.len() - 1) as f64;
        let r = nelder_mead(
            |x| selector.eval_fast(x[0].exp(), 10f64.powf(x[1])).unwrap_or(f64::NAN),
            &[lg(gammas[ig]), ll(lambdas[il])],
            &[0.5 * step_g, 0.5 * step_l],
            &[lg(config.gamma_min), config.log_lambda_min],
            &[0.0, config.log_lambda_max],
            opts,
        );
        evaluations += r.evals;
        if r.f < grid_best {
            (r.x[0].exp().min(1.0), 10f64.powf(r.x[1]), r.converged)
        } else {
            (gammas[ig], lambdas[il], r.converged)
        }
    };

    let objective = selector.eval(gamma, lambda)?;
    if !objective.is_finite() {
        return Err(Error::SearchFailure(format!(
            "{method}: non-finite objective at the selected point"
        )));
    }
    Ok(SelectionResult {
        gamma,
        lambda,
        objective,
        method,
        evaluations: evaluations + 1,
        converged,
    })
}

/// Dense full-problem selection functions, used as oracles for the
/// projected ones. `Q` must be positive definite.
pub mod full {
    use super::*;

    /// Whitened operator `K = L_R A L_Q` (`Q = L_Q L_Qᵀ`) and its SVD data
    /// for fast λ queries.
    pub struct FullSystem {
        sigma: DVector<f64>,
        coeffs: DVector<f64>,
        perp: f64,
        m: usize,
    }

    impl FullSystem {
        pub fn new(
            a: &DMatrix<f64>,
            whitening_root: &DMatrix<f64>,
            q: &DMatrix<f64>,
            b: &DVector<f64>,
        ) -> Result<Self> {
            let lq = q
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Definiteness("prior covariance".into()))?
                .l();
            let k = whitening_root * a * lq;
            let rhs = whitening_root * b;
            let svd = k.svd(true, false);
            let u = svd.u.expect("requested U");
            let coeffs = u.tr_mul(&rhs);
            let perp = (&rhs - &u * &coeffs).norm_squared();
            Ok(Self {
                sigma: svd.singular_values,
                coeffs,
                perp,
                m: a.nrows(),
            })
        }

        /// `‖L_R A Q x − L_R b‖²` at the regularized solution.
        pub fn residual_norm_sq(&self, lambda: f64) -> f64 {
            let l2 = lambda * lambda;
            self.sigma
                .iter()
                .zip(self.coeffs.iter())
                .map(|(&s, &c)| {
                    let f = l2 / (s * s + l2);
                    f * f * c * c
                })
                .sum::<f64>()
                + self.perp
        }

        /// `tr A(γ, λ)`.
        pub fn trace(&self, lambda: f64) -> f64 {
            let l2 = lambda * lambda;
            self.sigma.iter().map(|&s| s * s / (s * s + l2)).sum()
        }

        pub fn upre(&self, lambda: f64, sigma2: f64) -> f64 {
            let m = self.m as f64;
            self.residual_norm_sq(lambda) / m + 2.0 * sigma2 * self.trace(lambda) / m - sigma2
        }

        pub fn gcv(&self, lambda: f64) -> f64 {
            let d = self.m as f64 - self.trace(lambda);
            self.residual_norm_sq(lambda) / (d * d)
        }
    }
}

/// The selection objective rescaled from the `2k+1`-row normalization of
/// the projected problem to the `m`-row normalization of the full one, so
/// that values from different iterations are comparable. Argmins over
/// (γ, λ) are unchanged.
pub fn full_scale_objective(method: Method, objective: f64, k: usize, m: usize, sigma2: Option<f64>) -> f64 {
    let ratio = (2 * k + 1) as f64 / m as f64;
    match method {
        Method::Optimal => objective,
        Method::Upre => {
            let s2 = sigma2.unwrap_or(0.0);
            ratio * (objective + s2) - s2
        }
        Method::Gcv | Method::Wgcv => ratio * ratio * objective,
    }
}

/// When to stop the outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingPolicy {
    pub max_iter: usize,
    /// Relative change of the objective over the window counted as flat.
    pub flat_tol: f64,
    /// Stop once `‖r_k‖/β₁` falls to this value.
    pub residual_tol: f64,
    pub window: usize,
}

impl Default for StoppingPolicy {
    fn default() -> Self {
        Self {
            max_iter: 100,
            flat_tol: 1e-4,
            residual_tol: 1e-6,
            window: 3,
        }
    }
}

impl StoppingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.window < 2 {
            return Err(Error::Configuration(
                "stopping policy needs max_iter ≥ 1 and window ≥ 2".into(),
            ));
        }
        if !(self.flat_tol > 0.0 && self.residual_tol > 0.0) {
            return Err(Error::Configuration(
                "stopping tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    ObjectiveIncreased,
    ObjectiveFlat,
    ResidualTolerance,
    Breakdown,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaxIterations => "max-iterations",
            Self::ObjectiveIncreased => "objective-minimum",
            Self::ObjectiveFlat => "objective-flat",
            Self::ResidualTolerance => "residual-tolerance",
            Self::Breakdown => "breakdown",
        }
    }
}

/// Stopping decision from the per-iteration objectives and the latest
/// relative residual `‖r_k‖/β₁`; `None` means continue.
pub fn stopping_check(
    objectives: &[f64],
    rel_residual: f64,
    policy: &StoppingPolicy,
) -> Option<StopReason> {
    let k = objectives.len();
    if k >= policy.max_iter {
        return Some(StopReason::MaxIterations);
    }
    if rel_residual <= policy.residual_tol {
        return Some(StopReason::ResidualTolerance);
    }
    if k >= policy.window {
        let first = objectives[k - policy.window];
        let last = objectives[k - 1];
        if last > first {
            return Some(StopReason::ObjectiveIncreased);
        }
        if (last - first).abs() <= policy.flat_tol * first.abs() {
            return Some(StopReason::ObjectiveFlat);
        }
    }
    None
}

#[cfg(test)]
mod tests;
