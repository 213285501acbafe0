//! The projected regularized problem after `k` mixGK steps.
//!
//! With `D = [γB + (1−γ)C; (1−γ)R]` and `P = γI + (1−γ)G`, the projected
//! solution minimizes `‖Dy − β₁e₁‖² + λ² yᵀPy`. Factoring `P = LLᵀ` and
//! taking the SVD `D L⁻ᵀ = UΣWᵀ` once per γ turns every λ-query (solution,
//! residual norm, trace) into an `O(k)` filter-factor sum, which is what
//! makes the two-dimensional parameter search cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::mixgk::MixGk;
use crate::operators::{check_gamma, PriorSpec};

/// γ-independent blocks of the projected problem, snapshot from the state.
#[derive(Clone, Debug)]
pub struct ProjectionParts {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub beta1: f64,
}

impl ProjectionParts {
    pub fn from_state(state: &MixGk) -> Result<Self> {
        if state.k() == 0 {
            return Err(Error::Argument(
                "projected problem needs at least one mixGK step".into(),
            ));
        }
        Ok(Self {
            b: state.b(),
            c: state.c().clone(),
            r: state.qr().r().clone(),
            g: state.g().clone(),
            beta1: state.beta1(),
        })
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    /// `2k + 1`, the row count used to normalize selection functions.
    pub fn nominal_rows(&self) -> usize {
        2 * self.k() + 1
    }
}

/// `D_k(γ)`, `G_k` and the right-hand side, factored for fast λ queries.
#[derive(Clone, Debug)]
pub struct ProjectedSystem {
    gamma: f64,
    d: DMatrix<f64>,
    g: DMatrix<f64>,
    rhs: DVector<f64>,
    nominal_rows: usize,
    /// Lower Cholesky factor of `γI + (1−γ)G`.
    l: DMatrix<f64>,
    sigma: DVector<f64>,
    /// `L⁻ᵀ W` (`k × r`).
    right: DMatrix<f64>,
    /// `Uᵀ rhs`.
    coeffs: DVector<f64>,
    /// `‖(I − UUᵀ) rhs‖²`.
    perp: f64,
}

impl ProjectedSystem {
    pub fn new(parts: &ProjectionParts, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let k = parts.k();
        let top_rows = parts.b.nrows();
        let y_rows = parts.r.nrows();
        let mut d = DMatrix::zeros(top_rows + y_rows, k);
        let mut top = d.rows_mut(0, top_rows);
        top.copy_from(&(&parts.b * gamma));
        if gamma < 1.0 {
            top += &parts.c * (1.0 - gamma);
            d.rows_mut(top_rows, y_rows)
                .copy_from(&(&parts.r * (1.0 - gamma)));
        }
        let mut rhs = DVector::zeros(d.nrows());
        rhs[0] = parts.beta1;

        let mut g = parts.g.clone();
        g = (&g + g.transpose()) * 0.5;
        let penalty = DMatrix::identity(k, k) * gamma + &g * (1.0 - gamma);
        let l = penalty
            .cholesky()
            .ok_or_else(|| {
                Error::Conditioning(format!(
                    "γI + (1−γ)VᵀQ₂V is not numerically positive definite at γ = {gamma}"
                ))
            })?
            .l();
        // D L⁻ᵀ = (L⁻¹ Dᵀ)ᵀ
        let dt_scaled = l
            .solve_lower_triangular(&d.transpose())
            .ok_or_else(|| Error::Conditioning("singular penalty factor".into()))?;
        let svd = dt_scaled.transpose().svd(true, true);
        let u = svd.u.expect("requested U");
        let wt = svd.v_t.expect("requested Vᵀ");
        let right = l
            .transpose()
            .solve_upper_triangular(&wt.transpose())
            .ok_or_else(|| Error::Conditioning("singular penalty factor".into()))?;
        let coeffs = u.tr_mul(&rhs);
        let perp = (&rhs - &u * &coeffs).norm_squared();
        Ok(Self {
            gamma,
            d,
            g,
            rhs,
            nominal_rows: parts.nominal_rows(),
            l,
            sigma: svd.singular_values,
            right,
            coeffs,
            perp,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k(&self) -> usize {
        self.d.ncols()
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// `V_kᵀ Q₂ V_k`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn nominal_rows(&self) -> usize {
        self.nominal_rows
    }

    /// Lower Cholesky factor of `γI + (1−γ)G`.
    pub fn penalty_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "regularization parameter must be finite and nonnegative, got {lambda}"
            )));
        }
        if lambda == 0.0 {
            let max = self.sigma.max();
            if self.sigma.iter().any(|&s| !(s > 1e-14 * max)) {
                return Err(Error::Rank(
                    "D_k(γ) is rank deficient; λ = 0 has no unique solution".into(),
                ));
            }
        }
        Ok(())
    }

    /// `y_k(λ, γ)`.
    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        self.check_lambda(lambda)?;
        let l2 = lambda * lambda;
        let filtered = DVector::from_iterator(
            self.sigma.len(),
            self.sigma
                .iter()
                .zip(self.coeffs.iter())
                .map(|(&s, &c)| if s == 0.0 { 0.0 } else { s * c / (s * s + l2) }),
        );
        Ok(&self.right * filtered)
    }

    /// `‖D y_k − [β₁e₁; 0]‖²` without forming `y`.
    pub fn residual_norm_sq(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        let l2 = lambda * lambda;
        let inside: f64 = self
            .sigma
            .iter()
            .zip(self.coeffs.iter())
            .map(|(&s, &c)| {
                let f = if s == 0.0 { 1.0 } else { l2 / (s * s + l2) };
                (f * c) * (f * c)
            })
            .sum();
        Ok(inside + self.perp)
    }

    /// `tr((DᵀD + λ²γI + λ²(1−γ)G)⁻¹ DᵀD)`.
    pub fn trace(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        let l2 = lambda * lambda;
        Ok(self
            .sigma
            .iter()
            .map(|&s| if s == 0.0 { 0.0 } else { s * s / (s * s + l2) })
            .sum())
    }

    /// `D y − [β₁e₁; 0]`.
    pub fn projected_residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("projected solution", self.k(), y.len())?;
        Ok(&self.d * y - &self.rhs)
    }
}

pub fn build_projected(state: &MixGk, gamma: f64) -> Result<ProjectedSystem> {
    ProjectedSystem::new(&ProjectionParts::from_state(state)?, gamma)
}

pub fn solve_projected(sys: &ProjectedSystem, lambda: f64) -> Result<DVector<f64>> {
    sys.solve(lambda)
}

pub fn projected_residual(sys: &ProjectedSystem, y: &DVector<f64>) -> Result<DVector<f64>> {
    sys.projected_residual(y)
}

pub fn trace_term(sys: &ProjectedSystem, lambda: f64) -> Result<f64> {
    sys.trace(lambda)
}

/// `s_k = μ + γ Q₁V_k y + (1−γ) Q₂V_k y`, using the cached `Q₁V` and `Q₂V`.
pub fn recover_iterate(
    state: &MixGk,
    prior: &PriorSpec,
    gamma: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    check_len("projected solution", state.k(), y.len())?;
    check_len("prior mean", state.operator().ncols(), prior.dim())?;
    let mut s = prior.mean.clone();
    for ((q1v, w), &yi) in state.q1v().iter().zip(state.w()).zip(y.iter()) {
        s.axpy(gamma * yi, q1v, 1.0);
        if gamma < 1.0 {
            s.axpy((1.0 - gamma) * yi, w, 1.0);
        }
    }
    Ok(s)
}

/// Largest problem the dense MAP oracle accepts.
pub const DENSE_MAP_LIMIT: usize = 2000;

/// Dense MAP estimate `μ + Q(AᵀR⁻¹AQ + λ²I)⁻¹AᵀR⁻¹b` with `b = d − Aμ`.
pub fn solve_map_dense(
    a: &DMatrix<f64>,
    rinv: &DMatrix<f64>,
    q: &DMatrix<f64>,
    b: &DVector<f64>,
    mu: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if n > DENSE_MAP_LIMIT {
        return Err(Error::Argument(format!(
            "dense MAP oracle limited to n ≤ {DENSE_MAP_LIMIT}, got {n}"
        )));
    }
    check_len("noise precision", m, rinv.nrows())?;
    check_len("prior covariance", n, q.nrows())?;
    check_len("right-hand side", m, b.len())?;
    check_len("prior mean", n, mu.len())?;
    let atr = a.transpose() * rinv;
    let system = &atr * a * q + DMatrix::identity(n, n) * (lambda * lambda);
    let x = system
        .lu()
        .solve(&(&atr * b))
        .ok_or_else(|| Error::Conditioning("MAP normal equations are singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("MAP normal equations are singular".into()));
    }
    Ok(mu + q * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixgk::MixGkOptions;
    use crate::operators::Mixing;
    use crate::testproblems::{random_dense_problem, DenseProblem};
    use nalgebra::dvector;

    fn run(p: &DenseProblem, steps: usize) -> MixGk {
        let mut g = MixGk::new(
            p.a_op(),
            p.whitener(),
            p.q1_op(),
            p.q2_op(),
            &p.b,
            MixGkOptions::default(),
        )
        .unwrap();
        while g.k() < steps && !g.is_terminal() {
            g.step().unwrap();
        }
        g
    }

    fn rinv(p: &DenseProblem) -> DMatrix<f64> {
        DMatrix::from_diagonal(&p.noise_var.map(|v| 1.0 / v))
    }

    #[test]
    fn gamma_one_collapses_to_bidiagonal() {
        let p = random_dense_problem(15, 10, 3, 1);
        let g = run(&p, 4);
        let sys = build_projected(&g, 1.0).unwrap();
        let k = g.k();
        assert_eq!(sys.d().rows(0, k + 1), g.b());
        assert!(sys.d().rows(k + 1, sys.d().nrows() - k - 1).iter().all(|&x| x == 0.0));
        // Penalty is the identity.
        assert_eq!(sys.penalty_factor(), &DMatrix::identity(k, k));
    }

    #[test]
    fn zero_q2_gives_zero_g() {
        let mut p = random_dense_problem(15, 10, 0, 2);
        p.q2 = DMatrix::zeros(10, 10);
        let g = run(&p, 4);
        let sys = build_projected(&g, 0.3).unwrap();
        assert!(sys.g().iter().all(|&x| x == 0.0));
        assert!((sys.d() - g.b() * 0.3).amax() == 0.0);
    }

    #[test]
    fn d_matches_block_identity() {
        // [Ũ Y] D = γ L_R A Q₁ V + (1−γ) L_R A Q₂ V.
        let p = random_dense_problem(20, 12, 4, 3);
        let g = run(&p, 3);
        let gamma = 0.35;
        let sys = build_projected(&g, gamma).unwrap();
        let mut basis = g.u_whitened().to_vec();
        basis.extend_from_slice(g.qr().basis());
        let basis = DMatrix::from_columns(&basis);
        let v = DMatrix::from_columns(g.v());
        let direct = p.whitening_root() * &p.a * p.mixed(gamma) * &v;
        assert!((basis * sys.d() - &direct).amax() < 1e-12 * direct.amax());
    }

    #[test]
    fn scalar_case() {
        let p = random_dense_problem(6, 4, 2, 4);
        let g = run(&p, 1);
        let sys = build_projected(&g, 1.0).unwrap();
        let (a1, b2) = (g.alphas()[0], g.betas()[0]);
        for lambda in [0.1, 1.0, 3.0] {
            let y = sys.solve(lambda).unwrap();
            let want = a1 * g.beta1() / (a1 * a1 + b2 * b2 + lambda * lambda);
            assert!((y[0] - want).abs() < 1e-14 * want.abs());
            let d2 = a1 * a1 + b2 * b2;
            let tr = d2 / (d2 + lambda * lambda);
            assert!((sys.trace(lambda).unwrap() - tr).abs() < 1e-14);
        }
        // Mixed scalar trace: d²/(d² + λ²γ + λ²(1−γ)g).
        let gamma = 0.4;
        let sys = build_projected(&g, gamma).unwrap();
        let d2 = sys.d().norm_squared();
        let gk = g.g()[(0, 0)];
        let lambda: f64 = 0.7;
        let want = d2 / (d2 + lambda.powi(2) * gamma + lambda.powi(2) * (1.0 - gamma) * gk);
        assert!((sys.trace(lambda).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn large_lambda_shrinks_to_zero() {
        let p = random_dense_problem(15, 10, 3, 5);
        let g = run(&p, 5);
        let sys = build_projected(&g, 0.6).unwrap();
        let y1 = sys.solve(1.0).unwrap().norm();
        assert!(sys.solve(1e8).unwrap().norm() <= 1e-6 * y1);
        assert!(sys.trace(1e8).unwrap() < 1e-10);
        let r = sys.residual_norm_sq(1e8).unwrap();
        assert!((r - g.beta1().powi(2)).abs() < 1e-8 * r);
    }

    #[test]
    fn small_lambda_trace_approaches_k() {
        let p = random_dense_problem(15, 10, 3, 6);
        let g = run(&p, 5);
        let sys = build_projected(&g, 0.6).unwrap();
        assert!((sys.trace(1e-9).unwrap() - 5.0).abs() < 1e-8);
        assert!((sys.trace(0.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn solution_matches_dense_stacked_least_squares() {
        let p = random_dense_problem(18, 12, 4, 7);
        let g = run(&p, 4);
        for (gamma, lambda) in [(0.3, 0.5), (0.8, 2.0), (1.0, 0.05f64)] {
            let sys = build_projected(&g, gamma).unwrap();
            let y = sys.solve(lambda).unwrap();
            // min ‖[D; λLᵀ] y − [rhs; 0]‖ via QR.
            let k = sys.k();
            let pen = DMatrix::identity(k, k) * gamma + g.g() * (1.0 - gamma);
            let lt = pen.clone().cholesky().unwrap().l().transpose();
            let rows = sys.d().nrows();
            let mut stacked = DMatrix::zeros(rows + k, k);
            stacked.rows_mut(0, rows).copy_from(sys.d());
            stacked.rows_mut(rows, k).copy_from(&(lt * lambda));
            let mut rhs = DVector::zeros(rows + k);
            rhs.rows_mut(0, rows).copy_from(sys.rhs());
            let qr = stacked.qr();
            let oracle = qr.r().solve_upper_triangular(&(qr.q().tr_mul(&rhs))).unwrap();
            assert!((&y - &oracle).amax() < 1e-10 * oracle.amax());

            // Normal equations residual.
            let normal = sys.d().tr_mul(sys.d()) + &pen * lambda.powi(2);
            let res = &normal * &y - sys.d().tr_mul(sys.rhs());
            assert!(res.amax() <= 1e-10 * (normal.amax() * y.amax()));

            // Spectral residual agrees with the direct residual.
            let r = sys.projected_residual(&y).unwrap();
            let rs = sys.residual_norm_sq(lambda).unwrap();
            assert!((r.norm_squared() - rs).abs() < 1e-10 * rs);
        }
    }

    #[test]
    fn zero_lambda_requires_full_rank() {
        let p = random_dense_problem(15, 10, 3, 8);
        let g = run(&p, 3);
        let sys = build_projected(&g, 0.5).unwrap();
        assert!(sys.solve(0.0).is_ok());
        assert!(sys.solve(-1.0).is_err());
        // Zero A-columns in the Krylov space cannot happen, so fake a rank
        // deficient system directly.
        let parts = ProjectionParts {
            b: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            c: DMatrix::zeros(2, 2),
            r: DMatrix::zeros(0, 2),
            g: DMatrix::zeros(2, 2),
            beta1: 1.0,
        };
        let sys = ProjectedSystem::new(&parts, 1.0).unwrap();
        assert!(matches!(sys.solve(0.0), Err(Error::Rank(_))));
        assert!(sys.solve(0.1).is_ok());
    }

    #[test]
    fn iterate_recovery() {
        let p = random_dense_problem(15, 10, 3, 9);
        let g = run(&p, 4);
        let prior = p.prior(Mixing::Estimated).unwrap();
        let zero = recover_iterate(&g, &prior, 0.4, &DVector::zeros(4)).unwrap();
        assert_eq!(zero, p.mean);
        let y = dvector![0.3, -1.0, 0.25, 2.0];
        let v = DMatrix::from_columns(g.v());
        let vy = &v * &y;
        for gamma in [1.0, 0.4] {
            let s = recover_iterate(&g, &prior, gamma, &y).unwrap();
            let direct = crate::operators::mixed_apply(&prior, gamma, &vy).unwrap() + &p.mean;
            assert!((s - direct).amax() < 1e-12);
        }
        assert!(recover_iterate(&g, &prior, 0.4, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn residual_identities_hold_at_every_k() {
        let p = random_dense_problem(25, 20, 5, 10);
        let mut g = run(&p, 0);
        let lr = p.whitening_root();
        let mut previous = f64::INFINITY;
        while g.k() < 20 && !g.is_terminal() {
            g.step().unwrap();
            let v = DMatrix::from_columns(g.v());
            for (gamma, lambda) in [(1.0, 0.7), (0.5, 0.3), (0.2, 1.1)] {
                let sys = build_projected(&g, gamma).unwrap();
                let y = sys.solve(lambda).unwrap();
                let r = sys.projected_residual(&y).unwrap().norm();
                let laqv = &lr * &p.a * p.mixed(gamma) * &v;
                let full = (&laqv * &y - &lr * &p.b).norm();
                assert!((r - full).abs() <= 1e-9 * full, "k={} γ={gamma}", g.k());
                let dtd = sys.d().tr_mul(sys.d());
                let direct = laqv.tr_mul(&laqv);
                assert!((dtd - &direct).amax() <= 1e-9 * direct.amax());
            }
            let sys = build_projected(&g, 0.5).unwrap();
            let r = sys.residual_norm_sq(1e-6).unwrap();
            assert!(r <= previous * (1.0 + 1e-10) + 1e-20);
            previous = r;
        }
    }

    #[test]
    fn trace_matches_dense_influence_matrix() {
        let p = random_dense_problem(25, 20, 5, 11);
        let g = run(&p, 8);
        let lr = p.whitening_root();
        let v = DMatrix::from_columns(g.v());
        for (gamma, lambda) in [(0.5, 0.3), (0.9, 2.0f64)] {
            let sys = build_projected(&g, gamma).unwrap();
            let q = p.mixed(gamma);
            let laqv = &lr * &p.a * &q * &v;
            let inner = laqv.tr_mul(&laqv) + v.transpose() * &q * &v * lambda.powi(2);
            let infl = &laqv * inner.try_inverse().unwrap() * laqv.transpose();
            let want = infl.trace();
            let got = sys.trace(lambda).unwrap();
            assert!((got - want).abs() <= 1e-8 * want);
        }
    }

    #[test]
    fn finite_termination_reaches_map_estimate() {
        for seed in 0..3 {
            let p = random_dense_problem(25, 20, 5, 40 + seed);
            let g = run(&p, 20);
            let prior = p.prior(Mixing::Estimated).unwrap();
            for (gamma, lambda) in [(1.0, 0.7), (0.5, 0.3), (0.2, 1.1)] {
                let sys = build_projected(&g, gamma).unwrap();
                let y = sys.solve(lambda).unwrap();
                let s = recover_iterate(&g, &prior, gamma, &y).unwrap();
                let map =
                    solve_map_dense(&p.a, &rinv(&p), &p.mixed(gamma), &p.b, &p.mean, lambda)
                        .unwrap();
                let err = (&s - &map).norm() / map.norm();
                assert!(err <= 1e-8, "seed {seed} γ={gamma} λ={lambda}: {err:e}");
            }
        }
    }

    #[test]
    fn dense_map_oracle_checks() {
        let b = dvector![1.0, -2.0, 4.0];
        let i3 = DMatrix::identity(3, 3);
        let s = solve_map_dense(&i3, &i3, &i3, &b, &DVector::zeros(3), 2.0).unwrap();
        assert!((s - &b / 5.0).amax() < 1e-15);

        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 1.0]);
        let s = solve_map_dense(&a, &i3, &i3, &b, &DVector::zeros(3), 0.0).unwrap();
        assert!((&a * s - &b).amax() < 1e-13);

        // Against the Tikhonov functional ‖L_R(A s − d)‖² + λ²‖s − μ‖²_{Q⁻¹}.
        let p = random_dense_problem(20, 15, 3, 12);
        let q = p.mixed(0.6);
        let lambda = 0.8;
        let d = &p.b + &p.a * &p.mean;
        let s = solve_map_dense(&p.a, &rinv(&p), &q, &p.b, &p.mean, lambda).unwrap();
        let qinv = q.clone().try_inverse().unwrap();
        let h = p.a.transpose() * rinv(&p) * &p.a + &qinv * lambda.powi(2);
        let rhs = p.a.transpose() * rinv(&p) * &d + &qinv * &p.mean * lambda.powi(2);
        let oracle = h.cholesky().unwrap().solve(&rhs);
        assert!((s - &oracle).amax() <= 1e-10 * oracle.amax());

        let singular = DMatrix::zeros(3, 3);
        assert!(matches!(
            solve_map_dense(&singular, &i3, &i3, &b, &DVector::zeros(3), 0.0),
            Err(Error::Conditioning(_))
        ));
    }
}
