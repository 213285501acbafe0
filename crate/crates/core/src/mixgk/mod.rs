//! Mixed Golub–Kahan process.
//!
//! Generalized Golub–Kahan bidiagonalization with respect to `R⁻¹` and
//! `Q₁`, plus a skinny QR of the whitened `Q₂` branch
//! `(I − ŨŨᵀ) L_R A Q₂ V_k = Y_k R_k` that is updated, not recomputed, as
//! each new `ũ` arrives.

mod qr;

pub use qr::{max_principal_angle_sine, qr_append_update, Deflation, SkinnyQr};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::operators::{apply_transpose_checked, OpRef, Whitener};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QrMode {
    /// Rank-one update with recompute fallback.
    Update,
    /// Recompute the skinny QR from scratch every step.
    Recompute,
}

#[derive(Clone, Copy, Debug)]
pub struct MixGkOptions {
    /// Full reorthogonalization of `u` and `v` (two passes).
    pub reorth: bool,
    pub breakdown_tol: f64,
    /// Relative norm below which a new `Y` column counts as dependent.
    pub drop_tol: f64,
    pub qr_mode: QrMode,
}

impl Default for MixGkOptions {
    fn default() -> Self {
        Self {
            reorth: true,
            breakdown_tol: 1e-12,
            drop_tol: 1e-12,
            qr_mode: QrMode::Update,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Breakdown {
    /// `β_{k+1} = 0`: the Krylov space is invariant; `B_k` is square.
    Beta { step: usize },
    /// `α_{k+1} = 0`: no further `v` exists.
    Alpha { step: usize },
}

#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub k: usize,
    pub breakdown: Option<Breakdown>,
    pub dropped_column: bool,
    pub qr_fallback: bool,
}

/// All factorization state after `k` steps.
///
/// Columns are stored as vectors: `u_i` and `ũ_i = L_R u_i` (`k+1` of them,
/// or `k` after a β-breakdown), `v_i`, `Q₁v_i`, `w_i = Q₂v_i` and
/// `z_i = L_R A w_i` (`k` each).
pub struct MixGk {
    a: OpRef,
    q1: OpRef,
    q2: OpRef,
    noise: Whitener,
    opts: MixGkOptions,
    beta1: f64,
    u: Vec<DVector<f64>>,
    ut: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    q1v: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    pending: Option<(f64, DVector<f64>, DVector<f64>)>,
    qr: SkinnyQr,
    c: DMatrix<f64>,
    g: DMatrix<f64>,
    breakdown: Option<Breakdown>,
    log: Vec<String>,
}

impl MixGk {
    /// Starts the process from `b` (typically `d − Aμ`).
    pub fn new(
        a: OpRef,
        noise: Whitener,
        q1: OpRef,
        q2: OpRef,
        b: &DVector<f64>,
        opts: MixGkOptions,
    ) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        check_len("right-hand side", m, b.len())?;
        check_len("noise covariance", m, noise.dim())?;
        for (what, op) in [("Q1", &q1), ("Q2", &q2)] {
            if op.nrows() != n || op.ncols() != n {
                return Err(Error::Argument(format!(
                    "{what} is {}x{}, expected {n}x{n}",
                    op.nrows(),
                    op.ncols()
                )));
            }
        }
        let bt = noise.apply_root(b);
        let beta1 = bt.norm();
        if !(beta1 > 0.0 && beta1.is_finite()) {
            return Err(Error::DegenerateData(
                "right-hand side has zero R⁻¹-norm".into(),
            ));
        }
        let u1 = b / beta1;
        let ut1 = bt / beta1;
        let t = apply_transpose_checked(a.as_ref(), &noise.root().apply(&ut1))?;
        let q1t = q1.apply(&t);
        let alpha1 = t.dot(&q1t).max(0.0).sqrt();
        if !(alpha1 > 0.0 && alpha1.is_finite()) {
            return Err(Error::Breakdown {
                step: 0,
                reason: "α₁ = 0: AᵀR⁻¹b vanishes in the Q₁-norm".into(),
            });
        }
        Ok(Self {
            qr: SkinnyQr::empty(m),
            a,
            q1,
            q2,
            noise,
            opts,
            beta1,
            u: vec![u1],
            ut: vec![ut1],
            v: Vec::new(),
            q1v: Vec::new(),
            w: Vec::new(),
            z: Vec::new(),
            alphas: Vec::new(),
            betas: Vec::new(),
            pending: Some((alpha1, &t / alpha1, q1t / alpha1)),
            c: DMatrix::zeros(1, 0),
            g: DMatrix::zeros(0, 0),
            breakdown: None,
            log: Vec::new(),
        })
    }

    /// Number of completed steps.
    pub fn k(&self) -> usize {
        self.v.len()
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `β₂, …, β_{k+1}` (fewer after a β-breakdown).
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `(α_{k+1}, v_{k+1})`, available while the process is active.
    pub fn next_v(&self) -> Option<(f64, &DVector<f64>)> {
        self.pending.as_ref().map(|(a, v, _)| (*a, v))
    }

    pub fn breakdown(&self) -> Option<Breakdown> {
        self.breakdown
    }

    /// True once no further step is possible.
    pub fn is_terminal(&self) -> bool {
        self.breakdown.is_some()
    }

    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }

    /// `Ũ = L_R U`.
    pub fn u_whitened(&self) -> &[DVector<f64>] {
        &self.ut
    }

    pub fn v(&self) -> &[DVector<f64>] {
        &self.v
    }

    pub fn q1v(&self) -> &[DVector<f64>] {
        &self.q1v
    }

    /// `W = Q₂ V`.
    pub fn w(&self) -> &[DVector<f64>] {
        &self.w
    }

    /// `L_R A Q₂ V`.
    pub fn z(&self) -> &[DVector<f64>] {
        &self.z
    }

    pub fn qr(&self) -> &SkinnyQr {
        &self.qr
    }

    /// `Ũᵀ L_R A Q₂ V_k`.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `V_kᵀ Q₂ V_k`, symmetrized.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn noise(&self) -> &Whitener {
        &self.noise
    }

    pub fn operator(&self) -> &OpRef {
        &self.a
    }

    pub fn q1(&self) -> &OpRef {
        &self.q1
    }

    pub fn q2(&self) -> &OpRef {
        &self.q2
    }

    /// Diagnostics (dropped columns, QR fallbacks, breakdowns).
    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Lower bidiagonal `B_k`: `(k+1) × k`, or `k × k` after a β-breakdown.
    pub fn b(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut b = DMatrix::zeros(self.u.len(), k);
        for j in 0..k {
            b[(j, j)] = self.alphas[j];
            if let Some(&beta) = self.betas.get(j) {
                b[(j + 1, j)] = beta;
            }
        }
        b
    }

    /// Advances from `k` to `k+1`.
    pub fn step(&mut self) -> Result<StepReport> {
        if let Some(b) = self.breakdown {
            return Err(Error::Breakdown {
                step: self.k(),
                reason: format!("process already terminated ({b:?})"),
            });
        }
        let (alpha, v, q1v) = self
            .pending
            .take()
            .expect("pending v exists while the process is active");
        let k = self.k() + 1;
        let mut report = StepReport {
            k,
            ..Default::default()
        };

        // β_{k+1} u_{k+1} = A Q₁ v_k − α_k u_k
        let aq1v = self.a.apply(&q1v);
        let mut p = aq1v.clone();
        p.axpy(-alpha, self.u.last().unwrap(), 1.0);
        let mut pt = self.noise.apply_root(&p);
        if self.opts.reorth {
            for _ in 0..2 {
                for (u, ut) in self.u.iter().zip(&self.ut) {
                    let c = ut.dot(&pt);
                    p.axpy(-c, u, 1.0);
                    pt.axpy(-c, ut, 1.0);
                }
            }
        }
        let beta = pt.norm();
        let scale = self.noise.apply_root(&aq1v).norm();
        let beta_breaks = !(beta > self.opts.breakdown_tol * scale);

        self.alphas.push(alpha);
        self.v.push(v);
        self.q1v.push(q1v);
        let mut new_ut = None;
        if beta_breaks {
            self.breakdown = Some(Breakdown::Beta { step: k });
            self.log.push(format!("step {k}: β breakdown (β = {beta:.3e})"));
        } else {
            self.betas.push(beta);
            self.u.push(p / beta);
            let ut = pt / beta;
            new_ut = Some(ut.clone());
            self.ut.push(ut);
        }

        self.extend_q2_branch(new_ut.as_ref(), &mut report)?;

        if !beta_breaks {
            // α_{k+1} v_{k+1} = Aᵀ R⁻¹ u_{k+1} − β_{k+1} v_k
            let rinv_u = self.noise.root().apply(self.ut.last().unwrap());
            let t = apply_transpose_checked(self.a.as_ref(), &rinv_u)?;
            let mut s = t.clone();
            s.axpy(-beta, self.v.last().unwrap(), 1.0);
            let mut q1s = self.q1.apply(&s);
            let t_norm = {
                let q1t = &q1s + self.q1v.last().unwrap() * beta;
                t.dot(&q1t).max(0.0).sqrt()
            };
            if self.opts.reorth {
                for _ in 0..2 {
                    for (v, q1v) in self.v.iter().zip(&self.q1v) {
                        let c = q1v.dot(&s);
                        s.axpy(-c, v, 1.0);
                        q1s.axpy(-c, q1v, 1.0);
                    }
                }
            }
            let alpha_next = s.dot(&q1s).max(0.0).sqrt();
            if alpha_next > self.opts.breakdown_tol * t_norm && alpha_next.is_finite() {
                self.pending = Some((alpha_next, s / alpha_next, q1s / alpha_next));
            } else {
                self.breakdown = Some(Breakdown::Alpha { step: k });
                self.log
                    .push(format!("step {k}: α breakdown (α = {alpha_next:.3e})"));
            }
        }
        report.breakdown = self.breakdown;
        Ok(report)
    }

    /// Adds `w_k = Q₂v_k`, updates `C`, `G` and the skinny QR.
    fn extend_q2_branch(&mut self, new_ut: Option<&DVector<f64>>, report: &mut StepReport) -> Result<()> {
        let k = self.k();
        let vk = &self.v[k - 1];
        let w = self.q2.apply(vk);
        let z = self.noise.apply_root(&self.a.apply(&w));

        // G: new row/column, averaging the two roundoff-distinct values.
        let mut g = std::mem::replace(&mut self.g, DMatrix::zeros(0, 0))
            .insert_row(k - 1, 0.0)
            .insert_column(k - 1, 0.0);
        for i in 0..k - 1 {
            let val = 0.5 * (self.v[i].dot(&w) + vk.dot(&self.w[i]));
            g[(i, k - 1)] = val;
            g[(k - 1, i)] = val;
        }
        g[(k - 1, k - 1)] = vk.dot(&w);
        self.g = g;

        // C: new row for ũ_{k+1} against previous columns.
        if let Some(ut) = new_ut {
            let row = DVector::from_iterator(k - 1, self.z.iter().map(|zj| ut.dot(zj)));
            let mut c = std::mem::replace(&mut self.c, DMatrix::zeros(0, 0));
            let r = c.nrows();
            c = c.insert_row(r, 0.0);
            for j in 0..k - 1 {
                c[(r, j)] = row[j];
            }
            self.c = c;

            if self.opts.qr_mode == QrMode::Update {
                let deflation = self.qr.deflate(ut);
                let scale = self.z.iter().map(|zj| zj.norm()).fold(0.0, f64::max);
                let mismatch = (&deflation.removed_row - &row).amax();
                let conditioning = self.qr.row_conditioning();
                if mismatch > 1e-8 * scale.max(f64::MIN_POSITIVE) || conditioning <= 1e-12 {
                    self.log.push(format!(
                        "step {k}: QR update fell back to recompute \
                         (row mismatch {mismatch:.2e}, conditioning {conditioning:.2e})"
                    ));
                    self.qr = SkinnyQr::recompute(&self.ut, &self.z, self.opts.drop_tol);
                    report.qr_fallback = true;
                }
            }
        }

        // C: new column Ũᵀ z_k; v̂ = (I − ŨŨᵀ) z_k.
        let mut coeffs = DVector::zeros(self.ut.len());
        let mut v_hat = z.clone();
        for _ in 0..2 {
            for (i, ut) in self.ut.iter().enumerate() {
                let c = ut.dot(&v_hat);
                v_hat.axpy(-c, ut, 1.0);
                coeffs[i] += c;
            }
        }
        let cols = self.c.ncols();
        let mut c = std::mem::replace(&mut self.c, DMatrix::zeros(0, 0)).insert_column(cols, 0.0);
        c.set_column(cols, &coeffs);
        self.c = c;

        let z_norm = z.norm();
        self.w.push(w);
        self.z.push(z);
        match self.opts.qr_mode {
            QrMode::Update => {
                report.dropped_column = self.qr.append(v_hat, z_norm, self.opts.drop_tol);
            }
            QrMode::Recompute => {
                let ops = self.qr.ops();
                self.qr = SkinnyQr::recompute(&self.ut, &self.z, self.opts.drop_tol);
                self.qr.add_ops(ops);
                report.dropped_column = self.qr.last_dropped();
            }
        }
        if report.dropped_column {
            self.log
                .push(format!("step {k}: Q₂ column dependent, dropped from Y"));
        }
        Ok(())
    }
}


impl std::fmt::Debug for MixGk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixGk")
            .field("k", &self.k())
            .field("beta1", &self.beta1)
            .field("alphas", &self.alphas)
            .field("betas", &self.betas)
            .field("rank_y", &self.qr.rank())
            .field("breakdown", &self.breakdown)
            .finish()
    }
}
