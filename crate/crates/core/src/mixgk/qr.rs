//! Skinny QR `Z = Y R` of the projected Q₂ branch, kept current as the
//! Krylov basis grows.
//!
//! `Y` has orthonormal columns; `R` is upper trapezoidal (`p × q`, with
//! `p ≤ q` once dependent columns have been dropped).

use nalgebra::{DMatrix, DVector};

/// Incrementally maintained skinny QR factorization.
#[derive(Clone, Debug)]
pub struct SkinnyQr {
    dim: usize,
    y: Vec<DVector<f64>>,
    r: DMatrix<f64>,
    /// Scalar multiply-adds on length-`dim` vectors since construction.
    ops: usize,
    last_dropped: bool,
}

/// Outcome of deflating the factor by a new unit vector.
#[derive(Clone, Debug)]
pub struct Deflation {
    /// `ũᵀ Y R`: the component of the factored columns along `ũ`.
    pub removed_row: DVector<f64>,
    /// `ũ` lay numerically inside `range(Y)`, so one basis column was lost.
    pub lost_rank: bool,
}

impl SkinnyQr {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            y: Vec::new(),
            r: DMatrix::zeros(0, 0),
            ops: 0,
            last_dropped: false,
        }
    }

    /// Factors `(I − ŨŨᵀ) Z` from scratch with two-pass Gram–Schmidt,
    /// dropping columns whose remainder is at most `drop_tol · ‖z_j‖`.
    pub fn recompute(ut: &[DVector<f64>], z: &[DVector<f64>], drop_tol: f64) -> Self {
        let dim = z.first().or(ut.first()).map_or(0, |v| v.len());
        let mut qr = Self::empty(dim);
        for zj in z {
            let mut v = zj.clone();
            for _ in 0..2 {
                for u in ut {
                    let c = u.dot(&v);
                    v.axpy(-c, u, 1.0);
                }
            }
            qr.ops += 4 * ut.len() * dim;
            qr.append(v, zj.norm(), drop_tol);
        }
        qr
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Number of factored columns `q`.
    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// Number of basis columns `p`.
    pub fn rank(&self) -> usize {
        self.y.len()
    }

    pub fn ops(&self) -> usize {
        self.ops
    }

    pub(crate) fn add_ops(&mut self, ops: usize) {
        self.ops += ops;
    }

    /// Whether the most recently appended column was dropped.
    pub fn last_dropped(&self) -> bool {
        self.last_dropped
    }

    /// Dense `Y` (`dim × p`).
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        if self.y.is_empty() {
            DMatrix::zeros(self.dim, 0)
        } else {
            DMatrix::from_columns(&self.y)
        }
    }

    /// Dense `Y R`.
    pub fn product(&self) -> DMatrix<f64> {
        if self.y.is_empty() {
            DMatrix::zeros(self.dim, self.r.ncols())
        } else {
            self.basis_matrix() * &self.r
        }
    }

    /// Replaces `Y R` by the factorization of `(I − ũũᵀ) Y R` for a unit
    /// vector `ũ`, in `O(dim · p)` work.
    ///
    /// Writes `ũ = [Y q][t; ρ]`, rotates `[t; ρ]` onto `e₁` with Givens
    /// rotations applied from the bottom up, and applies the same rotations
    /// to the rows of `[R; 0]` and to the columns of `[Y q]`. The first
    /// rotated basis column is then `ũ` itself; removing it together with
    /// the first row of the (now upper Hessenberg) factor leaves an upper
    /// trapezoidal `R̂` with `Ŷ R̂ = (I − ũũᵀ) Y R`.
    pub fn deflate(&mut self, ut: &DVector<f64>) -> Deflation {
        let p = self.y.len();
        let q = self.r.ncols();
        if p == 0 {
            return Deflation {
                removed_row: DVector::zeros(q),
                lost_rank: false,
            };
        }

        let mut t = DVector::from_iterator(p, self.y.iter().map(|y| y.dot(ut)));
        let mut rem = ut.clone();
        for (y, &c) in self.y.iter().zip(t.iter()) {
            rem.axpy(-c, y, 1.0);
        }
        let t2 = DVector::from_iterator(p, self.y.iter().map(|y| y.dot(&rem)));
        for (y, &c) in self.y.iter().zip(t2.iter()) {
            rem.axpy(-c, y, 1.0);
        }
        t += &t2;
        self.ops += 4 * p * self.dim;

        let removed_row = self.r.tr_mul(&t);
        if t.norm() <= 1e-14 {
            return Deflation {
                removed_row,
                lost_rank: false,
            };
        }

        let rho = rem.norm();
        let extend = rho > 1e-12;
        let mut coeffs: Vec<f64> = t.iter().copied().collect();
        let mut rows = self.r.clone();
        if extend {
            coeffs.push(rho);
            self.y.push(rem / rho);
            rows = rows.insert_row(p, 0.0);
        }

        let len = coeffs.len();
        for i in (1..len).rev() {
            let (a, b) = (coeffs[i - 1], coeffs[i]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            coeffs[i - 1] = h;
            coeffs[i] = 0.0;
            for j in 0..q {
                let (r0, r1) = (rows[(i - 1, j)], rows[(i, j)]);
                rows[(i - 1, j)] = c * r0 + s * r1;
                rows[(i, j)] = -s * r0 + c * r1;
            }
            let (lo, hi) = self.y.split_at_mut(i);
            let (y0, y1) = (&mut lo[i - 1], &mut hi[0]);
            for (a0, a1) in y0.iter_mut().zip(y1.iter_mut()) {
                let (v0, v1) = (*a0, *a1);
                *a0 = c * v0 + s * v1;
                *a1 = -s * v0 + c * v1;
            }
            self.ops += 4 * self.dim;
        }

        self.y.remove(0);
        self.r = rows.remove_row(0);
        Deflation {
            removed_row,
            lost_rank: !extend,
        }
    }

    /// Appends a column `v̂` that is already orthogonal to the deflating
    /// vectors. Gram–Schmidt (two passes) against `Y` gives the new column of
    /// `R`; if the remainder is at most `drop_tol · ref_norm` no basis vector
    /// is added. Returns `true` when the column was dropped.
    pub fn append(&mut self, mut v: DVector<f64>, ref_norm: f64, drop_tol: f64) -> bool {
        let p = self.y.len();
        let mut h = DVector::zeros(p);
        for _ in 0..2 {
            for (i, y) in self.y.iter().enumerate() {
                let c = y.dot(&v);
                v.axpy(-c, y, 1.0);
                h[i] += c;
            }
        }
        self.ops += 4 * p * self.dim;
        let rho = v.norm();
        let q = self.r.ncols();
        let dropped = !(rho > drop_tol * ref_norm);
        let mut r = std::mem::replace(&mut self.r, DMatrix::zeros(0, 0)).insert_column(q, 0.0);
        r.view_mut((0, q), (p, 1)).copy_from(&h);
        if !dropped {
            r = r.insert_row(p, 0.0);
            r[(p, q)] = rho;
            self.y.push(v / rho);
        }
        self.r = r;
        self.last_dropped = dropped;
        dropped
    }

    /// Smallest over largest singular value of `R` restricted to its rows.
    pub(crate) fn row_conditioning(&self) -> f64 {
        if self.r.nrows() == 0 {
            return 1.0;
        }
        let sv = self.r.singular_values();
        let max = sv.max();
        if max == 0.0 {
            return 0.0;
        }
        sv.min() / max
    }
}

/// Deflates `qr` by the unit vector `u_new` and then appends `v_hat`.
///
/// Returns the deflation report and whether `v_hat` was dropped as
/// linearly dependent.
pub fn qr_append_update(
    qr: &mut SkinnyQr,
    u_new: &DVector<f64>,
    v_hat: DVector<f64>,
    ref_norm: f64,
    drop_tol: f64,
) -> (Deflation, bool) {
    let deflation = qr.deflate(u_new);
    let dropped = qr.append(v_hat, ref_norm, drop_tol);
    (deflation, dropped)
}

/// Largest principal angle (as its sine) between the column spaces of two
/// matrices with orthonormal columns.
pub fn max_principal_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * a.tr_mul(b);
    residual.singular_values().max()
}
