//! Tomography forward operators and noise.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::images::smooth_image;
use crate::error::{Error, Result};
use crate::operators::{Grid, LinearOperator, OpRef, SparseOperator};

/// Arc sampling step, in pixels.
const ARC_STEP: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct TomoProblem {
    pub a: Arc<SparseOperator>,
    pub s_true: DVector<f64>,
    pub b_clean: DVector<f64>,
    pub grid: Grid,
    pub meta: String,
}

impl TomoProblem {
    fn new(a: SparseOperator, s_true: DVector<f64>, grid: Grid, meta: String) -> Self {
        let b_clean = a.apply(&s_true);
        Self {
            a: Arc::new(a),
            s_true,
            b_clean,
            grid,
            meta,
        }
    }

    pub fn a_op(&self) -> OpRef {
        self.a.clone()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }
}

/// Accumulates one sparse row at a time.
struct RowBuilder {
    coo: CooMatrix<f64>,
    dense: Vec<f64>,
    touched: Vec<usize>,
    row: usize,
}

impl RowBuilder {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            coo: CooMatrix::new(rows, cols),
            dense: vec![0.0; cols],
            touched: Vec::new(),
            row: 0,
        }
    }

    fn add(&mut self, col: usize, w: f64) {
        if self.dense[col] == 0.0 {
            self.touched.push(col);
        }
        self.dense[col] += w;
    }

    fn finish_row(&mut self) {
        self.touched.sort_unstable();
        for &c in &self.touched {
            if self.dense[c] != 0.0 {
                self.coo.push(self.row, c, self.dense[c]);
            }
            self.dense[c] = 0.0;
        }
        self.touched.clear();
        self.row += 1;
    }

    fn build(self) -> SparseOperator {
        SparseOperator::new(CsrMatrix::from(&self.coo))
    }
}

/// Deposits weight `w` at `(x, y)` (pixel units) onto the four nearest pixel
/// centres of a `size × size` image. Neighbours past the border are clamped,
/// so the deposited weights always sum to `w`.
fn deposit_bilinear(row: &mut RowBuilder, size: usize, x: f64, y: f64, w: f64) {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let clamp = |v: f64| v.clamp(0.0, (size - 1) as f64) as usize;
    let (xa, xb) = (clamp(x0), clamp(x0 + 1.0));
    let (ya, yb) = (clamp(y0), clamp(y0 + 1.0));
    for (ix, iy, f) in [
        (xa, ya, (1.0 - tx) * (1.0 - ty)),
        (xb, ya, tx * (1.0 - ty)),
        (xa, yb, (1.0 - tx) * ty),
        (xb, yb, tx * ty),
    ] {
        if f > 0.0 {
            row.add(iy * size + ix, w * f);
        }
    }
}

/// Geometry of a spherical-means row, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub centre: (f64, f64),
    pub radius: f64,
}

/// Circle centres at `j·(90/n_angles)°` on the mask boundary and radii
/// `2R·i/(n_circles+1)`, `R = size/2`; row `j·n_circles + (i−1)`.
pub fn spherical_arcs(size: usize, n_angles: usize, n_circles: usize) -> Vec<Circle> {
    let c = size as f64 / 2.0;
    let mut arcs = Vec::with_capacity(n_angles * n_circles);
    for j in 0..n_angles {
        let theta = (j as f64 * 90.0 / n_angles as f64).to_radians();
        let centre = (c + c * theta.cos(), c + c * theta.sin());
        for i in 1..=n_circles {
            arcs.push(Circle {
                centre,
                radius: 2.0 * c * i as f64 / (n_circles + 1) as f64,
            });
        }
    }
    arcs
}

/// Length of an arc's part inside the mask disk.
pub fn arc_length_in_mask(size: usize, arc: &Circle) -> f64 {
    let r_mask = size as f64 / 2.0;
    let a = (arc.radius / (2.0 * r_mask)).min(1.0);
    2.0 * arc.radius * a.acos()
}

/// Spherical-means operator on a `size × size` image: each row integrates
/// along a circle centred on the mask boundary, restricted to the mask.
pub fn spherical_operator(size: usize, n_angles: usize, n_circles: usize) -> Result<SparseOperator> {
    if size < 16 {
        return Err(Error::Argument(format!("image size must be at least 16, got {size}")));
    }
    if n_angles == 0 || n_circles == 0 {
        return Err(Error::Argument("need at least one angle and one circle".into()));
    }
    let arcs = spherical_arcs(size, n_angles, n_circles);
    let c = size as f64 / 2.0;
    let mut rows = RowBuilder::new(arcs.len(), size * size);
    for arc in &arcs {
        let steps = ((2.0 * PI * arc.radius / ARC_STEP).ceil() as usize).max(8);
        let ds = 2.0 * PI * arc.radius / steps as f64;
        for s in 0..steps {
            let t = (s as f64 + 0.5) * 2.0 * PI / steps as f64;
            let x = arc.centre.0 + arc.radius * t.cos();
            let y = arc.centre.1 + arc.radius * t.sin();
            if (x - c).powi(2) + (y - c).powi(2) <= c * c {
                deposit_bilinear(&mut rows, size, x, y, ds);
            }
        }
        rows.finish_row();
    }
    Ok(rows.build())
}

/// Spherical-means problem with a freckle-free smooth truth.
///
/// The truth is drawn from stream 1 of `seed`; training sets generated with
/// the same seed use stream 0 and therefore never contain the truth.
pub fn spherical_tomo(size: usize, n_angles: usize, n_circles: usize, seed: u64) -> Result<TomoProblem> {
    let a = spherical_operator(size, n_angles, n_circles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let s_true = smooth_image(size, &mut rng);
    let grid = Grid::unit_square(size, size)?;
    let meta = format!(
        "spherical means: {size}x{size} image, {n_angles} angles x {n_circles} circles, seed {seed}"
    );
    Ok(TomoProblem::new(a, s_true, grid, meta))
}

/// Exact intersection lengths of the segment `p0 → p1` with the cells of
/// `grid` (domain `[0, nx·hx] × [0, ny·hy]`), as `(cell index, length)`.
pub fn ray_lengths(grid: &Grid, p0: (f64, f64), p1: (f64, f64)) -> Vec<(usize, f64)> {
    let (w, h) = (grid.nx as f64 * grid.hx, grid.ny as f64 * grid.hy);
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return vec![];
    }
    // Clip the parameter range to the domain.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for (p, d, extent) in [(p0.0, dx, w), (p0.1, dy, h)] {
        if d == 0.0 {
            if p < 0.0 || p > extent {
                return vec![];
            }
        } else {
            let (a, b) = ((0.0 - p) / d, (extent - p) / d);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if hi <= lo {
        return vec![];
    }
    let mut ts = vec![lo, hi];
    for (p, d, n, step) in [(p0.0, dx, grid.nx, grid.hx), (p0.1, dy, grid.ny, grid.hy)] {
        if d != 0.0 {
            for k in 0..=n {
                let t = (k as f64 * step - p) / d;
                if t > lo && t < hi {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for pair in ts.windows(2) {
        let seg = (pair[1] - pair[0]) * len;
        if seg <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let ix = (((p0.0 + mid * dx) / grid.hx).floor() as usize).min(grid.nx - 1);
        let iy = (((p0.1 + mid * dy) / grid.hy).floor() as usize).min(grid.ny - 1);
        let cell = iy * grid.nx + ix;
        match out.last_mut() {
            Some(last) if last.0 == cell => last.1 += seg,
            _ => out.push((cell, seg)),
        }
    }
    out
}

/// Source/receiver positions: sources on `x = 0`, receivers on `x = 1`,
/// uniformly spaced cell-centre style along `y ∈ [0, 1]`.
pub fn crosswell_geometry(n_sources: usize, n_receivers: usize) -> Vec<((f64, f64), (f64, f64))> {
    let mut pairs = Vec::with_capacity(n_sources * n_receivers);
    for i in 0..n_sources {
        let ys = (i as f64 + 0.5) / n_sources as f64;
        for j in 0..n_receivers {
            let yr = (j as f64 + 0.5) / n_receivers as f64;
            pairs.push(((0.0, ys), (1.0, yr)));
        }
    }
    pairs
}

/// Straight-ray crosswell operator on the unit square.
pub fn crosswell_operator(size: usize, n_sources: usize, n_receivers: usize) -> Result<(SparseOperator, Grid)> {
    if size == 0 || n_sources == 0 || n_receivers == 0 {
        return Err(Error::Argument("crosswell sizes must be positive".into()));
    }
    let grid = Grid::unit_square(size, size)?;
    let pairs = crosswell_geometry(n_sources, n_receivers);
    let mut coo = CooMatrix::new(pairs.len(), grid.len());
    for (row, &(p0, p1)) in pairs.iter().enumerate() {
        let mut cells = ray_lengths(&grid, p0, p1);
        cells.sort_by_key(|c| c.0);
        for (c, l) in cells {
            coo.push(row, c, l);
        }
    }
    Ok((SparseOperator::new(CsrMatrix::from(&coo)), grid))
}

/// Seeded smooth slowness field with two Gaussian anomalies, scaled to
/// `[0, 1]`.
pub fn crosswell_truth(grid: &Grid, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.0..1.5),
                rng.gen_range(0.0..1.5),
                rng.gen_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let blobs: Vec<[f64; 4]> = (0..2)
        .map(|k| {
            let sign = if k == 0 { 1.0 } else { -1.0 };
            [
                sign * rng.gen_range(1.0..2.0),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.05..0.1),
            ]
        })
        .collect();
    let mut s = DVector::from_fn(grid.len(), |i, _| {
        let (x, y) = grid.point(i);
        let smooth: f64 = waves
            .iter()
            .map(|&[a, k, l, phi]| a * (2.0 * PI * (k * x + l * y) + phi).cos())
            .sum();
        let bumps: f64 = blobs
            .iter()
            .map(|&[a, cx, cy, w]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp())
            .sum();
        smooth + bumps
    });
    let (lo, hi) = (s.min(), s.max());
    s.apply(|v| *v = (*v - lo) / (hi - lo));
    s
}

pub fn crosswell_tomo(size: usize, n_sources: usize, n_receivers: usize, seed: u64) -> Result<TomoProblem> {
    let (a, grid) = crosswell_operator(size, n_sources, n_receivers)?;
    let s_true = crosswell_truth(&grid, seed);
    let meta = format!(
        "crosswell straight rays: {size}x{size} cells, {n_sources} sources x {n_receivers} receivers, seed {seed}"
    );
    Ok(TomoProblem::new(a, s_true, grid, meta))
}

/// Adds white Gaussian noise scaled so that `‖d − b‖ = level·‖b‖` exactly.
/// Returns `d` and the per-component standard deviation
/// `σ = level·‖b‖/√m`.
pub fn add_noise(b_clean: &DVector<f64>, level: f64, seed: u64) -> Result<(DVector<f64>, f64)> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::ParameterDomain(format!("noise level must be positive, got {level}")));
    }
    let norm = b_clean.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateData("clean data are identically zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = DVector::from_fn(b_clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    e *= level * norm / e.norm();
    let sigma = level * norm / (b_clean.len() as f64).sqrt();
    Ok((b_clean + e, sigma))
}
