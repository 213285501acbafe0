//! Box-constrained Nelder–Mead.
//!
//! Points that leave the box are projected back onto it; non-finite
//! objective values are treated as `+∞`.

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when every vertex is within `xtol` of the best (∞-norm) ...
    pub xtol: f64,
    /// ... and the objective spread is at most `ftol · (|f_best| + ftol)`.
    pub ftol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 200,
            xtol: 1e-6,
            ftol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Boxed<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Boxed<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    fn eval(&mut self, x: &mut [f64]) -> f64 {
        self.project(x);
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Minimizes `f` from `x0` with initial simplex edges `step`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    let mut obj = Boxed {
        f,
        lower,
        upper,
        evals: 0,
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    let f0 = obj.eval(&mut start);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        x[i] += step[i];
        // Step inward when the edge would leave the box.
        if x[i] > upper[i] {
            x[i] = start[i] - step[i];
        }
        let fx = obj.eval(&mut x);
        simplex.push((x, fx));
    }

    let mut converged = false;
    while obj.evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread_f = if worst.is_finite() {
            worst - best
        } else {
            f64::INFINITY
        };
        if spread_x <= opts.xtol && spread_f <= opts.ftol * (best.abs() + opts.ftol) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let mut xr = along(1.0);
        let fr = obj.eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(2.0);
            let fe = obj.eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, fc) = if fr < simplex[n].1 {
            let mut x = along(0.5);
            let fx = obj.eval(&mut x);
            (x, fx)
        } else {
            let mut x = along(-0.5);
            let fx = obj.eval(&mut x);
            (x, fx)
        };
        if fc < simplex[n].1.min(fr) {
            obj.project(&mut xc);
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = vertex
                .0
                .iter()
                .zip(&best_x)
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            let fx = obj.eval(&mut x);
            *vertex = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        evals: obj.evals,
        converged,
    }
}
