//! The hybrid iteration: one mixGK step, parameter selection on the
//! projected problem, iterate recovery, stopping test.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::mixgk::{Breakdown, MixGk, MixGkOptions};
use crate::operators::{Mixing, OpRef, PriorSpec, Whitener};
use crate::params::{
    full_scale_objective, select_params, stopping_check, Method, SearchConfig, SelectionInputs, SelectionResult,
    StopReason, StoppingPolicy,
};
use crate::projected::{recover_iterate, ProjectedSystem, ProjectionParts};

#[derive(Clone, Debug)]
pub struct HybridConfig {
    pub method: Method,
    pub search: SearchConfig,
    pub stopping: StoppingPolicy,
    /// Whitened noise variance for UPRE.
    pub sigma2: Option<f64>,
    /// WGCV weight; `(2k+1)/m` when absent.
    pub omega: Option<f64>,
    pub mixgk: MixGkOptions,
    /// Record wall time per iteration (makes output non-reproducible).
    pub timing: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            method: Method::Wgcv,
            search: SearchConfig::default(),
            stopping: StoppingPolicy::default(),
            sigma2: None,
            omega: None,
            mixgk: MixGkOptions::default(),
            timing: false,
        }
    }
}

/// Diagnostics of one completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub objective: f64,
    pub rel_residual: f64,
    pub rel_error: Option<f64>,
    pub ms: Option<f64>,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str = "k,lambda,gamma,objective,rel_residual,rel_error,ms";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.k,
            self.lambda,
            self.gamma,
            self.objective,
            self.rel_residual,
            opt(self.rel_error),
            self.ms.map(|x| format!("{x:.3}")).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug)]
pub struct HybridOutcome {
    pub records: Vec<RunRecord>,
    pub selections: Vec<SelectionResult>,
    pub solution: DVector<f64>,
    pub stop: StopReason,
    pub breakdown: Option<Breakdown>,
    /// Relative error of the starting guess `μ`, when the truth is known.
    pub initial_error: Option<f64>,
    pub log: Vec<String>,
}

impl HybridOutcome {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rel_error)
    }
}

/// Reconstructs `s` from `d = A s + ε` under the prior `prior`.
///
/// The Krylov process starts from `b = d − Aμ`. A breakdown before the first
/// step is reported as [`Error::Breakdown`]; selection failures as
/// [`Error::SearchFailure`] or the underlying error.
pub fn run_hybrid(
    a: OpRef,
    noise: Whitener,
    prior: &PriorSpec,
    d: &DVector<f64>,
    truth: Option<&DVector<f64>>,
    config: &HybridConfig,
) -> Result<HybridOutcome> {
    config.stopping.validate()?;
    config.search.validate()?;
    check_len("data", a.nrows(), d.len())?;
    check_len("prior mean", a.ncols(), prior.dim())?;
    if let Some(t) = truth {
        check_len("true solution", prior.dim(), t.len())?;
    }
    if config.method == Method::Optimal && truth.is_none() {
        return Err(Error::Configuration(
            "optimal selection needs the true solution (problem.truth)".into(),
        ));
    }

    let mut search = config.search;
    if let Mixing::Fixed(g) = prior.mixing {
        search.fixed_gamma = Some(g);
    }
    let m = a.nrows();
    let b = d - a.apply(&prior.mean);
    let truth_norm = truth.map(|t| t.norm());
    let rel_error = |s: &DVector<f64>| -> Option<f64> {
        truth.zip(truth_norm).map(|(t, tn)| (s - t).norm() / tn.max(f64::MIN_POSITIVE))
    };
    let initial_error = rel_error(&prior.mean);

    let mut state = MixGk::new(
        a,
        noise,
        prior.q1.clone(),
        prior.q2.clone(),
        &b,
        config.mixgk,
    )?;
    let inputs = SelectionInputs {
        sigma2: config.sigma2,
        truth,
        omega: config.omega,
    };

    let mut records = Vec::new();
    let mut selections = Vec::new();
    let mut objectives = Vec::new();
    let mut solution;
    let stop = loop {
        let started = Instant::now();
        let report = state.step()?;
        let sel = select_params(config.method, &state, prior, inputs, &search)?;
        let parts = ProjectionParts::from_state(&state)?;
        let sys = ProjectedSystem::new(&parts, sel.gamma)?;
        let y = sys.solve(sel.lambda)?;
        let rel_residual = sys.residual_norm_sq(sel.lambda)?.sqrt() / state.beta1();
        solution = recover_iterate(&state, prior, sel.gamma, &y)?;
        let ms = config
            .timing
            .then(|| started.elapsed().as_secs_f64() * 1e3);
        records.push(RunRecord {
            k: state.k(),
            lambda: sel.lambda,
            gamma: sel.gamma,
            objective: sel.objective,
            rel_residual,
            rel_error: rel_error(&solution),
            ms,
        });
        objectives.push(full_scale_objective(
            config.method,
            sel.objective,
            state.k(),
            m,
            config.sigma2,
        ));
        selections.push(sel);
        if let Some(reason) = stopping_check(&objectives, rel_residual, &config.stopping) {
            break reason;
        }
        if report.breakdown.is_some() {
            break StopReason::Breakdown;
        }
    };

    Ok(HybridOutcome {
        records,
        selections,
        solution,
        stop,
        breakdown: state.breakdown(),
        initial_error,
        log: state.log().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projected::solve_map_dense;
    use crate::testproblems::random_dense_problem;

    #[test]
    fn runs_to_breakdown_and_reaches_map_with_fixed_parameters() {
        let p = random_dense_problem(25, 20, 5, 2);
        let prior = p.prior(Mixing::Fixed(0.4)).unwrap();
        let truth = DVector::from_fn(20, |i, _| (i as f64 * 0.3).sin());
        let d = &p.b + &p.a * &p.mean;
        let cfg = HybridConfig {
            method: Method::Optimal,
            stopping: StoppingPolicy {
                max_iter: 100,
                flat_tol: 1e-300,
                residual_tol: 1e-300,
                window: 100,
            },
            ..Default::default()
        };
        let out = run_hybrid(p.a_op(), p.whitener(), &prior, &d, Some(&truth), &cfg).unwrap();
        assert_eq!(out.stop, StopReason::Breakdown);
        assert_eq!(out.iterations(), 20);
        assert!(out.records.windows(2).all(|w| w[1].k == w[0].k + 1));
        let last = out.records.last().unwrap();
        assert_eq!(last.gamma, 0.4);
        let rinv = p.whitening_root() * p.whitening_root();
        let map = solve_map_dense(&p.a, &rinv, &p.mixed(0.4), &p.b, &p.mean, last.lambda).unwrap();
        assert!((&out.solution - &map).norm() <= 1e-8 * map.norm());
        let err = (&out.solution - &truth).norm() / truth.norm();
        assert!((last.rel_error.unwrap() - err).abs() < 1e-14);
    }

    #[test]
    fn optimal_without_truth_is_a_configuration_error() {
        let p = random_dense_problem(10, 8, 2, 1);
        let prior = p.prior(Mixing::Estimated).unwrap();
        let cfg = HybridConfig {
            method: Method::Optimal,
            ..Default::default()
        };
        let r = run_hybrid(p.a_op(), p.whitener(), &prior, &p.b, None, &cfg);
        assert!(matches!(r, Err(Error::Configuration(m)) if m.contains("truth")));
    }

    #[test]
    fn zero_data_residual_breaks_down_before_the_first_step() {
        let p = random_dense_problem(10, 8, 2, 1);
        let prior = p.prior(Mixing::Estimated).unwrap();
        let d = &p.a * &p.mean;
        let r = run_hybrid(p.a_op(), p.whitener(), &prior, &d, None, &HybridConfig::default());
        assert!(matches!(r, Err(Error::DegenerateData(_))));
    }

    #[test]
    fn gcv_run_stops_by_rule_and_is_reproducible() {
        let p = random_dense_problem(60, 40, 6, 9);
        let prior = p.prior(Mixing::Estimated).unwrap();
        let cfg = HybridConfig {
            method: Method::Gcv,
            ..Default::default()
        };
        let a = run_hybrid(p.a_op(), p.whitener(), &prior, &p.b, None, &cfg).unwrap();
        let b = run_hybrid(p.a_op(), p.whitener(), &prior, &p.b, None, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.iter().all(|r| r.gamma > 0.0 && r.gamma <= 1.0));
        assert!(a.records.iter().all(|r| r.rel_error.is_none() && r.ms.is_none()));
        let row = a.records[0].csv_row();
        assert_eq!(row.split(',').count(), 7);
        assert!(row.ends_with(",,"));
    }
}
