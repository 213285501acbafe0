//! The `run`, `compare`, `fit` and `gen` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mixkry::experiments::{
    crosswell_experiment, describe, spherical_experiment, sub_seed, CrosswellPreset, Experiment,
    SphericalPreset, Variant,
};
use mixkry::hybrid::{HybridConfig, HybridOutcome, RunRecord};
use mixkry::io;
use mixkry::learn::{learn_matern, mean_and_standard_error, normalized_objective, rademacher_probes, FitResult};
use mixkry::operators::{
    build_kernel_operator, sample_covariance, Grid, KernelSpec, LinearOperator, OpRef,
    SampleCovarianceOperator, SampleFactor, SparseOperator,
};
use mixkry::testproblems::{
    add_noise, crosswell_tomo, disk_mask, gen_training_images, spherical_tomo, TomoProblem,
};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{Config, Preset, Q1Choice, Q2Choice};
use crate::CliError;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn require<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    let p = v.as_ref().ok_or_else(|| config_err(format!("missing key {key}")))?;
    if !p.exists() {
        return Err(config_err(format!("{key}: {} does not exist", p.display())));
    }
    Ok(p)
}

/// Columns of a dense MatrixMarket file as samples.
fn read_samples(path: &Path) -> Result<SampleFactor, CliError> {
    let m = io::read_dense(path)?;
    let cols: Vec<DVector<f64>> = m.column_iter().map(|c| c.into_owned()).collect();
    Ok(sample_covariance(&cols)?)
}

fn square_grid(size: usize, n: usize) -> Result<Grid, CliError> {
    if size * size != n {
        return Err(config_err(format!(
            "problem.size = {size} gives {} pixels but the problem has {n} unknowns",
            size * size
        )));
    }
    Ok(Grid::unit_square(size, size)?)
}

/// Assembles the data and prior ingredients described by `cfg`.
pub fn build_experiment(cfg: &Config) -> Result<Experiment, CliError> {
    let p = &cfg.problem;
    match p.preset {
        Preset::Spherical => {
            if let Q2Choice::Kernel(_) = cfg.q2 {
                return Err(config_err("spherical preset takes Q2 from training samples (prior.q2.source = samples)"));
            }
            let preset = SphericalPreset {
                size: p.size,
                n_angles: p.n_angles,
                n_circles: p.n_circles,
                n_training: p.training,
                noise_level: cfg.noise_level,
                probes: cfg.probes,
                q1: match cfg.q1 {
                    Q1Choice::Learned => None,
                    Q1Choice::Kernel(k) => Some(k),
                },
                seed: cfg.seed,
            };
            Ok(spherical_experiment(&preset)?)
        }
        Preset::Crosswell => {
            let (Q1Choice::Kernel(q1), Q2Choice::Kernel(q2)) = (cfg.q1, cfg.q2) else {
                return Err(config_err("crosswell preset needs kernel priors for Q1 and Q2"));
            };
            let preset = CrosswellPreset {
                size: p.size,
                n_sources: p.n_sources,
                n_receivers: p.n_receivers,
                noise_level: cfg.noise_level,
                q1,
                q2,
                seed: cfg.seed,
            };
            Ok(crosswell_experiment(&preset)?)
        }
        Preset::Files => files_experiment(cfg),
    }
}

fn files_experiment(cfg: &Config) -> Result<Experiment, CliError> {
    let p = &cfg.problem;
    let a = SparseOperator::new(io::read_sparse(require(&p.a, "problem.a")?)?);
    let data = io::read_vector(require(&p.data, "problem.data")?)?;
    let truth = match &p.truth {
        Some(_) => Some(io::read_vector(require(&p.truth, "problem.truth")?)?),
        None => None,
    };
    let sigma = p
        .sigma
        .ok_or_else(|| config_err("missing key problem.sigma (noise standard deviation)"))?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(config_err(format!("problem.sigma = {sigma} must be positive")));
    }
    let n = a.ncols();
    if data.len() != a.nrows() {
        return Err(config_err(format!(
            "problem.data has {} entries, problem.a has {} rows",
            data.len(),
            a.nrows()
        )));
    }
    let grid = square_grid(p.size, n)?;
    let samples = match &p.samples {
        Some(_) => Some(read_samples(require(&p.samples, "problem.samples")?)?),
        None => None,
    };
    let need_samples = || {
        samples
            .as_ref()
            .ok_or_else(|| config_err("missing key problem.samples (needed for a learned Q1 or sample Q2)"))
    };
    let (q1, q1_desc, fit) = match cfg.q1 {
        Q1Choice::Kernel(k) => (kernel_op(k, grid)?, describe(&k), None),
        Q1Choice::Learned => {
            let fit = learn_matern(need_samples()?, grid, None, cfg.probes, sub_seed(cfg.seed, 2))?;
            let k = KernelSpec::matern(fit.nu, fit.ell);
            (kernel_op(k, grid)?, describe(&k), Some(fit))
        }
    };
    let (q2, q2_desc): (OpRef, String) = match cfg.q2 {
        Q2Choice::Kernel(k) => (kernel_op(k, grid)?, describe(&k)),
        Q2Choice::Samples => {
            let s = need_samples()?;
            (
                Arc::new(SampleCovarianceOperator::new(s)),
                format!("sample covariance of {} samples", s.count),
            )
        }
    };
    let mean = samples
        .as_ref()
        .map(|s| s.mean.clone())
        .unwrap_or_else(|| DVector::zeros(n));
    Ok(Experiment {
        meta: format!("files: {} x {} operator", a.nrows(), n),
        a: Arc::new(a),
        grid,
        truth,
        data,
        sigma,
        mean,
        q1,
        q1_desc,
        q2,
        q2_desc,
        samples,
        fit,
    })
}

fn kernel_op(spec: KernelSpec, grid: Grid) -> Result<OpRef, CliError> {
    Ok(Arc::new(build_kernel_operator(spec, grid)?))
}

fn hybrid_config(cfg: &Config) -> HybridConfig {
    HybridConfig {
        method: cfg.method,
        search: cfg.search,
        stopping: cfg.stopping,
        sigma2: Some(cfg.sigma2.whitened()),
        omega: cfg.omega,
        timing: cfg.timing,
        ..Default::default()
    }
}

fn run_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RunRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn params_csv(outcome: &HybridOutcome) -> String {
    let mut out = String::from("k,method,gamma,lambda,objective,evaluations,converged\n");
    for (r, s) in outcome.records.iter().zip(&outcome.selections) {
        let _ = writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{},{}",
            r.k, s.method, s.gamma, s.lambda, s.objective, s.evaluations, s.converged
        );
    }
    out
}

fn fmt_err(e: Option<f64>) -> String {
    e.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into())
}

fn describe_experiment(out: &mut String, exp: &Experiment, cfg: &Config) {
    let _ = writeln!(out, "problem: {}", exp.meta);
    let _ = writeln!(out, "unknowns: {}  measurements: {}", exp.n(), exp.m());
    let _ = writeln!(out, "noise sigma: {:.6e}", exp.sigma);
    let _ = writeln!(out, "Q1: {}", exp.q1_desc);
    let _ = writeln!(out, "Q2: {}", exp.q2_desc);
    if let Some(f) = &exp.fit {
        let _ = writeln!(
            out,
            "learned Q1: nu = {:.6}, ell = {:.6}, objective = {:.6e} ({} probes, seed {})",
            f.nu, f.ell, f.objective, f.probes, f.seed
        );
    }
    let _ = writeln!(out, "method: {}", cfg.method);
    let _ = writeln!(out, "seed: {}", cfg.seed);
}

/// Artifacts of one reconstruction.
#[derive(Debug)]
pub struct RunReport {
    pub outcome: HybridOutcome,
    pub run_csv: PathBuf,
    pub summary: String,
}

pub fn run(cfg: &Config) -> Result<RunReport, CliError> {
    let exp = build_experiment(cfg)?;
    let outcome = exp.run(cfg.variant, &hybrid_config(cfg))?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let run_path = dir.join("run.csv");
    fs::write(&run_path, run_csv(&outcome.records))?;
    fs::write(dir.join("params.csv"), params_csv(&outcome))?;
    let (lo, hi) = io::write_pgm(dir.join("recon.pgm"), &outcome.solution, exp.grid.nx, exp.grid.ny)?;

    let mut s = String::new();
    describe_experiment(&mut s, &exp, cfg);
    let _ = writeln!(s, "variant: {}", cfg.variant);
    let _ = writeln!(s, "iterations: {}", outcome.iterations());
    let _ = writeln!(s, "stop: {}", outcome.stop.name());
    if let Some(last) = outcome.records.last() {
        let _ = writeln!(
            s,
            "final: gamma = {:.6e}, lambda = {:.6e}, objective = {:.6e}, relative residual = {:.6e}",
            last.gamma, last.lambda, last.objective, last.rel_residual
        );
    }
    let _ = writeln!(s, "relative error: initial {}, final {}", fmt_err(outcome.initial_error), fmt_err(outcome.final_error()));
    let _ = writeln!(s, "recon.pgm scale: min {lo:.6e}, max {hi:.6e}");
    if let Some(t) = &exp.truth {
        let (lo, hi) = io::write_pgm(dir.join("truth.pgm"), t, exp.grid.nx, exp.grid.ny)?;
        let _ = writeln!(s, "truth.pgm scale: min {lo:.6e}, max {hi:.6e}");
    }
    const LOG_LINES: usize = 20;
    for line in outcome.log.iter().take(LOG_LINES) {
        let _ = writeln!(s, "log: {line}");
    }
    if outcome.log.len() > LOG_LINES {
        let _ = writeln!(s, "log: ... {} more", outcome.log.len() - LOG_LINES);
    }
    fs::write(dir.join("summary.txt"), &s)?;
    Ok(RunReport {
        outcome,
        run_csv: run_path,
        summary: s,
    })
}

#[derive(Debug)]
pub struct CompareReport {
    pub outcomes: Vec<(Variant, HybridOutcome)>,
    pub csv: PathBuf,
}

/// One run per variant on the same data; variants run concurrently.
pub fn compare(cfg: &Config) -> Result<CompareReport, CliError> {
    let exp = build_experiment(cfg)?;
    let hc = hybrid_config(cfg);
    let results: Vec<Result<(Variant, HybridOutcome), CliError>> = cfg
        .compare_variants
        .par_iter()
        .map(|&v| Ok((v, exp.run(v, &hc)?)))
        .collect();
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut csv = format!("variant,{}\n", RunRecord::CSV_HEADER);
    let mut s = String::new();
    describe_experiment(&mut s, &exp, cfg);
    let _ = writeln!(s, "\nvariant                 iters  stop                 gamma         lambda        final error");
    for (v, o) in &outcomes {
        for r in &o.records {
            let _ = writeln!(csv, "{v},{}", r.csv_row());
        }
        io::write_pgm(dir.join(format!("recon_{v}.pgm")), &o.solution, exp.grid.nx, exp.grid.ny)?;
        let last = o.records.last();
        let _ = writeln!(
            s,
            "{:<23} {:>5}  {:<20} {:<13} {:<13} {}",
            v.name(),
            o.iterations(),
            o.stop.name(),
            last.map(|r| format!("{:.6e}", r.gamma)).unwrap_or_default(),
            last.map(|r| format!("{:.6e}", r.lambda)).unwrap_or_default(),
            fmt_err(o.final_error())
        );
    }
    let path = dir.join("compare.csv");
    fs::write(&path, csv)?;
    fs::write(dir.join("summary.txt"), s)?;
    Ok(CompareReport { outcomes, csv: path })
}

/// One row of the probe-count sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub probes: usize,
    pub fit: FitResult,
    pub std_error: f64,
}

#[derive(Debug)]
pub struct FitReport {
    pub fit: FitResult,
    pub sweep: Vec<SweepRow>,
}

/// Learns Matérn parameters from training samples and reports how the
/// estimate and its Monte Carlo standard error move with the probe count.
pub fn fit(cfg: &Config) -> Result<FitReport, CliError> {
    let size = cfg.problem.size;
    let (samples, support, source) = match (&cfg.fit_samples, cfg.problem.preset) {
        (Some(_), _) => {
            let path = require(&cfg.fit_samples, "fit.samples")?;
            (read_samples(path)?, None, path.display().to_string())
        }
        (None, Preset::Spherical) => {
            let t = gen_training_images(cfg.problem.training, size, cfg.seed);
            (
                sample_covariance(&t.images)?,
                Some(disk_mask(size)),
                format!("{} synthetic training images", cfg.problem.training),
            )
        }
        (None, _) => return Err(config_err("missing key fit.samples")),
    };
    let grid = square_grid(size, samples.dim())?;
    let support = support.as_deref();
    let seed = sub_seed(cfg.seed, 2);
    let main = learn_matern(&samples, grid, support, cfg.probes, seed)?;
    let sweep = cfg
        .fit_sweep
        .iter()
        .map(|&m| {
            let fit = learn_matern(&samples, grid, support, m, seed)?;
            let obj = normalized_objective(&samples, grid, support, &rademacher_probes(grid.len(), m, seed))?;
            let (_, se) = mean_and_standard_error(&obj.terms(fit.nu, fit.ell)?);
            Ok(SweepRow { probes: m, fit, std_error: se })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut s = String::new();
    let _ = writeln!(s, "samples: {source} ({} samples, n = {})", samples.count, samples.dim());
    let _ = writeln!(s, "support: {}", if support.is_some() { "disk mask" } else { "full grid" });
    let _ = writeln!(s, "nu: {:.6}", main.nu);
    let _ = writeln!(s, "ell: {:.6}", main.ell);
    let _ = writeln!(s, "objective: {:.6e}", main.objective);
    let _ = writeln!(s, "probes: {}", main.probes);
    let _ = writeln!(s, "probe seed: {}", main.seed);
    let _ = writeln!(s, "evaluations: {}", main.evaluations);
    let _ = writeln!(s, "\nprobes  nu          ell         objective     std_error");
    let mut csv = String::from("probes,nu,ell,objective,std_error\n");
    for r in &sweep {
        let _ = writeln!(
            s,
            "{:>6}  {:<10.6}  {:<10.6}  {:<12.6e}  {:.6e}",
            r.probes, r.fit.nu, r.fit.ell, r.fit.objective, r.std_error
        );
        let _ = writeln!(csv, "{},{:.17e},{:.17e},{:.17e},{:.17e}", r.probes, r.fit.nu, r.fit.ell, r.fit.objective, r.std_error);
    }
    fs::write(dir.join("fit.txt"), s)?;
    fs::write(dir.join("fit_sweep.csv"), csv)?;
    Ok(FitReport { fit: main, sweep })
}

/// Writes a preset problem as MatrixMarket/PGM files plus a `files.cfg`
/// that reruns it through the `files` preset.
pub fn gen(preset: Preset, size: Option<usize>, seed: u64, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let (problem, level, training): (TomoProblem, f64, Option<Vec<DVector<f64>>>) = match preset {
        Preset::Spherical => {
            let size = size.unwrap_or(32);
            let t = gen_training_images(49, size, seed);
            (spherical_tomo(size, 16, 24, seed)?, 0.03, Some(t.images))
        }
        Preset::Crosswell => (crosswell_tomo(size.unwrap_or(64), 10, 20, seed)?, 0.01, None),
        Preset::Files => return Err(config_err("gen needs a generated preset (spherical or crosswell)")),
    };
    let (d, sigma) = add_noise(&problem.b_clean, level, sub_seed(seed, 1))?;
    io::write_sparse(out.join("A.mtx"), problem.a.matrix())?;
    io::write_vector(out.join("truth.mtx"), &problem.s_true)?;
    io::write_vector(out.join("b_clean.mtx"), &problem.b_clean)?;
    io::write_vector(out.join("data.mtx"), &d)?;
    io::write_pgm(out.join("truth.pgm"), &problem.s_true, problem.grid.nx, problem.grid.ny)?;
    let mut cfg = format!(
        "# {}\nproblem.preset = files\nproblem.size = {}\nproblem.a = A.mtx\nproblem.data = data.mtx\n\
         problem.truth = truth.mtx\nproblem.sigma = {sigma:e}\nseed = {seed}\n",
        problem.meta, problem.grid.nx
    );
    match training {
        Some(images) => {
            let m = nalgebra::DMatrix::from_columns(&images);
            io::write_dense(out.join("training.mtx"), &m)?;
            for (i, img) in images.iter().take(4).enumerate() {
                io::write_pgm(out.join(format!("training_{i}.pgm")), img, problem.grid.nx, problem.grid.ny)?;
            }
            cfg.push_str("problem.samples = training.mtx\n");
        }
        None => {
            cfg.push_str(
                "prior.q1.kernel = matern\nprior.q1.nu = 0.5\nprior.q1.ell = 0.25\n\
                 prior.q2.source = kernel\nprior.q2.kernel = rq\nprior.q2.nu = 2\nprior.q2.ell = 0.1\n",
            );
        }
    }
    fs::write(out.join("files.cfg"), cfg)?;
    fs::write(
        out.join("meta.txt"),
        format!("{}\nnoise level: {level}\nnoise sigma: {sigma:e}\n", problem.meta),
    )?;
    Ok(())
}
