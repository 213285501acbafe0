//! Flat `section.key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be known;
//! relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixkry::experiments::Variant;
use mixkry::operators::{KernelFamily, KernelSpec};
use mixkry::params::{Method, SearchConfig, StoppingPolicy};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Spherical,
    Crosswell,
    Files,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spherical" => Ok(Self::Spherical),
            "crosswell" => Ok(Self::Crosswell),
            "files" => Ok(Self::Files),
            _ => Err(format!("unknown preset '{s}' (spherical, crosswell, files)")),
        }
    }
}

/// `Q₁`: a fixed kernel, or Matérn learned from training samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Q1Choice {
    Learned,
    Kernel(KernelSpec),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Q2Choice {
    Samples,
    Kernel(KernelSpec),
}

/// Whitened noise variance for UPRE. `Known` means the whitening used the
/// true noise level, so the variance is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sigma2 {
    Known,
    Value(f64),
}

impl Sigma2 {
    pub fn whitened(self) -> f64 {
        match self {
            Self::Known => 1.0,
            Self::Value(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub preset: Preset,
    pub size: usize,
    pub n_angles: usize,
    pub n_circles: usize,
    pub training: usize,
    pub n_sources: usize,
    pub n_receivers: usize,
    pub a: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    /// Per-component noise standard deviation of file data.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub noise_level: f64,
    pub variant: Variant,
    pub q1: Q1Choice,
    pub q2: Q2Choice,
    pub probes: usize,
    pub method: Method,
    pub sigma2: Sigma2,
    pub omega: Option<f64>,
    pub search: SearchConfig,
    pub stopping: StoppingPolicy,
    pub out_dir: PathBuf,
    pub timing: bool,
    pub compare_variants: Vec<Variant>,
    pub fit_samples: Option<PathBuf>,
    pub fit_sweep: Vec<usize>,
}

const KEYS: &[&str] = &[
    "seed",
    "problem.preset",
    "problem.size",
    "problem.n_angles",
    "problem.n_circles",
    "problem.training",
    "problem.n_sources",
    "problem.n_receivers",
    "problem.a",
    "problem.data",
    "problem.truth",
    "problem.samples",
    "problem.sigma",
    "noise.level",
    "prior.variant",
    "prior.q1.kernel",
    "prior.q1.nu",
    "prior.q1.ell",
    "prior.q1.exponent",
    "prior.q2.source",
    "prior.q2.kernel",
    "prior.q2.nu",
    "prior.q2.ell",
    "prior.q2.exponent",
    "prior.probes",
    "select.method",
    "select.sigma2",
    "select.omega",
    "select.gamma_min",
    "select.log_lambda_min",
    "select.log_lambda_max",
    "select.grid_gamma",
    "select.grid_lambda",
    "select.max_refine",
    "select.gamma",
    "stop.max_iter",
    "stop.flat_tol",
    "stop.residual_tol",
    "stop.window",
    "output.dir",
    "output.timing",
    "compare.variants",
    "fit.samples",
    "fit.sweep",
];

/// Raw key/value pairs with typed accessors that consume them.
struct Raw {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Raw {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("{key} = '{v}': {e}"))),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.values.remove(key).map(|v| self.base.join(v))
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key} = '{v}': expected true or false"))),
    }
}

fn kernel(raw: &mut Raw, prefix: &str, family: KernelFamily) -> Result<KernelSpec, CliError> {
    let need = |raw: &mut Raw, k: &str| -> Result<f64, CliError> {
        let key = format!("{prefix}.{k}");
        raw.take(&key)?
            .ok_or_else(|| CliError::Config(format!("missing key {key}")))
    };
    let spec = match family {
        KernelFamily::Matern => KernelSpec::matern(need(raw, "nu")?, need(raw, "ell")?),
        KernelFamily::RationalQuadratic => KernelSpec::rational_quadratic(need(raw, "nu")?, need(raw, "ell")?),
        KernelFamily::SquaredExponential => KernelSpec::squared_exponential(need(raw, "ell")?),
        KernelFamily::GammaExponential => KernelSpec::gamma_exponential(need(raw, "ell")?, need(raw, "exponent")?),
        KernelFamily::Sinc => KernelSpec::sinc(need(raw, "nu")?),
    };
    spec.validate()
        .map_err(|e| CliError::Config(format!("{prefix}: {e}")))?;
    Ok(spec)
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Config(format!("{key}: '{s}': {e}"))))
        .collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("line {}: unknown key '{k}'", lineno + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }
        let mut raw = Raw {
            values,
            base: base.to_path_buf(),
        };
        let cfg = Self::from_raw(&mut raw)?;
        debug_assert!(raw.values.is_empty(), "unconsumed keys {:?}", raw.values);
        Ok(cfg)
    }

    fn from_raw(raw: &mut Raw) -> Result<Self, CliError> {
        let preset: Preset = raw.take("problem.preset")?.unwrap_or(Preset::Spherical);
        let default_size = if preset == Preset::Crosswell { 64 } else { 32 };
        let problem = ProblemConfig {
            preset,
            size: raw.take("problem.size")?.unwrap_or(default_size),
            n_angles: raw.take("problem.n_angles")?.unwrap_or(16),
            n_circles: raw.take("problem.n_circles")?.unwrap_or(24),
            training: raw.take("problem.training")?.unwrap_or(49),
            n_sources: raw.take("problem.n_sources")?.unwrap_or(10),
            n_receivers: raw.take("problem.n_receivers")?.unwrap_or(20),
            a: raw.path("problem.a"),
            data: raw.path("problem.data"),
            truth: raw.path("problem.truth"),
            samples: raw.path("problem.samples"),
            sigma: raw.take("problem.sigma")?,
        };
        let noise_level = raw
            .take("noise.level")?
            .unwrap_or(if preset == Preset::Crosswell { 0.01 } else { 0.03 });

        let q1 = match raw.take::<String>("prior.q1.kernel")?.as_deref() {
            Some("learned") => Q1Choice::Learned,
            Some(name) => {
                let family = name.parse().map_err(|e| CliError::Config(format!("prior.q1.kernel: {e}")))?;
                Q1Choice::Kernel(kernel(raw, "prior.q1", family)?)
            }
            None => match preset {
                Preset::Crosswell => Q1Choice::Kernel(KernelSpec::matern(0.5, 0.25)),
                _ => Q1Choice::Learned,
            },
        };
        let q2 = match raw.take::<String>("prior.q2.source")?.as_deref() {
            Some("samples") => Q2Choice::Samples,
            Some("kernel") => {
                let name: String = raw
                    .take("prior.q2.kernel")?
                    .ok_or_else(|| CliError::Config("missing key prior.q2.kernel".into()))?;
                let family = name.parse().map_err(|e| CliError::Config(format!("prior.q2.kernel: {e}")))?;
                Q2Choice::Kernel(kernel(raw, "prior.q2", family)?)
            }
            Some(other) => {
                return Err(CliError::Config(format!(
                    "prior.q2.source = '{other}': expected samples or kernel"
                )))
            }
            None => match preset {
                Preset::Crosswell => Q2Choice::Kernel(KernelSpec::rational_quadratic(2.0, 0.1)),
                _ => Q2Choice::Samples,
            },
        };
        if raw.values.keys().any(|k| k.starts_with("prior.q2.")) {
            return Err(CliError::Config(
                "prior.q2 kernel keys need prior.q2.source = kernel".into(),
            ));
        }
        if raw.values.keys().any(|k| k.starts_with("prior.q1.")) {
            return Err(CliError::Config(
                "prior.q1 kernel parameters need prior.q1.kernel".into(),
            ));
        }

        let sigma2 = match raw.values.remove("select.sigma2").as_deref() {
            None | Some("known") => Sigma2::Known,
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Sigma2::Value(x),
                _ => {
                    return Err(CliError::Config(format!(
                        "select.sigma2 = '{v}': expected 'known' or a positive number"
                    )))
                }
            },
        };
        let d = SearchConfig::default();
        let search = SearchConfig {
            gamma_min: raw.take("select.gamma_min")?.unwrap_or(d.gamma_min),
            log_lambda_min: raw.take("select.log_lambda_min")?.unwrap_or(d.log_lambda_min),
            log_lambda_max: raw.take("select.log_lambda_max")?.unwrap_or(d.log_lambda_max),
            grid_gamma: raw.take("select.grid_gamma")?.unwrap_or(d.grid_gamma),
            grid_lambda: raw.take("select.grid_lambda")?.unwrap_or(d.grid_lambda),
            max_refine_evals: raw.take("select.max_refine")?.unwrap_or(d.max_refine_evals),
            fixed_gamma: raw.take("select.gamma")?,
        };
        search
            .validate()
            .map_err(|e| CliError::Config(format!("select: {e}")))?;
        let s = StoppingPolicy::default();
        let stopping = StoppingPolicy {
            max_iter: raw.take("stop.max_iter")?.unwrap_or(s.max_iter),
            flat_tol: raw.take("stop.flat_tol")?.unwrap_or(s.flat_tol),
            residual_tol: raw.take("stop.residual_tol")?.unwrap_or(s.residual_tol),
            window: raw.take("stop.window")?.unwrap_or(s.window),
        };
        stopping
            .validate()
            .map_err(|e| CliError::Config(format!("stop: {e}")))?;

        let timing = match raw.values.remove("output.timing") {
            Some(v) => parse_bool("output.timing", &v)?,
            None => false,
        };
        let compare_variants = match raw.values.remove("compare.variants") {
            Some(v) => list("compare.variants", &v)?,
            None => match preset {
                Preset::Crosswell => vec![Variant::Mix, Variant::Q1Only, Variant::Q2Only, Variant::Identity],
                _ => Variant::ALL.to_vec(),
            },
        };
        let fit_sweep = match raw.values.remove("fit.sweep") {
            Some(v) => list("fit.sweep", &v)?,
            None => vec![5, 10, 20, 40, 80],
        };
        if fit_sweep.contains(&0) {
            return Err(CliError::Config("fit.sweep: probe counts must be positive".into()));
        }
        let probes = raw.take("prior.probes")?.unwrap_or(20);
        if probes == 0 {
            return Err(CliError::Config("prior.probes must be positive".into()));
        }

        Ok(Self {
            seed: raw.take("seed")?.unwrap_or(0),
            problem,
            noise_level,
            variant: raw.take("prior.variant")?.unwrap_or(Variant::Mix),
            q1,
            q2,
            probes,
            method: raw.take("select.method")?.unwrap_or(Method::Wgcv),
            sigma2,
            omega: raw.take("select.omega")?,
            search,
            stopping,
            out_dir: raw.path("output.dir").unwrap_or_else(|| raw.base.join("out")),
            timing,
            compare_variants,
            fit_samples: raw.path("fit.samples"),
            fit_sweep,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, CliError> {
        Config::parse(text, Path::new("/cfg"))
    }

    #[test]
    fn defaults_follow_the_preset() {
        let c = parse("").unwrap();
        assert_eq!(c.problem.preset, Preset::Spherical);
        assert_eq!((c.problem.size, c.noise_level), (32, 0.03));
        assert_eq!(c.q1, Q1Choice::Learned);
        assert_eq!(c.method, Method::Wgcv);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/out"));
        let c = parse("problem.preset = crosswell\n").unwrap();
        assert_eq!((c.problem.size, c.noise_level), (64, 0.01));
        assert_eq!(c.q2, Q2Choice::Kernel(KernelSpec::rational_quadratic(2.0, 0.1)));
    }

    #[test]
    fn values_comments_and_paths() {
        let c = parse(
            "# header\nseed = 7\nselect.method = upre   # trailing\nselect.sigma2 = 0.5\n\
             prior.q1.kernel = matern\nprior.q1.nu = 1.5\nprior.q1.ell = 0.2\n\
             stop.max_iter = 12\noutput.dir = results\noutput.timing = true\n\
             compare.variants = mix, identity\nfit.sweep = 4,8\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.method, Method::Upre);
        assert_eq!(c.sigma2, Sigma2::Value(0.5));
        assert_eq!(c.q1, Q1Choice::Kernel(KernelSpec::matern(1.5, 0.2)));
        assert_eq!(c.stopping.max_iter, 12);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/results"));
        assert!(c.timing);
        assert_eq!(c.compare_variants, vec![Variant::Mix, Variant::Identity]);
        assert_eq!(c.fit_sweep, vec![4, 8]);
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |t: &str| match parse(t) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(msg("select.methd = gcv").contains("select.methd"));
        assert!(msg("select.method = lasso").contains("select.method"));
        assert!(msg("seed = 1\nseed = 2").contains("duplicate"));
        assert!(msg("prior.q1.kernel = matern\nprior.q1.ell = 0.2").contains("prior.q1.nu"));
        assert!(msg("prior.q2.nu = 2").contains("prior.q2.source"));
        assert!(msg("select.sigma2 = -1").contains("select.sigma2"));
        assert!(msg("stop.window = 0").contains("stop"));
        assert!(msg("just some words").contains("line 1"));
    }
}
