//! Desk-scale experiment setups: data, priors and the compared variants.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hybrid::{run_hybrid, HybridConfig, HybridOutcome};
use crate::learn::{learn_matern, rblw_gamma, shrinkage_target_scale, FitResult};
use crate::operators::{
    build_kernel_operator, sample_covariance, DiagonalOperator, KernelSpec, MaskedOperator, Mixing, OpRef,
    Grid, PriorSpec, SampleCovarianceOperator, SampleFactor, Whitener, ZeroOperator,
};
use crate::testproblems::{
    add_noise, crosswell_tomo, disk_mask, gen_training_images, spherical_tomo,
};

/// Prior configurations compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `γQ₁ + (1−γ)Q₂` with γ selected on the fly.
    Mix,
    /// `Q₁` alone.
    Q1Only,
    /// `Q₂` alone.
    Q2Only,
    /// `γ·cI + (1−γ)Q₂` with γ fixed by the RBLW shrinkage estimate.
    Q2PlusIdentityRblw,
    /// `I`.
    Identity,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mix,
        Variant::Q1Only,
        Variant::Q2Only,
        Variant::Q2PlusIdentityRblw,
        Variant::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mix => "mix",
            Self::Q1Only => "q1-only",
            Self::Q2Only => "q2-only",
            Self::Q2PlusIdentityRblw => "q2-plus-identity-rblw",
            Self::Identity => "identity",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant '{s}'")))
    }
}

/// One data realization plus the prior ingredients.
#[derive(Clone)]
pub struct Experiment {
    pub a: OpRef,
    pub grid: Grid,
    pub truth: Option<DVector<f64>>,
    pub meta: String,
    pub data: DVector<f64>,
    /// Per-component noise standard deviation.
    pub sigma: f64,
    pub mean: DVector<f64>,
    pub q1: OpRef,
    pub q1_desc: String,
    pub q2: OpRef,
    pub q2_desc: String,
    pub samples: Option<SampleFactor>,
    pub fit: Option<FitResult>,
}

impl Experiment {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn whitener(&self) -> Result<Whitener> {
        Whitener::scaled_identity(self.m(), self.sigma * self.sigma)
    }

    pub fn prior(&self, variant: Variant) -> Result<PriorSpec> {
        let n = self.n();
        let zero: OpRef = Arc::new(ZeroOperator::square(n));
        let mean = self.mean.clone();
        match variant {
            Variant::Mix => PriorSpec::new(mean, self.q1.clone(), self.q2.clone(), Mixing::Estimated),
            Variant::Q1Only => PriorSpec::new(mean, self.q1.clone(), zero, Mixing::Fixed(1.0)),
            Variant::Q2Only => PriorSpec::new(mean, self.q2.clone(), zero, Mixing::Fixed(1.0)),
            Variant::Identity => PriorSpec::new(
                mean,
                Arc::new(DiagonalOperator::scaled_identity(n, 1.0)),
                zero,
                Mixing::Fixed(1.0),
            ),
            Variant::Q2PlusIdentityRblw => {
                let samples = self.samples.as_ref().ok_or_else(|| {
                    Error::Configuration(format!("variant {variant} needs training samples"))
                })?;
                let gamma = rblw_gamma(samples)?;
                let scale = shrinkage_target_scale(samples);
                let target: OpRef = Arc::new(DiagonalOperator::scaled_identity(
                    n,
                    if scale > 0.0 { scale } else { 1.0 },
                ));
                PriorSpec::new(mean, target, self.q2.clone(), Mixing::Fixed(gamma))
            }
        }
    }

    pub fn run(&self, variant: Variant, config: &HybridConfig) -> Result<HybridOutcome> {
        let prior = self.prior(variant)?;
        run_hybrid(
            self.a.clone(),
            self.whitener()?,
            &prior,
            &self.data,
            self.truth.as_ref(),
            config,
        )
    }
}

/// Seeds derived from one experiment seed.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SphericalPreset {
    pub size: usize,
    pub n_angles: usize,
    pub n_circles: usize,
    pub n_training: usize,
    pub noise_level: f64,
    pub probes: usize,
    /// Fixed `Q₁`; learned from the training images when `None`.
    pub q1: Option<KernelSpec>,
    pub seed: u64,
}

impl Default for SphericalPreset {
    fn default() -> Self {
        Self {
            size: 32,
            n_angles: 16,
            n_circles: 24,
            n_training: 49,
            noise_level: 0.03,
            probes: 20,
            q1: None,
            seed: 0,
        }
    }
}

/// Spherical-means setup: mean and `Q₂ = Q̂` from synthetic training
/// images, `Q₁` a Matérn kernel learned from the same images.
pub fn spherical_experiment(p: &SphericalPreset) -> Result<Experiment> {
    let problem = spherical_tomo(p.size, p.n_angles, p.n_circles, p.seed)?;
    let training = gen_training_images(p.n_training, p.size, p.seed);
    let samples = sample_covariance(&training.images)?;
    let (data, sigma) = add_noise(&problem.b_clean, p.noise_level, sub_seed(p.seed, 1))?;
    let mask = disk_mask(p.size);
    let (spec, fit) = match p.q1 {
        Some(spec) => (spec, None),
        None => {
            let fit = learn_matern(&samples, problem.grid, Some(&mask), p.probes, sub_seed(p.seed, 2))?;
            (KernelSpec::matern(fit.nu, fit.ell), Some(fit))
        }
    };
    let kernel: OpRef = Arc::new(build_kernel_operator(spec, problem.grid)?);
    let q1: OpRef = Arc::new(MaskedOperator::from_mask(kernel, &mask)?);
    let q2: OpRef = Arc::new(SampleCovarianceOperator::new(&samples));
    Ok(Experiment {
        q1_desc: format!("{} restricted to the disk mask", describe(&spec)),
        q2_desc: format!("sample covariance of {} training images", p.n_training),
        mean: samples.mean.clone(),
        a: problem.a_op(),
        grid: problem.grid,
        truth: Some(problem.s_true),
        meta: problem.meta,
        data,
        sigma,
        q1,
        q2,
        samples: Some(samples),
        fit,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrosswellPreset {
    pub size: usize,
    pub n_sources: usize,
    pub n_receivers: usize,
    pub noise_level: f64,
    pub q1: KernelSpec,
    pub q2: KernelSpec,
    pub seed: u64,
}

impl Default for CrosswellPreset {
    fn default() -> Self {
        Self {
            size: 64,
            n_sources: 10,
            n_receivers: 20,
            noise_level: 0.01,
            q1: KernelSpec::matern(0.5, 0.25),
            q2: KernelSpec::rational_quadratic(2.0, 0.1),
            seed: 0,
        }
    }
}

/// Crosswell setup with zero prior mean and two kernel priors.
pub fn crosswell_experiment(p: &CrosswellPreset) -> Result<Experiment> {
    let problem = crosswell_tomo(p.size, p.n_sources, p.n_receivers, p.seed)?;
    let (data, sigma) = add_noise(&problem.b_clean, p.noise_level, sub_seed(p.seed, 1))?;
    let q1: OpRef = Arc::new(build_kernel_operator(p.q1, problem.grid)?);
    let q2: OpRef = Arc::new(build_kernel_operator(p.q2, problem.grid)?);
    Ok(Experiment {
        mean: DVector::zeros(problem.n()),
        a: problem.a_op(),
        grid: problem.grid,
        truth: Some(problem.s_true),
        meta: problem.meta,
        data,
        sigma,
        q1,
        q1_desc: describe(&p.q1),
        q2,
        q2_desc: describe(&p.q2),
        samples: None,
        fit: None,
    })
}

pub fn describe(spec: &KernelSpec) -> String {
    format!("{:?}(nu={}, ell={})", spec.family, spec.nu, spec.ell).to_lowercase()
}
