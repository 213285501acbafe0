//! Test problem generators.

pub mod images;
pub mod synthetic;
pub mod tomo;

pub use images::{disk_mask, gen_training_images, FreckleSpec, TrainingSet};
pub use synthetic::{random_dense_problem, DenseProblem};
pub use tomo::{add_noise, crosswell_tomo, ray_lengths, spherical_operator, spherical_tomo, TomoProblem};
