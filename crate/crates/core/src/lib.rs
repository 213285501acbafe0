pub mod error;
pub mod experiments;
pub mod hybrid;
pub mod io;
pub mod learn;
pub mod mixgk;
pub mod operators;
pub mod optim;
pub mod params;
pub mod projected;
pub mod testproblems;

pub use error::{Error, Result};
