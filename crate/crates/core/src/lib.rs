pub mod conditioning;
pub mod error;
pub mod inference;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod schedule;
pub mod synthworld;
pub mod training;

pub use error::{Error, Result};
