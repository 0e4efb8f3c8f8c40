pub mod environment;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod gambler;
pub mod kernel;
pub mod lattice;
pub mod map;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
