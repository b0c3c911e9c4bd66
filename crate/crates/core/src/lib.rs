pub mod config;
pub mod error;
pub mod fingerprint;
pub mod noise;
pub mod profile;
pub mod quad;
pub mod reaction;
pub mod regularity;
pub mod runner;
pub mod semigroup;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Result, SpdeError};
