//! Multi-scan multi-sensor GLMB posterior computation by Gibbs sampling.

pub mod assignment;
pub mod error;
pub mod gibbs;
pub mod kinematics;
pub mod metrics;
pub mod numeric;
pub mod oracle;
pub mod simulator;
pub mod smoother;
pub mod types;
pub mod weights;

pub use error::{Error, Result};
