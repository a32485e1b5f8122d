//! Restoration networks, adversarial attacks and training, synthetic
//! degradations, image metrics and experiment orchestration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nets;
pub mod rational;
pub mod registry;
pub mod train;

pub use error::{CoreError, Result};
pub use rational::Rational;
pub use registry::Registry;
