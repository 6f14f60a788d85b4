//! Vertical ground reaction force and foot contact estimation from skeletal motion.

pub mod augment;
pub mod baselines;
pub mod cleanup;
pub mod container;
pub mod error;
pub mod eval;
pub mod grf;
pub mod kinematics;
pub mod nn;
pub mod perturb;
pub mod quat;
pub mod rng;
pub mod sync;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use grf::ContactParams;
pub use quat::Quat;
pub use types::*;
