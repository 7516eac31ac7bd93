//! Kernel-based identification of linear systems.
//!
//! The crate estimates finite impulse responses of multi-input multi-output
//! systems with Gaussian priors whose hyperparameters are tuned by marginal
//! likelihood, and compares those estimates with least squares, classical
//! order selection and Stein-type shrinkage rules.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod compound;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod structure;

pub use error::{Error, Result};
