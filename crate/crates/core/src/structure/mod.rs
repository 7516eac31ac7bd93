//! Structure-inducing estimators: channel selection, block Hankel operators,
//! nuclear-norm regularization and the stable-Hankel prior.

mod ard;
mod hankel;
mod nuclear;
mod stable_hankel;

pub use ard::{ard_mimo_identify, ArdConfig, ArdFit};
pub use hankel::{hankel, hankel_adjoint, HankelMap};
pub use nuclear::{nuclear_norm_identify, NuclearNormConfig, NuclearNormFit};
pub use stable_hankel::{
    hankel_projection_grams, kernel_precision, stable_hankel_identify, stable_hankel_penalty, stable_hankel_precision,
    StableHankelConfig, StableHankelFit, StableHankelSpec,
};
