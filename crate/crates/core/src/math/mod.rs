//! Numeric substrate: dense matrices, activations, the weighted loss,
//! Adam with decoupled weight decay, He initialisation and a central
//! finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod init;
mod matrix;
mod ops;

pub use adam::{adam_step, AdamHyper, Param, ParamSet};
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use init::he_init;
pub use matrix::DenseMatrix;
pub use ops::{
    balance_weights, masked_softmax, sigmoid, Objective, weighted_cross_entropy, weighted_cross_entropy_grad,
    PROB_CLAMP,
};
