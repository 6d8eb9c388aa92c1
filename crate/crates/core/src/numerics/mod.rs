//! Dense numeric core: row-major matrices, forward ops with hand-derived
//! gradients, Adam, seeded randomness and a finite-difference checker.
//!
//! Everything is generic over [`Scalar`] so the same code path runs in
//! single precision for training and in double precision for gradient
//! verification.

mod adam;
mod gradcheck;
mod matrix;
mod ops;
mod rng;
mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use matrix::Matrix;
pub use ops::{
    cross_entropy, dot, layer_norm, layer_norm_backward, linear, linear_backward, mean_rows, relu,
    relu_backward, softmax, softmax_backward, LayerNorm, LayerNormCache, LinearGrads, LN_EPS, PROB_FLOOR,
};
pub use rng::Rng;
pub use scalar::Scalar;
