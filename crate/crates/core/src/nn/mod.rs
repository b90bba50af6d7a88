//! The fixed dual-branch CNN: tensor ops, forward pass, exact backprop, SGD,
//! and a finite-difference gradient checker.

mod gradcheck;
mod loss;
mod model;
pub mod ops;
mod train;

pub use gradcheck::{compare_gradients, grad_check};
pub use loss::softmax_cross_entropy;
pub use model::{argmax, forward, predict, Arch, Forward, ModelParams, CONV_CHANNELS, KERNEL_A, KERNEL_B};
pub use train::{backprop_batch, loss_and_gradients, Example, Sgd, TrainConfig};
