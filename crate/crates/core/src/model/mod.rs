//! Dense neural classifier: a one-hidden-layer perceptron with a rectifier
//! hidden layer and softmax output, trained with plain mini-batch SGD.
//!
//! Gradients are derived by hand; [`gradcheck`] verifies them against
//! central finite differences of the loss.

mod matrix;
mod mlp;
mod params;
mod train;

pub mod gradcheck;

pub use matrix::Matrix;
pub use mlp::{backward, cross_entropy, forward, softmax_rows, Gradients, MlpModel, ModelDims};
pub use params::{apply_delta, model_delta, sgd_step, LayerShape, Layout, ParamVector};
pub use train::{evaluate, train_local, Evaluation, TrainConfig, TrainStats};
