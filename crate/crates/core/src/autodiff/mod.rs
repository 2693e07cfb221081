//! Reverse-mode differentiation over dense matrices, the LSTM-attention
//! regressor built on it, optimizers, and finite-difference verification.

mod graph;
mod gradcheck;
mod model;
pub(crate) mod model_io;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, ModelObjective, Objective};
pub use graph::{Graph, NodeId};
pub use model::{
    mse_loss, Activation, Architecture, AttentionHead, DenseLayer, DenseSpec, Forward, LstmCell,
    ModelParts, PredictiveModel,
};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION};
pub use optim::{adam_step, sgd_step, AdamState, OptimizerState};
pub use tensor::Tensor;
