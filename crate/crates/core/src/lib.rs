//! Tree-structured LSTM sentence encoders and the tooling needed to compare
//! composition layouts: a small reverse-mode autodiff engine, binary tree
//! builders and a bracketed-tree reader, linear and tree LSTM encoders,
//! pooling, task heads, word saliency, and a training/evaluation harness.

pub mod autodiff;
pub mod config;
pub mod encoders;
mod error;
pub mod harness;
pub mod heads;
pub mod model;
pub mod pooling;
pub mod saliency;
pub mod trees;
pub mod vocab;

pub use autodiff::{
    grad_check, Gradients, Init, ParamSet, ParamVars, Precision, Real, Tape, Tensor, Var,
};

pub use encoders::{EncoderConfig, LayoutKind, LeafRnn};
pub use error::{Error, Result};
pub use model::{Batch, ForwardCtx, Mode, Model, ModelConfig, Padded, Prediction, TaskKind};
pub use pooling::Pooling;
pub use trees::{DepthStats, NodeRef, TreeLayout};
