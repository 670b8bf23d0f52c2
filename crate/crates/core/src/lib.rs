//! Neural mixture language models: heterogeneous feedforward, recurrent and
//! LSTM components over a shared word embedding, fused by a ReLU mixture
//! layer under one softmax.

pub mod components;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod mixture;
pub mod training;

pub use error::{Error, Result};
