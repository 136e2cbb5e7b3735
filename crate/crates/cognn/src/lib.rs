//! Cooperative graph neural networks on a self-contained reverse-mode tape.
//!
//! Each node of a graph picks one of four actions per layer — Standard,
//! Listen, Broadcast, Isolate — via a straight-through Gumbel-softmax, and
//! messages flow only along edges whose endpoints agree (sender broadcasts,
//! receiver listens). The action policy and the message-passing weights are
//! trained jointly by backpropagation.
//!
//! Layout:
//! - [`tensor`]: dense f64 tensors, the autodiff tape, Adam, initializers
//! - [`graph`]: undirected graphs, action-gated directed edge sets, aggregation
//! - [`layers`]: message-passing layers, MLPs, graph pooling
//! - [`model`]: the cooperative model, action sampling, checkpoints
//! - [`datagen`]: synthetic benchmark tasks and a 1-WL oracle
//! - [`harness`]: training loop, evaluation protocols, instrumentation
//! - [`cli`]: the `cognn` command-line front end

pub mod cli;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
