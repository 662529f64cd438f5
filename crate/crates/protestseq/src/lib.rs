//! Recurrent sequence models for protest event detection.
//!
//! Two architectures share one multitask training loop:
//!
//! * a bidirectional-LSTM classifier with independent document and sentence
//!   heads over a shared recurrent encoder, and
//! * a bidirectional-GRU tagger that keeps those two heads and adds a third
//!   branch emitting per-token IOB role tags through a softmax GRU.
//!
//! Everything below the model layer is hand-rolled on `ndarray`: the cells,
//! backpropagation through time, RMSProp, and the gradient checker, so the
//! whole training path is deterministic given a seed and checkable against
//! finite differences.
//!
//! The `protestseq` binary wraps the library: `synth` builds corpora, `train`
//! fits either architecture, `evaluate`/`predict` run saved checkpoints, and
//! `gradcheck` re-verifies the analytic gradients end to end.

pub mod cli;
pub mod corpus;
pub mod dataio;
pub mod embeddings;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;

/// Token reserved for padding rows; embeds to the zero vector, masked out of
/// pooling and losses.
pub const PAD_TOKEN: &str = "<pad>";
