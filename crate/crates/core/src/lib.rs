//! Universal user representations learned from raw behavior logs.
//!
//! A user's historical behaviors (short texts) are encoded as mean word
//! embeddings, aggregated with a multi-hop attention memory, and trained to
//! predict the log-normalized word distribution of the user's *later*
//! behaviors. The resulting vectors are evaluated with frozen-feature MLP
//! probes.
//!
//! Module map:
//!
//! * [`corpus`]: JSONL ingestion, tokenization, vocabulary, history/target split.
//! * [`numerics`]: dense matrix ops with hand-written gradients, Adam, gradient checking.
//! * [`model`]: encoder, multi-hop aggregation, prediction head, loss, checkpoints.
//! * [`trainer`]: mini-batch training with early stopping and resumable state.
//! * [`downstream`]: MLP probe, AUC/accuracy, PCA.
//! * [`synth`]: synthetic corpora with planted user factors.
//! * [`exec`]: data-parallel helpers with a sequential fallback.
//! * [`cli`]: the `sumn` command-line front end.

pub mod cli;
pub mod corpus;
pub mod downstream;
pub mod error;
pub mod exec;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
