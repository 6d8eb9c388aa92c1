//! The user-modeling network.
//!
//! * behavior encoder: mean of word embeddings per behavior;
//! * multi-hop aggregation: keys/values `LN(W·e)`, attention driven by the
//!   current user vector, a memory that accumulates attended values, and a
//!   layer-normalized readout per hop;
//! * prediction head: `softmax(O · ReLU(W_o · u))` over the vocabulary,
//!   scored against the log-count-normalized target distribution.
//!
//! Training applies the loss to every hop and averages; inference keeps the
//! last hop only.

mod checkpoint;
pub mod gradcheck;
mod network;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    aggregate, aggregate_with, embed_behaviors, forward_loss, infer, infer_with, loss_and_grad,
    predict_distribution, target_distribution, HopTrace, LossBreakdown,
};
pub use params::{ModelParams, TENSOR_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training variants: the full model and the three ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    #[default]
    Sumn,
    /// Targets are the history itself.
    Ae,
    /// Mean of values replaces multi-hop attention.
    Mean,
    /// Entrywise max of values replaces multi-hop attention.
    Max,
}

/// How behavior embeddings become a user vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    MultiHop,
    Mean,
    Max,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sumn, Variant::Ae, Variant::Mean, Variant::Max];

    pub fn aggregation(self) -> Aggregation {
        match self {
            Variant::Sumn | Variant::Ae => Aggregation::MultiHop,
            Variant::Mean => Aggregation::Mean,
            Variant::Max => Aggregation::Max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sumn => "SUMN",
            Variant::Ae => "AE",
            Variant::Mean => "MEAN",
            Variant::Max => "MAX",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUMN" => Ok(Variant::Sumn),
            "AE" => Ok(Variant::Ae),
            "MEAN" => Ok(Variant::Mean),
            "MAX" => Ok(Variant::Max),
            other => Err(Error::Invalid(format!("unknown variant {other:?}"))),
        }
    }
}
