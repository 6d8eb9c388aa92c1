//! JSON run configurations. Every document rejects unknown keys; command
//! line flags are applied on top of the file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Caps;
use crate::downstream::ProbeConfig;
use crate::error::{Error, Result};
use crate::model::gradcheck::CheckDims;
use crate::model::Variant;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format("config", format!("{}: {e}", p.display())))
        }
    }
}

pub fn require<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("missing required setting `{name}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildVocabConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub max_size: usize,
    pub min_count: u64,
}

impl Default for BuildVocabConfig {
    fn default() -> Self {
        BuildVocabConfig {
            input: None,
            output: None,
            max_size: 50_000,
            min_count: 1,
        }
    }
}

impl BuildVocabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_size == 0 {
            return Err(Error::Invalid("max_size must be at least 1".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Invalid("min_count must be at least 1".into()));
        }
        require(&self.input, "input")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    /// First target-window timestamp.
    pub boundary: Option<i64>,
    pub caps: Caps,
    pub train: TrainConfig,
    pub resume: Option<PathBuf>,
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.corpus, "corpus")?;
        require(&self.vocab, "vocab")?;
        if self.boundary.is_none() {
            return Err(Error::Invalid("missing required setting `boundary`".into()));
        }
        self.caps.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// When set, only events before this timestamp are encoded.
    pub boundary: Option<i64>,
    pub caps: Caps,
    /// Defaults to the variant recorded next to the checkpoint.
    pub variant: Option<Variant>,
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.checkpoint, "checkpoint")?;
        require(&self.input, "input")?;
        self.caps.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub probe: ProbeConfig,
    /// Optional `user_id,label,pc1,pc2,pc3` export.
    pub pca_out: Option<PathBuf>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        require(&self.embeddings, "embeddings")?;
        require(&self.labels, "labels")?;
        self.probe.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRunConfig {
    pub synth: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub vocab_size: usize,
    pub hops: usize,
    pub behaviors: usize,
    pub target_words: usize,
    pub variant: Variant,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let d = CheckDims::default();
        GradcheckConfig {
            dim: d.dim,
            vocab_size: d.vocab,
            hops: d.hops,
            behaviors: d.behaviors,
            target_words: d.target_words,
            variant: Variant::Sumn,
            step: 1e-4,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

impl GradcheckConfig {
    pub fn dims(&self) -> CheckDims {
        CheckDims {
            dim: self.dim,
            vocab: self.vocab_size,
            hops: self.hops,
            behaviors: self.behaviors,
            target_words: self.target_words,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hops == 0 || self.vocab_size == 0 || self.behaviors == 0 {
            return Err(Error::Invalid("gradcheck dimensions must be at least 1".into()));
        }
        if self.target_words == 0 || self.target_words > self.vocab_size {
            return Err(Error::Invalid("target_words must lie in 1..=vocab_size".into()));
        }
        if !positive(self.step) || !positive(self.tolerance) {
            return Err(Error::Invalid("step and tolerance must be positive".into()));
        }
        Ok(())
    }
}
