//! Mini-batch training with Adam, validation-loss early stopping and
//! resumable state.

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TrainingSample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{forward_loss, loss_and_grad, Aggregation, ModelParams, Variant, TENSOR_NAMES};
use crate::numerics::{adam_step, AdamConfig, AdamState, Rng};

/// Samples per gradient-reduction chunk. Fixed so reductions do not depend
/// on the thread count.
const GRAD_CHUNK: usize = 8;
const SPLIT_STREAM: u64 = 0x5eed_0001;
const EPOCH_STREAM: u64 = 0x5eed_1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "d")]
    pub dim: usize,
    pub hops: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Optional global gradient-norm clip.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 256,
            hops: 5,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            min_delta: 1e-4,
            val_fraction: 0.05,
            seed: 0,
            variant: Variant::Sumn,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.dim == 0 || self.hops == 0 {
            return bad("d and hops must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must lie in (0, 0.5)");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.min_delta < 0.0 {
            return bad("min_delta must be non-negative");
        }
        if matches!(self.max_grad_norm, Some(n) if n.is_nan() || n <= 0.0) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    /// Same run except for the stopping budget.
    fn compatible_with(&self, other: &TrainConfig) -> bool {
        let strip = |c: &TrainConfig| TrainConfig {
            max_epochs: 0,
            patience: 0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

/// The variant's view of a sample: reconstruction targets for AE, the
/// sample itself otherwise.
pub fn apply_variant(variant: Variant, sample: &TrainingSample) -> Cow<'_, TrainingSample> {
    match variant {
        Variant::Ae => Cow::Owned(sample.autoencoder()),
        Variant::Sumn | Variant::Mean | Variant::Max => Cow::Borrowed(sample),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Last epoch run.
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_checkpoint: Option<std::path::PathBuf>,
}

impl TrainReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Arithmetic mean of per-sample total losses, summed in sample order.
pub fn evaluate_val(
    params: &ModelParams<f32>,
    samples: &[TrainingSample],
    agg: Aggregation,
    exec: Execution,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let losses = exec.map(samples, |s| forward_loss(s, params, agg).map(|l| l.total));
    let mut sum = 0.0f64;
    for l in losses {
        sum += l?;
    }
    Ok(sum / samples.len() as f64)
}

struct BatchAcc {
    grads: ModelParams<f32>,
    loss: f64,
    error: Option<Error>,
}

/// Mean gradient and summed loss of a batch.
pub fn batch_gradient(
    params: &ModelParams<f32>,
    batch: &[&TrainingSample],
    agg: Aggregation,
    exec: Execution,
    deterministic: bool,
) -> Result<(ModelParams<f32>, f64)> {
    let scale = 1.0 / batch.len() as f32;
    let init = || BatchAcc {
        grads: params.zeros_like(),
        loss: 0.0,
        error: None,
    };
    let fold = |acc: &mut BatchAcc, s: &&TrainingSample| {
        if acc.error.is_some() {
            return;
        }
        match loss_and_grad(s, params, agg, &mut acc.grads, scale) {
            Ok(l) => acc.loss += l.total,
            Err(e) => acc.error = Some(e),
        }
    };
    let merge = |a: &mut BatchAcc, b: BatchAcc| {
        a.grads.add_assign(&b.grads);
        a.loss += b.loss;
        if a.error.is_none() {
            a.error = b.error;
        }
    };
    let acc = if deterministic {
        exec.reduce_chunks(batch, GRAD_CHUNK, init, fold, merge)
    } else {
        exec.reduce_any(batch, init, fold, merge)
    };
    match acc.error {
        Some(e) => Err(e),
        None => Ok((acc.grads, acc.loss)),
    }
}

/// Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelAdam {
    pub states: Vec<AdamState<f32>>,
    pub config: AdamConfig,
}

impl ModelAdam {
    pub fn new(params: &ModelParams<f32>, lr: f64) -> Self {
        ModelAdam {
            states: params.tensors().iter().map(|t| AdamState::new(t.len())).collect(),
            config: AdamConfig::with_lr(lr),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>) -> Result<()> {
        for ((p, g), s) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.states) {
            adam_step(p, g, s, &self.config)?;
        }
        Ok(())
    }
}

/// Deterministic train/validation partition: `(train, val)` index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Invalid(format!("training needs at least 2 samples, got {n}")));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::substream(seed, SPLIT_STREAM).shuffle(&mut idx);
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    Ok((idx, val))
}

/// A training run in progress; serializable between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub adam: ModelAdam,
    pub epoch: usize,
    pub initial_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_params: ModelParams<f32>,
    pub stale_epochs: usize,
}

impl Trainer {
    /// Fresh parameters; `samples` are used only for the initial validation loss.
    pub fn new(config: TrainConfig, vocab_size: usize, data: &Dataset, exec: Execution) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(vocab_size, config.dim, config.hops, config.seed)?;
        let initial_val_loss = evaluate_val(&params, &data.val, config.variant.aggregation(), exec)?;
        Ok(Trainer {
            adam: ModelAdam::new(&params, config.learning_rate),
            best_params: params.clone(),
            params,
            epoch: 0,
            initial_val_loss,
            history: Vec::new(),
            best_epoch: 0,
            best_val_loss: initial_val_loss,
            stale_epochs: 0,
            config,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.max_epochs || self.stale_epochs >= self.config.patience
    }

    /// One pass over the training split followed by validation.
    pub fn run_epoch(&mut self, data: &Dataset, exec: Execution, deterministic: bool) -> Result<EpochRecord> {
        let agg = self.config.variant.aggregation();
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        Rng::substream(self.config.seed, EPOCH_STREAM + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let (mut grads, loss) = batch_gradient(&self.params, &batch, agg, exec, deterministic)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(self.diagnostics(epoch, b, loss, &grads)));
            }
            if let Some(max) = self.config.max_grad_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            self.adam.step(&mut self.params, &grads)?;
            loss_sum += loss;
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let val_loss = evaluate_val(&self.params, &data.val, agg, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} after epoch {epoch}")));
        }
        if val_loss < self.best_val_loss - self.config.min_delta {
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.best_params = self.params.clone();
        }
        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        self.history.push(record);
        Ok(record)
    }

    fn diagnostics(&self, epoch: usize, batch: usize, loss: f64, grads: &ModelParams<f32>) -> String {
        let norms = |p: &ModelParams<f32>| {
            TENSOR_NAMES
                .iter()
                .zip(p.norms())
                .map(|(n, v)| format!("{n}={v:.4e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "epoch {epoch} batch {batch}: loss={loss}; parameter norms: {}; gradient norms: {}",
            norms(&self.params),
            norms(grads)
        )
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            initial_val_loss: self.initial_val_loss,
            epochs: self.history.clone(),
            stopped_epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            best_checkpoint: None,
        }
    }

    /// Continues with a possibly larger epoch budget.
    pub fn with_budget(mut self, config: &TrainConfig) -> Result<Self> {
        if !self.config.compatible_with(config) {
            return Err(Error::Invalid("resume config differs from the saved run".into()));
        }
        self.config.max_epochs = config.max_epochs;
        self.config.patience = config.patience;
        Ok(self)
    }
}

/// Train/validation partition with the variant applied.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
}

impl Dataset {
    pub fn new(samples: &[TrainingSample], config: &TrainConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("empty dataset".into()));
        }
        let (train, val) = split_indices(samples.len(), config.val_fraction, config.seed)?;
        let pick = |idx: Vec<usize>| {
            idx.into_iter()
                .map(|i| apply_variant(config.variant, &samples[i]).into_owned())
                .collect()
        };
        Ok(Dataset {
            train: pick(train),
            val: pick(val),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: ModelParams<f32>,
    pub last: ModelParams<f32>,
}

/// Runs to completion. `on_epoch` sees the trainer after every epoch (used
/// to persist resumable state).
pub fn train_with(
    mut trainer: Trainer,
    data: &Dataset,
    exec: Execution,
    deterministic: bool,
    mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
) -> Result<TrainOutcome> {
    while !trainer.finished() {
        trainer.run_epoch(data, exec, deterministic)?;
        on_epoch(&trainer)?;
    }
    Ok(TrainOutcome {
        report: trainer.report(),
        best: trainer.best_params,
        last: trainer.params,
    })
}

pub fn train(
    config: &TrainConfig,
    samples: &[TrainingSample],
    vocab_size: usize,
    exec: Execution,
    deterministic: bool,
) -> Result<TrainOutcome> {
    let data = Dataset::new(samples, config)?;
    let trainer = Trainer::new(config.clone(), vocab_size, &data, exec)?;
    train_with(trainer, &data, exec, deterministic, |_| Ok(()))
}

// Resumable state file
//
// "SUMNTRN1", u32 config-json length, config json, u32 vocab size,
// u64 epoch, f64 initial val, u64 best epoch, f64 best val, u64 stale,
// u64 history length + (u64 epoch, f64 train, f64 val) records,
// current params, best params, per tensor (u64 t, m, v), CRC-32.

const STATE_MAGIC: &[u8; 8] = b"SUMNTRN1";

impl Trainer {
    pub fn to_state_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.params.vocab_size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.initial_val_loss.to_le_bytes());
        out.extend_from_slice(&(self.best_epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        out.extend_from_slice(&(self.stale_epochs as u64).to_le_bytes());
        out.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for r in &self.history {
            out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            out.extend_from_slice(&r.train_loss.to_le_bytes());
            out.extend_from_slice(&r.val_loss.to_le_bytes());
        }
        let put = |out: &mut Vec<u8>, xs: &[f32]| xs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put(&mut out, &self.params.flatten());
        put(&mut out, &self.best_params.flatten());
        for s in &self.adam.states {
            out.extend_from_slice(&s.t.to_le_bytes());
            put(&mut out, &s.m);
            put(&mut out, &s.v);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < STATE_MAGIC.len() + 8 || &bytes[..8] != STATE_MAGIC {
            return Err(Error::format("training state", "missing SUMNTRN1 header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 8 };
        let cfg_len = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(cfg_len)?)?;
        let vocab_size = r.u32()? as usize;
        let epoch = r.u64()? as usize;
        let initial_val_loss = r.f64()?;
        let best_epoch = r.u64()? as usize;
        let best_val_loss = r.f64()?;
        let stale_epochs = r.u64()? as usize;
        let n_hist = r.u64()? as usize;
        let mut history = Vec::with_capacity(n_hist.min(1 << 16));
        for _ in 0..n_hist {
            history.push(EpochRecord {
                epoch: r.u64()? as usize,
                train_loss: r.f64()?,
                val_loss: r.f64()?,
            });
        }
        let mut params = ModelParams::<f32>::zeros(vocab_size, config.dim, config.hops);
        params.assign_flat(&r.f32s(params.num_values())?)?;
        let mut best_params = params.zeros_like();
        best_params.assign_flat(&r.f32s(params.num_values())?)?;
        let mut adam = ModelAdam::new(&params, config.learning_rate);
        for s in &mut adam.states {
            s.t = r.u64()?;
            let n = s.m.len();
            s.m = r.f32s(n)?;
            s.v = r.f32s(n)?;
        }
        if r.pos != body.len() {
            return Err(Error::format("training state", "trailing bytes"));
        }
        Ok(Trainer {
            config,
            params,
            adam,
            epoch,
            initial_val_loss,
            history,
            best_epoch,
            best_val_loss,
            best_params,
            stale_epochs,
        })
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_state_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_state(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_state_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("training state", "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
