//! Subcommand implementations. Each validates its configuration before
//! reading any input.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{build_samples, build_vocab_from_logs, encode_history, read_user_logs, Caps, UserLog, Vocabulary};
use crate::downstream::{join_labels, pca_project, read_embeddings, read_labels, train_probe, write_embeddings, write_pca_csv, Embedding, ProbeMetrics};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::gradcheck::check_model_gradients;
use crate::model::{infer_with, Aggregation, Checkpoint, Variant};
use crate::numerics::Matrix;
use crate::synth::{gen_corpus, write_corpus};
use crate::trainer::{train_with, Dataset, TrainReport, Trainer};

use super::config::{require, BuildVocabConfig, EvalConfig, GradcheckConfig, InferConfig, SynthRunConfig, TrainRunConfig};

/// Settings shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Context {
    pub out_dir: PathBuf,
    pub exec: Execution,
    pub deterministic: bool,
}

impl Context {
    fn prepare(&self, name: &str, resolved: &impl Serialize) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(format!("{name}.config.json"));
        write_json(&path, resolved)
    }
}

/// What a command reports back: human-readable lines and whether a check failed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub check_failed: bool,
}

impl Outcome {
    fn ok(lines: Vec<String>) -> Self {
        Outcome {
            lines,
            check_failed: false,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn build_vocab(cfg: &BuildVocabConfig, ctx: &Context) -> Result<Outcome> {
    cfg.validate()?;
    let input = require(&cfg.input, "input")?;
    let output = cfg.output.clone().unwrap_or_else(|| ctx.out_dir.join("vocab.txt"));
    ctx.prepare("build-vocab", cfg)?;
    let logs = read_user_logs(input)?;
    let vocab = build_vocab_from_logs(&logs, cfg.max_size, cfg.min_count, ctx.exec)?;
    vocab.save(&output)?;
    Ok(Outcome::ok(vec![format!(
        "wrote {} words from {} users to {}",
        vocab.len(),
        logs.len(),
        output.display()
    )]))
}

/// Stored next to a checkpoint as `<checkpoint>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub variant: Variant,
    pub dim: usize,
    pub hops: usize,
    pub vocab_size: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn checkpoint_name(variant: Variant) -> String {
    format!("model-{}.ckpt", variant.name())
}

pub const STATE_FILE: &str = "train_state.bin";
pub const CURVE_FILE: &str = "curve.csv";

pub fn train(cfg: &TrainRunConfig, ctx: &Context) -> Result<Outcome> {
    cfg.validate()?;
    let corpus = require(&cfg.corpus, "corpus")?;
    let vocab_path = require(&cfg.vocab, "vocab")?;
    let boundary = cfg.boundary.expect("validated");
    ctx.prepare("train", cfg)?;

    let vocab = Vocabulary::load(vocab_path)?;
    let logs = read_user_logs(corpus)?;
    let samples = build_samples(&logs, boundary, &vocab, cfg.caps, ctx.exec);
    if samples.is_empty() {
        return Err(Error::Invalid(format!(
            "no user in {} has in-vocabulary behaviors on both sides of {boundary}",
            corpus.display()
        )));
    }
    let data = Dataset::new(&samples, &cfg.train)?;
    let trainer = match &cfg.resume {
        Some(state) => {
            let t = Trainer::load_state(state)?.with_budget(&cfg.train)?;
            if t.params.vocab_size() != vocab.len() {
                return Err(Error::shape("resumed vocabulary", vocab.len(), t.params.vocab_size()));
            }
            t
        }
        None => Trainer::new(cfg.train.clone(), vocab.len(), &data, ctx.exec)?,
    };
    let state_path = ctx.out_dir.join(STATE_FILE);
    let outcome = train_with(trainer, &data, ctx.exec, ctx.deterministic, |t| {
        if let Some(r) = t.history.last() {
            eprintln!("epoch {} train_loss {:.6} val_loss {:.6}", r.epoch, r.train_loss, r.val_loss);
        }
        t.save_state(&state_path)
    })?;

    let ckpt_path = ctx.out_dir.join(checkpoint_name(cfg.train.variant));
    Checkpoint::new(outcome.best, vocab)?.save(&ckpt_path)?;
    let mut report: TrainReport = outcome.report;
    report.best_checkpoint = Some(ckpt_path.clone());
    let info = CheckpointInfo {
        variant: cfg.train.variant,
        dim: cfg.train.dim,
        hops: cfg.train.hops,
        vocab_size: outcome.last.vocab_size(),
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
    };
    write_json(&sidecar_path(&ckpt_path), &info)?;
    let curve = ctx.out_dir.join(CURVE_FILE);
    std::fs::write(&curve, report.curve_csv()).map_err(|e| Error::io(&curve, e))?;
    write_json(&ctx.out_dir.join("train_report.json"), &report)?;
    Ok(Outcome::ok(vec![
        format!(
            "{} samples ({} train, {} validation); initial val_loss {:.6}",
            samples.len(),
            data.train.len(),
            data.val.len(),
            report.initial_val_loss
        ),
        format!(
            "stopped after epoch {}; best val_loss {:.6} at epoch {}",
            report.stopped_epoch, report.best_val_loss, report.best_epoch
        ),
        format!("checkpoint {}", ckpt_path.display()),
    ]))
}

/// Embeds every user with at least one in-vocabulary behavior; returns the
/// embeddings and the number of users skipped.
pub fn embed_logs(
    logs: &[UserLog],
    checkpoint: &Checkpoint,
    agg: Aggregation,
    boundary: Option<i64>,
    caps: Caps,
    exec: Execution,
) -> Result<(Vec<Embedding>, usize)> {
    let results = exec.map(logs, |log| {
        let events = log.events.iter().filter(|e| boundary.is_none_or(|b| e.ts < b));
        let history = encode_history(events, &checkpoint.vocab, caps);
        if history.is_empty() {
            return Ok(None);
        }
        infer_with(&history, &checkpoint.params, agg).map(|vector| {
            Some(Embedding {
                user_id: log.user_id.clone(),
                vector,
            })
        })
    });
    let mut out = Vec::with_capacity(logs.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(e) => out.push(e),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

pub fn infer(cfg: &InferConfig, ctx: &Context) -> Result<Outcome> {
    cfg.validate()?;
    let ckpt_path = require(&cfg.checkpoint, "checkpoint")?;
    let input = require(&cfg.input, "input")?;
    let output = cfg.output.clone().unwrap_or_else(|| ctx.out_dir.join("embeddings.jsonl"));
    let variant = match cfg.variant {
        Some(v) => v,
        None => {
            let side = sidecar_path(ckpt_path);
            match std::fs::read_to_string(&side) {
                Ok(text) => serde_json::from_str::<CheckpointInfo>(&text)
                    .map_err(|e| Error::format("checkpoint sidecar", format!("{}: {e}", side.display())))?
                    .variant,
                Err(_) => Variant::Sumn,
            }
        }
    };
    ctx.prepare("infer", cfg)?;
    let checkpoint = Checkpoint::load(ckpt_path)?;
    let logs = read_user_logs(input)?;
    let (embeddings, skipped) = embed_logs(&logs, &checkpoint, variant.aggregation(), cfg.boundary, cfg.caps, ctx.exec)?;
    write_embeddings(&output, &embeddings)?;
    let mut lines = vec![format!(
        "wrote {} embeddings ({variant}, d={}) to {}",
        embeddings.len(),
        checkpoint.params.dim(),
        output.display()
    )];
    if skipped > 0 {
        lines.push(format!("warning: skipped {skipped} users with no in-vocabulary behaviors"));
    }
    Ok(Outcome::ok(lines))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: ProbeMetrics,
    pub pca_variances: Option<Vec<f64>>,
}

pub fn eval(cfg: &EvalConfig, ctx: &Context) -> Result<Outcome> {
    cfg.validate()?;
    let emb_path = require(&cfg.embeddings, "embeddings")?;
    let labels_path = require(&cfg.labels, "labels")?;
    ctx.prepare("eval", cfg)?;
    let data = join_labels(&read_embeddings(emb_path)?, &read_labels(labels_path)?)?;
    let (_, metrics) = train_probe(&data, &cfg.probe, ctx.exec)?;
    let mut pca_variances = None;
    if let Some(out) = &cfg.pca_out {
        let rows: Vec<Vec<f64>> = data.iter().map(|e| e.vector.clone()).collect();
        let x = Matrix::from_rows(&rows)?;
        let k = 3.min(x.rows()).min(x.cols());
        let pca = pca_project(&x, k)?;
        write_pca_csv(out, &data, &pca.projections)?;
        pca_variances = Some(pca.variances);
    }
    let report = EvalReport {
        metrics,
        pca_variances,
    };
    write_json(&ctx.out_dir.join("metrics.json"), &report)?;
    Ok(Outcome::ok(vec![serde_json::to_string(&report.metrics)?]))
}

pub fn synth(cfg: &SynthRunConfig, ctx: &Context) -> Result<Outcome> {
    cfg.synth.validate()?;
    ctx.prepare("synth", cfg)?;
    let corpus = gen_corpus(&cfg.synth, ctx.exec)?;
    let written = write_corpus(&ctx.out_dir, &corpus)?;
    let mut lines = vec![format!(
        "generated {} users; history before {}, targets from {}",
        corpus.logs.len(),
        corpus.boundary,
        corpus.boundary
    )];
    lines.extend(written.iter().map(|p| format!("wrote {}", p.display())));
    Ok(Outcome::ok(lines))
}

pub fn gradcheck(cfg: &GradcheckConfig, inject_fault: bool, ctx: &Context) -> Result<Outcome> {
    cfg.validate()?;
    ctx.prepare("gradcheck", cfg)?;
    let report = check_model_gradients(cfg.dims(), cfg.variant.aggregation(), cfg.seed, cfg.step, inject_fault)?;
    let mut lines: Vec<String> = report
        .per_tensor
        .iter()
        .map(|(name, c)| format!("{name:<16} max_rel_error {:.3e} ({} coords)", c.max_rel_error, c.checked))
        .collect();
    let passed = report.max_rel_error < cfg.tolerance;
    lines.push(format!(
        "max relative error {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_error,
        cfg.tolerance,
        if passed { "PASS" } else { "FAIL" }
    ));
    Ok(Outcome {
        lines,
        check_failed: !passed,
    })
}
