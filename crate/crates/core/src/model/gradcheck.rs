//! Full-model finite-difference verification on a small random instance.

use serde::Serialize;

use crate::corpus::{target_counts, TrainingSample, WordId};
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check, GradCheck, Rng};

use super::{forward_loss, loss_and_grad, Aggregation, ModelParams, TENSOR_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CheckDims {
    pub dim: usize,
    pub vocab: usize,
    pub hops: usize,
    pub behaviors: usize,
    pub target_words: usize,
}

impl Default for CheckDims {
    fn default() -> Self {
        CheckDims {
            dim: 8,
            vocab: 50,
            hops: 2,
            behaviors: 3,
            target_words: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub max_rel_error: f64,
    pub per_tensor: Vec<(&'static str, GradCheck)>,
}

/// Random parameters with non-trivial layer norms, a random history and a
/// target over `target_words` distinct words.
pub fn random_instance(dims: CheckDims, seed: u64) -> Result<(ModelParams<f64>, TrainingSample)> {
    if dims.target_words == 0 || dims.target_words > dims.vocab || dims.behaviors == 0 {
        return Err(Error::Invalid(format!("unusable gradient-check dimensions {dims:?}")));
    }
    let mut params = ModelParams::<f64>::init(dims.vocab, dims.dim, dims.hops, seed)?;
    let mut rng = Rng::substream(seed, 1);
    // larger word vectors than the training init so every path carries signal
    params.embeddings = rng.normal_matrix(dims.vocab, dims.dim, 0.5);
    params.output = rng.normal_matrix(dims.vocab, dims.dim, 0.5);
    for ln in [&mut params.ln_key, &mut params.ln_value, &mut params.ln_user] {
        ln.gain.iter_mut().for_each(|g| *g = 1.0 + 0.2 * rng.normal());
        ln.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    let history: Vec<Vec<WordId>> = (0..dims.behaviors)
        .map(|_| {
            let len = 1 + rng.below(4);
            (0..len).map(|_| rng.below(dims.vocab) as WordId).collect()
        })
        .collect();
    let mut words: Vec<WordId> = (0..dims.vocab as WordId).collect();
    rng.shuffle(&mut words);
    let targets: Vec<Vec<WordId>> = words[..dims.target_words]
        .iter()
        .map(|&w| vec![w; 1 + rng.below(4)])
        .collect();
    let sample = TrainingSample {
        user_id: "gradcheck".into(),
        history,
        target_counts: target_counts(&targets),
    };
    Ok((params, sample))
}

/// Compares the analytic gradient of the mean per-hop loss with central
/// differences on every parameter. `fault` doubles the analytic `w_key`
/// gradient (or `w_value` for pooling variants, which never touch keys).
pub fn check_model_gradients(
    dims: CheckDims,
    agg: Aggregation,
    seed: u64,
    step: f64,
    fault: bool,
) -> Result<ModelGradCheck> {
    let (params, sample) = random_instance(dims, seed)?;
    let mut grads = params.zeros_like();
    loss_and_grad(&sample, &params, agg, &mut grads, 1.0)?;
    if fault {
        let target = if agg == Aggregation::MultiHop { &mut grads.w_key } else { &mut grads.w_value };
        target.scale(2.0);
    }
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut scratch = params.clone();
    let mut loss = |flat: &[f64]| -> Result<f64> {
        scratch.assign_flat(flat)?;
        Ok(forward_loss(&sample, &scratch, agg)?.total)
    };
    let mut per_tensor = Vec::with_capacity(TENSOR_NAMES.len());
    let mut off = 0;
    let mut max_rel_error: f64 = 0.0;
    for (name, len) in TENSOR_NAMES.iter().zip(params.tensors().map(<[f64]>::len)) {
        let coords: Vec<usize> = (off..off + len).collect();
        let chk = finite_diff_check(&mut loss, &base, &analytic, step, Some(&coords))?;
        max_rel_error = max_rel_error.max(chk.max_rel_error);
        per_tensor.push((*name, chk));
        off += len;
    }
    Ok(ModelGradCheck {
        max_rel_error,
        per_tensor,
    })
}
