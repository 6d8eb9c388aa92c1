use crate::corpus::{Counts, TrainingSample, WordId};
use crate::error::{Error, Result};
use crate::numerics::{
    cross_entropy, dot, layer_norm_backward, relu, relu_backward, softmax, softmax_backward,
    LayerNormCache, Matrix, Scalar, PROB_FLOOR,
};

use super::{Aggregation, ModelParams};

/// Per-hop attention weights, memories and user vectors.
///
/// For mean pooling `alphas` holds one uniform row; max pooling has no
/// attention and leaves `alphas` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct HopTrace<T> {
    pub alphas: Vec<Vec<T>>,
    pub memories: Vec<Vec<T>>,
    pub users: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub per_hop: Vec<f64>,
    pub total: f64,
}

/// Row `t` is the mean embedding of behavior `t`'s words (duplicates count).
pub fn embed_behaviors<T: Scalar, B: AsRef<[WordId]>>(history: &[B], params: &ModelParams<T>) -> Result<Matrix<T>> {
    let d = params.dim();
    let vocab = params.vocab_size();
    let mut e = Matrix::zeros(history.len(), d);
    for (t, behavior) in history.iter().enumerate() {
        let ids = behavior.as_ref();
        if ids.is_empty() {
            return Err(Error::EmptyBehavior(t));
        }
        let row = e.row_mut(t);
        for &id in ids {
            if id as usize >= vocab {
                return Err(Error::WordId { id, size: vocab });
            }
            for (r, &w) in row.iter_mut().zip(params.embeddings.row(id as usize)) {
                *r += w;
            }
        }
        let n = T::of(ids.len() as f64);
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(e)
}

enum Pooled {
    MultiHop,
    Mean,
    Max { argmax: Vec<usize> },
}

/// Everything the backward pass needs from aggregation.
struct AggregateCache<T> {
    keys: Vec<LayerNormCache<T>>,
    values: Vec<LayerNormCache<T>>,
    pooled: Pooled,
    alphas: Vec<Vec<T>>,
    memories: Vec<Vec<T>>,
    users: Vec<LayerNormCache<T>>,
}

impl<T: Scalar> AggregateCache<T> {
    fn trace(&self) -> HopTrace<T> {
        HopTrace {
            alphas: self.alphas.clone(),
            memories: self.memories.clone(),
            users: self.users.iter().map(|u| u.y.clone()).collect(),
        }
    }
}

fn aggregate_cached<T: Scalar>(e: &Matrix<T>, params: &ModelParams<T>, agg: Aggregation) -> Result<AggregateCache<T>> {
    let d = params.dim();
    if e.rows() == 0 {
        return Err(Error::Invalid("aggregation needs at least one behavior".into()));
    }
    if e.cols() != d {
        return Err(Error::shape("aggregate", d, e.cols()));
    }
    let values = e
        .iter_rows()
        .map(|row| params.ln_value.forward(&params.w_value.matvec(row)))
        .collect::<Result<Vec<_>>>()?;

    match agg {
        Aggregation::MultiHop => {
            let keys = e
                .iter_rows()
                .map(|row| params.ln_key.forward(&params.w_key.matvec(row)))
                .collect::<Result<Vec<_>>>()?;
            let mut alphas = Vec::with_capacity(params.hops);
            let mut memories = Vec::with_capacity(params.hops);
            let mut users: Vec<LayerNormCache<T>> = Vec::with_capacity(params.hops);
            let mut memory = params.memory0.clone();
            for _ in 0..params.hops {
                let query = users.last().map_or(&params.memory0, |u| &u.y);
                let scores: Vec<T> = keys.iter().map(|k| dot(&k.y, query)).collect();
                let alpha = softmax(&scores);
                let mut delta = vec![T::zero(); d];
                for (&a, v) in alpha.iter().zip(&values) {
                    for (dm, &vj) in delta.iter_mut().zip(&v.y) {
                        *dm += a * vj;
                    }
                }
                for (m, dm) in memory.iter_mut().zip(delta) {
                    *m += dm;
                }
                users.push(params.ln_user.forward(&memory)?);
                memories.push(memory.clone());
                alphas.push(alpha);
            }
            Ok(AggregateCache {
                keys,
                values,
                pooled: Pooled::MultiHop,
                alphas,
                memories,
                users,
            })
        }
        Aggregation::Mean => {
            let n = T::of(values.len() as f64);
            let mut pooled = vec![T::zero(); d];
            for v in &values {
                for (p, &vj) in pooled.iter_mut().zip(&v.y) {
                    *p += vj;
                }
            }
            pooled.iter_mut().for_each(|p| *p /= n);
            let user = params.ln_user.forward(&pooled)?;
            Ok(AggregateCache {
                keys: Vec::new(),
                alphas: vec![vec![T::one() / n; values.len()]],
                values,
                pooled: Pooled::Mean,
                memories: vec![pooled],
                users: vec![user],
            })
        }
        Aggregation::Max => {
            let mut argmax = vec![0usize; d];
            let mut pooled = values[0].y.clone();
            for (t, v) in values.iter().enumerate().skip(1) {
                for j in 0..d {
                    if v.y[j] > pooled[j] {
                        pooled[j] = v.y[j];
                        argmax[j] = t;
                    }
                }
            }
            let user = params.ln_user.forward(&pooled)?;
            Ok(AggregateCache {
                keys: Vec::new(),
                values,
                pooled: Pooled::Max { argmax },
                alphas: Vec::new(),
                memories: vec![pooled],
                users: vec![user],
            })
        }
    }
}

/// Multi-hop aggregation of behavior embeddings `e` (`|S| × d`).
pub fn aggregate<T: Scalar>(e: &Matrix<T>, params: &ModelParams<T>) -> Result<HopTrace<T>> {
    aggregate_with(e, params, Aggregation::MultiHop)
}

pub fn aggregate_with<T: Scalar>(e: &Matrix<T>, params: &ModelParams<T>, agg: Aggregation) -> Result<HopTrace<T>> {
    Ok(aggregate_cached(e, params, agg)?.trace())
}

struct HeadCache<T> {
    pre: Vec<T>,
    hidden: Vec<T>,
    probs: Vec<T>,
}

fn head_forward<T: Scalar>(u: &[T], params: &ModelParams<T>) -> HeadCache<T> {
    let pre = params.w_out.matvec(u);
    let hidden = relu(&pre);
    let probs = softmax(&params.output.matvec(&hidden));
    HeadCache { pre, hidden, probs }
}

/// `softmax(O · ReLU(W_o · u))` over the vocabulary.
pub fn predict_distribution<T: Scalar>(u: &[T], params: &ModelParams<T>) -> Result<Vec<T>> {
    if u.len() != params.dim() {
        return Err(Error::shape("predict_distribution", params.dim(), u.len()));
    }
    Ok(head_forward(u, params).probs)
}

/// `p(w) = ln(1 + count(w)) / Σ_w' ln(1 + count(w'))`, zero for absent words.
pub fn target_distribution<T: Scalar>(counts: &Counts, vocab_size: usize) -> Result<Vec<T>> {
    if counts.is_empty() {
        return Err(Error::Invalid("target distribution needs at least one counted word".into()));
    }
    let mut weights = vec![0.0f64; vocab_size];
    for (&id, &c) in counts {
        if id as usize >= vocab_size {
            return Err(Error::WordId { id, size: vocab_size });
        }
        if c == 0 {
            return Err(Error::Invalid(format!("zero count for word id {id}")));
        }
        weights[id as usize] = (c as f64).ln_1p();
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| T::of(w / total)).collect())
}

fn check_sample<T: Scalar>(sample: &TrainingSample, params: &ModelParams<T>) -> Result<()> {
    if sample.history.is_empty() {
        return Err(Error::Invalid(format!("user {}: empty history", sample.user_id)));
    }
    if params.hops == 0 {
        return Err(Error::Invalid("hop count must be at least 1".into()));
    }
    Ok(())
}

fn breakdown(per_hop: Vec<f64>) -> LossBreakdown {
    let total = per_hop.iter().sum::<f64>() / per_hop.len() as f64;
    LossBreakdown { per_hop, total }
}

/// Loss of every representation against the sample's target distribution.
pub fn forward_loss<T: Scalar>(
    sample: &TrainingSample,
    params: &ModelParams<T>,
    agg: Aggregation,
) -> Result<LossBreakdown> {
    check_sample(sample, params)?;
    let p = target_distribution::<T>(&sample.target_counts, params.vocab_size())?;
    let e = embed_behaviors(&sample.history, params)?;
    let cache = aggregate_cached(&e, params, agg)?;
    let per_hop = cache
        .users
        .iter()
        .map(|u| cross_entropy(&p, &head_forward(&u.y, params).probs))
        .collect();
    Ok(breakdown(per_hop))
}

/// Forward pass plus backward pass; adds `scale · ∂total/∂θ` into `grads`.
pub fn loss_and_grad<T: Scalar>(
    sample: &TrainingSample,
    params: &ModelParams<T>,
    agg: Aggregation,
    grads: &mut ModelParams<T>,
    scale: T,
) -> Result<LossBreakdown> {
    check_sample(sample, params)?;
    let d = params.dim();
    let p = target_distribution::<T>(&sample.target_counts, params.vocab_size())?;
    let e = embed_behaviors(&sample.history, params)?;
    let cache = aggregate_cached(&e, params, agg)?;
    let reps = cache.users.len();
    let weight = scale / T::of(reps as f64);
    let floor = T::of(PROB_FLOOR);

    // prediction head, one per representation
    let mut per_hop = Vec::with_capacity(reps);
    let mut g_users = Vec::with_capacity(reps);
    for u in &cache.users {
        let head = head_forward(&u.y, params);
        per_hop.push(cross_entropy(&p, &head.probs));
        // ∂/∂logit_j of −Σ_{w∈A} p_w ln p̂_w, with A the words whose p̂ is above the floor
        let mut kept = T::zero();
        for (&pw, &qw) in p.iter().zip(&head.probs) {
            if pw > T::zero() && qw >= floor {
                kept += pw;
            }
        }
        let g_logits: Vec<T> = p
            .iter()
            .zip(&head.probs)
            .map(|(&pw, &qw)| {
                let own = if pw > T::zero() && qw >= floor { pw } else { T::zero() };
                weight * (qw * kept - own)
            })
            .collect();
        grads.output.add_outer(&g_logits, &head.hidden, T::one());
        let mut g_hidden = vec![T::zero(); d];
        params.output.matvec_t_add(&g_logits, &mut g_hidden);
        let g_pre = relu_backward(&head.pre, &g_hidden);
        grads.w_out.add_outer(&g_pre, &u.y, T::one());
        let mut g_u = vec![T::zero(); d];
        params.w_out.matvec_t_add(&g_pre, &mut g_u);
        g_users.push(g_u);
    }

    // aggregation
    let n = cache.values.len();
    let mut g_values = vec![vec![T::zero(); d]; n];
    let mut g_keys = vec![vec![T::zero(); d]; cache.keys.len()];
    match &cache.pooled {
        Pooled::MultiHop => {
            let mut g_query = vec![T::zero(); d];
            let mut g_memory_next = vec![T::zero(); d];
            for h in (0..reps).rev() {
                let g_u: Vec<T> = g_users[h].iter().zip(&g_query).map(|(&a, &b)| a + b).collect();
                let mut g_m = layer_norm_backward(&cache.users[h], &params.ln_user.gain, &g_u, &mut grads.ln_user);
                for (g, &c) in g_m.iter_mut().zip(&g_memory_next) {
                    *g += c;
                }
                let alpha = &cache.alphas[h];
                let mut g_alpha = Vec::with_capacity(n);
                for t in 0..n {
                    let a = alpha[t];
                    for (gv, &gm) in g_values[t].iter_mut().zip(&g_m) {
                        *gv += a * gm;
                    }
                    g_alpha.push(dot(&cache.values[t].y, &g_m));
                }
                let g_scores = softmax_backward(alpha, &g_alpha);
                let query = if h == 0 { &params.memory0 } else { &cache.users[h - 1].y };
                g_query = vec![T::zero(); d];
                for t in 0..n {
                    let gs = g_scores[t];
                    for j in 0..d {
                        g_keys[t][j] += gs * query[j];
                        g_query[j] += gs * cache.keys[t].y[j];
                    }
                }
                g_memory_next = g_m;
            }
            for j in 0..d {
                grads.memory0[j] += g_memory_next[j] + g_query[j];
            }
        }
        Pooled::Mean => {
            let g_pooled = layer_norm_backward(&cache.users[0], &params.ln_user.gain, &g_users[0], &mut grads.ln_user);
            let inv = T::one() / T::of(n as f64);
            for gv in &mut g_values {
                for (a, &b) in gv.iter_mut().zip(&g_pooled) {
                    *a += b * inv;
                }
            }
        }
        Pooled::Max { argmax } => {
            let g_pooled = layer_norm_backward(&cache.users[0], &params.ln_user.gain, &g_users[0], &mut grads.ln_user);
            for (j, &t) in argmax.iter().enumerate() {
                g_values[t][j] += g_pooled[j];
            }
        }
    }

    // projections and encoder
    let mut g_e = vec![vec![T::zero(); d]; n];
    for t in 0..n {
        let e_t = e.row(t);
        let g_a = layer_norm_backward(&cache.values[t], &params.ln_value.gain, &g_values[t], &mut grads.ln_value);
        grads.w_value.add_outer(&g_a, e_t, T::one());
        params.w_value.matvec_t_add(&g_a, &mut g_e[t]);
        if let Some(g_k) = g_keys.get(t) {
            let g_a = layer_norm_backward(&cache.keys[t], &params.ln_key.gain, g_k, &mut grads.ln_key);
            grads.w_key.add_outer(&g_a, e_t, T::one());
            params.w_key.matvec_t_add(&g_a, &mut g_e[t]);
        }
    }
    for (behavior, g) in sample.history.iter().zip(&g_e) {
        let inv = T::one() / T::of(behavior.len() as f64);
        for &id in behavior {
            for (w, &gj) in grads.embeddings.row_mut(id as usize).iter_mut().zip(g) {
                *w += gj * inv;
            }
        }
    }
    Ok(breakdown(per_hop))
}

/// Final-hop user vector.
pub fn infer<T: Scalar, B: AsRef<[WordId]>>(history: &[B], params: &ModelParams<T>) -> Result<Vec<T>> {
    infer_with(history, params, Aggregation::MultiHop)
}

pub fn infer_with<T: Scalar, B: AsRef<[WordId]>>(
    history: &[B],
    params: &ModelParams<T>,
    agg: Aggregation,
) -> Result<Vec<T>> {
    if history.is_empty() {
        return Err(Error::Invalid("cannot infer a user vector from an empty history".into()));
    }
    let e = embed_behaviors(history, params)?;
    let mut cache = aggregate_cached(&e, params, agg)?;
    Ok(cache.users.pop().expect("at least one representation").y)
}
