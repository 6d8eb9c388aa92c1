//! Forward operations and their backward passes.
//!
//! Backward functions take the forward inputs (or a cache) plus the upstream
//! gradient and return, or accumulate, the gradients of every input.

use crate::error::{Error, Result};

use super::{Matrix, Scalar};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y = W·x`
pub fn linear<T: Scalar>(w: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    if w.cols() != x.len() {
        return Err(Error::shape("linear", w.cols(), x.len()));
    }
    Ok(w.matvec(x))
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub weight: Matrix<T>,
    pub input: Vec<T>,
}

/// Gradients of `y = W·x` given `∂L/∂y`: `∂W = g⊗x`, `∂x = Wᵀg`.
pub fn linear_backward<T: Scalar>(w: &Matrix<T>, x: &[T], g: &[T]) -> Result<LinearGrads<T>> {
    if w.cols() != x.len() || w.rows() != g.len() {
        return Err(Error::shape(
            "linear_backward",
            format!("{:?}", w.shape()),
            format!("x:{} g:{}", x.len(), g.len()),
        ));
    }
    let mut weight = Matrix::zeros(w.rows(), w.cols());
    weight.add_outer(g, x, T::one());
    let mut input = vec![T::zero(); x.len()];
    w.matvec_t_add(g, &mut input);
    Ok(LinearGrads { weight, input })
}

/// Learnable gain and bias of one layer-norm site.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize) -> Self {
        LayerNorm {
            gain: vec![T::one(); d],
            bias: vec![T::zero(); d],
        }
    }

    pub fn zeros(d: usize) -> Self {
        LayerNorm {
            gain: vec![T::zero(); d],
            bias: vec![T::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[T]) -> Result<LayerNormCache<T>> {
        layer_norm(x, &self.gain, &self.bias, T::of(LN_EPS))
    }

    pub fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm {
            gain: self.gain.iter().map(|&v| U::of(v.f64())).collect(),
            bias: self.bias.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }
}

/// Forward output of [`layer_norm`] together with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: T,
}

/// `y = gain ⊙ (x − mean)/sqrt(var + eps) + bias` with population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<LayerNormCache<T>> {
    let n = x.len();
    if n == 0 || gain.len() != n || bias.len() != n {
        return Err(Error::shape(
            "layer_norm",
            format!("x:{n} gain:{n} bias:{n}"),
            format!("x:{n} gain:{} bias:{}", gain.len(), bias.len()),
        ));
    }
    if eps.is_nan() || eps <= T::zero() {
        return Err(Error::Invalid("layer_norm eps must be positive".into()));
    }
    let nf = T::of(n as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / nf;
    let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
    let inv_std = T::one() / (var + eps).sqrt();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y = xhat
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&h, (&g, &b))| g * h + b)
        .collect();
    Ok(LayerNormCache { y, xhat, inv_std })
}

/// Accumulates `∂gain`, `∂bias` into `grads` and returns `∂x`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    gy: &[T],
    grads: &mut LayerNorm<T>,
) -> Vec<T> {
    let n = gy.len();
    let nf = T::of(n as f64);
    let mut gxhat = Vec::with_capacity(n);
    let mut mean_g = T::zero();
    let mut mean_gx = T::zero();
    for i in 0..n {
        grads.gain[i] += gy[i] * cache.xhat[i];
        grads.bias[i] += gy[i];
        let g = gy[i] * gain[i];
        mean_g += g;
        mean_gx += g * cache.xhat[i];
        gxhat.push(g);
    }
    mean_g /= nf;
    mean_gx /= nf;
    gxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(&g, &h)| cache.inv_std * (g - mean_g - h * mean_gx))
        .collect()
}

/// Max-shifted softmax. An empty input yields an empty output.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
    let mut out: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().fold(T::zero(), |a, &v| a + v);
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `∂z = p ⊙ (g − ⟨p, g⟩)` for `p = softmax(z)`.
pub fn softmax_backward<T: Scalar>(p: &[T], g: &[T]) -> Vec<T> {
    let inner = dot(p, g);
    p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Passes gradient where the pre-activation was strictly positive.
pub fn relu_backward<T: Scalar>(pre: &[T], g: &[T]) -> Vec<T> {
    pre.iter()
        .zip(g)
        .map(|(&z, &gi)| if z > T::zero() { gi } else { T::zero() })
        .collect()
}

pub fn mean_rows<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    if m.rows() == 0 {
        return Err(Error::Invalid("mean_rows of a matrix with zero rows".into()));
    }
    let mut acc = vec![T::zero(); m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = T::of(m.rows() as f64);
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// Floor applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−Σ_{p(w)>0} p(w)·ln max(p̂(w), 1e-12)`, accumulated in double precision.
pub fn cross_entropy<T: Scalar>(p: &[T], p_hat: &[T]) -> f64 {
    p.iter()
        .zip(p_hat)
        .filter(|(&pw, _)| pw > T::zero())
        .map(|(&pw, &qw)| -pw.f64() * qw.f64().max(PROB_FLOOR).ln())
        .sum()
}
