use crate::error::{Error, Result};
use crate::numerics::{LayerNorm, Matrix, Rng, Scalar};

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 12] = [
    "embeddings",
    "w_key",
    "w_value",
    "ln_key.gain",
    "ln_key.bias",
    "ln_value.gain",
    "ln_value.bias",
    "ln_user.gain",
    "ln_user.bias",
    "memory0",
    "w_out",
    "output",
];

/// All trainable parameters. Also used as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// `|V| × d` word vectors.
    pub embeddings: Matrix<T>,
    pub w_key: Matrix<T>,
    pub w_value: Matrix<T>,
    pub ln_key: LayerNorm<T>,
    pub ln_value: LayerNorm<T>,
    pub ln_user: LayerNorm<T>,
    /// Initial memory, also the first attention query.
    pub memory0: Vec<T>,
    pub w_out: Matrix<T>,
    /// `|V| × d` output word vectors.
    pub output: Matrix<T>,
    pub hops: usize,
}

impl<T: Scalar> ModelParams<T> {
    /// Embeddings and output vectors ~ U(−0.05, 0.05); projections and the
    /// initial memory ~ N(0, 1/d); layer norms start as identity.
    pub fn init(vocab_size: usize, dim: usize, hops: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || dim == 0 || hops == 0 {
            return Err(Error::Invalid(format!(
                "model needs |V|, d, N ≥ 1 (got {vocab_size}, {dim}, {hops})"
            )));
        }
        let mut rng = Rng::new(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let embeddings = rng.uniform_matrix(vocab_size, dim, 0.05);
        let w_key = rng.normal_matrix(dim, dim, std);
        let w_value = rng.normal_matrix(dim, dim, std);
        let memory0 = rng.normal_vec(dim, std);
        let w_out = rng.normal_matrix(dim, dim, std);
        let output = rng.uniform_matrix(vocab_size, dim, 0.05);
        Ok(ModelParams {
            embeddings,
            w_key,
            w_value,
            ln_key: LayerNorm::identity(dim),
            ln_value: LayerNorm::identity(dim),
            ln_user: LayerNorm::identity(dim),
            memory0,
            w_out,
            output,
            hops,
        })
    }

    pub fn zeros(vocab_size: usize, dim: usize, hops: usize) -> Self {
        ModelParams {
            embeddings: Matrix::zeros(vocab_size, dim),
            w_key: Matrix::zeros(dim, dim),
            w_value: Matrix::zeros(dim, dim),
            ln_key: LayerNorm::zeros(dim),
            ln_value: LayerNorm::zeros(dim),
            ln_user: LayerNorm::zeros(dim),
            memory0: vec![T::zero(); dim],
            w_out: Matrix::zeros(dim, dim),
            output: Matrix::zeros(vocab_size, dim),
            hops,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim(), self.hops)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn tensors(&self) -> [&[T]; 12] {
        [
            self.embeddings.as_slice(),
            self.w_key.as_slice(),
            self.w_value.as_slice(),
            &self.ln_key.gain,
            &self.ln_key.bias,
            &self.ln_value.gain,
            &self.ln_value.bias,
            &self.ln_user.gain,
            &self.ln_user.bias,
            &self.memory0,
            self.w_out.as_slice(),
            self.output.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 12] {
        [
            self.embeddings.as_mut_slice(),
            self.w_key.as_mut_slice(),
            self.w_value.as_mut_slice(),
            &mut self.ln_key.gain,
            &mut self.ln_key.bias,
            &mut self.ln_value.gain,
            &mut self.ln_value.bias,
            &mut self.ln_user.gain,
            &mut self.ln_user.bias,
            &mut self.memory0,
            self.w_out.as_mut_slice(),
            self.output.as_mut_slice(),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    /// Overwrites every tensor from a flat vector laid out like [`Self::flatten`].
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape("ModelParams::assign_flat", self.num_values(), flat.len()));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Per-tensor L2 norms, in [`TENSOR_NAMES`] order.
    pub fn norms(&self) -> [f64; 12] {
        self.tensors()
            .map(|t| t.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
    }

    pub fn global_norm(&self) -> f64 {
        self.norms().iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            embeddings: self.embeddings.cast(),
            w_key: self.w_key.cast(),
            w_value: self.w_value.cast(),
            ln_key: self.ln_key.cast(),
            ln_value: self.ln_value.cast(),
            ln_user: self.ln_user.cast(),
            memory0: self.memory0.iter().map(|&v| U::of(v.f64())).collect(),
            w_out: self.w_out.cast(),
            output: self.output.cast(),
            hops: self.hops,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (v, d) = self.embeddings.shape();
        let square = [("w_key", &self.w_key), ("w_value", &self.w_value), ("w_out", &self.w_out)];
        for (name, m) in square {
            if m.shape() != (d, d) {
                return Err(Error::shape("ModelParams", format!("{name} {d}x{d}"), format!("{:?}", m.shape())));
            }
        }
        if self.output.shape() != (v, d) {
            return Err(Error::shape("ModelParams", format!("output {v}x{d}"), format!("{:?}", self.output.shape())));
        }
        for ln in [&self.ln_key, &self.ln_value, &self.ln_user] {
            if ln.gain.len() != d || ln.bias.len() != d {
                return Err(Error::shape("ModelParams", format!("layer norm {d}"), ln.gain.len()));
            }
        }
        if self.memory0.len() != d {
            return Err(Error::shape("ModelParams", format!("memory0 {d}"), self.memory0.len()));
        }
        if self.hops == 0 {
            return Err(Error::Invalid("hop count must be at least 1".into()));
        }
        Ok(())
    }
}
