use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Matrix, Scalar};

/// Seeded, reproducible random stream.
///
/// Independent substreams (per user, per epoch) are derived from one seed
/// with [`Rng::substream`], so parallel consumers never share state.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        self.inner.random_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_matrix<T: Scalar>(&mut self, rows: usize, cols: usize, scale: f64) -> Matrix<T> {
        let data = (0..rows * cols)
            .map(|_| T::of(self.uniform(-scale, scale)))
            .collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    }

    pub fn normal_matrix<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<T> {
        let data = (0..rows * cols).map(|_| T::of(std * self.normal())).collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    }

    pub fn normal_vec<T: Scalar>(&mut self, len: usize, std: f64) -> Vec<T> {
        (0..len).map(|_| T::of(std * self.normal())).collect()
    }
}
