use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{adam_step, relu, relu_backward, softmax, AdamConfig, AdamState, Matrix, Rng, PROB_FLOOR};

use super::metrics::{accuracy, auc};

/// Held-out share of every class.
pub const TEST_FRACTION: f64 = 0.2;
const MIN_SAMPLES: usize = 10;
const GRAD_CHUNK: usize = 16;
const INIT_STREAM: u64 = 0x9b0e_0000;
const SPLIT_STREAM: u64 = 0x9b0e_0001;
const EPOCH_STREAM: u64 = 0x9b0e_1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    #[default]
    Binary,
    Multiclass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub task_type: TaskType,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_dim: 128,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 50,
            seed: 0,
            task_type: TaskType::Binary,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Invalid(
                "probe hidden_dim, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("probe learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEmbedding {
    pub user_id: String,
    pub vector: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeMetrics {
    pub accuracy: f64,
    /// Positive-class AUC; binary tasks only.
    pub auc: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub final_train_loss: f64,
}

/// One-hidden-layer ReLU classifier with a softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub w1: Matrix<f64>,
    pub b1: Vec<f64>,
    pub w2: Matrix<f64>,
    pub b2: Vec<f64>,
}

impl Probe {
    fn init(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = Rng::substream(seed, INIT_STREAM);
        Probe {
            w1: rng.normal_matrix(hidden, input, (2.0 / input as f64).sqrt()),
            b1: vec![0.0; hidden],
            w2: rng.normal_matrix(classes, hidden, (1.0 / hidden as f64).sqrt()),
            b2: vec![0.0; classes],
        }
    }

    fn zeros_like(&self) -> Self {
        Probe {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    fn add_assign(&mut self, other: &Probe) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.b2.len()
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.w1.matvec(x);
        z.iter_mut().zip(&self.b1).for_each(|(a, b)| *a += b);
        z
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.w2.matvec(h);
        z.iter_mut().zip(&self.b2).for_each(|(a, b)| *a += b);
        softmax(&z)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("probe input", self.input_dim(), x.len()));
        }
        Ok(self.output(&relu(&self.hidden(x))))
    }

    /// Adds `scale * ∇` of the cross-entropy on one example; returns the loss.
    fn accumulate(&self, x: &[f64], label: usize, grads: &mut Probe, scale: f64) -> f64 {
        let z1 = self.hidden(x);
        let h = relu(&z1);
        let p = self.output(&h);
        let loss = -p[label].max(PROB_FLOOR).ln();
        let mut g2 = p;
        g2[label] -= 1.0;
        grads.w2.add_outer(&g2, &h, scale);
        grads.b2.iter_mut().zip(&g2).for_each(|(b, g)| *b += scale * g);
        let mut gh = vec![0.0; h.len()];
        self.w2.matvec_t_add(&g2, &mut gh);
        let g1 = relu_backward(&z1, &gh);
        grads.w1.add_outer(&g1, x, scale);
        grads.b1.iter_mut().zip(&g1).for_each(|(b, g)| *b += scale * g);
        loss
    }
}

fn class_count(data: &[LabeledEmbedding], task: TaskType) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Invalid("probe input is empty".into()));
    }
    if data.len() < MIN_SAMPLES {
        return Err(Error::Invalid(format!(
            "probe needs at least {MIN_SAMPLES} samples, got {}",
            data.len()
        )));
    }
    let d = data[0].vector.len();
    if d == 0 {
        return Err(Error::Invalid("probe input vectors are empty".into()));
    }
    for e in data {
        if e.vector.len() != d {
            return Err(Error::shape("probe input", d, e.vector.len()));
        }
        if !e.vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of user {}", e.user_id)));
        }
    }
    let max = data.iter().map(|e| e.label).max().unwrap_or(0);
    let classes = match task {
        TaskType::Binary if max > 1 => {
            return Err(Error::Invalid(format!("binary task has label {max}")));
        }
        TaskType::Binary => 2,
        TaskType::Multiclass => max + 1,
    };
    let mut seen = vec![false; classes];
    data.iter().for_each(|e| seen[e.label] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Invalid("probe needs at least two classes present".into()));
    }
    Ok(classes)
}

/// Seeded, class-stratified split; returns sorted `(train, test)` indices.
fn split(data: &[LabeledEmbedding], classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::substream(seed, SPLIT_STREAM);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].label == c).collect();
        if idx.is_empty() {
            continue;
        }
        rng.shuffle(&mut idx);
        let n_test = if idx.len() < 2 {
            0
        } else {
            ((idx.len() as f64 * TEST_FRACTION).round() as usize).clamp(1, idx.len() - 1)
        };
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains on a seeded 80/20 split for `max_epochs` and reports the
/// final-epoch test metrics.
pub fn train_probe(
    data: &[LabeledEmbedding],
    config: &ProbeConfig,
    exec: Execution,
) -> Result<(Probe, ProbeMetrics)> {
    config.validate()?;
    let classes = class_count(data, config.task_type)?;
    let (train, test) = split(data, classes, config.seed);
    let mut probe = Probe::init(data[0].vector.len(), config.hidden_dim, classes, config.seed);
    let adam = AdamConfig::with_lr(config.learning_rate);
    let mut states: Vec<AdamState<f64>> = probe.tensors().iter().map(|t| AdamState::new(t.len())).collect();

    let mut final_train_loss = f64::NAN;
    for epoch in 0..config.max_epochs {
        let mut order = train.clone();
        Rng::substream(config.seed, EPOCH_STREAM + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let (grads, loss) = exec.reduce_chunks(
                batch,
                GRAD_CHUNK,
                || (probe.zeros_like(), 0.0),
                |acc: &mut (Probe, f64), &i| {
                    acc.1 += probe.accumulate(&data[i].vector, data[i].label, &mut acc.0, scale);
                },
                |a, b| {
                    a.0.add_assign(&b.0);
                    a.1 += b.1;
                },
            );
            for ((p, g), s) in probe.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut states) {
                adam_step(p, g, s, &adam)?;
            }
            loss_sum += loss;
        }
        final_train_loss = loss_sum / train.len() as f64;
        if !final_train_loss.is_finite() {
            return Err(Error::NonFinite(format!("probe loss at epoch {}", epoch + 1)));
        }
    }

    let probs: Vec<Vec<f64>> = exec.map(&test, |&i| probe.output(&relu(&probe.hidden(&data[i].vector))));
    let predicted: Vec<usize> = probs
        .iter()
        .map(|p| (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best }))
        .collect();
    let truth: Vec<usize> = test.iter().map(|&i| data[i].label).collect();
    let auc = match config.task_type {
        TaskType::Binary => {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let labels: Vec<bool> = truth.iter().map(|&l| l == 1).collect();
            Some(auc(&scores, &labels)?)
        }
        TaskType::Multiclass => None,
    };
    let metrics = ProbeMetrics {
        accuracy: accuracy(&predicted, &truth)?,
        auc,
        n_train: train.len(),
        n_test: test.len(),
        n_classes: classes,
        final_train_loss,
    };
    Ok((probe, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, finite_diff_check};

    fn blobs(n: usize, seed: u64, sep: f64) -> Vec<LabeledEmbedding> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 1 { sep } else { -sep };
                LabeledEmbedding {
                    user_id: format!("u{i:04}"),
                    vector: vec![c + rng.normal() * 0.5, c + rng.normal() * 0.5],
                    label,
                }
            })
            .collect()
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            hidden_dim: 16,
            batch_size: 32,
            max_epochs: 30,
            learning_rate: 0.01,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = ProbeConfig::default();
        assert_eq!((c.hidden_dim, c.batch_size, c.max_epochs), (128, 256, 50));
        assert_eq!(c.learning_rate, 0.001);
        assert!(serde_json::from_str::<ProbeConfig>(r#"{"hidden": 3}"#).is_err());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (_, m) = train_probe(&blobs(400, 1, 2.0), &quick(), Execution::Sequential).unwrap();
        assert!(m.accuracy > 0.95, "{m:?}");
        assert!(m.auc.unwrap() > 0.98);
        assert_eq!((m.n_train, m.n_test), (320, 80));
    }

    #[test]
    fn shuffled_labels_give_chance_auc() {
        let mut total = 0.0;
        for seed in 0..5 {
            let mut data = blobs(1000, 10 + seed, 2.0);
            let mut labels: Vec<usize> = data.iter().map(|e| e.label).collect();
            Rng::new(99 + seed).shuffle(&mut labels);
            data.iter_mut().zip(labels).for_each(|(e, l)| e.label = l);
            let cfg = ProbeConfig { seed, ..quick() };
            total += train_probe(&data, &cfg, Execution::Parallel).unwrap().1.auc.unwrap();
        }
        let mean = total / 5.0;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn duplicated_columns_leave_metrics_unchanged() {
        let data = blobs(400, 2, 0.6);
        let dup: Vec<LabeledEmbedding> = data
            .iter()
            .map(|e| LabeledEmbedding {
                vector: e.vector.iter().chain(&e.vector).copied().collect(),
                ..e.clone()
            })
            .collect();
        let a = train_probe(&data, &quick(), Execution::Sequential).unwrap().1;
        let b = train_probe(&dup, &quick(), Execution::Sequential).unwrap().1;
        assert!((a.auc.unwrap() - b.auc.unwrap()).abs() <= 0.02, "{a:?} {b:?}");
    }

    #[test]
    fn seeded_runs_are_identical_across_execution_modes() {
        let data = blobs(300, 3, 0.5);
        let a = train_probe(&data, &quick(), Execution::Sequential).unwrap();
        let b = train_probe(&data, &quick(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multiclass_reports_accuracy_only() {
        let mut rng = Rng::new(4);
        let data: Vec<LabeledEmbedding> = (0..300)
            .map(|i| {
                let label = i % 3;
                let a = label as f64 * 2.1;
                LabeledEmbedding {
                    user_id: i.to_string(),
                    vector: vec![3.0 * a.cos() + 0.3 * rng.normal(), 3.0 * a.sin() + 0.3 * rng.normal()],
                    label,
                }
            })
            .collect();
        let cfg = ProbeConfig {
            task_type: TaskType::Multiclass,
            ..quick()
        };
        let (p, m) = train_probe(&data, &cfg, Execution::Sequential).unwrap();
        assert_eq!((m.n_classes, p.num_classes(), m.auc), (3, 3, None));
        assert!(m.accuracy > 0.9, "{m:?}");
    }

    #[test]
    fn input_errors() {
        let cfg = quick();
        assert!(train_probe(&[], &cfg, Execution::Sequential).is_err());
        assert!(train_probe(&blobs(5, 0, 1.0), &cfg, Execution::Sequential).is_err());
        let mut one_class = blobs(20, 0, 1.0);
        one_class.iter_mut().for_each(|e| e.label = 1);
        assert!(train_probe(&one_class, &cfg, Execution::Sequential).is_err());
        let mut three = blobs(20, 0, 1.0);
        three[0].label = 2;
        assert!(train_probe(&three, &cfg, Execution::Sequential).is_err());
        let mut nan = blobs(20, 0, 1.0);
        nan[3].vector[0] = f64::NAN;
        assert!(train_probe(&nan, &cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn probe_gradient_matches_finite_differences() {
        let probe = Probe::init(4, 5, 3, 7);
        let x = [0.3, -1.2, 0.8, 0.1];
        let mut grads = probe.zeros_like();
        probe.accumulate(&x, 2, &mut grads, 1.0);
        let flat = |p: &Probe| p.tensors().concat();
        let shapes = probe.clone();
        let loss = |theta: &[f64]| {
            let mut p = shapes.clone();
            let mut off = 0;
            for t in p.tensors_mut() {
                t.copy_from_slice(&theta[off..off + t.len()]);
                off += t.len();
            }
            Ok(p.accumulate(&x, 2, &mut shapes.zeros_like(), 0.0))
        };
        let check = finite_diff_check(loss, &flat(&probe), &flat(&grads), 1e-6, None).unwrap();
        assert!(check.max_rel_error < 1e-5, "{check:?}");
        assert!(dot(&grads.b2, &[1.0, 1.0, 1.0]).abs() < 1e-12);
    }

    #[test]
    fn split_is_stratified() {
        let data = blobs(50, 0, 1.0);
        let (train, test) = split(&data, 2, 5);
        assert_eq!((train.len(), test.len()), (40, 10));
        assert_eq!(test.iter().filter(|&&i| data[i].label == 1).count(), 5);
    }
}
