//! Frozen-representation evaluation: MLP probes, ranking metrics and PCA.

mod io;
mod metrics;
mod pca;
mod probe;

pub use io::{
    join_labels, read_embeddings, read_labels, write_embeddings, write_labels, write_pca_csv, Embedding, LabelRecord,
};
pub use metrics::{accuracy, auc};
pub use pca::{pca_project, Pca};
pub use probe::{train_probe, LabeledEmbedding, Probe, ProbeConfig, ProbeMetrics, TaskType, TEST_FRACTION};
