use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::probe::LabeledEmbedding;

const MAX_LISTED: usize = 5;

/// One line of an embeddings JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Embedding {
    pub user_id: String,
    pub vector: Vec<f32>,
}

/// One row of a labels CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub user_id: String,
    pub label: usize,
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Embedding = serde_json::from_str(&line)
            .map_err(|err| Error::format("embeddings", format!("{}:{}: {err}", path.display(), n + 1)))?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in embeddings {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("labels", format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pairs embeddings with labels by user id, in embedding order. Every id
/// must appear exactly once in both inputs.
pub fn join_labels(embeddings: &[Embedding], labels: &[LabelRecord]) -> Result<Vec<LabeledEmbedding>> {
    let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(labels.len());
    for l in labels {
        if by_id.insert(&l.user_id, l.label).is_some() {
            return Err(Error::Invalid(format!("duplicate label for user {}", l.user_id)));
        }
    }
    let mut seen = BTreeSet::new();
    for e in embeddings {
        if !seen.insert(e.user_id.as_str()) {
            return Err(Error::Invalid(format!("duplicate embedding for user {}", e.user_id)));
        }
    }
    let mut offenders: Vec<&str> = embeddings
        .iter()
        .map(|e| e.user_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .chain(labels.iter().map(|l| l.user_id.as_str()).filter(|id| !seen.contains(id)))
        .collect();
    if !offenders.is_empty() {
        offenders.sort_unstable();
        let total = offenders.len();
        offenders.truncate(MAX_LISTED);
        return Err(Error::Invalid(format!(
            "{total} user ids appear in only one of embeddings and labels; first: {}",
            offenders.join(", ")
        )));
    }
    Ok(embeddings
        .iter()
        .map(|e| LabeledEmbedding {
            user_id: e.user_id.clone(),
            vector: e.vector.iter().map(|&v| v as f64).collect(),
            label: by_id[e.user_id.as_str()],
        })
        .collect())
}

/// `user_id,label,pc1,...,pck`.
pub fn write_pca_csv(path: &Path, rows: &[LabeledEmbedding], projections: &Matrix<f64>) -> Result<()> {
    if rows.len() != projections.rows() {
        return Err(Error::shape("pca export", rows.len(), projections.rows()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string(), "label".to_string()];
    header.extend((1..=projections.cols()).map(|j| format!("pc{j}")));
    w.write_record(&header)?;
    for (r, p) in rows.iter().zip(projections.iter_rows()) {
        let mut rec = vec![r.user_id.clone(), r.label.to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
