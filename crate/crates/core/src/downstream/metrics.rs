use crate::error::{Error, Result};

/// Area under the ROC curve as a rank statistic. Ties count one half.
///
/// Computed from doubled midranks so the result is the same rational
/// number a pairwise count produces.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc score is NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum over positives of 2 * midrank, ranks starting at 1.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_mid * tied_pos;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Fraction of exact matches.
pub fn accuracy<L: PartialEq>(predictions: &[L], labels: &[L]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("accuracy", predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
