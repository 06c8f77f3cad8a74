use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MclError, Result};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Requested k → fraction of queries with a same-class video among their
    /// top-k neighbours.
    pub recalls: BTreeMap<usize, f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Gallery indices by decreasing cosine similarity; ties keep gallery order.
pub fn rank_neighbours(query: &[f64], gallery: &[Vec<f64>]) -> Vec<usize> {
    let sims: Vec<f64> = gallery.iter().map(|g| cosine(query, g)).collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order
}

/// Recall@k of test queries against the train gallery. A `k` larger than the
/// gallery is clamped to its size.
pub fn retrieval(
    test: &[Vec<f64>],
    test_labels: &[u32],
    train: &[Vec<f64>],
    train_labels: &[u32],
    ks: &[usize],
) -> Result<RetrievalResult> {
    if test.is_empty() || train.is_empty() {
        return Err(MclError::Input("retrieval needs non-empty query and gallery sets".into()));
    }
    if test.len() != test_labels.len() || train.len() != train_labels.len() {
        return Err(MclError::Input("one label per feature row is required".into()));
    }
    if ks.contains(&0) {
        return Err(MclError::Input("k must be at least 1".into()));
    }
    for &k in ks.iter().filter(|&&k| k > train.len()) {
        log::warn!("R@{k} clamped to the gallery size {}", train.len());
    }
    // Rank of the first same-class neighbour, per query.
    let first_hit: Vec<Option<usize>> = test
        .iter()
        .zip(test_labels)
        .map(|(q, &l)| rank_neighbours(q, train).iter().position(|&i| train_labels[i] == l))
        .collect();
    let recalls = ks
        .iter()
        .map(|&k| {
            let k_eff = k.min(train.len());
            let hits = first_hit.iter().filter(|r| r.is_some_and(|r| r < k_eff)).count();
            (k, hits as f64 / test.len() as f64)
        })
        .collect();
    Ok(RetrievalResult { recalls })
}
