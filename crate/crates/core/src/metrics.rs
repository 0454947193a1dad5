//! Ranking and neighbourhood metrics.

use crate::error::{LlpError, Result};
use crate::knn::NeighborGraph;

/// Area under the ROC curve as the normalised Mann-Whitney statistic,
/// `(concordant + 0.5 * tied) / (n_pos * n_neg)`, using midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(LlpError::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LlpError::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LlpError::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of midranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] != 0)
            .count();
        rank_sum += midrank * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Fraction of nodes whose neighbours' majority label equals their own;
/// a tied vote earns half credit. Nodes without neighbours are skipped.
pub fn knn_label_score(graph: &NeighborGraph, labels: &[u8]) -> Result<f64> {
    if labels.len() != graph.num_nodes() {
        return Err(LlpError::DimensionMismatch {
            expected: graph.num_nodes(),
            got: labels.len(),
        });
    }
    let mut credit = 0.0;
    let mut counted = 0usize;
    for (i, ns) in graph.neighbors.iter().enumerate() {
        if ns.is_empty() {
            continue;
        }
        counted += 1;
        let ones = ns.iter().filter(|&&j| labels[j] != 0).count();
        let zeros = ns.len() - ones;
        let own_votes = if labels[i] != 0 { ones } else { zeros };
        let other_votes = ns.len() - own_votes;
        credit += match own_votes.cmp(&other_votes) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => 0.0,
        };
    }
    if counted == 0 {
        return Err(LlpError::InvalidArgument("graph has no edges".into()));
    }
    Ok(credit / counted as f64)
}
