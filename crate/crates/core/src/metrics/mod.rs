//! Ranking-quality metrics and batch evaluation.
//!
//! All `@k` metrics take labels already arranged in ranked order.
//! `map_at_k` divides by `k`, not by the number of relevant items.

mod report;


pub use report::{evaluate, EvalOptions, EvalReport, MetricRow, QueryBreakdown};
pub use crate::ranker::Ranker;

use crate::model::RankingInstance;

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

/// `Σ_{i<k} (2^rel_i − 1) / log₂(i + 2)` over zero-based positions.
pub fn dcg_at_k(ranked: &[f64], k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, rel)| (2f64.powf(*rel) - 1.0) * discount(i))
        .sum()
}

/// DCG over IDCG; 0 when no item carries gain.
pub fn ndcg_at_k(ranked: &[f64], k: usize) -> f64 {
    let mut ideal = ranked.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg_at_k(ranked, k) / idcg
}

/// Clicked fraction of the top `k` (missing positions count as unclicked).
pub fn precision_at_k(ranked: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "precision cutoff must be at least 1");
    ranked.iter().take(k).filter(|l| **l > 0.0).count() as f64 / k as f64
}

/// `Σ_{i≤k} Pre@i · 1[clicked at i] / k`.
pub fn map_at_k(ranked: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "MAP cutoff must be at least 1");
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, l) in ranked.iter().take(k).enumerate() {
        if *l > 0.0 {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    total / k as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Mean pairwise `1 − cosine` over the raw features of the top `k` items.
pub fn intra_list_distance(inst: &RankingInstance, permutation: &[usize], k: usize) -> f64 {
    let top: Vec<&Vec<f64>> = permutation
        .iter()
        .take(k)
        .map(|&i| &inst.item_features[i])
        .collect();
    if top.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            total += 1.0 - cosine(top[i], top[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Labels of `labels` arranged in `permutation` order.
pub fn arrange(labels: &[f64], permutation: &[usize]) -> Vec<f64> {
    permutation.iter().map(|&i| labels[i]).collect()
}

/// Order-independent mean: values are summed in ascending order.
pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}
