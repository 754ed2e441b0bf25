//! The sequential slate proposer.
//!
//! At step `t` every remaining candidate is appended to the selected prefix,
//! attends causally over the prefix to produce an embedding `H̄`, and is scored
//! by its utility `y = σ(W_d·H̄ + b)` plus `α` times the determinant of the
//! cosine kernel over the prefix embeddings and its own. Scores are
//! normalised over the remaining set to give the step distribution.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::BoundParams;
use super::ModelError;
use crate::tensor::{CausalMask, Graph, Var};

/// How the next item is chosen from the step distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    /// Highest probability; ties go to the lowest upstream index.
    Greedy,
    /// Draw from the categorical distribution.
    Sample,
    /// Follow a given permutation (teacher forcing, replaying a trajectory).
    Forced(Vec<usize>),
}

impl DecodeMode {
    pub fn kind(&self) -> DecodeKind {
        match self {
            DecodeMode::Greedy => DecodeKind::Greedy,
            DecodeMode::Sample => DecodeKind::Sample,
            DecodeMode::Forced(_) => DecodeKind::Forced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeKind {
    Greedy,
    Sample,
    Forced,
}

/// Decoder projections of every encoded item. Rows depend only on their own
/// item, so prefix keys and values are shared by all candidates of a step.
#[derive(Debug, Clone, Copy)]
pub struct DecoderCache {
    pub queries: Var,
    pub keys: Var,
    pub values: Var,
    pub num_items: usize,
}

pub fn decoder_cache(g: &mut Graph, bound: &BoundParams, encoded: Var) -> Result<DecoderCache, ModelError> {
    Ok(DecoderCache {
        queries: g.matmul(encoded, bound.w_q_d)?,
        keys: g.matmul(encoded, bound.w_k_d)?,
        values: g.matmul(encoded, bound.w_v_d)?,
        num_items: g.dims(encoded).0,
    })
}

/// One candidate evaluated at one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `H̄` for the candidate, `1×D_V`.
    pub embedding: Var,
    /// Utility `y ∈ (0, 1)`, `1×1`.
    pub utility: Var,
    /// Attention weights over `prefix ++ [candidate]`.
    pub attention: Vec<f64>,
}

fn check_candidate(prefix: &[usize], candidate: usize, n: usize) -> Result<(), ModelError> {
    if candidate >= n {
        return Err(ModelError::Contract(format!(
            "candidate {candidate} out of range for {n} items"
        )));
    }
    if prefix.contains(&candidate) {
        return Err(ModelError::Contract(format!(
            "candidate {candidate} is already selected"
        )));
    }
    Ok(())
}

fn utility(g: &mut Graph, bound: &BoundParams, embedding: Var) -> Result<Var, ModelError> {
    let z = g.matmul(embedding, bound.w_out)?;
    let z = g.add(z, bound.b_out)?;
    Ok(g.sigmoid(z))
}

/// Scores `candidate` after `prefix` using the cached projections.
pub fn decode_step(
    g: &mut Graph,
    bound: &BoundParams,
    cache: &DecoderCache,
    prefix: &[usize],
    candidate: usize,
) -> Result<StepOutput, ModelError> {
    check_candidate(prefix, candidate, cache.num_items)?;
    let mut rows = prefix.to_vec();
    rows.push(candidate);
    let q = g.gather_rows(cache.queries, &[candidate])?;
    let k = g.gather_rows(cache.keys, &rows)?;
    let v = g.gather_rows(cache.values, &rows)?;
    let logits = g.matmul_bt(q, k)?;
    let logits = g.scale(logits, 1.0 / (bound.d_k as f64).sqrt());
    let weights = g.softmax_rows(logits)?;
    let attention = g.value(weights).to_vec();
    let embedding = g.matmul(weights, v)?;
    let utility = utility(g, bound, embedding)?;
    Ok(StepOutput {
        embedding,
        utility,
        attention,
    })
}

/// Reference path: rebuilds `Ĥ` for the whole prefix, runs masked attention
/// over all rows and keeps the last one.
pub fn decode_step_uncached(
    g: &mut Graph,
    bound: &BoundParams,
    encoded: Var,
    prefix: &[usize],
    candidate: usize,
) -> Result<StepOutput, ModelError> {
    let n = g.dims(encoded).0;
    check_candidate(prefix, candidate, n)?;
    let mut rows = prefix.to_vec();
    rows.push(candidate);
    let t = rows.len();
    let h = g.gather_rows(encoded, &rows)?;
    let q = g.matmul(h, bound.w_q_d)?;
    let k = g.matmul(h, bound.w_k_d)?;
    let v = g.matmul(h, bound.w_v_d)?;
    let logits = g.matmul_bt(q, k)?;
    let logits = g.scale(logits, 1.0 / (bound.d_k as f64).sqrt());
    let weights = g.masked_softmax_rows(logits, &CausalMask::new(t))?;
    let attention = g.value(weights)[(t - 1) * t..].to_vec();
    let all = g.matmul(weights, v)?;
    let embedding = g.gather_rows(all, &[t - 1])?;
    let utility = utility(g, bound, embedding)?;
    Ok(StepOutput {
        embedding,
        utility,
        attention,
    })
}

/// Determinant of the cosine kernel over `prefix ++ [candidate]` embeddings,
/// clamped to `[0, 1]`. Returns the clamped node and the raw determinant.
/// With an empty prefix the value is exactly 1.
pub fn diversity_det(
    g: &mut Graph,
    prefix: &[Var],
    candidate: Var,
) -> Result<(Var, f64), ModelError> {
    if prefix.is_empty() {
        let one = g.constant_matrix(1, 1, vec![1.0]);
        return Ok((one, 1.0));
    }
    let mut rows = prefix.to_vec();
    rows.push(candidate);
    let stacked = g.concat_rows(&rows)?;
    let unit = g.row_normalize(stacked);
    let kernel = g.matmul_bt(unit, unit)?;
    let det = g.determinant(kernel)?;
    let raw = g.scalar(det);
    Ok((g.clamp(det, 0.0, 1.0), raw))
}

/// `P(c) = (y_c + α·det_c) / Σ (y + α·det)` over the remaining candidates.
pub fn selection_probabilities(utilities: &[f64], dets: &[f64], alpha: f64) -> Result<Vec<f64>, ModelError> {
    if utilities.is_empty() {
        return Err(ModelError::Contract("empty candidate set".into()));
    }
    if utilities.len() != dets.len() {
        return Err(ModelError::Contract(format!(
            "{} utilities vs {} determinants",
            utilities.len(),
            dets.len()
        )));
    }
    check_alpha(alpha)?;
    let scores: Vec<f64> = utilities.iter().zip(dets).map(|(y, d)| y + alpha * d).collect();
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|s| s / total).collect())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), ModelError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::Config(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

/// Everything recorded while choosing one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    /// Remaining item indices, ascending.
    pub candidates: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub utilities: Vec<f64>,
    /// Clamped determinants.
    pub dets: Vec<f64>,
    pub raw_dets: Vec<f64>,
    /// Position of the selected item within `candidates`.
    pub chosen: usize,
}

impl DecodeStep {
    pub fn selected(&self) -> usize {
        self.candidates[self.chosen]
    }

    pub fn selected_probability(&self) -> f64 {
        self.probabilities[self.chosen]
    }

    pub fn selected_utility(&self) -> f64 {
        self.utilities[self.chosen]
    }

    pub fn selected_det(&self) -> f64 {
        self.dets[self.chosen]
    }
}

/// One complete decoding trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateDecode {
    pub permutation: Vec<usize>,
    pub steps: Vec<DecodeStep>,
    /// `H̄` of each selected item, frozen at its selection step.
    pub selected_embeddings: Vec<Vec<f64>>,
    /// Cosine kernel over the selected embeddings, in selection order.
    pub kernel: Vec<Vec<f64>>,
    /// Decoder attention of the item chosen at each step over the items
    /// chosen so far (itself last).
    pub attention: Vec<Vec<f64>>,
    pub log_prob: f64,
    pub kind: DecodeKind,
}

/// A decode whose probabilities are still live graph nodes.
#[derive(Debug, Clone)]
pub struct TracedDecode {
    pub decode: SlateDecode,
    /// `Σ_t log P_t(π_t)`, `1×1`.
    pub log_prob: Var,
    /// Step distributions as `|R_t|×1` nodes, aligned with `decode.steps`.
    pub step_probabilities: Vec<Var>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn check_forced(order: &[usize], n: usize) -> Result<(), ModelError> {
    let mut seen = vec![false; n];
    let ok = order.len() == n
        && order
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
    if ok {
        Ok(())
    } else {
        Err(ModelError::Contract(format!(
            "forced order {order:?} is not a permutation of 0..{n}"
        )))
    }
}

/// Runs all `N` steps on `g`, selecting per `mode`.
pub fn trace_decode(
    g: &mut Graph,
    bound: &BoundParams,
    cache: &DecoderCache,
    alpha: f64,
    mode: &DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<TracedDecode, ModelError> {
    check_alpha(alpha)?;
    let n = cache.num_items;
    if let DecodeMode::Forced(order) = mode {
        check_forced(order, n)?;
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut permutation = Vec::with_capacity(n);
    let mut prefix_embeddings: Vec<Var> = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    let mut step_probabilities = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n);
    let mut log_terms = Vec::with_capacity(n);

    for t in 0..n {
        let mut outputs = Vec::with_capacity(remaining.len());
        let mut scores = Vec::with_capacity(remaining.len());
        let mut utilities = Vec::with_capacity(remaining.len());
        let mut dets = Vec::with_capacity(remaining.len());
        let mut raw_dets = Vec::with_capacity(remaining.len());
        for &c in &remaining {
            let out = decode_step(g, bound, cache, &permutation, c)?;
            let (det, raw) = diversity_det(g, &prefix_embeddings, out.embedding)?;
            let bonus = g.scale(det, alpha);
            scores.push(g.add(out.utility, bonus)?);
            utilities.push(g.scalar(out.utility));
            dets.push(g.scalar(det));
            raw_dets.push(raw);
            outputs.push(out);
        }
        let stacked = g.concat_rows(&scores)?;
        let total = g.sum(stacked);
        let probs = g.div_scalar(stacked, total)?;
        let probabilities = g.value(probs).to_vec();

        let chosen = match mode {
            DecodeMode::Greedy => {
                let mut best = 0;
                for (i, p) in probabilities.iter().enumerate() {
                    if *p > probabilities[best] {
                        best = i;
                    }
                }
                best
            }
            DecodeMode::Sample => WeightedIndex::new(&probabilities)
                .map_err(|e| ModelError::Numeric(format!("step {t}: {e}")))?
                .sample(rng),
            DecodeMode::Forced(order) => remaining
                .iter()
                .position(|&c| c == order[t])
                .expect("forced order validated"),
        };
        let p = g.element(probs, chosen)?;
        log_terms.push(g.log(p));
        let item = remaining.remove(chosen);
        let out = outputs.swap_remove(chosen);
        prefix_embeddings.push(out.embedding);
        attention.push(out.attention);
        permutation.push(item);
        step_probabilities.push(probs);
        let mut candidates = remaining.clone();
        candidates.insert(chosen, item);
        steps.push(DecodeStep {
            candidates,
            probabilities,
            utilities,
            dets,
            raw_dets,
            chosen,
        });
    }

    let log_prob = g.add_all(&log_terms)?;
    let selected_embeddings: Vec<Vec<f64>> = prefix_embeddings
        .iter()
        .map(|v| g.value(*v).to_vec())
        .collect();
    let kernel = selected_embeddings
        .iter()
        .map(|a| selected_embeddings.iter().map(|b| cosine(a, b)).collect())
        .collect();
    Ok(TracedDecode {
        decode: SlateDecode {
            permutation,
            steps,
            selected_embeddings,
            kernel,
            attention,
            log_prob: g.scalar(log_prob),
            kind: mode.kind(),
        },
        log_prob,
        step_probabilities,
    })
}

/// `N×N` lower-triangular matrix; row `t` is the attention of the item chosen
/// at step `t` over the items chosen at steps `0..=t`.
pub fn export_attention(decode: &SlateDecode) -> Vec<Vec<f64>> {
    let n = decode.permutation.len();
    decode
        .attention
        .iter()
        .map(|row| {
            let mut full = row.clone();
            full.resize(n, 0.0);
            full
        })
        .collect()
}
