//! Comparison rerankers: a pointwise scorer, two diversity re-orderings of
//! its scores, and a context-aware per-item scorer sharing DivNet's encoder.

mod pointwise;

pub use pointwise::{train_pointwise, FitConfig, PointwiseScorer};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{
    decode_step, encode_instance, item_utilities, DivNetParams, ModelConfig, ModelError, ParamGrads,
    RankingInstance,
};
use crate::optim::{Adam, AdamConfig};
use crate::ranker::{argsort_descending, Ranker};
use crate::tensor::{linalg, Graph};

/// Log-determinant gain at or below which greedy MAP stops extending.
pub const DPP_LOG_DET_FLOOR: f64 = -30.0;

/// Items by descending score, ties to the lower index.
pub fn pointwise_rank(scores: &[f64]) -> Vec<usize> {
    argsort_descending(scores)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Re-orders every instance by descending scorer output, the upstream list
/// the sequential rerankers start from. Also returns each upstream order so
/// positions can be mapped back to input rows.
pub fn upstream_lists(
    scorer: &PointwiseScorer,
    instances: &[RankingInstance],
) -> Result<(Vec<RankingInstance>, Vec<Vec<usize>>), ModelError> {
    let orders = instances
        .iter()
        .map(|inst| Ok(pointwise_rank(&scorer.score(inst)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let lists = instances.iter().zip(&orders).map(|(i, o)| i.reordered(o)).collect();
    Ok((lists, orders))
}

/// Cosine Gram matrix of the raw item features, row-major, unit diagonal.
pub fn feature_similarity(inst: &RankingInstance) -> Vec<f64> {
    let n = inst.num_items();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        s[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let c = cosine(&inst.item_features[i], &inst.item_features[j]);
            s[i * n + j] = c;
            s[j * n + i] = c;
        }
    }
    s
}

/// Greedy maximal-marginal-relevance order: each step takes the item
/// maximising `u_c − γ·max_{j∈S} cos(x_c, x_j)`.
pub fn submodular_greedy(inst: &RankingInstance, utilities: &[f64], gamma: f64) -> Vec<usize> {
    let n = inst.num_items();
    let sim = feature_similarity(inst);
    let mut selected: Vec<usize> = Vec::with_capacity(n);
    // max similarity to the selected set, 0 while it is empty
    let mut redundancy = vec![0.0f64; n];
    let mut used = vec![false; n];
    for step in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !used[c]) {
            let gain = utilities[c] - gamma * redundancy[c];
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.expect("remaining items");
        used[c] = true;
        selected.push(c);
        for j in 0..n {
            let s = sim[c * n + j];
            redundancy[j] = if step == 0 { s } else { redundancy[j].max(s) };
        }
    }
    selected
}

fn log_det(kernel: &[f64], n: usize, rows: &[usize]) -> f64 {
    let t = rows.len();
    let sub: Vec<f64> = rows
        .iter()
        .flat_map(|&i| rows.iter().map(move |&j| kernel[i * n + j]))
        .collect();
    let det = linalg::determinant(&sub, t);
    if det > 0.0 {
        det.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Greedy MAP inference under `L = diag(u)·S·diag(u)`.
///
/// Each step appends the item with the largest `log det(L_{S∪{c}})`; once the
/// best gain falls to the floor the rest follow in utility order.
pub fn dpp_greedy(inst: &RankingInstance, utilities: &[f64]) -> Vec<usize> {
    let n = inst.num_items();
    let sim = feature_similarity(inst);
    let kernel: Vec<f64> = (0..n * n)
        .map(|k| utilities[k / n] * sim[k] * utilities[k % n])
        .collect();
    let mut selected: Vec<usize> = Vec::with_capacity(n);
    let mut current = 0.0;
    while selected.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|c| !selected.contains(c)) {
            let mut rows = selected.clone();
            rows.push(c);
            let value = log_det(&kernel, n, &rows);
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((c, value));
            }
        }
        let (c, value) = best.expect("remaining items");
        if value - current <= DPP_LOG_DET_FLOOR {
            break;
        }
        selected.push(c);
        current = value;
    }
    for i in argsort_descending(utilities) {
        if !selected.contains(&i) {
            selected.push(i);
        }
    }
    selected
}

/// Trains DivNet's encoder and output head as a per-item click model:
/// every item is scored alone (empty prefix) and fitted with binary
/// cross-entropy.
pub fn train_prm(
    instances: &[RankingInstance],
    config: ModelConfig,
    cfg: &FitConfig,
) -> Result<DivNetParams, ModelError> {
    let mut params = DivNetParams::init(config, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &params.tensor_sizes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut total = ParamGrads::default();
            for &i in batch {
                total.merge(&prm_gradients(&params, &instances[i])?);
            }
            total.scale(1.0 / batch.len() as f64);
            params.accumulate(&total);
            adam.step(&mut params.tensors_mut());
        }
    }
    Ok(params)
}

fn prm_gradients(params: &DivNetParams, inst: &RankingInstance) -> Result<ParamGrads, ModelError> {
    let mut g = Graph::new();
    let enc = encode_instance(&mut g, params, inst)?;
    let mut terms = Vec::with_capacity(inst.num_items());
    for (c, &label) in inst.click_labels.iter().enumerate() {
        let y = decode_step(&mut g, &enc.bound, &enc.cache, &[], c)?.utility;
        let p = if label == 1 {
            y
        } else {
            let neg = g.scale(y, -1.0);
            g.add_scalar(neg, 1.0)
        };
        terms.push(g.log(p));
    }
    let sum = g.add_all(&terms)?;
    let loss = g.scale(sum, -1.0 / terms.len() as f64);
    if !g.scalar(loss).is_finite() {
        return Err(ModelError::Numeric(format!("non-finite loss on instance {}", inst.query_id)));
    }
    g.backward(loss)?;
    Ok(enc.bound.gradients(&g))
}

/// Ranks by the pointwise scorer's click probability.
pub struct PointwiseRanker<'a> {
    pub scorer: &'a PointwiseScorer,
}

impl Ranker for PointwiseRanker<'_> {
    fn name(&self) -> &str {
        "pointwise"
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(pointwise_rank(&self.scorer.score(inst)?))
    }
}

pub struct SubmodularRanker<'a> {
    pub scorer: &'a PointwiseScorer,
    pub gamma: f64,
}

impl Ranker for SubmodularRanker<'_> {
    fn name(&self) -> &str {
        "submodular"
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(submodular_greedy(inst, &self.scorer.score(inst)?, self.gamma))
    }
}

pub struct DppRanker<'a> {
    pub scorer: &'a PointwiseScorer,
}

impl Ranker for DppRanker<'_> {
    fn name(&self) -> &str {
        "dpp"
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(dpp_greedy(inst, &self.scorer.score(inst)?))
    }
}

/// Sorts by the encoder-plus-head utility of each item scored alone.
pub struct PrmRanker<'a> {
    pub params: &'a DivNetParams,
}

impl Ranker for PrmRanker<'_> {
    fn name(&self) -> &str {
        "prm"
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(argsort_descending(&item_utilities(self.params, inst)?))
    }
}

#[cfg(test)]
mod tests;
