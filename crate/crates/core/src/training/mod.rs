//! The hybrid objective: REINFORCE on an NDCG reward plus a discounted
//! per-step cross-entropy term, and the loop that minimises it.

mod trainer;

pub use trainer::{
    instance_gradients, train, train_from, EpochLog, InstanceLoss, TrainOutcome, TrainState,
};

use serde::{Deserialize, Serialize};

use crate::metrics::{arrange, ndcg_at_k};
use crate::model::{DecodeKind, ModelError, SlateDecode, TracedDecode, DEFAULT_ALPHA};
use crate::tensor::{Graph, Var};

/// Weight `w_t` of the step-`t` cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepWeightMode {
    Uniform,
    /// `w_t = 1 / log₂(t + 1)` for 1-based `t`.
    LogDiscount,
}

impl StepWeightMode {
    pub fn weight(self, step: usize) -> f64 {
        match self {
            StepWeightMode::Uniform => 1.0,
            StepWeightMode::LogDiscount => 1.0 / ((step + 1) as f64).log2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    None,
    /// Each trajectory's reward is centred on the mean reward of the other
    /// trajectories sampled for the same instance.
    BatchMean,
}

/// Which prefix conditions the supervised term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionTrajectory {
    Sampled,
    LoggedOrder,
}

/// How trajectories are produced during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingDecode {
    Sample,
    /// One argmax trajectory per instance (the no-sampling ablation).
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub samples_per_instance: usize,
    pub step_weights: StepWeightMode,
    pub baseline: BaselineMode,
    pub supervision: SupervisionTrajectory,
    pub decode: TrainingDecode,
    /// Reward NDCG cutoff; `None` scores the full list.
    pub reward_cutoff: Option<usize>,
    pub seed: u64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub validation_cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: DEFAULT_ALPHA,
            lambda: 0.1,
            learning_rate: 0.01,
            batch_size: 256,
            samples_per_instance: 4,
            step_weights: StepWeightMode::LogDiscount,
            baseline: BaselineMode::BatchMean,
            supervision: SupervisionTrajectory::Sampled,
            decode: TrainingDecode::Sample,
            reward_cutoff: None,
            seed: 0,
            max_epochs: 30,
            patience: 5,
            validation_cutoff: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.samples_per_instance == 0 {
            return fail("batch size and samples per instance must be at least 1".into());
        }
        if self.reward_cutoff == Some(0) || self.validation_cutoff == 0 {
            return fail("cutoffs must be at least 1".into());
        }
        Ok(())
    }
}

/// NDCG of `labels` arranged in the decoded order; 0 without positives.
pub fn ndcg_reward(decode: &SlateDecode, labels: &[f64], cutoff: Option<usize>) -> f64 {
    let ranked = arrange(labels, &decode.permutation);
    ndcg_at_k(&ranked, cutoff.unwrap_or(ranked.len()))
}

/// Per-trajectory baseline values.
pub fn baselines(rewards: &[f64], mode: BaselineMode) -> Vec<f64> {
    let s = rewards.len();
    match mode {
        BaselineMode::BatchMean if s > 1 => {
            // summing the others directly keeps equal rewards exactly centred
            (0..s)
                .map(|i| {
                    let others: f64 = rewards.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r).sum();
                    others / (s - 1) as f64
                })
                .collect()
        }
        _ => vec![0.0; s],
    }
}

/// Policy-gradient surrogate `−(1/S)·Σ (R_s − b_s)·log P(π_s)`.
///
/// Argmax trajectories are rejected: their log-probability is not a Monte
/// Carlo sample of the policy.
pub fn reinforce_loss(
    g: &mut Graph,
    decodes: &[TracedDecode],
    rewards: &[f64],
    mode: BaselineMode,
) -> Result<Var, ModelError> {
    if let Some(d) = decodes.iter().find(|d| d.decode.kind == DecodeKind::Greedy) {
        return Err(ModelError::Contract(format!(
            "greedy trajectory {:?} passed to the policy-gradient term",
            d.decode.permutation
        )));
    }
    policy_gradient(g, decodes, rewards, &baselines(rewards, mode))
}

pub(crate) fn policy_gradient(
    g: &mut Graph,
    decodes: &[TracedDecode],
    rewards: &[f64],
    baselines: &[f64],
) -> Result<Var, ModelError> {
    if decodes.is_empty() || decodes.len() != rewards.len() {
        return Err(ModelError::Contract(format!(
            "{} trajectories with {} rewards",
            decodes.len(),
            rewards.len()
        )));
    }
    let scale = -1.0 / decodes.len() as f64;
    let terms: Vec<Var> = decodes
        .iter()
        .zip(rewards.iter().zip(baselines))
        .map(|(d, (r, b))| g.scale(d.log_prob, scale * (r - b)))
        .collect();
    Ok(g.add_all(&terms)?)
}

/// `Σ_t w_t · (−Σ_{c ∈ R_t} label_c · log P_t(c))` along the traced path.
pub fn supervised_step_loss(
    g: &mut Graph,
    decode: &TracedDecode,
    labels: &[f64],
    mode: StepWeightMode,
) -> Result<Var, ModelError> {
    let mut terms = Vec::new();
    for (t, (step, probs)) in decode.decode.steps.iter().zip(&decode.step_probabilities).enumerate() {
        let targets: Vec<f64> = step.candidates.iter().map(|&c| labels[c]).collect();
        if targets.iter().all(|&y| y == 0.0) {
            continue;
        }
        let y = g.constant_matrix(targets.len(), 1, targets);
        let logp = g.log(*probs);
        let picked = g.mul(logp, y)?;
        let total = g.sum(picked);
        terms.push(g.scale(total, -mode.weight(t + 1)));
    }
    if terms.is_empty() {
        return Ok(g.constant_matrix(1, 1, vec![0.0]));
    }
    Ok(g.add_all(&terms)?)
}

/// `reinforce + λ·supervised`.
pub fn combined_loss(g: &mut Graph, reinforce: Var, supervised: Var, lambda: f64) -> Result<Var, ModelError> {
    let weighted = g.scale(supervised, lambda);
    Ok(g.add(reinforce, weighted)?)
}
