use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    combined_loss, ndcg_reward, policy_gradient, reinforce_loss, supervised_step_loss,
    SupervisionTrajectory, TrainConfig, TrainingDecode,
};
use crate::metrics::{evaluate, EvalOptions};
use crate::model::{
    encode_instance, trace_decode, DecodeMode, DivNetParams, ModelError, ParamGrads, RankingInstance,
};
use crate::optim::{Adam, AdamConfig};
use crate::ranker::DivNetRanker;
use crate::tensor::Graph;

/// Loss components of one instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceLoss {
    pub reinforce: f64,
    pub supervised: f64,
    pub total: f64,
    pub mean_reward: f64,
}

/// Gradient of the combined loss on one instance. All trajectories share a
/// single encoder pass and graph.
pub fn instance_gradients(
    params: &DivNetParams,
    inst: &RankingInstance,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamGrads, InstanceLoss), ModelError> {
    instance_gradients_inner(params, inst, cfg, seed).map_err(|e| match e {
        ModelError::Tensor(t) => ModelError::Numeric(format!("instance {}: {t}", inst.query_id)),
        other => other,
    })
}

fn instance_gradients_inner(
    params: &DivNetParams,
    inst: &RankingInstance,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamGrads, InstanceLoss), ModelError> {
    let mut g = Graph::new();
    let enc = encode_instance(&mut g, params, inst)?;
    let labels = inst.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mode, count) = match cfg.decode {
        TrainingDecode::Sample => (DecodeMode::Sample, cfg.samples_per_instance),
        TrainingDecode::Greedy => (DecodeMode::Greedy, 1),
    };
    let decodes = (0..count)
        .map(|_| trace_decode(&mut g, &enc.bound, &enc.cache, cfg.alpha, &mode, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<f64> = decodes
        .iter()
        .map(|d| ndcg_reward(&d.decode, &labels, cfg.reward_cutoff))
        .collect();
    let reinforce = match cfg.decode {
        TrainingDecode::Sample => reinforce_loss(&mut g, &decodes, &rewards, cfg.baseline)?,
        // a lone argmax path has no sampled companions to centre against
        TrainingDecode::Greedy => policy_gradient(&mut g, &decodes, &rewards, &[0.0])?,
    };

    let mut loss = InstanceLoss {
        reinforce: g.scalar(reinforce),
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        ..InstanceLoss::default()
    };
    let total = if cfg.lambda > 0.0 {
        let supervised = match cfg.supervision {
            SupervisionTrajectory::Sampled => {
                let terms = decodes
                    .iter()
                    .map(|d| supervised_step_loss(&mut g, d, &labels, cfg.step_weights))
                    .collect::<Result<Vec<_>, _>>()?;
                let sum = g.add_all(&terms)?;
                g.scale(sum, 1.0 / terms.len() as f64)
            }
            SupervisionTrajectory::LoggedOrder => {
                let forced = DecodeMode::Forced(inst.display_order.clone());
                let logged = trace_decode(&mut g, &enc.bound, &enc.cache, cfg.alpha, &forced, &mut rng)?;
                supervised_step_loss(&mut g, &logged, &labels, cfg.step_weights)?
            }
        };
        loss.supervised = g.scalar(supervised);
        combined_loss(&mut g, reinforce, supervised, cfg.lambda)?
    } else {
        reinforce
    };
    loss.total = g.scalar(total);
    if !loss.total.is_finite() {
        return Err(ModelError::Numeric(format!(
            "non-finite loss {loss:?} on instance {}",
            inst.query_id
        )));
    }
    g.backward(total)?;
    let grads = enc.bound.gradients(&g);
    if !grads.is_finite() {
        return Err(ModelError::Numeric(format!(
            "non-finite gradient on instance {}",
            inst.query_id
        )));
    }
    Ok((grads, loss))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub reinforce_loss: f64,
    pub supervised_loss: f64,
    pub total_loss: f64,
    pub mean_reward: f64,
    pub val_ndcg: Option<f64>,
    pub val_map: Option<f64>,
    pub improved: bool,
}

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DivNetParams,
    pub best_params: DivNetParams,
    pub adam: Adam,
    pub epoch: usize,
    pub best_score: Option<f64>,
    pub stale_epochs: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: DivNetParams, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &params.tensor_sizes(),
        );
        TrainState {
            best_params: params.clone(),
            params,
            adam,
            epoch: 0,
            best_score: None,
            stale_epochs: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

/// Trains from `init` for up to `cfg.max_epochs` epochs.
pub fn train(
    init: DivNetParams,
    train_set: &[RankingInstance],
    validation: &[RankingInstance],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    train_from(TrainState::new(init, cfg), train_set, validation, cfg, on_epoch)
}

/// Continues training from a saved state.
pub fn train_from(
    mut state: TrainState,
    train_set: &[RankingInstance],
    validation: &[RankingInstance],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Contract("empty training set".into()));
    }
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    while state.epoch < cfg.max_epochs && !(cfg.patience > 0 && state.stale_epochs >= cfg.patience) {
        order.sort_unstable();
        order.shuffle(&mut state.rng);
        let mut sums = InstanceLoss::default();
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| state.rng.random()).collect();
            let params = &state.params;
            let results: Vec<_> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| instance_gradients(params, &train_set[i], cfg, seed))
                .collect();
            let mut grads = ParamGrads::default();
            for r in results {
                let (g, l) = r?;
                grads.merge(&g);
                sums.reinforce += l.reinforce;
                sums.supervised += l.supervised;
                sums.total += l.total;
                sums.mean_reward += l.mean_reward;
            }
            grads.scale(1.0 / batch.len() as f64);
            state.params.accumulate(&grads);
            state.adam.step(&mut state.params.tensors_mut());
        }
        state.epoch += 1;

        let n = train_set.len() as f64;
        let mut entry = EpochLog {
            epoch: state.epoch,
            reinforce_loss: sums.reinforce / n,
            supervised_loss: sums.supervised / n,
            total_loss: sums.total / n,
            mean_reward: sums.mean_reward / n,
            val_ndcg: None,
            val_map: None,
            improved: true,
        };
        if validation.is_empty() {
            state.best_params = state.params.clone();
        } else {
            let k = cfg.validation_cutoff;
            let opts = EvalOptions {
                cutoffs: vec![k],
                ild_cutoffs: vec![],
                ..EvalOptions::default()
            };
            let report = evaluate(&DivNetRanker::new(&state.params, cfg.alpha), validation, &opts)?;
            let ndcg = report.get("NDCG", k).unwrap_or(0.0);
            entry.val_ndcg = Some(ndcg);
            entry.val_map = report.get("MAP", k);
            entry.improved = state.best_score.is_none_or(|b| ndcg > b);
            if entry.improved {
                state.best_score = Some(ndcg);
                state.best_params = state.params.clone();
                state.stale_epochs = 0;
            } else {
                state.stale_epochs += 1;
            }
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { state, log })
}
