use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ModelError, RankingInstance};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Graph, Tensor, Var};

/// Settings shared by the per-item baselines' training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Queries per gradient step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One hidden ReLU layer over `[item features, user features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseScorer {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

struct Bound {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

fn input_rows(insts: &[&RankingInstance]) -> (usize, Vec<f64>) {
    let mut data = Vec::new();
    let mut rows = 0;
    for inst in insts {
        for row in &inst.item_features {
            data.extend(row.iter().chain(&inst.user_features));
            rows += 1;
        }
    }
    (rows, data)
}

impl PointwiseScorer {
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // scaled uniform keeps the initial ReLU layer in a sensible range
        let mut uniform = |shape: Vec<usize>, fan_in: usize| {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(shape, data).expect("init shape").with_grad()
        };
        PointwiseScorer {
            w1: uniform(vec![input_dim, hidden], input_dim),
            b1: uniform(vec![hidden], input_dim),
            w2: uniform(vec![hidden, 1], hidden),
            b2: uniform(vec![1], hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.dims().0
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            w1: g.param(&self.w1),
            b1: g.param(&self.b1),
            w2: g.param(&self.w2),
            b2: g.param(&self.b2),
        }
    }

    fn forward(&self, g: &mut Graph, b: &Bound, rows: usize, data: Vec<f64>) -> Result<Var, ModelError> {
        let x = g.constant_matrix(rows, self.input_dim(), data);
        let h = g.matmul(x, b.w1)?;
        let h = g.add_row(h, b.b1)?;
        let h = g.relu(h);
        let z = g.matmul(h, b.w2)?;
        Ok(g.add_row(z, b.b2)?)
    }

    fn check(&self, inst: &RankingInstance) -> Result<(), ModelError> {
        let width = inst.item_dim() + inst.user_dim();
        if width != self.input_dim() {
            return Err(ModelError::Dimension(format!(
                "scorer expects {} input features, query {} has {width}",
                self.input_dim(),
                inst.query_id
            )));
        }
        Ok(())
    }

    /// Click logits, one per item.
    pub fn logits(&self, inst: &RankingInstance) -> Result<Vec<f64>, ModelError> {
        self.check(inst)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (rows, data) = input_rows(&[inst]);
        let z = self.forward(&mut g, &b, rows, data)?;
        Ok(g.value(z).to_vec())
    }

    /// Click probabilities, one per item.
    pub fn score(&self, inst: &RankingInstance) -> Result<Vec<f64>, ModelError> {
        Ok(self.logits(inst)?.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Mean per-item binary cross-entropy on click labels.
    pub fn batch_loss(&self, insts: &[&RankingInstance]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let (rows, data) = input_rows(insts);
        let z = self.forward(&mut g, &b, rows, data)?;
        let targets: Vec<f64> = insts.iter().flat_map(|i| i.labels()).collect();
        let loss = g.bce_with_logits(z, &targets)?;
        Ok(g.scalar(loss) / rows as f64)
    }
}

/// Fits a scorer with Adam on per-item binary cross-entropy.
pub fn train_pointwise(
    instances: &[RankingInstance],
    hidden: usize,
    cfg: &FitConfig,
) -> Result<PointwiseScorer, ModelError> {
    let first = instances
        .first()
        .ok_or_else(|| ModelError::Contract("empty training set".into()))?;
    let mut scorer = PointwiseScorer::init(first.item_dim() + first.user_dim(), hidden, cfg.seed);
    for inst in instances {
        inst.validate()?;
        scorer.check(inst)?;
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &scorer.tensors_mut().map(|t| t.len()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let insts: Vec<&RankingInstance> = batch.iter().map(|&i| &instances[i]).collect();
            let mut g = Graph::new();
            let b = scorer.bind(&mut g);
            let (rows, data) = input_rows(&insts);
            let z = scorer.forward(&mut g, &b, rows, data)?;
            let targets: Vec<f64> = insts.iter().flat_map(|i| i.labels()).collect();
            let loss = g.bce_with_logits(z, &targets)?;
            let loss = g.scale(loss, 1.0 / rows as f64);
            g.backward(loss)?;
            g.accumulate_into(b.w1, &mut scorer.w1);
            g.accumulate_into(b.b1, &mut scorer.b1);
            g.accumulate_into(b.w2, &mut scorer.w2);
            g.accumulate_into(b.b2, &mut scorer.b2);
            adam.step(&mut scorer.tensors_mut());
        }
    }
    Ok(scorer)
}
