use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{Graph, Tensor, Var};

/// Range of the uniform initialisation for every parameter.
pub const INIT_RANGE: f64 = 0.1;

/// Hash-bucketed embedding for discrete item features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalConfig {
    pub buckets: usize,
    pub width: usize,
    /// Number of codes per item; each slot's embedding is appended.
    pub slots: usize,
}

impl Default for CategoricalConfig {
    fn default() -> Self {
        CategoricalConfig {
            buckets: 1 << 16,
            width: 8,
            slots: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Continuous item feature width `M`.
    pub item_dim: usize,
    /// User context width `K`.
    pub user_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Stacked encoder blocks.
    pub blocks: usize,
    #[serde(default)]
    pub categorical: Option<CategoricalConfig>,
}

impl ModelConfig {
    pub fn new(item_dim: usize, user_dim: usize) -> Self {
        ModelConfig {
            item_dim,
            user_dim,
            d_k: 64,
            d_v: 64,
            blocks: 1,
            categorical: None,
        }
    }

    pub fn with_dims(mut self, d_k: usize, d_v: usize) -> Self {
        self.d_k = d_k;
        self.d_v = d_v;
        self
    }

    /// Width of each encoder input row, and of the position embedding.
    pub fn input_width(&self) -> usize {
        let cat = self.categorical.map_or(0, |c| c.slots * c.width);
        self.item_dim + cat + self.user_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_k == 0 || self.d_v == 0 || self.blocks == 0 || self.input_width() == 0 {
            return Err(ModelError::Config(format!(
                "dimensions must be positive: {self:?}"
            )));
        }
        if let Some(c) = self.categorical {
            if c.buckets == 0 || c.width == 0 || c.slots == 0 {
                return Err(ModelError::Config(format!("bad categorical config {c:?}")));
            }
        }
        Ok(())
    }
}

/// Self-attention block weights: `W_Q`, `W_K`, `W_V`, `W_O` and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

/// Every trainable weight of the reranker.
#[derive(Debug, Clone, PartialEq)]
pub struct DivNetParams {
    pub config: ModelConfig,
    pub encoder: Vec<EncoderBlock>,
    pub w_q_d: Tensor,
    pub w_k_d: Tensor,
    pub w_v_d: Tensor,
    /// Output head `W_d`, stored as a `D_V×1` column.
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub embedding: Option<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
    Tensor::new(shape, data).expect("init shape").with_grad()
}

impl DivNetParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (o, dk, dv) = (config.input_width(), config.d_k, config.d_v);
        let encoder = (0..config.blocks)
            .map(|b| {
                let width = if b == 0 { o } else { dk };
                EncoderBlock {
                    w_q: uniform(&mut rng, vec![width, dk]),
                    w_k: uniform(&mut rng, vec![width, dk]),
                    w_v: uniform(&mut rng, vec![width, dv]),
                    w_o: uniform(&mut rng, vec![dv, dk]),
                    ln_gain: uniform(&mut rng, vec![dk]),
                    ln_bias: uniform(&mut rng, vec![dk]),
                }
            })
            .collect();
        let w_q_d = uniform(&mut rng, vec![dk, dk]);
        let w_k_d = uniform(&mut rng, vec![dk, dk]);
        let w_v_d = uniform(&mut rng, vec![dk, dv]);
        let w_out = uniform(&mut rng, vec![dv, 1]);
        let b_out = uniform(&mut rng, vec![1]);
        let embedding = config
            .categorical
            .map(|c| uniform(&mut rng, vec![c.buckets, c.width]));
        Ok(DivNetParams {
            config,
            encoder,
            w_q_d,
            w_k_d,
            w_v_d,
            w_out,
            b_out,
            embedding,
        })
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.w_q"), &b.w_q));
            out.push((format!("encoder.{i}.w_k"), &b.w_k));
            out.push((format!("encoder.{i}.w_v"), &b.w_v));
            out.push((format!("encoder.{i}.w_o"), &b.w_o));
            out.push((format!("encoder.{i}.ln_gain"), &b.ln_gain));
            out.push((format!("encoder.{i}.ln_bias"), &b.ln_bias));
        }
        out.push(("decoder.w_q".into(), &self.w_q_d));
        out.push(("decoder.w_k".into(), &self.w_k_d));
        out.push(("decoder.w_v".into(), &self.w_v_d));
        out.push(("head.w".into(), &self.w_out));
        out.push(("head.b".into(), &self.b_out));
        if let Some(e) = &self.embedding {
            out.push(("embedding".into(), e));
        }
        out
    }

    /// Mutable view in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            out.push(&mut b.w_q);
            out.push(&mut b.w_k);
            out.push(&mut b.w_v);
            out.push(&mut b.w_o);
            out.push(&mut b.ln_gain);
            out.push(&mut b.ln_bias);
        }
        out.push(&mut self.w_q_d);
        out.push(&mut self.w_k_d);
        out.push(&mut self.w_v_d);
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        if let Some(e) = &mut self.embedding {
            out.push(e);
        }
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.named_tensors().iter().map(|(_, t)| t.len()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensor_sizes().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Copies the dense weights onto `g` as gradient-receiving leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let blocks = self
            .encoder
            .iter()
            .map(|b| BoundBlock {
                w_q: g.param(&b.w_q),
                w_k: g.param(&b.w_k),
                w_v: g.param(&b.w_v),
                w_o: g.param(&b.w_o),
                ln_gain: g.param(&b.ln_gain),
                ln_bias: g.param(&b.ln_bias),
            })
            .collect();
        BoundParams {
            blocks,
            w_q_d: g.param(&self.w_q_d),
            w_k_d: g.param(&self.w_k_d),
            w_v_d: g.param(&self.w_v_d),
            w_out: g.param(&self.w_out),
            b_out: g.param(&self.b_out),
            embedding: None,
            d_k: self.config.d_k,
        }
    }

    /// Adds collected gradients into the parameters' gradient slots.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        let has_embedding = self.embedding.is_some();
        let mut tensors = self.tensors_mut();
        let embedding = if has_embedding { tensors.pop() } else { None };
        for (t, g) in tensors.into_iter().zip(&grads.dense) {
            t.grad_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        if let Some(table) = embedding {
            let width = table.dims().1;
            for (bucket, row) in &grads.embedding_rows {
                let dst = &mut table.grad_mut()[bucket * width..(bucket + 1) * width];
                dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundBlock {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

/// Embedding rows looked up for one instance; `buckets[i]` is the table row
/// behind row `i` of `rows`.
#[derive(Debug, Clone)]
pub struct EmbeddingBinding {
    pub rows: Var,
    pub buckets: Vec<usize>,
    pub width: usize,
}

/// Parameters as leaves of one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub blocks: Vec<BoundBlock>,
    pub w_q_d: Var,
    pub w_k_d: Var,
    pub w_v_d: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub embedding: Option<EmbeddingBinding>,
    pub d_k: usize,
}

/// Gradients pulled off a graph, dense tensors in
/// [`DivNetParams::named_tensors`] order (embedding excluded) plus sparse
/// embedding rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads {
    pub dense: Vec<Vec<f64>>,
    pub embedding_rows: Vec<(usize, Vec<f64>)>,
}

impl BoundParams {
    fn dense_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([b.w_q, b.w_k, b.w_v, b.w_o, b.ln_gain, b.ln_bias]);
        }
        out.extend([self.w_q_d, self.w_k_d, self.w_v_d, self.w_out, self.b_out]);
        out
    }

    pub fn gradients(&self, g: &Graph) -> ParamGrads {
        let dense = self
            .dense_vars()
            .into_iter()
            .map(|v| {
                g.grad(v)
                    .map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec)
            })
            .collect();
        let embedding_rows = match &self.embedding {
            Some(e) => match g.grad(e.rows) {
                Some(grad) => e
                    .buckets
                    .iter()
                    .zip(grad.chunks(e.width))
                    .map(|(&b, row)| (b, row.to_vec()))
                    .collect(),
                None => Vec::new(),
            },
            None => Vec::new(),
        };
        ParamGrads {
            dense,
            embedding_rows,
        }
    }
}

impl ParamGrads {
    /// `self += other`, entry by entry.
    pub fn merge(&mut self, other: &ParamGrads) {
        if self.dense.is_empty() {
            self.dense = other.dense.clone();
        } else {
            for (a, b) in self.dense.iter_mut().zip(&other.dense) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        self.embedding_rows.extend(other.embedding_rows.iter().cloned());
    }

    pub fn scale(&mut self, factor: f64) {
        for d in &mut self.dense {
            d.iter_mut().for_each(|x| *x *= factor);
        }
        for (_, row) in &mut self.embedding_rows {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().flatten().all(|v| v.is_finite())
            && self.embedding_rows.iter().flat_map(|(_, r)| r).all(|v| v.is_finite())
    }
}
