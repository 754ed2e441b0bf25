//! Diversity-aware sequential slate reranking.
//!
//! A self-attention encoder reads the whole candidate list; a causal decoder
//! then picks items one at a time, scoring each remaining candidate by its
//! estimated utility plus a determinant bonus for being unlike the items
//! already chosen. Training mixes REINFORCE on an NDCG reward with a
//! discounted per-step cross-entropy.

pub mod baselines;
pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod ranker;
pub mod tensor;
pub mod training;

pub use data::{Checkpoint, DataError, SyntheticConfig};
pub use metrics::{evaluate, EvalOptions, EvalReport};
pub use model::{
    decode_slate, DecodeMode, DivNetParams, ModelConfig, ModelError, RankingInstance, SlateDecode,
};
pub use ranker::{DivNetRanker, Ranker};
pub use tensor::{Tensor, TensorError};
pub use training::{train, TrainConfig, TrainState};
