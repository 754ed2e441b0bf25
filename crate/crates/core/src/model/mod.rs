//! The reranker: contextual encoder plus the diversity-corrected sequential
//! decoder.

mod decoder;
mod encoder;
mod instance;
mod params;

pub use decoder::{
    decode_step, decode_step_uncached, decoder_cache, diversity_det, export_attention,
    selection_probabilities, trace_decode, DecodeKind, DecodeMode, DecodeStep, DecoderCache,
    SlateDecode, StepOutput, TracedDecode,
};
pub use encoder::{build_input, categorical_bucket, encode, input_matrix, positional_encoding};
pub use instance::{binarize_grade, RankingInstance};
pub use params::{
    BoundBlock, BoundParams, CategoricalConfig, DivNetParams, EmbeddingBinding, EncoderBlock,
    ModelConfig, ParamGrads, INIT_RANGE,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Graph, TensorError, Var};

/// Default diversity weight.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid instance {query_id}: {detail}")]
    InvalidInstance { query_id: String, detail: String },
    #[error("numerical failure: {0}")]
    Numeric(String),
}

/// Graph state after encoding one instance.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bound: BoundParams,
    pub encoded: Var,
    pub cache: DecoderCache,
}

/// Binds `params` on `g`, builds the input for `inst` and encodes it.
pub fn encode_instance(
    g: &mut Graph,
    params: &DivNetParams,
    inst: &RankingInstance,
) -> Result<Encoded, ModelError> {
    inst.validate()?;
    let mut bound = params.bind(g);
    let z = positional_encoding(inst.num_items(), params.config.input_width());
    let x = build_input(g, params, &mut bound, inst, &z)?;
    let encoded = encode(g, &bound, x)?;
    let cache = decoder_cache(g, &bound, encoded)?;
    Ok(Encoded {
        bound,
        encoded,
        cache,
    })
}

/// Decodes one slate. `seed` only matters in sample mode.
pub fn decode_slate(
    params: &DivNetParams,
    inst: &RankingInstance,
    alpha: f64,
    mode: &DecodeMode,
    seed: u64,
) -> Result<SlateDecode, ModelError> {
    let mut g = Graph::new();
    let enc = encode_instance(&mut g, params, inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(trace_decode(&mut g, &enc.bound, &enc.cache, alpha, mode, &mut rng)?.decode)
}

/// Context-aware utility of every item scored alone (empty prefix), in one
/// encoder pass.
pub fn item_utilities(params: &DivNetParams, inst: &RankingInstance) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new();
    let enc = encode_instance(&mut g, params, inst)?;
    (0..inst.num_items())
        .map(|c| {
            let out = decode_step(&mut g, &enc.bound, &enc.cache, &[], c)?;
            Ok(g.scalar(out.utility))
        })
        .collect()
}
