//! Self-describing JSON checkpoints.
//!
//! Floats are written with 17 significant digits so every `f64` survives a
//! round trip, and the document carries a SHA-256 digest of its own content
//! (computed with the `checksum` field absent). The digest doubles as the
//! checkpoint's version hash in downstream artifacts.

use std::io;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::DataError;
use crate::baselines::PointwiseScorer;
use crate::model::{DivNetParams, ModelConfig};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::training::TrainState;

pub const CHECKPOINT_VERSION: u64 = 1;

/// Writes floats as `d.dddddddddddddddde±x`.
struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes with full-precision floats and sorted object keys.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, DataError> {
    let value = serde_json::to_value(value).map_err(|e| DataError::Integrity(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| DataError::Integrity(e.to_string()))?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng, DataError> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| DataError::Integrity(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| DataError::Integrity("rng seed must be 32 bytes".into()))?;
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| DataError::Integrity(format!("rng position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    best_score: Option<f64>,
    stale_epochs: usize,
    /// Current (not necessarily best) weights.
    tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    version: u64,
    config: Value,
    model: ModelConfig,
    tensors: Vec<NamedTensor>,
    optimizer: Option<Adam>,
    rng: Option<RngState>,
    progress: Option<Progress>,
}

/// A model plus, optionally, the training state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration, echoed for provenance.
    pub config: Value,
    pub params: DivNetParams,
    /// When present, `state.best_params` equals `params`.
    pub state: Option<TrainState>,
}

fn named(params: &DivNetParams) -> Vec<NamedTensor> {
    params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn restore_params(model: ModelConfig, tensors: &[NamedTensor]) -> Result<DivNetParams, DataError> {
    let mut params = DivNetParams::init(model, 0)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != tensors.len() {
        return Err(DataError::Integrity(format!(
            "{} tensors stored, model needs {}",
            tensors.len(),
            expected.len()
        )));
    }
    for ((slot, (name, shape)), stored) in params.tensors_mut().into_iter().zip(&expected).zip(tensors) {
        if &stored.name != name || &stored.shape != shape {
            return Err(DataError::Integrity(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                stored.name, stored.shape
            )));
        }
        *slot = Tensor::new(shape.clone(), stored.data.clone())
            .map_err(|e| DataError::Integrity(format!("tensor {name}: {e}")))?
            .with_grad();
    }
    Ok(params)
}

impl Checkpoint {
    pub fn new(config: Value, params: DivNetParams) -> Self {
        Checkpoint {
            config,
            params,
            state: None,
        }
    }

    /// Checkpoint of the best weights seen, keeping the state to resume from.
    pub fn from_state(config: Value, state: TrainState) -> Self {
        Checkpoint {
            config,
            params: state.best_params.clone(),
            state: Some(state),
        }
    }

    fn document(&self) -> Document {
        let state = self.state.as_ref();
        Document {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            model: self.params.config,
            tensors: named(&self.params),
            optimizer: state.map(|s| s.adam.clone()),
            rng: state.map(|s| RngState::capture(&s.rng)),
            progress: state.map(|s| Progress {
                epoch: s.epoch,
                best_score: s.best_score,
                stale_epochs: s.stale_epochs,
                tensors: named(&s.params),
            }),
        }
    }

    /// Serialized document with its checksum.
    pub fn save(&self) -> Result<String, DataError> {
        seal(serde_json::to_value(self.document()).map_err(|e| DataError::Integrity(e.to_string()))?)
    }

    pub fn load(text: &str) -> Result<Self, DataError> {
        let doc: Document = serde_json::from_value(unseal(text)?)
            .map_err(|e| DataError::Integrity(format!("malformed checkpoint: {e}")))?;
        let params = restore_params(doc.model, &doc.tensors)?;
        let state = match (doc.optimizer, doc.rng, doc.progress) {
            (Some(adam), Some(rng), Some(progress)) => Some(TrainState {
                params: restore_params(doc.model, &progress.tensors)?,
                best_params: params.clone(),
                adam,
                epoch: progress.epoch,
                best_score: progress.best_score,
                stale_epochs: progress.stale_epochs,
                rng: rng.restore()?,
            }),
            (None, None, None) => None,
            _ => return Err(DataError::Integrity("partial training state".into())),
        };
        Ok(Checkpoint {
            config: doc.config,
            params,
            state,
        })
    }
}

/// Adds the checksum to a document and renders it canonically.
fn seal(mut value: Value) -> Result<String, DataError> {
    let body = to_canonical_json(&value)?;
    value["checksum"] = Value::String(digest(&body));
    let mut text = to_canonical_json(&value)?;
    text.push('\n');
    Ok(text)
}

/// Checks version and checksum, returning the document without its checksum.
fn unseal(text: &str) -> Result<Value, DataError> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| DataError::Integrity(format!("unreadable checkpoint: {e}")))?;
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| DataError::Integrity("checkpoint has no version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let stored = match value.as_object_mut().and_then(|o| o.remove("checksum")) {
        Some(Value::String(s)) => s,
        _ => return Err(DataError::Integrity("checkpoint has no checksum".into())),
    };
    let actual = digest(&to_canonical_json(&value)?);
    if stored != actual {
        return Err(DataError::Integrity(format!(
            "checksum mismatch: stored {stored}, content hashes to {actual}"
        )));
    }
    Ok(value)
}

#[derive(Serialize, Deserialize)]
struct ScorerDocument {
    version: u64,
    kind: String,
    config: Value,
    tensors: Vec<NamedTensor>,
}

const SCORER_KIND: &str = "pointwise-scorer";

/// Saves a pointwise scorer in the checkpoint format.
pub fn save_scorer(scorer: &PointwiseScorer, config: Value) -> Result<String, DataError> {
    let tensors = [("w1", &scorer.w1), ("b1", &scorer.b1), ("w2", &scorer.w2), ("b2", &scorer.b2)]
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let doc = ScorerDocument {
        version: CHECKPOINT_VERSION,
        kind: SCORER_KIND.into(),
        config,
        tensors,
    };
    seal(serde_json::to_value(doc).map_err(|e| DataError::Integrity(e.to_string()))?)
}

pub fn load_scorer(text: &str) -> Result<PointwiseScorer, DataError> {
    let doc: ScorerDocument = serde_json::from_value(unseal(text)?)
        .map_err(|e| DataError::Integrity(format!("malformed scorer: {e}")))?;
    if doc.kind != SCORER_KIND {
        return Err(DataError::Integrity(format!("expected a {SCORER_KIND}, found {}", doc.kind)));
    }
    let [w1, b1, w2, b2] = <[NamedTensor; 4]>::try_from(doc.tensors)
        .map_err(|t| DataError::Integrity(format!("scorer needs 4 tensors, found {}", t.len())))?;
    let tensor = |t: NamedTensor| {
        Tensor::new(t.shape, t.data)
            .map(Tensor::with_grad)
            .map_err(|e| DataError::Integrity(format!("tensor {}: {e}", t.name)))
    };
    let scorer = PointwiseScorer {
        w1: tensor(w1)?,
        b1: tensor(b1)?,
        w2: tensor(w2)?,
        b2: tensor(b2)?,
    };
    let (input, hidden) = scorer.w1.dims();
    if scorer.b1.len() != hidden || scorer.w2.dims() != (hidden, 1) || scorer.b2.len() != 1 || input == 0 {
        return Err(DataError::Integrity("scorer tensor shapes are inconsistent".into()));
    }
    Ok(scorer)
}

/// The checksum recorded in a saved checkpoint.
pub fn checkpoint_hash(text: &str) -> Option<String> {
    let value: Value = serde_json::from_str(text).ok()?;
    value.get("checksum")?.as_str().map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_slate, DecodeMode, RankingInstance};
    use crate::training::TrainConfig;
    use rand::Rng;

    fn params() -> DivNetParams {
        DivNetParams::init(ModelConfig::new(3, 1).with_dims(4, 5), 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = Checkpoint::new(serde_json::json!({"alpha": 0.1}), params());
        let text = ck.save().unwrap();
        let back = Checkpoint::load(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.save().unwrap(), text);
        assert_eq!(checkpoint_hash(&text).unwrap().len(), 64);
    }

    #[test]
    fn awkward_floats_survive() {
        let mut p = params();
        p.w_out.data_mut().copy_from_slice(&[0.1, 1.0 / 3.0, -5e-324, f64::MAX, 2.0f64.powi(-1022)]);
        let text = Checkpoint::new(Value::Null, p.clone()).save().unwrap();
        assert_eq!(Checkpoint::load(&text).unwrap().params, p);
    }

    #[test]
    fn training_state_round_trip() {
        let mut state = TrainState::new(params(), &TrainConfig::default());
        state.epoch = 3;
        state.best_score = Some(0.25);
        state.adam.step = 7;
        state.params.w_q_d.data_mut()[0] = 0.5;
        let _: u64 = state.rng.random();
        let ck = Checkpoint::from_state(Value::Null, state.clone());
        let text = ck.save().unwrap();
        let back = Checkpoint::load(&text).unwrap();
        let restored = back.state.unwrap();
        assert_eq!(restored, state);
        let mut a = state.rng.clone();
        let mut b = restored.rng;
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn version_and_integrity_errors() {
        let text = Checkpoint::new(Value::Null, params()).save().unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":999", 1);
        assert!(matches!(Checkpoint::load(&bumped), Err(DataError::Version { found: 999, .. })));
        assert!(matches!(
            Checkpoint::load(&text[..text.len() / 2]),
            Err(DataError::Integrity(_))
        ));
        let tampered = text.replacen("\"head.b\"", "\"head.c\"", 1);
        assert!(matches!(Checkpoint::load(&tampered), Err(DataError::Integrity(_))));
    }

    #[test]
    fn greedy_decode_survives_reload() {
        let p = params();
        let inst = RankingInstance::from_grades(
            "q",
            (0..5).map(|i| vec![i as f64 * 0.3, 1.0 - i as f64 * 0.1, 0.5]).collect(),
            vec![0.2],
            vec![0, 1, 3, 4, 0],
        );
        let before = decode_slate(&p, &inst, 0.5, &DecodeMode::Greedy, 0).unwrap();
        let back = Checkpoint::load(&Checkpoint::new(Value::Null, p).save().unwrap()).unwrap();
        let after = decode_slate(&back.params, &inst, 0.5, &DecodeMode::Greedy, 0).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn scorer_round_trip() {
        let scorer = PointwiseScorer::init(4, 3, 9);
        let text = save_scorer(&scorer, serde_json::json!({"hidden": 3})).unwrap();
        assert_eq!(load_scorer(&text).unwrap(), scorer);
        assert!(matches!(
            load_scorer(&text.replacen("\"b1\"", "\"b9\"", 1)),
            Err(DataError::Integrity(_))
        ));
        let divnet = Checkpoint::new(Value::Null, params()).save().unwrap();
        assert!(matches!(load_scorer(&divnet), Err(DataError::Integrity(_))));
    }
}
