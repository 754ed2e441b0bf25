//! Ingestion, splitting, the synthetic click simulator and checkpoints.

mod checkpoint;
mod letor;
mod synthetic;

pub use checkpoint::{
    checkpoint_hash, load_scorer, save_scorer, to_canonical_json, Checkpoint, CHECKPOINT_VERSION,
};
pub use letor::{parse_letor, parse_letor_str, parse_line, write_letor, LetorRecord};
pub use synthetic::{
    attractiveness_order, click_probabilities, expected_clicks, generate_synthetic,
    oracle_optimal_slate, position_discount, read_sidecar, write_sidecar, SyntheticConfig,
    SyntheticDataset, SyntheticItem, SyntheticQuery, ORACLE_MAX_ITEMS,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot split: {0}")]
    Split(String),
    #[error("{0}")]
    Guard(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("corrupt checkpoint: {0}")]
    Integrity(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Query-level shuffled split into train, validation and test.
///
/// Validation and test each receive at least one query.
pub fn split<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>), DataError> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = items.len();
    if n < 3 {
        return Err(DataError::Split(format!("need at least 3 queries, got {n}")));
    }
    let n_val = ((b * n as f64).round() as usize).max(1);
    let n_test = ((c * n as f64).round() as usize).max(1);
    let n_train = n.checked_sub(n_val + n_test).filter(|&t| t >= 1).ok_or_else(|| {
        DataError::Split(format!("{n} queries leave no training data at ratios {ratios:?}"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_queries_split_eight_one_one() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va, te) = split(&items, DEFAULT_SPLIT, 4).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
        assert_eq!(split(&items, DEFAULT_SPLIT, 4).unwrap(), (tr.clone(), va.clone(), te.clone()));
        let mut all: Vec<u32> = tr.into_iter().chain(va).chain(te).collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn too_few_queries() {
        assert!(split(&[1, 2], DEFAULT_SPLIT, 0).is_err());
        assert!(split(&[1, 2, 3], (0.5, 0.5, 0.5), 0).is_err());
        let (tr, va, te) = split(&[1, 2, 3], DEFAULT_SPLIT, 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (1, 1, 1));
    }

    #[test]
    fn partition_for_many_sizes() {
        for n in 3..60 {
            let items: Vec<usize> = (0..n).collect();
            let (tr, va, te) = split(&items, DEFAULT_SPLIT, n as u64).unwrap();
            assert_eq!(tr.len() + va.len() + te.len(), n);
            let mut all: Vec<usize> = tr.into_iter().chain(va).chain(te).collect();
            all.sort_unstable();
            assert_eq!(all, items);
        }
    }
}
