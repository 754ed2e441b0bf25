//! A common interface over DivNet and the comparison methods.

use crate::model::{decode_slate, DecodeMode, DivNetParams, ModelError, RankingInstance};

/// Anything that orders a candidate list.
pub trait Ranker: Sync {
    fn name(&self) -> &str;
    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError>;
}

/// Indices sorted by descending score; ties keep the lower index first.
pub fn argsort_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy sequential decode.
#[derive(Debug, Clone)]
pub struct DivNetRanker<'a> {
    pub params: &'a DivNetParams,
    pub alpha: f64,
    pub name: String,
}

impl<'a> DivNetRanker<'a> {
    pub fn new(params: &'a DivNetParams, alpha: f64) -> Self {
        DivNetRanker {
            params,
            alpha,
            name: "divnet".into(),
        }
    }
}

impl Ranker for DivNetRanker<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(decode_slate(self.params, inst, self.alpha, &DecodeMode::Greedy, 0)?.permutation)
    }
}

/// The upstream order, unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisplayOrder;

impl Ranker for DisplayOrder {
    fn name(&self) -> &str {
        "display"
    }

    fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
        Ok(inst.display_order.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argsort_fixture_and_ties() {
        assert_eq!(argsort_descending(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(argsort_descending(&[0.3; 4]), vec![0, 1, 2, 3]);
        assert_eq!(argsort_descending(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
    }
}
