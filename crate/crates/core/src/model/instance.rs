use serde::{Deserialize, Serialize};

use super::ModelError;

/// One query: the upstream-ranked candidate list with its context and labels.
///
/// Rows of `item_features` are in the upstream (displayed) order, so
/// `display_order` is the identity permutation for freshly ingested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub query_id: String,
    pub item_features: Vec<Vec<f64>>,
    /// Per-item integer codes, one per categorical slot.
    #[serde(default)]
    pub categorical_features: Option<Vec<Vec<u64>>>,
    pub user_features: Vec<f64>,
    pub relevance_grades: Vec<u8>,
    pub click_labels: Vec<u8>,
    pub display_order: Vec<usize>,
}

/// Grades 0-2 are negatives, 3-4 positives.
pub fn binarize_grade(grade: u8) -> u8 {
    u8::from(grade >= 3)
}

impl RankingInstance {
    /// Builds an instance from grades alone; clicks are the binarized grades.
    pub fn from_grades(
        query_id: impl Into<String>,
        item_features: Vec<Vec<f64>>,
        user_features: Vec<f64>,
        relevance_grades: Vec<u8>,
    ) -> Self {
        let n = item_features.len();
        RankingInstance {
            query_id: query_id.into(),
            click_labels: relevance_grades.iter().map(|&g| binarize_grade(g)).collect(),
            item_features,
            categorical_features: None,
            user_features,
            relevance_grades,
            display_order: (0..n).collect(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_features.len()
    }

    pub fn item_dim(&self) -> usize {
        self.item_features.first().map_or(0, Vec::len)
    }

    pub fn user_dim(&self) -> usize {
        self.user_features.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.click_labels.iter().map(|&l| f64::from(l)).collect()
    }

    pub fn grades(&self) -> Vec<f64> {
        self.relevance_grades.iter().map(|&g| f64::from(g)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |detail: String| {
            Err(ModelError::InvalidInstance {
                query_id: self.query_id.clone(),
                detail,
            })
        };
        let n = self.num_items();
        if n == 0 {
            return bad("no items".into());
        }
        let m = self.item_dim();
        if let Some(i) = self.item_features.iter().position(|r| r.len() != m) {
            return bad(format!("item {i} has {} features, expected {m}", self.item_features[i].len()));
        }
        if self.click_labels.len() != n || self.relevance_grades.len() != n {
            return bad(format!(
                "{} items but {} labels and {} grades",
                n,
                self.click_labels.len(),
                self.relevance_grades.len()
            ));
        }
        if self.click_labels.iter().any(|&l| l > 1) {
            return bad("click labels must be 0 or 1".into());
        }
        if self.relevance_grades.iter().any(|&g| g > 4) {
            return bad("grades must lie in 0..=4".into());
        }
        if let Some(cat) = &self.categorical_features {
            if cat.len() != n {
                return bad(format!("{} categorical rows for {n} items", cat.len()));
            }
        }
        let mut seen = vec![false; n];
        if self.display_order.len() != n
            || self.display_order.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return bad("display_order is not a permutation".into());
        }
        let finite = self.item_features.iter().flatten().chain(&self.user_features).all(|v| v.is_finite());
        if !finite {
            return bad("non-finite feature".into());
        }
        Ok(())
    }

    /// Same query with items re-ordered; row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let pick = |v: &[u8]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        RankingInstance {
            query_id: self.query_id.clone(),
            item_features: order.iter().map(|&i| self.item_features[i].clone()).collect(),
            categorical_features: self
                .categorical_features
                .as_ref()
                .map(|c| order.iter().map(|&i| c[i].clone()).collect()),
            user_features: self.user_features.clone(),
            relevance_grades: pick(&self.relevance_grades),
            click_labels: pick(&self.click_labels),
            display_order: (0..order.len()).collect(),
        }
    }
}
