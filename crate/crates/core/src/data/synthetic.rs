//! Click simulator with planted same-category suppression.
//!
//! Each query holds `N` items with a category and an attractiveness `a`.
//! Walking down a displayed order, the item at 1-based step `t` is clicked
//! with probability `a · d_t · β^m`, where `d_t = 1/log₂(t+1)` and `m` counts
//! earlier items of the same category. Small `β` rewards interleaving.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::RankingInstance;

/// Largest slate the exhaustive oracle will enumerate.
pub const ORACLE_MAX_ITEMS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_items: usize,
    pub num_categories: usize,
    pub attractiveness_min: f64,
    pub attractiveness_max: f64,
    pub beta: f64,
    /// Scale of the one-hot category block.
    pub signal: f64,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_items: 10,
            num_categories: 5,
            attractiveness_min: 0.1,
            attractiveness_max: 0.9,
            beta: 0.5,
            signal: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.num_items == 0 || self.num_categories == 0 {
            return bad("num_items and num_categories must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        let (lo, hi) = (self.attractiveness_min, self.attractiveness_max);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("attractiveness range [{lo}, {hi}] must lie within [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.signal.is_finite()) {
            return bad("noise must be >= 0 and signal finite".into());
        }
        Ok(())
    }

    /// Item feature width: one column per category plus the attractiveness channel.
    pub fn feature_width(&self) -> usize {
        self.num_categories + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticItem {
    pub category: usize,
    pub attractiveness: f64,
}

/// Ground truth of one query, items in the same row order as the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub items: Vec<SyntheticItem>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub instances: Vec<RankingInstance>,
    pub truth: Vec<SyntheticQuery>,
}

/// `1 / log₂(t + 1)` for 1-based step `t`.
pub fn position_discount(step: usize) -> f64 {
    1.0 / ((step + 1) as f64).log2()
}

/// Click probability of every position when `truth` is shown in `order`.
pub fn click_probabilities(truth: &SyntheticQuery, order: &[usize]) -> Vec<f64> {
    let mut seen = std::collections::HashMap::new();
    order
        .iter()
        .enumerate()
        .map(|(t, &i)| {
            let item = truth.items[i];
            let m = seen.entry(item.category).or_insert(0i32);
            let p = item.attractiveness * position_discount(t + 1) * truth.beta.powi(*m);
            *m += 1;
            p
        })
        .collect()
}

/// Expected number of clicks when `truth` is shown in `order`.
pub fn expected_clicks(truth: &SyntheticQuery, order: &[usize]) -> f64 {
    click_probabilities(truth, order).iter().sum()
}

fn grade_for(click: bool, attractiveness: f64) -> u8 {
    if click {
        3 + u8::from(attractiveness >= 0.5)
    } else {
        ((attractiveness * 3.0).floor() as u8).min(2)
    }
}

/// Draws `num_queries` queries. A pure function of the config (including its seed).
pub fn generate_synthetic(cfg: &SyntheticConfig, num_queries: usize) -> Result<SyntheticDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| DataError::Config(e.to_string()))?;
    let n = cfg.num_items;
    let mut instances = Vec::with_capacity(num_queries);
    let mut truth = Vec::with_capacity(num_queries);
    for q in 0..num_queries {
        let mut items: Vec<SyntheticItem> = (0..n)
            .map(|_| SyntheticItem {
                category: rng.random_range(0..cfg.num_categories),
                attractiveness: rng.random_range(cfg.attractiveness_min..=cfg.attractiveness_max),
            })
            .collect();
        // rows are stored in the logged display order
        items.shuffle(&mut rng);
        let query = SyntheticQuery {
            query_id: format!("s{q}"),
            items,
            beta: cfg.beta,
        };
        let display: Vec<usize> = (0..n).collect();
        let probs = click_probabilities(&query, &display);
        let mut features = Vec::with_capacity(n);
        let mut grades = Vec::with_capacity(n);
        for (item, p) in query.items.iter().zip(&probs) {
            let mut row = vec![0.0; cfg.feature_width()];
            row[item.category] = cfg.signal;
            row[cfg.num_categories] = item.attractiveness;
            for v in &mut row {
                *v += noise.sample(&mut rng);
            }
            features.push(row);
            let click = rng.random::<f64>() < *p;
            grades.push(grade_for(click, item.attractiveness));
        }
        instances.push(RankingInstance::from_grades(query.query_id.clone(), features, vec![], grades));
        truth.push(query);
    }
    Ok(SyntheticDataset { instances, truth })
}

/// Best order by exhaustive search, with its expected clicks. Among equal
/// optima the lexicographically first order wins.
pub fn oracle_optimal_slate(truth: &SyntheticQuery) -> Result<(Vec<usize>, f64), DataError> {
    let n = truth.items.len();
    if n > ORACLE_MAX_ITEMS {
        return Err(DataError::Guard(format!(
            "exhaustive search over {n}! orders refused; use at most {ORACLE_MAX_ITEMS} items per query"
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let categories = truth.items.iter().map(|i| i.category).max().unwrap_or(0) + 1;
    let mut search = Search {
        truth,
        counts: vec![0; categories],
        used: vec![false; n],
        current: Vec::with_capacity(n),
        best: Vec::new(),
        best_value: f64::NEG_INFINITY,
    };
    search.descend(0.0);
    Ok((search.best, search.best_value))
}

struct Search<'a> {
    truth: &'a SyntheticQuery,
    counts: Vec<i32>,
    used: Vec<bool>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
}

impl Search<'_> {
    fn descend(&mut self, value: f64) {
        let n = self.used.len();
        if self.current.len() == n {
            if value > self.best_value {
                self.best_value = value;
                self.best = self.current.clone();
            }
            return;
        }
        let d = position_discount(self.current.len() + 1);
        for i in 0..n {
            if self.used[i] {
                continue;
            }
            let item = self.truth.items[i];
            let gain = item.attractiveness * d * self.truth.beta.powi(self.counts[item.category]);
            self.used[i] = true;
            self.counts[item.category] += 1;
            self.current.push(i);
            self.descend(value + gain);
            self.current.pop();
            self.counts[item.category] -= 1;
            self.used[i] = false;
        }
    }
}

/// Items sorted by descending attractiveness, ties by index.
pub fn attractiveness_order(truth: &SyntheticQuery) -> Vec<usize> {
    let a: Vec<f64> = truth.items.iter().map(|i| i.attractiveness).collect();
    crate::ranker::argsort_descending(&a)
}

/// Sidecar rows: `qid,item,category,attractiveness,beta`.
pub fn write_sidecar(truth: &[SyntheticQuery]) -> String {
    let mut out = String::from("qid,item,category,attractiveness,beta\n");
    for q in truth {
        for (i, item) in q.items.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{i},{},{:?},{:?}",
                q.query_id, item.category, item.attractiveness, q.beta
            );
        }
    }
    out
}

pub fn read_sidecar(text: &str) -> Result<Vec<SyntheticQuery>, DataError> {
    let mut out: Vec<SyntheticQuery> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: &str| DataError::Parse {
            line: i + 1,
            detail: detail.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [qid, item, category, a, beta] = fields[..] else {
            return Err(err("expected 5 comma-separated fields"));
        };
        let item: usize = item.parse().map_err(|_| err("bad item index"))?;
        let category: usize = category.parse().map_err(|_| err("bad category"))?;
        let attractiveness: f64 = a.parse().map_err(|_| err("bad attractiveness"))?;
        let beta: f64 = beta.parse().map_err(|_| err("bad beta"))?;
        if out.last().is_none_or(|q| q.query_id != qid) {
            out.push(SyntheticQuery {
                query_id: qid.to_string(),
                items: Vec::new(),
                beta,
            });
        }
        let q = out.last_mut().expect("pushed above");
        if item != q.items.len() {
            return Err(err("items must be listed in order"));
        }
        q.items.push(SyntheticItem {
            category,
            attractiveness,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(items: &[(usize, f64)], beta: f64) -> SyntheticQuery {
        SyntheticQuery {
            query_id: "q".into(),
            items: items
                .iter()
                .map(|&(category, attractiveness)| SyntheticItem {
                    category,
                    attractiveness,
                })
                .collect(),
            beta,
        }
    }

    fn all_orders(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in all_orders(n - 1) {
            for pos in 0..=rest.len() {
                let mut o = rest.clone();
                o.insert(pos, n - 1);
                out.push(o);
            }
        }
        out
    }

    #[test]
    fn generation_is_pure_and_shaped() {
        let cfg = SyntheticConfig {
            num_items: 6,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg, 5).unwrap();
        assert_eq!(a, generate_synthetic(&cfg, 5).unwrap());
        assert_eq!(a.instances.len(), 5);
        for inst in &a.instances {
            inst.validate().unwrap();
            assert_eq!(inst.item_dim(), 6);
        }
        let other = generate_synthetic(&SyntheticConfig { seed: 1, ..cfg }, 5).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn suppression_halves_second_same_category_item() {
        let q = query(&[(0, 0.8), (0, 0.8), (1, 0.8)], 0.5);
        let adjacent = click_probabilities(&q, &[0, 1, 2]);
        let fresh = click_probabilities(&q, &[0, 2, 1]);
        assert!((adjacent[1] / fresh[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unit_beta_ctr_matches_discounted_attractiveness() {
        let cfg = SyntheticConfig {
            num_items: 4,
            num_categories: 2,
            beta: 1.0,
            seed: 3,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg, 50_000).unwrap();
        let mut observed = 0.0;
        let mut expected = 0.0;
        let mut variance = 0.0;
        for (inst, truth) in data.instances.iter().zip(&data.truth) {
            // first row is shown first: click probability is a alone
            let p = truth.items[0].attractiveness * position_discount(1);
            observed += f64::from(inst.click_labels[0]);
            expected += p;
            variance += p * (1.0 - p);
            let p3 = truth.items[2].attractiveness * position_discount(3);
            observed += f64::from(inst.click_labels[2]);
            expected += p3;
            variance += p3 * (1.0 - p3);
        }
        assert!((observed - expected).abs() <= 3.0 * variance.sqrt(), "{observed} vs {expected}");
    }

    #[test]
    fn unit_beta_optimum_is_attractiveness_order() {
        let q = query(&[(0, 0.3), (0, 0.9), (1, 0.5), (2, 0.7)], 1.0);
        let (order, value) = oracle_optimal_slate(&q).unwrap();
        assert_eq!(order, vec![1, 3, 2, 0]);
        assert!((value - expected_clicks(&q, &attractiveness_order(&q))).abs() < 1e-15);
    }

    #[test]
    fn small_beta_interleaves_distinct_item() {
        let q = query(&[(0, 0.9), (0, 0.85), (1, 0.5)], 0.1);
        let (order, value) = oracle_optimal_slate(&q).unwrap();
        let brute = all_orders(3)
            .into_iter()
            .map(|o| (expected_clicks(&q, &o), o))
            .fold((f64::NEG_INFINITY, vec![]), |best, cur| if cur.0 > best.0 { cur } else { best });
        assert_eq!(order, brute.1);
        assert_eq!(value, brute.0);
        assert_eq!(order[1], 2, "distinct item should sit between the same-category pair");
    }

    #[test]
    fn oracle_beats_random_orders() {
        let cfg = SyntheticConfig {
            num_items: 8,
            seed: 11,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for truth in &data.truth {
            let (_, best) = oracle_optimal_slate(truth).unwrap();
            for _ in 0..1000 {
                let mut o: Vec<usize> = (0..8).collect();
                o.shuffle(&mut rng);
                assert!(expected_clicks(truth, &o) <= best + 1e-12);
            }
            assert!(best >= expected_clicks(truth, &attractiveness_order(truth)));
        }
    }

    #[test]
    fn collision_at_top_makes_optimum_strictly_better() {
        let q = query(&[(0, 0.9), (0, 0.8), (1, 0.45), (2, 0.3)], 0.5);
        let (_, best) = oracle_optimal_slate(&q).unwrap();
        assert!(best > expected_clicks(&q, &attractiveness_order(&q)) + 1e-6);
    }

    #[test]
    fn oracle_guard() {
        let q = query(&[(0, 0.5); 11], 0.5);
        assert!(matches!(oracle_optimal_slate(&q), Err(DataError::Guard(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let data = generate_synthetic(&SyntheticConfig::default(), 3).unwrap();
        assert_eq!(read_sidecar(&write_sidecar(&data.truth)).unwrap(), data.truth);
    }
}
