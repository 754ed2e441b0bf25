use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{arrange, intra_list_distance, map_at_k, ndcg_at_k, precision_at_k, stable_mean};
use crate::model::{ModelError, RankingInstance};
use crate::ranker::Ranker;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    /// Use relevance grades instead of binary clicks as NDCG gain.
    pub graded: bool,
    /// Cutoffs for the intra-list distance diagnostic; values below 2 are skipped.
    pub ild_cutoffs: Vec<usize>,
    pub breakdown: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cutoffs: vec![5, 10],
            graded: false,
            ild_cutoffs: vec![5],
            breakdown: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub cutoff: usize,
    pub mean: f64,
    pub n_queries: usize,
}

impl MetricRow {
    pub fn label(&self) -> String {
        format!("{}@{}", self.metric, self.cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    pub query_id: String,
    pub permutation: Vec<usize>,
    /// Aligned with the report rows.
    pub values: Vec<f64>,
    /// No positive label: every relevance metric is 0 by convention.
    pub zero_positives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub rows: Vec<MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Vec<QueryBreakdown>>,
}

impl EvalReport {
    pub fn get(&self, metric: &str, cutoff: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.cutoff == cutoff)
            .map(|r| r.mean)
    }

    /// `metric,cutoff,mean,n_queries` with full-precision means.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,cutoff,mean,n_queries\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.16e},{}", r.metric, r.cutoff, r.mean, r.n_queries);
        }
        out
    }

    /// One row per method, one column per metric, as in a results table.
    pub fn to_table_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "n_queries": self.rows.first().map_or(0, |r| r.n_queries),
            "columns": self.rows.iter().map(MetricRow::label).collect::<Vec<_>>(),
            "values": self.rows.iter().map(|r| r.mean).collect::<Vec<_>>(),
        })
    }

    /// Fixed-width text table, methods as rows.
    pub fn render_table(reports: &[EvalReport]) -> String {
        let Some(first) = reports.first() else {
            return String::new();
        };
        let mut out = format!("{:<14}", "method");
        for r in &first.rows {
            let _ = write!(out, "{:>10}", r.label());
        }
        out.push('\n');
        for rep in reports {
            let _ = write!(out, "{:<14}", rep.method);
            for r in &rep.rows {
                let _ = write!(out, "{:>10.4}", r.mean);
            }
            out.push('\n');
        }
        out
    }
}

fn metric_names(opts: &EvalOptions) -> Vec<(&'static str, usize)> {
    let mut names = Vec::new();
    for name in ["NDCG", "Pre", "MAP"] {
        names.extend(opts.cutoffs.iter().map(|&k| (name, k)));
    }
    names.extend(opts.ild_cutoffs.iter().filter(|&&k| k >= 2).map(|&k| ("ILD", k)));
    names
}

fn score_query(
    inst: &RankingInstance,
    permutation: &[usize],
    names: &[(&'static str, usize)],
    graded: bool,
) -> Vec<f64> {
    let clicks = arrange(&inst.labels(), permutation);
    let gains = if graded {
        arrange(&inst.grades(), permutation)
    } else {
        clicks.clone()
    };
    names
        .iter()
        .map(|&(name, k)| match name {
            "NDCG" => ndcg_at_k(&gains, k),
            "Pre" => precision_at_k(&clicks, k),
            "MAP" => map_at_k(&clicks, k),
            _ => intra_list_distance(inst, permutation, k),
        })
        .collect()
}

fn check_permutation(inst: &RankingInstance, perm: &[usize]) -> Result<(), ModelError> {
    let n = inst.num_items();
    let mut seen = vec![false; n];
    if perm.len() == n && perm.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        Ok(())
    } else {
        Err(ModelError::Contract(format!(
            "ranker returned {perm:?} for query {} with {n} items",
            inst.query_id
        )))
    }
}

/// Ranks every instance and averages each metric over all queries.
///
/// Queries are scored in parallel; means do not depend on instance order.
pub fn evaluate(
    ranker: &dyn Ranker,
    instances: &[RankingInstance],
    opts: &EvalOptions,
) -> Result<EvalReport, ModelError> {
    if instances.is_empty() {
        return Err(ModelError::Contract("nothing to evaluate".into()));
    }
    if opts.cutoffs.contains(&0) {
        return Err(ModelError::Config("metric cutoffs must be at least 1".into()));
    }
    let names = metric_names(opts);
    let per_query: Vec<QueryBreakdown> = instances
        .par_iter()
        .map(|inst| {
            let permutation = ranker.rank(inst)?;
            check_permutation(inst, &permutation)?;
            let values = score_query(inst, &permutation, &names, opts.graded);
            Ok(QueryBreakdown {
                query_id: inst.query_id.clone(),
                permutation,
                values,
                zero_positives: inst.click_labels.iter().all(|&l| l == 0),
            })
        })
        .collect::<Result<_, ModelError>>()?;
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, &(metric, cutoff))| {
            let column: Vec<f64> = per_query.iter().map(|q| q.values[j]).collect();
            MetricRow {
                metric: metric.to_string(),
                cutoff,
                mean: stable_mean(&column),
                n_queries: per_query.len(),
            }
        })
        .collect();
    Ok(EvalReport {
        method: ranker.name().to_string(),
        rows,
        breakdown: opts.breakdown.then_some(per_query),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ByLabel;

    impl Ranker for ByLabel {
        fn name(&self) -> &str {
            "oracle"
        }

        fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
            let mut p: Vec<usize> = (0..inst.num_items()).collect();
            p.sort_by_key(|&i| std::cmp::Reverse(inst.click_labels[i]));
            Ok(p)
        }
    }

    struct Identity;

    impl Ranker for Identity {
        fn name(&self) -> &str {
            "identity"
        }

        fn rank(&self, inst: &RankingInstance) -> Result<Vec<usize>, ModelError> {
            Ok((0..inst.num_items()).collect())
        }
    }

    fn inst(id: &str, grades: Vec<u8>) -> RankingInstance {
        let items = (0..grades.len()).map(|i| vec![i as f64, 1.0]).collect();
        RankingInstance::from_grades(id, items, vec![], grades)
    }

    #[test]
    fn perfect_ranker_scores_one() {
        let data = vec![inst("a", vec![0, 0, 4, 3, 1, 0, 0, 0, 0, 0, 4])];
        let rep = evaluate(&ByLabel, &data, &EvalOptions::default()).unwrap();
        assert_eq!(rep.get("NDCG", 10), Some(1.0));
    }

    #[test]
    fn order_of_instances_is_irrelevant() {
        let data: Vec<_> = (0..9)
            .map(|q| inst(&q.to_string(), (0..7).map(|i| ((i * 7 + q * 3) % 5) as u8).collect()))
            .collect();
        let mut rev = data.clone();
        rev.reverse();
        let opts = EvalOptions::default();
        let a = evaluate(&Identity, &data, &opts).unwrap();
        let b = evaluate(&Identity, &rev, &opts).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn zero_positive_queries_count_as_zero() {
        let data = vec![inst("pos", vec![4, 0]), inst("neg", vec![0, 0])];
        let opts = EvalOptions {
            breakdown: true,
            ..EvalOptions::default()
        };
        let rep = evaluate(&Identity, &data, &opts).unwrap();
        assert_eq!(rep.get("NDCG", 5), Some(0.5));
        assert_eq!(rep.rows[0].n_queries, 2);
        let flags: Vec<bool> = rep.breakdown.unwrap().iter().map(|q| q.zero_positives).collect();
        assert_eq!(flags, vec![false, true]);
    }

    #[test]
    fn csv_layout() {
        let rep = evaluate(&Identity, &[inst("a", vec![3, 0, 3])], &EvalOptions {
            cutoffs: vec![3],
            ild_cutoffs: vec![],
            ..EvalOptions::default()
        })
        .unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "metric,cutoff,mean,n_queries");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("NDCG,3,9.19"));
        let json = rep.to_table_json();
        assert_eq!(json["columns"][2], "MAP@3");
    }

    #[test]
    fn invalid_permutation_rejected() {
        struct Bad;
        impl Ranker for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn rank(&self, _: &RankingInstance) -> Result<Vec<usize>, ModelError> {
                Ok(vec![0, 0])
            }
        }
        assert!(evaluate(&Bad, &[inst("a", vec![1, 1])], &EvalOptions::default()).is_err());
    }
}
