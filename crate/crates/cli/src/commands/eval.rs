use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use divnet_core::baselines::{DppRanker, PointwiseRanker, PrmRanker, SubmodularRanker};
use divnet_core::metrics::EvalReport;
use divnet_core::{evaluate, DivNetRanker, Ranker};
use serde::Serialize;

use super::{load_config, parse_list};
use crate::artifacts::{self, provenance, ModelDir};
use crate::config::{EvalSection, Overrides};
use crate::{ConfigArg, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Divnet,
    Pointwise,
    Submodular,
    Dpp,
    Prm,
    /// The DivNet checkpoint decoded with α = 0.
    Seq2slate,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory written by `divnet train`.
    #[arg(long)]
    model: PathBuf,
    /// LETOR-format evaluation data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "divnet")]
    method: Method,
    /// Comma-separated metric cutoffs, e.g. 5,10.
    #[arg(long)]
    cutoffs: Option<String>,
    /// Comma-separated α values; one report per value (default: the checkpoint's α).
    #[arg(long)]
    alpha: Option<String>,
    /// Redundancy weight of the submodular baseline.
    #[arg(long)]
    gamma: Option<f64>,
    /// Use 0–4 relevance grades as NDCG gains.
    #[arg(long)]
    graded_ndcg: bool,
    /// Report CSV; with several α values, `-alpha-<α>` is added to the file stem.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Serialize)]
struct Resolved<'a> {
    command: &'static str,
    method: Method,
    alpha: Option<f64>,
    eval: &'a EvalSection,
}

fn report_path(out: &Path, alpha: f64, sweep: bool) -> PathBuf {
    if !sweep {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-alpha-{alpha}.{ext}"),
        None => format!("{stem}-alpha-{alpha}"),
    };
    out.with_file_name(name)
}

pub fn run(args: EvalArgs) -> Result<(), Failure> {
    let mut o = Overrides::default();
    if let Some(c) = &args.cutoffs {
        let list: Vec<usize> = parse_list(c)?;
        o.set("cutoffs", "eval.cutoffs", Some(list.into_iter().map(|k| k as i64).collect::<Vec<_>>()));
    }
    o.set("gamma", "eval.gamma", args.gamma);
    o.set("graded-ndcg", "eval.graded", args.graded_ndcg.then_some(true));
    let cfg = load_config(args.config.config.as_deref(), &o)?;

    let dir = ModelDir::open(&args.model)?;
    let raw = artifacts::read_letor(&args.data, dir.item_dim())?;
    let (lists, _) = dir.upstream(&raw)?;
    let opts = cfg.eval.options();

    let uses_alpha = matches!(args.method, Method::Divnet);
    let alphas: Vec<Option<f64>> = match (&args.alpha, args.method) {
        (Some(a), Method::Divnet) => parse_list::<f64>(a)?.into_iter().map(Some).collect(),
        (Some(_), _) => return Err(Failure::usage("--alpha only applies to --method divnet")),
        (None, Method::Divnet) => vec![None],
        (None, Method::Seq2slate) => vec![Some(0.0)],
        (None, _) => vec![None],
    };
    if alphas.iter().flatten().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Failure::usage("α values must be finite and non-negative"));
    }
    let sweep = alphas.len() > 1;
    let mut reports = Vec::new();
    for alpha in alphas {
        let (ranker, hash, alpha): (Box<dyn Ranker + '_>, &str, Option<f64>) = match args.method {
            Method::Divnet | Method::Seq2slate => {
                let (ck, hash) = dir.divnet()?;
                let default = ck.config["train"]["alpha"].as_f64().unwrap_or(cfg.train.alpha);
                let a = alpha.unwrap_or(default);
                let mut r = DivNetRanker::new(&ck.params, a);
                r.name = match (args.method, sweep) {
                    (Method::Seq2slate, _) => "seq2slate".into(),
                    (_, true) => format!("divnet(α={a})"),
                    _ => "divnet".into(),
                };
                (Box::new(r), hash, Some(a))
            }
            Method::Pointwise => {
                let (s, hash) = dir.pointwise()?;
                (Box::new(PointwiseRanker { scorer: s }), hash, None)
            }
            Method::Submodular => {
                let (s, hash) = dir.pointwise()?;
                let r = SubmodularRanker {
                    scorer: s,
                    gamma: cfg.eval.gamma,
                };
                (Box::new(r), hash, None)
            }
            Method::Dpp => {
                let (s, hash) = dir.pointwise()?;
                (Box::new(DppRanker { scorer: s }), hash, None)
            }
            Method::Prm => {
                let (ck, hash) = dir.prm()?;
                (Box::new(PrmRanker { params: &ck.params }), hash, None)
            }
        };
        let report = evaluate(ranker.as_ref(), &lists, &opts).map_err(Failure::runtime)?;
        let resolved = Resolved {
            command: "eval",
            method: args.method,
            alpha: alpha.filter(|_| uses_alpha || args.method == Method::Seq2slate),
            eval: &cfg.eval,
        };
        let path = report_path(&args.out, alpha.unwrap_or(0.0), sweep);
        artifacts::write(&path, &(provenance(&resolved, Some(hash)) + &report.to_csv()))?;
        reports.push(report);
    }
    print!("{}", EvalReport::render_table(&reports));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_paths_keep_extension() {
        let p = report_path(Path::new("/tmp/r.csv"), 0.5, true);
        assert_eq!(p, Path::new("/tmp/r-alpha-0.5.csv"));
        assert_eq!(report_path(Path::new("r.csv"), 0.5, false), Path::new("r.csv"));
        assert_eq!(report_path(Path::new("out"), 1.0, true), Path::new("out-alpha-1"));
    }
}
