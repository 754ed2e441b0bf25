use std::path::PathBuf;

use clap::Args;
use divnet_core::{decode_slate, DecodeMode};
use serde_json::json;

use crate::artifacts::{self, dimension, provenance, ModelDir};
use crate::{Failure, Mode};

#[derive(Args)]
pub struct RerankArgs {
    /// Directory written by `divnet train`.
    #[arg(long)]
    model: PathBuf,
    /// LETOR-format slates to rerank.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
    /// Diversity weight (default: the value the model was trained with).
    #[arg(long)]
    alpha: Option<f64>,
    /// Sampling seed; ignored in greedy mode.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn run(args: RerankArgs) -> Result<(), Failure> {
    let dir = ModelDir::open(&args.model)?;
    let (ck, hash) = dir.divnet()?;
    let alpha = args
        .alpha
        .unwrap_or_else(|| ck.config["train"]["alpha"].as_f64().unwrap_or(0.0));
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Failure::usage(format!("--alpha must be finite and non-negative, got {alpha}")));
    }
    let raw = artifacts::read_letor(&args.input, dir.item_dim())?;
    let (lists, orders) = dir.upstream(&raw)?;
    let (mode, seed) = match args.mode {
        Mode::Greedy => (DecodeMode::Greedy, None),
        Mode::Sample => (DecodeMode::Sample, Some(args.seed)),
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query_id", "step", "item", "probability", "det", "logit"])
        .map_err(anyhow::Error::from)?;
    for (q, (inst, order)) in lists.iter().zip(&orders).enumerate() {
        let query_seed = seed.unwrap_or(0).wrapping_add(q as u64);
        let d = decode_slate(&ck.params, inst, alpha, &mode, query_seed).map_err(dimension)?;
        for (t, step) in d.steps.iter().enumerate() {
            w.write_record([
                inst.query_id.clone(),
                (t + 1).to_string(),
                order[step.selected()].to_string(),
                format!("{:.16e}", step.selected_probability()),
                format!("{:.16e}", step.selected_det()),
                format!("{:.16e}", logit(step.selected_utility())),
            ])
            .map_err(anyhow::Error::from)?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?).expect("utf-8");
    let resolved = json!({ "command": "rerank", "mode": format!("{:?}", args.mode).to_lowercase(), "alpha": alpha, "seed": seed });
    artifacts::write(&args.out, &(provenance(&resolved, Some(hash)) + &body))?;
    Ok(())
}
