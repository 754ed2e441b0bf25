use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use divnet_core::model::export_attention;
use divnet_core::{decode_slate, DecodeMode};
use serde_json::json;

use crate::artifacts::{self, dimension, provenance, ModelDir};
use crate::Failure;

#[derive(Args)]
pub struct AttentionArgs {
    /// Directory written by `divnet train`.
    #[arg(long)]
    model: PathBuf,
    /// LETOR-format slates.
    #[arg(long)]
    input: PathBuf,
    /// Query id to export (default: the first query).
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output CSV; row t is the attention of the step-t item over steps 1..=t.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: AttentionArgs) -> Result<(), Failure> {
    let dir = ModelDir::open(&args.model)?;
    let (ck, hash) = dir.divnet()?;
    let alpha = args
        .alpha
        .unwrap_or_else(|| ck.config["train"]["alpha"].as_f64().unwrap_or(0.0));
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Failure::usage(format!("--alpha must be finite and non-negative, got {alpha}")));
    }
    let raw = artifacts::read_letor(&args.input, dir.item_dim())?;
    let index = match &args.query {
        Some(q) => raw
            .iter()
            .position(|i| &i.query_id == q)
            .ok_or_else(|| Failure::usage(format!("query {q} not found in {}", args.input.display())))?,
        None => 0,
    };
    let (lists, orders) = dir.upstream(&raw[index..=index])?;
    let inst = &lists[0];
    let d = decode_slate(&ck.params, inst, alpha, &DecodeMode::Greedy, 0).map_err(dimension)?;
    let matrix = export_attention(&d);

    let permutation: Vec<String> = d.permutation.iter().map(|&p| orders[0][p].to_string()).collect();
    let resolved = json!({ "command": "attention", "query": inst.query_id, "alpha": alpha });
    let mut out = provenance(&resolved, Some(hash));
    let _ = writeln!(out, "# permutation: {}", permutation.join(" "));
    for row in &matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    artifacts::write(&args.out, &out)?;
    Ok(())
}
