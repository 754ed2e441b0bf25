use std::path::PathBuf;

use clap::Args;
use divnet_core::data::{
    attractiveness_order, expected_clicks, generate_synthetic, oracle_optimal_slate, write_letor, write_sidecar,
    SyntheticQuery, ORACLE_MAX_ITEMS,
};
use serde_json::json;

use super::load_config;
use crate::artifacts::{self, provenance};
use crate::config::Overrides;
use crate::{ConfigArg, Failure};

/// Largest N for which the oracle table is written without `--oracle`.
const AUTO_ORACLE_ITEMS: usize = 8;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    queries: Option<usize>,
    /// Items per query.
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    /// Per-repeat click damping; 1 disables the category interaction.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    /// Always write the exhaustive oracle table (at most 10 items per query).
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    config: ConfigArg,
}

fn perm(order: &[usize]) -> String {
    order.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn oracle_table(truth: &[SyntheticQuery]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row = |w: &mut csv::Writer<Vec<u8>>, q: &SyntheticQuery, kind: &str, order: &[usize]| {
        let value = expected_clicks(q, order);
        w.write_record([q.query_id.as_str(), kind, &perm(order), &format!("{value:.16e}")])
    };
    w.write_record(["qid", "kind", "permutation", "expected_clicks"]).map_err(anyhow::Error::from)?;
    for q in truth {
        let (best, _) = oracle_optimal_slate(q).map_err(Failure::usage)?;
        let display: Vec<usize> = (0..q.items.len()).collect();
        row(&mut w, q, "optimal", &best).map_err(anyhow::Error::from)?;
        row(&mut w, q, "attractiveness", &attractiveness_order(q)).map_err(anyhow::Error::from)?;
        row(&mut w, q, "display", &display).map_err(anyhow::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn run(args: SynthArgs) -> Result<(), Failure> {
    let mut o = Overrides::default();
    o.set_usize("queries", "synthetic.queries", args.queries);
    o.set_usize("items", "synthetic.num_items", args.items);
    o.set_usize("categories", "synthetic.num_categories", args.categories);
    o.set("beta", "synthetic.beta", args.beta);
    o.set_u64("seed", "synthetic.seed", args.seed);
    o.set("noise", "synthetic.noise", args.noise);
    o.set("signal", "synthetic.signal", args.signal);
    let cfg = load_config(args.config.config.as_deref(), &o)?;
    let section = &cfg.synthetic;
    let generator = section.generator();

    if args.oracle && generator.num_items > ORACLE_MAX_ITEMS {
        return Err(Failure::usage(format!(
            "--oracle enumerates every order; {} items per query is too many, use --items {ORACLE_MAX_ITEMS} or fewer",
            generator.num_items
        )));
    }
    let data = generate_synthetic(&generator, section.queries).map_err(Failure::usage)?;
    artifacts::create_dir(&args.out)?;
    artifacts::write(&args.out.join("data.letor"), &write_letor(&data.instances))?;
    artifacts::write(&args.out.join("truth.csv"), &write_sidecar(&data.truth))?;
    let meta = json!({
        "config": section,
        "feature_width": generator.feature_width(),
        "interaction_free": generator.beta == 1.0,
    });
    let meta = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    artifacts::write(&args.out.join("meta.json"), &meta)?;

    if args.oracle || generator.num_items <= AUTO_ORACLE_ITEMS {
        let table = oracle_table(&data.truth)?;
        artifacts::write(&args.out.join("oracle.csv"), &(provenance(section, None) + &table))?;
    }
    eprintln!(
        "wrote {} queries × {} items to {}",
        section.queries,
        generator.num_items,
        args.out.display()
    );
    Ok(())
}
