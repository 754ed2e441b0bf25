use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use divnet_core::baselines::{train_pointwise, train_prm, upstream_lists};
use divnet_core::data::{checkpoint_hash, save_scorer, split, write_letor, Checkpoint};
use divnet_core::training::{train_from, TrainState};
use divnet_core::{evaluate, DivNetParams, DivNetRanker};
use serde_json::json;

use super::load_config;
use crate::artifacts::{self, provenance, CHECKPOINT_FILE, PRM_FILE, SCORER_FILE};
use crate::config::Overrides;
use crate::{ConfigArg, Failure};

#[derive(Args)]
pub struct TrainArgs {
    /// LETOR-format training data (split into train/validation/test).
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    /// Continue from the training state stored in a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sampled trajectories per slate.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform | log-discount
    #[arg(long)]
    step_weights: Option<String>,
    /// none | batch-mean
    #[arg(long)]
    baseline: Option<String>,
    /// sampled | logged-order
    #[arg(long)]
    supervision: Option<String>,
    /// sample | greedy
    #[arg(long)]
    decode: Option<String>,
    #[arg(long)]
    d_k: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Skip fitting the PRM baseline.
    #[arg(long)]
    no_prm: bool,
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        o.set_usize("epochs", "train.max_epochs", self.epochs);
        o.set("alpha", "train.alpha", self.alpha);
        o.set("lambda", "train.lambda", self.lambda);
        o.set("learning-rate", "train.learning_rate", self.learning_rate);
        o.set_usize("batch-size", "train.batch_size", self.batch_size);
        o.set_usize("samples", "train.samples_per_instance", self.samples);
        o.set_usize("patience", "train.patience", self.patience);
        o.set_u64("seed", "train.seed", self.seed);
        o.set_str("step-weights", "train.step_weights", self.step_weights.as_ref());
        o.set_str("baseline", "train.baseline", self.baseline.as_ref());
        o.set_str("supervision", "train.supervision", self.supervision.as_ref());
        o.set_str("decode", "train.decode", self.decode.as_ref());
        o.set_usize("d-k", "model.d_k", self.d_k);
        o.set_usize("d-v", "model.d_v", self.d_v);
        o.set_usize("blocks", "model.blocks", self.blocks);
        o.set("no-prm", "prm.enabled", self.no_prm.then_some(false));
        o
    }
}

pub fn run(args: TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.config.as_deref(), &args.overrides())?;
    let data = artifacts::read_letor(&args.data, None)?;
    let resume = match &args.resume {
        Some(p) => {
            artifacts::require_file(p, "checkpoint")?;
            let text = std::fs::read_to_string(p).context("reading checkpoint")?;
            let ck = Checkpoint::load(&text).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
            Some(ck.state.ok_or_else(|| {
                Failure::usage(format!("{} carries no training state to resume", p.display()))
            })?)
        }
        None => None,
    };
    artifacts::create_dir(&args.out)?;
    let started = Instant::now();
    let config_json = serde_json::to_value(&cfg).context("serializing config")?;

    let s = &cfg.split;
    let (train_raw, val_raw, test_raw) =
        split(&data, (s.train, s.validation, s.test), s.seed).map_err(|e| Failure::usage(e.to_string()))?;
    artifacts::write(&args.out.join("test.letor"), &write_letor(&test_raw))?;

    let scorer = train_pointwise(&train_raw, cfg.pointwise.hidden, &cfg.pointwise.fit()).map_err(Failure::runtime)?;
    let scorer_text = save_scorer(&scorer, config_json.clone()).map_err(Failure::runtime)?;
    artifacts::write(&args.out.join(SCORER_FILE), &scorer_text)?;
    eprintln!("pointwise scorer fitted ({:.1}s)", started.elapsed().as_secs_f64());

    let (train_set, _) = upstream_lists(&scorer, &train_raw).map_err(Failure::runtime)?;
    let (val_set, _) = upstream_lists(&scorer, &val_raw).map_err(Failure::runtime)?;
    let item_dim = train_set[0].item_dim();
    let model = cfg.model.model_config(item_dim, 0);

    let state = match resume {
        Some(state) => {
            if state.params.config != model {
                return Err(Failure::usage(format!(
                    "checkpoint model {:?} does not match the configured model {model:?}",
                    state.params.config
                )));
            }
            state
        }
        None => TrainState::new(DivNetParams::init(model, cfg.model.seed).map_err(Failure::usage)?, &cfg.train),
    };

    let log_path = args.out.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log, "{}", json!({ "config": config_json })).context("writing log")?;
    let mut io_error = None;
    let outcome = train_from(state, &train_set, &val_set, &cfg.train, &mut |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>3}  loss {:.5}  reward {:.4}  val NDCG@{} {}  ({:.1}s)",
            entry.epoch,
            entry.total_loss,
            entry.mean_reward,
            cfg.train.validation_cutoff,
            entry.val_ndcg.map_or("-".into(), |v| format!("{v:.4}")),
            started.elapsed().as_secs_f64()
        );
    })
    .map_err(Failure::runtime)?;
    if let Some(e) = io_error {
        return Err(Failure::runtime(format!("writing {}: {e}", log_path.display())));
    }

    let best = outcome.state.best_params.clone();
    let checkpoint = Checkpoint::from_state(config_json.clone(), outcome.state);
    let text = checkpoint.save().map_err(Failure::runtime)?;
    let hash = checkpoint_hash(&text).unwrap_or_default();
    artifacts::write(&args.out.join(CHECKPOINT_FILE), &text)?;
    writeln!(log, "{}", json!({ "checkpoint": hash })).context("writing log")?;

    let report = evaluate(&DivNetRanker::new(&best, cfg.train.alpha), &val_set, &cfg.eval.options())
        .map_err(Failure::runtime)?;
    artifacts::write(
        &args.out.join("validation_report.csv"),
        &(provenance(&cfg, Some(&hash)) + &report.to_csv()),
    )?;
    print!("{}", divnet_core::metrics::EvalReport::render_table(std::slice::from_ref(&report)));

    if cfg.prm.enabled {
        let prm = train_prm(&train_set, model, &cfg.prm.fit()).map_err(Failure::runtime)?;
        let text = Checkpoint::new(config_json, prm).save().map_err(Failure::runtime)?;
        artifacts::write(&args.out.join(PRM_FILE), &text)?;
    }
    eprintln!("done in {:.1}s; checkpoint {hash}", started.elapsed().as_secs_f64());
    Ok(())
}
