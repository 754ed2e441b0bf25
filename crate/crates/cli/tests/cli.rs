use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use divnet_core::data::Checkpoint;
use divnet_core::{DivNetParams, ModelConfig};

fn divnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divnet"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = divnet(args);
    assert!(
        out.status.success(),
        "divnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Drops the leading `#` provenance lines.
fn body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

struct Fixture {
    data: PathBuf,
    model: PathBuf,
    test: PathBuf,
}

/// A small synthetic corpus and a model trained on it, shared by all tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&root);
        let syn = root.join("syn");
        ok(&["synth", "--out", s(&syn), "--queries", "80", "--items", "6", "--seed", "11"]);
        let model = root.join("model");
        let data = syn.join("data.letor");
        ok(&[
            "train", "--data", s(&data), "--out", s(&model), "--epochs", "2", "--d-k", "8", "--d-v", "8",
        ]);
        Fixture {
            data,
            test: model.join("test.letor"),
            model,
        }
    })
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-scratch").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_data_is_a_usage_error_naming_the_path() {
    let dir = scratch("missing");
    let out = divnet(&["train", "--data", "/no/such/file.letor", "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.letor"));

    let out = divnet(&["eval", "--model", "/no/such/dir", "--data", s(&fixture().test), "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = scratch("badcfg");
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "[train]\nalpah = 0.3\n").unwrap();
    let out = divnet(&["synth", "--out", s(&dir), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));
}

#[test]
fn flags_override_the_config_file_and_report_the_conflict() {
    let dir = scratch("conflict");
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "[synthetic]\nqueries = 5\nnum_items = 4\n").unwrap();
    let out = ok(&["synth", "--out", s(&dir), "--config", s(&cfg), "--items", "3"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("items"));
    let truth = read(&dir.join("truth.csv"));
    assert_eq!(truth.lines().count(), 1 + 5 * 3);
}

#[test]
fn zero_epochs_stores_the_initialisation() {
    let f = fixture();
    let dir = scratch("zero");
    ok(&[
        "train", "--data", s(&f.data), "--out", s(&dir), "--epochs", "0", "--d-k", "8", "--d-v", "8", "--no-prm",
    ]);
    let ck = Checkpoint::load(&read(&dir.join("checkpoint.json"))).unwrap();
    let cfg = ModelConfig::new(ck.params.config.item_dim, 0).with_dims(8, 8);
    assert_eq!(ck.params, DivNetParams::init(cfg, 0).unwrap());
    assert!(!dir.join("prm.json").exists());
}

#[test]
fn resume_continues_from_a_checkpoint() {
    let f = fixture();
    let dir = scratch("resume");
    let ck = f.model.join("checkpoint.json");
    ok(&[
        "train", "--data", s(&f.data), "--out", s(&dir), "--epochs", "3", "--d-k", "8", "--d-v", "8", "--no-prm",
        "--resume", s(&ck),
    ]);
    let log = read(&dir.join("train_log.jsonl"));
    assert!(log.contains("\"epoch\":3"), "{log}");
    assert!(!log.contains("\"epoch\":1,"), "{log}");
}

#[test]
fn eval_is_deterministic_and_stamped() {
    let f = fixture();
    let dir = scratch("eval");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    for p in [&a, &b] {
        ok(&["eval", "--model", s(&f.model), "--data", s(&f.test), "--out", s(p)]);
    }
    let text = read(&a);
    assert_eq!(text, read(&b));
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert!(lines.next().unwrap().starts_with("# checkpoint: "));
}

#[test]
fn submodular_without_redundancy_matches_pointwise() {
    let f = fixture();
    let dir = scratch("gamma0");
    let (p, m) = (dir.join("p.csv"), dir.join("m.csv"));
    ok(&["eval", "--model", s(&f.model), "--data", s(&f.test), "--method", "pointwise", "--out", s(&p)]);
    ok(&[
        "eval", "--model", s(&f.model), "--data", s(&f.test), "--method", "submodular", "--gamma", "0", "--out", s(&m),
    ]);
    assert_eq!(body(&read(&p)), body(&read(&m)));
}

#[test]
fn alpha_sweep_writes_one_report_per_value() {
    let f = fixture();
    let dir = scratch("sweep");
    let out = dir.join("r.csv");
    ok(&["eval", "--model", s(&f.model), "--data", s(&f.test), "--alpha", "0,0.5,2", "--out", s(&out)]);
    for a in ["0", "0.5", "2"] {
        let text = read(&dir.join(format!("r-alpha-{a}.csv")));
        assert!(text.lines().next().unwrap().contains(&format!("\"alpha\":{}", a.parse::<f64>().unwrap())));
    }
    assert!(!out.exists());
    // seq2slate is the same checkpoint decoded without the diversity term
    let q = dir.join("q.csv");
    ok(&["eval", "--model", s(&f.model), "--data", s(&f.test), "--method", "seq2slate", "--out", s(&q)]);
    assert_eq!(body(&read(&q)), body(&read(&dir.join("r-alpha-0.csv"))));
}

#[test]
fn alpha_is_rejected_for_methods_without_it() {
    let f = fixture();
    let out = divnet(&[
        "eval", "--model", s(&f.model), "--data", s(&f.test), "--method", "dpp", "--alpha", "1", "--out", "x.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn feature_width_mismatch_is_explicit() {
    let f = fixture();
    let dir = scratch("width");
    let data = dir.join("wide.letor");
    std::fs::write(&data, "1 qid:1 1:0.5 2:0.1 3:0.3 4:0.3 5:0.3 6:0.3 7:0.9 8:0.1 9:0.2\n").unwrap();
    let out = divnet(&["eval", "--model", s(&f.model), "--data", s(&data), "--out", s(&dir.join("x.csv"))]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).trim().is_empty());
}

fn rerank(mode: &str, seed: &str, out: &Path) -> String {
    let f = fixture();
    ok(&[
        "rerank", "--model", s(&f.model), "--input", s(&f.test), "--mode", mode, "--seed", seed, "--out", s(out),
    ]);
    read(out)
}

#[test]
fn sampled_reranks_follow_the_seed_and_greedy_ignores_it() {
    let dir = scratch("rerank");
    let a = rerank("sample", "5", &dir.join("a.csv"));
    assert_eq!(a, rerank("sample", "5", &dir.join("b.csv")));
    assert_ne!(body(&a), body(&rerank("sample", "6", &dir.join("c.csv"))));
    let g1 = rerank("greedy", "1", &dir.join("g1.csv"));
    let g2 = rerank("greedy", "99", &dir.join("g2.csv"));
    assert_eq!(g1, g2);

    // every query is a permutation of its file rows
    let mut rows: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for line in body(&g1).lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        rows.entry(cells[0].to_string()).or_default().push(cells[2].parse().unwrap());
        let p: f64 = cells[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    for items in rows.values_mut() {
        items.sort_unstable();
        assert_eq!(*items, (0..items.len()).collect::<Vec<_>>());
    }
}

#[test]
fn one_item_slate_is_chosen_with_certainty() {
    let f = fixture();
    let dir = scratch("single");
    let input = dir.join("one.letor");
    std::fs::write(&input, "1 qid:7 1:0.0 2:1.0 3:0.0 4:0.0 5:0.0 6:0.6\n").unwrap();
    let out = dir.join("r.csv");
    ok(&["rerank", "--model", s(&f.model), "--input", s(&input), "--out", s(&out)]);
    let text = body(&read(&out));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["7", "1", "0"]);
    assert_eq!(row[3].parse::<f64>().unwrap(), 1.0);
    assert_eq!(row[4].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let (a, b) = (scratch("syn-a"), scratch("syn-b"));
    for d in [&a, &b] {
        ok(&["synth", "--out", s(d), "--queries", "20", "--items", "5", "--seed", "4", "--beta", "0.3"]);
    }
    for file in ["data.letor", "truth.csv", "meta.json", "oracle.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    let meta: serde_json::Value = serde_json::from_str(&read(&a.join("meta.json"))).unwrap();
    assert_eq!(meta["interaction_free"], false);
}

#[test]
fn oracle_optimum_dominates_the_listed_orders() {
    let dir = scratch("oracle");
    ok(&["synth", "--out", s(&dir), "--queries", "30", "--items", "5", "--seed", "9"]);
    let text = body(&read(&dir.join("oracle.csv")));
    let mut best = std::collections::HashMap::new();
    let mut others = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let v: f64 = cells[3].parse().unwrap();
        if cells[1] == "optimal" {
            best.insert(cells[0].to_string(), v);
        } else {
            others.push((cells[0].to_string(), v));
        }
    }
    assert_eq!(best.len(), 30);
    for (q, v) in others {
        assert!(best[&q] >= v - 1e-12, "{q}: {v} beats {}", best[&q]);
    }
}

#[test]
fn oracle_refuses_large_slates() {
    let dir = scratch("oracle-big");
    let out = divnet(&["synth", "--out", s(&dir), "--queries", "2", "--items", "12", "--oracle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--items"));
    // without the flag, large slates simply skip the table
    ok(&["synth", "--out", s(&dir), "--queries", "2", "--items", "12"]);
    assert!(!dir.join("oracle.csv").exists());
}

#[test]
fn attention_is_row_stochastic_and_causal() {
    let f = fixture();
    let dir = scratch("attention");
    let out = dir.join("a.csv");
    ok(&["attention", "--model", s(&f.model), "--input", s(&f.test), "--out", s(&out)]);
    let text = read(&out);
    let perm_line = text.lines().find(|l| l.starts_with("# permutation:")).unwrap();
    let n = perm_line.split_whitespace().count() - 2;
    let rows: Vec<Vec<f64>> = body(&text)
        .lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), n);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), n);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row[t + 1..].iter().all(|&v| v == 0.0));
    }

    let missing = divnet(&[
        "attention", "--model", s(&f.model), "--input", s(&f.test), "--query", "nope", "--out", s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
