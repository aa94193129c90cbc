use std::path::Path;
use std::process::{Command, Output};

use nngp_card::artifact::{load_jsonl, Header};
use nngp_card::cli::PredictionRecord;
use nngp_card::eval::{render_table, QErrorStats};

const BIN: &str = env!("CARGO_BIN_EXE_nngp-card");

fn run(dir: &Path, args: &[&str], threads: &str) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env("NNGP_CARD_THREADS", threads)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str], threads: &str) -> String {
    let o = run(dir, args, threads);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn error_kind(o: &Output) -> String {
    assert!(!o.status.success());
    let v: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

const OUTPUTS: &[&str] = &[
    "q.jsonl",
    "w.jsonl",
    "sp/train.jsonl",
    "sp/test.jsonl",
    "sp/split.json",
    "train.bin",
    "test.bin",
    "m.bin",
    "p.jsonl",
    "r.json",
    "s.csv",
    "al.jsonl",
];

fn pipeline(dir: &Path, threads: &str) -> String {
    let synth = ok(dir, &["synth", "--rows", "1500", "--seed", "1", "--out", "db"], threads);
    let cat = "db/catalog.json";
    ok(dir, &["gen-queries", "--catalog", cat, "-n", "300", "--seed", "2", "--out", "q.jsonl"], threads);
    ok(
        dir,
        &[
            "label", "--catalog", cat, "--queries", "q.jsonl", "--out", "w.jsonl", "--split-dir", "sp", "--fractions",
            "0.8,0,0.2", "--seed", "3",
        ],
        threads,
    );
    for part in ["train", "test"] {
        let q = format!("sp/{part}.jsonl");
        let o = format!("{part}.bin");
        ok(dir, &["encode", "--catalog", cat, "--queries", &q, "--out", &o], threads);
    }
    ok(dir, &["train", "--train", "train.bin", "--out", "m.bin"], threads);
    ok(dir, &["predict", "--model", "m.bin", "--input", "test.bin", "--out", "p.jsonl"], threads);
    ok(
        dir,
        &["evaluate", "--predictions", "p.jsonl", "--out", "r.json", "--scatter", "s.csv"],
        threads,
    );
    ok(
        dir,
        &["active-learn", "--train", "test.bin", "--pool", "train.bin", "--test", "test.bin", "-k", "20", "--iterations", "2", "--out", "al.jsonl"],
        threads,
    );
    let v: serde_json::Value = serde_json::from_str(synth.trim()).unwrap();
    v["catalog_hash"].as_str().unwrap().to_string()
}

#[test]
fn pipeline_is_deterministic_and_chained() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let hash = pipeline(a.path(), "2");
    assert_eq!(pipeline(b.path(), "1"), hash);
    for f in OUTPUTS {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let (h, recs): (Option<Header>, Vec<PredictionRecord>) = load_jsonl(a.path().join("p.jsonl")).unwrap();
    let h = h.unwrap();
    assert_eq!(h.catalog_hash(), Some(hash.as_str()));
    let stages: Vec<&str> = h.chain.iter().map(|l| l.stage.as_str()).collect();
    assert_eq!(stages, ["catalog", "gen-queries", "label", "split", "encode", "train", "predict"]);
    assert!(!recs.is_empty());
    for r in &recs {
        assert!(r.ci_low <= r.mean_log && r.mean_log <= r.ci_high);
        assert!(r.cardinality.is_some());
    }
}

#[test]
fn noiseless_fit_reproduces_training_cardinalities() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "--rows", "800", "--seed", "5", "--out", "db"], "1");
    ok(p, &["gen-queries", "--catalog", "db/catalog.json", "-n", "120", "--seed", "6", "--out", "q.jsonl"], "1");
    ok(p, &["label", "--catalog", "db/catalog.json", "--queries", "q.jsonl", "--out", "w.jsonl"], "1");
    ok(p, &["encode", "--catalog", "db/catalog.json", "--queries", "w.jsonl", "--out", "w.bin"], "1");
    ok(p, &["train", "--train", "w.bin", "--out", "m.bin", "--noise-sq", "0"], "1");
    ok(p, &["predict", "--model", "m.bin", "--input", "w.bin", "--out", "p.jsonl"], "1");
    let (_, recs): (_, Vec<PredictionRecord>) = load_jsonl(p.join("p.jsonl")).unwrap();
    assert!(recs.len() > 100);
    for r in &recs {
        let c = r.cardinality.unwrap() as f64;
        assert!((r.card_estimate - c).abs() <= 0.01 * c, "{} vs {c}", r.card_estimate);
    }
}

#[test]
fn evaluate_table_matches_library() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "1");
    let out = ok(p, &["evaluate", "--predictions", "p.jsonl"], "1");
    let (_, recs): (_, Vec<PredictionRecord>) = load_jsonl(p.join("p.jsonl")).unwrap();
    let truth: Vec<f64> = recs.iter().map(|r| r.cardinality.unwrap() as f64).collect();
    let est: Vec<f64> = recs.iter().map(|r| r.card_estimate).collect();
    let k: Vec<usize> = recs.iter().map(|r| r.n_conditions).collect();
    let stats = QErrorStats::new(&truth, &est, &k).unwrap();
    assert!(out.starts_with(&render_table(&stats)));
    // the model+input route gives the same numbers
    let direct = ok(p, &["evaluate", "--model", "m.bin", "--input", "test.bin"], "1");
    assert_eq!(direct, out);
}

#[test]
fn foreign_inputs_rejected_with_structured_errors() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "1");
    ok(p, &["synth", "--rows", "1500", "--seed", "99", "--out", "db2"], "1");
    ok(p, &["gen-queries", "--catalog", "db2/catalog.json", "-n", "50", "--seed", "1", "--out", "q2.jsonl"], "1");
    ok(p, &["label", "--catalog", "db2/catalog.json", "--queries", "q2.jsonl", "--out", "w2.jsonl"], "1");
    ok(p, &["encode", "--catalog", "db2/catalog.json", "--queries", "w2.jsonl", "--out", "x.bin"], "1");

    let o = run(p, &["encode", "--catalog", "db2/catalog.json", "--queries", "sp/test.jsonl", "--out", "y.bin"], "1");
    assert_eq!(error_kind(&o), "hash_mismatch");
    let o = run(p, &["predict", "--model", "m.bin", "--input", "x.bin", "--out", "z.jsonl"], "1");
    assert_eq!(error_kind(&o), "hash_mismatch");
    let o = run(p, &["label", "--catalog", "db/catalog.json", "--queries", "missing.jsonl", "--out", "z.jsonl"], "1");
    assert_eq!(error_kind(&o), "io");
    std::fs::write(p.join("bad.json"), r#"{"kernel": {"depth": 2, "width": 3}}"#).unwrap();
    let o = run(p, &["--config", "bad.json", "train", "--train", "train.bin", "--out", "m2.bin"], "1");
    assert_eq!(error_kind(&o), "invalid_spec");
    // a prediction file is not a model
    let o = run(p, &["predict", "--model", "p.jsonl", "--input", "test.bin", "--out", "z.jsonl"], "1");
    assert!(!o.status.success());
    let o = run(p, &["evaluate", "--predictions", "q.jsonl"], "1");
    assert!(!o.status.success());
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    pipeline(p, "1");
    std::fs::write(p.join("c.json"), r#"{"kernel": {"depth": 1, "noise_sq": 0.01}}"#).unwrap();
    ok(p, &["--config", "c.json", "train", "--train", "train.bin", "--out", "m1.bin", "--depth", "2"], "1");
    let (mh, _) = nngp_card::gp::load(p.join("m1.bin")).unwrap();
    assert_eq!(mh.kernel.depth, 2);
    assert_eq!(mh.kernel.noise_sq, 0.01);
    // the effective config is echoed into the header
    assert_eq!(mh.header.config["depth"], 2);
}

#[test]
fn selfcheck_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["selfcheck", "--samples", "400000", "--inputs", "5"], "1");
    assert_eq!(out.lines().count(), 4);
    assert!(out.lines().all(|l| l.contains("\"passed\":true")), "{out}");
}

#[test]
fn help_documents_every_subcommand() {
    let o = Command::new(BIN).arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in [
        "synth", "ingest", "gen-queries", "label", "encode", "train", "predict", "evaluate", "active-learn", "selfcheck",
    ] {
        assert!(text.contains(sub), "{sub}");
    }
    assert!(text.contains("NNGP_CARD_THREADS"));
}
