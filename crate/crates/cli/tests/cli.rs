//! End-to-end tests of the installed binary: every subcommand is exercised
//! through its real argv/exit-code/stdout contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ontoparse::memory::EpisodeRecord;
use ontoparse::reasoner::RuleSet;
use ontoparse::Schema;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ontoparse"));
    // The surrounding environment must not leak a seed override into tests
    // that pin seeds via flags.
    c.env_remove("OONP_SEED");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary should spawn")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_dynamic(dir: &Path, name: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut cmd = bin();
    cmd.args(["gen", "--world", "dynamic", "--n", &n.to_string()])
        .args(["--seed", &seed.to_string()])
        .args(["--min-sentences", "2", "--max-sentences", "3"])
        .arg("--out")
        .arg(&out);
    assert_success(&run(&mut cmd));
    out
}

#[test]
fn gen_is_deterministic_and_writes_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_dynamic(tmp.path(), "a.jsonl", 5, 3);
    let b = gen_dynamic(tmp.path(), "b.jsonl", 5, 3);
    let bytes_a = fs::read(&a).unwrap();
    let bytes_b = fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give identical corpora");

    let records = EpisodeRecord::read_jsonl(&a).unwrap();
    assert_eq!(records.len(), 5);
    let schema = Schema::from_json(&fs::read_to_string(a.with_extension("schema.json")).unwrap())
        .unwrap();
    let rules =
        RuleSet::from_json(&fs::read_to_string(a.with_extension("rules.json")).unwrap()).unwrap();
    rules.validate_against(&schema).unwrap();

    // A different seed must actually change the data.
    let c = gen_dynamic(tmp.path(), "c.jsonl", 5, 4);
    assert_ne!(bytes_a, fs::read(&c).unwrap());
}

#[test]
fn seed_env_var_overrides_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let flagged = gen_dynamic(tmp.path(), "flag5.jsonl", 4, 5);

    let via_env = tmp.path().join("env5.jsonl");
    let mut cmd = bin();
    cmd.args(["gen", "--world", "dynamic", "--n", "4", "--seed", "1"])
        .args(["--min-sentences", "2", "--max-sentences", "3"])
        .arg("--out")
        .arg(&via_env)
        .env("OONP_SEED", "5");
    assert_success(&run(&mut cmd));
    assert_eq!(
        fs::read(&flagged).unwrap(),
        fs::read(&via_env).unwrap(),
        "OONP_SEED=5 must reproduce --seed 5 exactly"
    );

    let mut bad = bin();
    bad.args(["gen", "--world", "dynamic", "--n", "1", "--out"])
        .arg(tmp.path().join("x.jsonl"))
        .env("OONP_SEED", "not-a-number");
    let out = run(&mut bad);
    assert_eq!(out.status.code(), Some(2), "malformed override is a usage error");
}

#[test]
fn train_eval_parse_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let train = gen_dynamic(tmp.path(), "train.jsonl", 6, 11);
    let dev = gen_dynamic(tmp.path(), "dev.jsonl", 3, 12);
    let ckpt = tmp.path().join("model.json");

    let mut cmd = bin();
    cmd.args(["train", "--mode", "sl", "--epochs", "1", "--batch-size", "3", "--seed", "7"])
        .arg("--data")
        .arg(&train)
        .arg("--heldout")
        .arg(&dev)
        .arg("--out")
        .arg(&ckpt);
    let out = run(&mut cmd);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("epoch,mode,loss,reward,action_acc,link_f1,rand_index"),
        "train must echo the metrics header, got: {stdout}"
    );

    let metrics = fs::read_to_string(ckpt.with_extension("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,mode,loss,reward,action_acc,link_f1,rand_index\n"));
    assert_eq!(metrics.lines().count(), 2, "one epoch, one data row");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ckpt.with_extension("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["mode"], "supervised");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["epochs_run"], 1);

    let mut eval = bin();
    eval.arg("eval")
        .arg("--model")
        .arg(&ckpt)
        .arg("--data")
        .arg(&dev)
        .arg("--out")
        .arg(tmp.path().join("summary.json"));
    let out = run(&mut eval);
    assert_success(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(summary["episodes"], 3);
    for key in [
        "action_acc",
        "assignment_acc",
        "category_acc",
        "link_f1",
        "rand_index",
        "mean_reward",
        "ontology_acc",
        "ontology_acc95",
    ] {
        let v = summary[key].as_f64().unwrap_or(-1.0);
        assert!((0.0..=1.0).contains(&v), "{key} out of range: {v}");
    }
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(written, summary, "--out must hold the same summary as stdout");

    let trace_path = tmp.path().join("trace.json");
    let mut parse = bin();
    parse
        .args(["parse", "--index", "0"])
        .arg("--model")
        .arg(&ckpt)
        .arg("--data")
        .arg(&dev)
        .arg("--trace")
        .arg(&trace_path);
    let out = run(&mut parse);
    assert_success(&out);
    let graph: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert!(graph["objects"].is_array());
    assert!(graph["links"].is_array());
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&trace_path).unwrap()).unwrap();
    assert!(!trace["steps"].as_array().unwrap().is_empty());

    let mut oob = bin();
    oob.args(["parse", "--index", "99"])
        .arg("--model")
        .arg(&ckpt)
        .arg("--data")
        .arg(&dev);
    assert_eq!(run(&mut oob).status.code(), Some(2));
}

#[test]
fn usage_and_runtime_failures_use_distinct_exit_codes() {
    // Unknown flags are usage errors (2), straight from the arg parser.
    let mut unknown = bin();
    unknown.args(["gen", "--world", "dynamic", "--n", "1", "--frobnicate"]);
    assert_eq!(run(&mut unknown).status.code(), Some(2));

    // An inconsistent range is also a usage error.
    let tmp = tempfile::tempdir().unwrap();
    let mut bad_range = bin();
    bad_range
        .args(["gen", "--world", "dynamic", "--n", "1"])
        .args(["--min-sentences", "5", "--max-sentences", "2"])
        .arg("--out")
        .arg(tmp.path().join("x.jsonl"));
    assert_eq!(run(&mut bad_range).status.code(), Some(2));

    // A missing input file is a runtime error (1).
    let mut missing = bin();
    missing
        .arg("eval")
        .arg("--model")
        .arg(tmp.path().join("nope.json"))
        .arg("--data")
        .arg(tmp.path().join("nope.jsonl"));
    assert_eq!(run(&mut missing).status.code(), Some(1));
}
