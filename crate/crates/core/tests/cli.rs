use std::path::Path;
use std::process::{Command, Output};

fn kgbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgbench")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path) -> String {
    let data = dir.join("data");
    let o = kgbench(&[
        "synth", "--out", data.to_str().unwrap(), "--per-kind", "40", "--blocks", "4", "--intra", "0.4", "--noise", "0.02",
        "--feature-dim", "6", "--seed", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data.join("config.toml").to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&kgbench(&["--help"])), 0);
    assert_eq!(code(&kgbench(&[])), 1);
    assert_eq!(code(&kgbench(&["train", "--no-such-flag"])), 1);
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let o = kgbench(&["train", "--config", &cfg, "--data-fraction", "1.5"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("data_fraction"));
    assert_eq!(code(&kgbench(&["train", "--config", &cfg, "--model", "transx"])), 1);
    assert_eq!(code(&kgbench(&["train"])), 1);
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&kgbench(&["ingest", "--config", missing.to_str().unwrap()])), 2);

    let edges = dir.path().join("edges.tsv");
    std::fs::write(&edges, "D1\tdrug_protein\tP1\tNA\nD1\tdrug_protein\n").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "edges = \"edges.tsv\"\n").unwrap();
    let o = kgbench(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    std::fs::write(
        &cfg,
        "model = \"distmult\"\n\
         [synthetic]\nn_drugs = 20\nn_proteins = 20\nn_indications = 20\nn_blocks = 2\n\
         intra_block_edge_prob = 0.4\nnoise_edge_prob = 0.02\nyear_range = [2000, 2025]\nseed = 1\n\
         [kge]\nentity_dim = 8\nlearning_rate = 1e300\nepochs = 5\n",
    )
    .unwrap();
    let o = kgbench(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn end_to_end_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let base = ["--config", cfg.as_str(), "--out", o, "--dim", "8"];
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd];
        v.extend(base);
        v.extend(extra);
        kgbench(&v)
    };
    assert_eq!(code(&with("ingest", &[])), 0);
    assert_eq!(code(&with("split", &[])), 0);
    let t = with("train", &["--model", "topo"]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    for f in ["manifest.tsv", "model.ckpt", "loss_trace.tsv", "report.json", "report.txt", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(code(&with("eval", &[])), 0);
    assert!(out.join("eval.json").exists());
    assert_eq!(code(&with("predict", &["--top-k", "5", "--relation", "drug_protein"])), 0);
    let preds = std::fs::read_to_string(out.join("predictions_drug_protein.tsv")).unwrap();
    assert_eq!(preds.lines().filter(|l| !l.starts_with('#')).count(), 5);
}
