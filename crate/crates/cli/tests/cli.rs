use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn atseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atseg"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = atseg(args);
    assert!(
        out.status.success(),
        "atseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    atseg(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, images: usize, extra: &[&str]) -> String {
    let images = images.to_string();
    let mut args = vec![
        "synth",
        "--out",
        p(dir),
        "--images",
        &images,
        "--height",
        "32",
        "--width",
        "32",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("manifest.json").to_str().unwrap().to_string()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

#[test]
fn train_log_has_one_line_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("ds"), 4, &[]);
    let out = dir.path().join("model");
    ok(&[
        "train",
        "--manifest",
        &m,
        "--models",
        "synth",
        "--rounds",
        "100",
        "--max-depth",
        "3",
        "--out",
        p(&out),
    ]);
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "round,train_loss");
    assert_eq!(lines.len(), 101);
    let losses: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn noiseless_scenes_segment_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("ds"), 8, &["--noise", "0"]);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--manifest",
        &m,
        "--models",
        "synth",
        "--rounds",
        "30",
        "--out",
        p(&out),
    ]);
    ok(&["evaluate", "--manifest", &m, "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("dataset,model_set,class,dice,vacuous\n"));
    let mean: f64 = csv
        .lines()
        .find(|l| l.split(',').nth(2) == Some("mean"))
        .and_then(|l| l.split(',').nth(3))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean >= 0.99, "mean Dice {mean}");
    assert!(out.join("report.txt").exists());

    ok(&[
        "predict",
        "--manifest",
        &m,
        "--out",
        p(&out),
        "--split",
        "all",
    ]);
    let preds = fs::read_dir(out.join("pred")).unwrap().count();
    assert_eq!(preds, 8);
}

#[test]
fn concatenated_models_widen_the_feature_vector() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(
        &dir.path().join("ds"),
        8,
        &["--complementary", "--channels-per-class", "1"],
    );
    let ds = dir.path().join("ds");
    assert!(ds.join("img0000.synthA.npy").exists() && ds.join("img0000.synthB.npy").exists());
    let out = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--manifest",
        &m,
        "--models",
        "synthA,synthB",
        "--rounds",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(stdout.contains("on 4 features"), "{stdout}");
    let meta = fs::read_to_string(out.join("model.meta.json")).unwrap();
    assert!(meta.contains("\"num_features\": 4"));
}

#[test]
fn zero_rounds_is_a_valid_model() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("ds"), 5, &[]);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--manifest",
        &m,
        "--models",
        "synth",
        "--rounds",
        "0",
        "--out",
        p(&out),
    ]);
    assert_eq!(
        fs::read_to_string(out.join("train_log.csv")).unwrap(),
        "round,train_loss\n"
    );
    ok(&["evaluate", "--manifest", &m, "--out", p(&out)]);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let ds = dir.path().join(format!("{name}-ds"));
        let m = synth(&ds, 8, &["--seed", "5"]);
        let out = dir.path().join(name);
        let common = [
            "--manifest",
            &m,
            "--models",
            "synth",
            "--rounds",
            "10",
            "--threads",
            threads,
            "--out",
            p(&out),
        ];
        ok(&[&["train"], &common[..]].concat());
        ok(&[&["evaluate"], &common[..]].concat());
        ["model.atsg", "train_log.csv", "report.csv", "report.txt"].map(|f| digest(&out.join(f)))
    };
    assert_eq!(run("a", "1"), run("b", "4"));
}

fn write_published_scores(path: &Path) {
    let rows = [
        ("CONCH", [0.87, 0.67, 0.39, 0.62]),
        ("PathDino", [0.83, 0.69, 0.56, 0.47]),
        ("CellViT", [0.77, 0.69, 0.82, 0.52]),
        ("Phikon", [0.84, 0.62, 0.06, 0.54]),
        ("Phikon-v2", [0.85, 0.59, 0.05, 0.52]),
        ("Virchow", [0.86, 0.53, 0.12, 0.45]),
        ("Virchow2", [0.82, 0.62, 0.08, 0.43]),
        ("UNI", [0.83, 0.62, 0.05, 0.36]),
        ("Lunit DINO", [0.81, 0.54, 0.01, 0.49]),
        ("HIPT", [0.71, 0.53, 0.13, 0.36]),
    ];
    let mut csv = String::from("dataset,model,score\n");
    for (model, scores) in rows {
        for (d, s) in ["GlaS", "OCELOT", "LyNSeC2", "BCSS"].iter().zip(scores) {
            csv.push_str(&format!("{d},{model},{s}\n"));
        }
    }
    fs::write(path, csv).unwrap();
}

#[test]
fn rank_orders_published_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_published_scores(&scores);
    ok(&["rank", "--scores", p(&scores), "--out", p(dir.path())]);
    let csv = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    let models: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(models.first(), Some(&"CONCH"));
    assert_eq!(models.last(), Some(&"HIPT"));
    let mut top3 = models[..3].to_vec();
    top3.sort_unstable();
    assert_eq!(top3, ["CONCH", "CellViT", "PathDino"]);
    assert!(dir.path().join("ranks.txt").exists());
}

#[test]
fn equal_scores_are_flagged_tied() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "d,alpha,0.5\nd,beta,0.5\n").unwrap();
    let stdout = ok(&["rank", "--scores", p(&scores), "--out", p(dir.path())]);
    assert!(stdout.contains("1.50"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains("true")), "{csv}");
}

#[test]
fn benchmark_ranks_trained_and_supplied_scores() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(
        &dir.path().join("ds"),
        6,
        &["--complementary", "--name", "toy"],
    );
    let scores = dir.path().join("extra.csv");
    fs::write(&scores, "toy,baseline,0.1\n").unwrap();
    let out = dir.path().join("bench");
    ok(&[
        "benchmark",
        "--manifest",
        &m,
        "--model-set",
        "synthA",
        "--model-set",
        "synthA,synthB",
        "--scores",
        p(&scores),
        "--rounds",
        "10",
        "--out",
        p(&out),
    ]);
    let ranks = fs::read_to_string(out.join("benchmark_ranks.csv")).unwrap();
    let last = ranks.lines().last().unwrap();
    assert!(last.starts_with("baseline,"), "{ranks}");
    assert!(out.join("benchmark.csv").exists() && out.join("benchmark.txt").exists());

    // a second dataset only known from --scores leaves cells missing
    fs::write(&scores, "toy,baseline,0.1\nother,baseline,0.2\n").unwrap();
    let c = code(&[
        "benchmark",
        "--manifest",
        &m,
        "--model-set",
        "synthA",
        "--scores",
        p(&scores),
        "--rounds",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(c, 2);
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(&dir.path().join("ds"), 3, &[]);
    let out = p(dir.path());
    // no --models
    assert_eq!(code(&["train", "--manifest", &m, "--out", out]), 2);
    // unknown model id in the manifest
    assert_eq!(
        code(&["train", "--manifest", &m, "--models", "conch", "--out", out]),
        3
    );
    // bad hyperparameter
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            &m,
            "--models",
            "synth",
            "--learning-rate",
            "-1",
            "--out",
            out
        ]),
        2
    );
    // corrupt tensor found by --strict
    fs::write(
        dir.path().join("ds").join("img0001.synth.npy"),
        b"\x93NUMPY",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            &m,
            "--models",
            "synth",
            "--strict",
            "--out",
            out
        ]),
        3
    );
    // malformed manifest
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x"}"#).unwrap();
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            p(&bad),
            "--models",
            "synth",
            "--out",
            out
        ]),
        2
    );
    // unknown config key
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"roundz": 3}"#).unwrap();
    assert_eq!(code(&["--config", p(&cfg), "rank"]), 2);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("ds"), 3, &[]);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"manifest": "ds/manifest.json", "models": ["synth"], "rounds": 4, "out": "cfg-out"}"#,
    )
    .unwrap();
    ok(&["--config", p(&cfg), "train"]);
    let log = fs::read_to_string(dir.path().join("cfg-out").join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
}
