use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poseforge::augment::GrayImage;
use poseforge::metrics::ScoreReportJson;

fn poseforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poseforge")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_test_image(path: &Path) {
    let (w, h) = (40, 30);
    let px = (0..w * h).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    fs::write(path, GrayImage::new(w, h, px).unwrap().to_pgm()).unwrap();
}

#[test]
fn gen_data_writes_one_line_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scenes.jsonl");
    let o = poseforge(&["gen-data", "--n", "100", "--seed", "3", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 100);
}

#[test]
fn metrics_of_labels_against_themselves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scenes.jsonl");
    let report = dir.path().join("report.json");
    assert_eq!(poseforge(&["gen-data", "--n", "50", "--out", p(&data)]).status.code(), Some(0));
    let o = poseforge(&["metrics", "--pred", p(&data), "--gt", p(&data), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: ScoreReportJson = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.S_P_star, 0.0);
    assert_eq!(r.N, 50);
}

#[test]
fn augment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    write_test_image(&input);
    let (a, b, c) = (dir.path().join("a.png"), dir.path().join("b.png"), dir.path().join("c.png"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = poseforge(&["augment", "--in", p(&input), "--out", p(out), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let o = poseforge(&["augment", "--in", p(&input), "--out", p(&c), "--seed", "1", "--policy", "none"]);
    assert_eq!(o.status.code(), Some(0));
    let back = GrayImage::load(&c).unwrap();
    assert_eq!(back.to_bytes(), GrayImage::load(&input).unwrap().to_bytes());
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.jsonl");
    let weights = dir.path().join("w.pemw");
    let report = dir.path().join("report.json");
    let preds = dir.path().join("preds.jsonl");
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "# tiny model\npem.d_model = 8\npem.layers = 1\npem.ff_dim = 16\npem.coord_hidden = 16\npem.head_hidden = 16\n").unwrap();
    assert_eq!(poseforge(&["gen-data", "--n", "40", "--out", p(&data)]).status.code(), Some(0));
    let o = poseforge(&["--config", p(&cfg), "train", "--data", p(&data), "--out-weights", p(&weights), "--epochs", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(weights.with_extension("pemw.json").exists());
    let log = fs::read_to_string(dir.path().join("w.pemw.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let o = poseforge(&["eval", "--data", p(&data), "--weights", p(&weights), "--report", p(&report), "--predictions", p(&preds)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: ScoreReportJson = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.N, 40);

    let again = dir.path().join("again.json");
    assert_eq!(poseforge(&["metrics", "--pred", p(&preds), "--gt", p(&data), "--report", p(&again)]).status.code(), Some(0));
    let r2: ScoreReportJson = serde_json::from_str(&fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(r, r2);
}

#[test]
fn every_subcommand_help_lists_its_flags() {
    let cases: [(&str, &[&str]); 6] = [
        ("gen-data", &["--n", "--seed", "--out", "--config"]),
        ("augment", &["--in", "--out", "--seed", "--policy"]),
        (
            "train",
            &["--data", "--val", "--out-weights", "--log", "--seed", "--epochs", "--batch-size", "--lr", "--arch", "--rotation", "--sigma-px", "--p-outlier"],
        ),
        ("eval", &["--data", "--weights", "--report", "--predictions"]),
        ("metrics", &["--pred", "--gt", "--report"]),
        ("gradcheck", &["--seed"]),
    ];
    for (sub, flags) in cases {
        let o = poseforge(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub} --help is missing {f}");
        }
    }
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(poseforge(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(poseforge(&["gen-data", "--n", "3", "--bogus", "x"]).status.code(), Some(1));
    let o = poseforge(&["metrics", "--pred", "/nonexistent/a", "--gt", "/nonexistent/b", "--report", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/a"));
    assert!(o.stdout.is_empty());
}

#[test]
fn failures_leave_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.jsonl");
    let pred = dir.path().join("pred.jsonl");
    let report = dir.path().join("report.json");
    assert_eq!(poseforge(&["gen-data", "--n", "5", "--out", p(&gt)]).status.code(), Some(0));
    let lines: Vec<String> = fs::read_to_string(&gt).unwrap().lines().take(4).map(String::from).collect();
    fs::write(&pred, lines.join("\n") + "\n").unwrap();
    assert_eq!(poseforge(&["metrics", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]).status.code(), Some(2));
    assert!(!report.exists());

    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "scene.distance_min = -1\n").unwrap();
    let out = dir.path().join("never.jsonl");
    assert_eq!(poseforge(&["--config", p(&bad_cfg), "gen-data", "--n", "5", "--out", p(&out)]).status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
}
