use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_edgelab");

const BASE: &str = "\
seed = 7
model.width = desk
synth.count = 6
synth.height = 32
synth.width = 32
synth.out_dir = synth
train.synth_run_dir = run
train.epochs = 1
train.batch = 3
infer.checkpoint = run/checkpoint.sedg
infer.input_dir = synth/images
infer.output_dir = out
eval.pred_dir = out/fused
eval.gt_dir = synth/edges
eval.output_dir = eval
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("cfg.txt");
    fs::write(&path, text).unwrap();
    path
}

fn edgelab(sub: &str, cfg: &Path, sets: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg(sub).arg("--config").arg(cfg);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

fn pngs(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    names
}

/// Temp dir holding the base config and a generated synthetic set.
fn with_synth() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), BASE);
    ok(edgelab("synth", &cfg, &[]));
    (dir, cfg)
}

#[test]
fn help_exits_zero() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("train-synth"));
}

#[test]
fn bad_usage_exits_one() {
    let out = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 1);
    let out = Command::new(BIN).arg("synth").output().unwrap();
    assert_eq!(code(&out), 1, "--config is required");
}

#[test]
fn missing_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = edgelab("synth", &dir.path().join("nope.txt"), &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.txt"));
}

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n# comment\n\ntrain.learning_rate = 0.1\n");
    let out = edgelab("synth", &cfg, &[]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("train.learning_rate"), "{err}");
}

#[test]
fn unknown_override_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = edgelab("synth", &cfg, &["synth.colour=red"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("synth.colour"));
}

#[test]
fn synth_writes_images_and_edges() {
    let (dir, _) = with_synth();
    let images = pngs(&dir.path().join("synth/images"));
    assert_eq!(images.len(), 6);
    assert_eq!(images, pngs(&dir.path().join("synth/edges")));
}

#[test]
fn train_writes_checkpoint_and_loss_log() {
    let (dir, cfg) = with_synth();
    ok(edgelab("train-synth", &cfg, &["train.epochs=2"]));
    let log = fs::read_to_string(dir.path().join("run/loss_log.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tl_pix\tl_obj");
    assert_eq!(lines.len(), 3);
    for (i, l) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = l.split('\t').collect();
        assert_eq!(cells[0], (i + 1).to_string());
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().unwrap().is_finite()));
    }
    let ck = fs::read(dir.path().join("run/checkpoint.sedg")).unwrap();
    assert_eq!(&ck[..4], b"SEDG");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let (dir, cfg) = with_synth();
    ok(edgelab("train-synth", &cfg, &["train.epochs=3", "train.synth_run_dir=straight"]));
    ok(edgelab("train-synth", &cfg, &["train.epochs=2", "train.synth_run_dir=split"]));
    ok(edgelab("train-synth", &cfg, &["train.epochs=3", "train.synth_run_dir=split", "train.resume=true"]));
    for f in ["checkpoint.sedg", "loss_log.tsv"] {
        let a = fs::read(dir.path().join("straight").join(f)).unwrap();
        let b = fs::read(dir.path().join("split").join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
}

#[test]
fn corrupt_checkpoint_exits_one() {
    let (dir, cfg) = with_synth();
    fs::create_dir_all(dir.path().join("run")).unwrap();
    fs::write(dir.path().join("run/checkpoint.sedg"), b"SEDG\x01\x00").unwrap();
    let out = edgelab("infer", &cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
}

#[test]
fn diverging_training_exits_three() {
    let (_dir, cfg) = with_synth();
    let out = edgelab("train-synth", &cfg, &["train.lr=1e38", "train.epochs=3"]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

#[test]
fn infer_then_eval() {
    let (dir, cfg) = with_synth();
    ok(edgelab("train-synth", &cfg, &[]));
    ok(edgelab("infer", &cfg, &[]));
    let expected = pngs(&dir.path().join("synth/images"));
    for sub in ["pixel", "object", "combined", "fused"] {
        assert_eq!(pngs(&dir.path().join("out").join(sub)), expected, "{sub}");
    }
    ok(edgelab("eval", &cfg, &[]));
    let report = fs::read_to_string(dir.path().join("eval/report.txt")).unwrap();
    for key in ["ods", "ois", "ap"] {
        assert!(report.lines().any(|l| l.starts_with(key)), "{report}");
    }
    let curve = fs::read_to_string(dir.path().join("eval/pr_curve.tsv")).unwrap();
    assert!(curve.lines().count() > 2);
}

#[test]
fn eval_with_unpaired_files_exits_two_but_still_reports() {
    let (dir, cfg) = with_synth();
    let gt = dir.path().join("synth/edges");
    let pred = dir.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    let names = pngs(&gt);
    for n in &names[1..] {
        fs::copy(gt.join(n), pred.join(n)).unwrap();
    }
    let out = edgelab("eval", &cfg, &["eval.pred_dir=pred"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(dir.path().join("eval/report.txt").is_file());
    assert!(dir.path().join("eval/pr_curve.tsv").is_file());
}

#[test]
fn eval_without_any_pairs_exits_one() {
    let (dir, cfg) = with_synth();
    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let out = edgelab("eval", &cfg, &["eval.pred_dir=empty"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn annotate_then_train_real() {
    let (dir, cfg) = with_synth();
    ok(edgelab("train-synth", &cfg, &[]));
    let stage2 = [
        "annotate.dataset_dir=synth",
        "annotate.checkpoint=run/checkpoint.sedg",
        "annotate.n_homographies=2",
        "train.init_checkpoint=run/checkpoint.sedg",
        "train.real_run_dir=real",
    ];
    ok(edgelab("annotate", &cfg, &stage2));
    let images = pngs(&dir.path().join("synth/images"));
    let labelled: Vec<_> = fs::read_dir(dir.path().join("synth"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir() && !p.ends_with("images") && !p.ends_with("edges"))
        .collect();
    assert!(!labelled.is_empty());
    for d in &labelled {
        assert_eq!(pngs(d).len(), images.len(), "{}", d.display());
    }
    ok(edgelab("train-real", &cfg, &stage2));
    assert!(dir.path().join("real/checkpoint.sedg").is_file());
    assert!(dir.path().join("real/loss_log.tsv").is_file());
}
