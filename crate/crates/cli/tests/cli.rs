use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sec2sec_cli::commands::strip_timing;
use sec2sec_cli::run;
use tempfile::TempDir;

const TINY: &str = "\
variant = SA-CA
n_segments = 3
d_model = 8
d_hidden = 8
d_attn = 8
heads = 2
max_epochs = 2
patience = 5
batch_size = 16
lr_grid = 0.003
synthetic_mode = recency
synthetic_train = 48
synthetic_test = 16
seed = 4
";

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("sec2sec").chain(list.iter().copied()).map(String::from).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the tiny config and a synthetic dataset, returning (config, train, test).
fn setup(dir: &Path, extra: &str) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    let data = dir.join("data");
    assert_eq!(run(args(&["synth", "--config", p(&cfg), "--out", p(&data)])), 0);
    (cfg, data.join("train.jsonl"), data.join("test.jsonl"))
}

#[test]
fn train_eval_interpret_round_trip() {
    let dir = TempDir::new().unwrap();
    let (cfg, train, test) = setup(dir.path(), "interpretable = true\n");
    let out = dir.path().join("run");
    let code = run(args(&[
        "train",
        "--config",
        p(&cfg),
        "--manifest",
        p(&train),
        "--set",
        &format!("test_manifest={}", p(&test)),
        "--out",
        p(&out),
    ]));
    assert_eq!(code, 0);
    for f in ["config.resolved", "model.s2s", "model.json", "metrics.json", "loss.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["variant"], "SA-CA");
    assert!(metrics["test"]["accuracy"].is_number());
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,train_loss,val_loss,val_score,seconds\n"));

    // the echoed configuration reproduces the run settings
    let echo = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(echo.contains("interpretable = true"));
    assert!(echo.contains("seed = 4"));

    let ckpt = out.join("model.s2s");
    let eval_out = dir.path().join("eval");
    assert_eq!(
        run(args(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--out", p(&eval_out)])),
        0
    );
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("metrics.json")).unwrap()).unwrap();
    // evaluating the saved checkpoint matches the test score recorded at training time
    assert_eq!(eval["metrics"]["accuracy"], metrics["test"]["accuracy"]);
    let preds = fs::read_to_string(eval_out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 17);

    let interp_out = dir.path().join("interp");
    assert_eq!(
        run(args(&["interpret", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--out", p(&interp_out)])),
        0
    );
    let alphas = fs::read_to_string(interp_out.join("alphas.csv")).unwrap();
    let mut lines = alphas.lines();
    assert_eq!(lines.next(), Some("id,alpha_1,alpha_2,alpha_3"));
    for line in lines {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
    let mean = fs::read_to_string(interp_out.join("alphas_mean.csv")).unwrap();
    assert_eq!(mean.lines().count(), 4);
}

#[test]
fn existing_output_needs_force() {
    let dir = TempDir::new().unwrap();
    let (cfg, train, _) = setup(dir.path(), "");
    let out = dir.path().join("run");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let base = ["train", "--config", p(&cfg), "--manifest", p(&train), "--out", p(&out)];
    assert_eq!(run(args(&base)), 2);
    let mut forced = base.to_vec();
    forced.push("--force");
    assert_eq!(run(args(&forced)), 0);
}

#[test]
fn same_seed_same_artifacts() {
    let dir = TempDir::new().unwrap();
    let (cfg, train, _) = setup(dir.path(), "");
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        assert_eq!(run(args(&["train", "--config", p(&cfg), "--manifest", p(&train), "--out", p(&out)])), 0);
        outs.push(out);
    }
    let read_metrics = |d: &Path| -> serde_json::Value {
        strip_timing(serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap())
    };
    assert_eq!(read_metrics(&outs[0]), read_metrics(&outs[1]));
    assert_eq!(fs::read(outs[0].join("model.s2s")).unwrap(), fs::read(outs[1].join("model.s2s")).unwrap());
}

#[test]
fn ablation_lists_variants_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{TINY}max_epochs = 1\n")).unwrap();
    let out = dir.path().join("ablate");
    assert_eq!(run(args(&["ablate", "--config", p(&cfg), "--out", p(&out)])), 0);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["SA-CA", "SA-SA", "AudioOnly", "VisionOnly", "CoAttnNoLSTM"]);
    let header = csv.lines().next().unwrap();
    for col in ["test_accuracy", "test_f1", "mean_epoch_seconds"] {
        assert!(header.contains(col));
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let (cfg, train, test) = setup(dir.path(), "");
    let out = |name: &str| dir.path().join(name);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(run(args(&["train", "--config", p(&cfg), "--manifest", p(&empty), "--out", p(&out("a"))])), 2);

    let missing = dir.path().join("nope.s2s");
    assert_eq!(
        run(args(&["eval", "--checkpoint", p(&missing), "--manifest", p(&test), "--out", p(&out("b"))])),
        2
    );

    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "learning_rate = 0.1\n").unwrap();
    assert_eq!(run(args(&["train", "--config", p(&bad_cfg), "--manifest", p(&train), "--out", p(&out("c"))])), 2);

    assert_eq!(run(args(&["train", "--bogus-flag"])), 2);

    // a non-interpretable checkpoint has no attention weights to export
    let run_dir = out("d");
    assert_eq!(run(args(&["train", "--config", p(&cfg), "--manifest", p(&train), "--out", p(&run_dir)])), 0);
    assert_eq!(
        run(args(&[
            "interpret",
            "--checkpoint",
            p(&run_dir.join("model.s2s")),
            "--manifest",
            p(&test),
            "--out",
            p(&out("e"))
        ])),
        2
    );
}

#[test]
fn binary_reports_exit_status() {
    let dir = TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sec2sec"))
        .args(["eval", "--checkpoint", "missing.s2s", "--manifest", "missing.jsonl", "--out"])
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let help = Command::new(env!("CARGO_BIN_EXE_sec2sec")).arg("--help").output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("ablate"));
}

#[test]
fn traits_task_reports_five_mean_accuracies() {
    use sec2sec_core::data::{load_manifest, save_manifest};
    use sec2sec_core::model::BIG_FIVE;

    let dir = TempDir::new().unwrap();
    let (cfg, train, test) = setup(dir.path(), "task = traits\n");
    for path in [&train, &test] {
        let mut m = load_manifest(path).unwrap();
        for (i, rec) in m.records.iter_mut().enumerate() {
            rec.labels = BIG_FIVE
                .iter()
                .enumerate()
                .map(|(k, name)| (name.to_string(), ((i * 7 + k * 3) % 10) as f64 / 9.0))
                .collect();
        }
        save_manifest(path, &m.records).unwrap();
    }
    let out = dir.path().join("run");
    assert_eq!(run(args(&["train", "--config", p(&cfg), "--manifest", p(&train), "--out", p(&out)])), 0);
    let eval_out = dir.path().join("eval");
    let ckpt = out.join("model.s2s");
    assert_eq!(
        run(args(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--out", p(&eval_out)])),
        0
    );
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("metrics.json")).unwrap()).unwrap();
    let traits = eval["metrics"]["mean_accuracy"].as_array().unwrap();
    assert_eq!(traits.len(), 5);
    for (t, name) in traits.iter().zip(BIG_FIVE) {
        assert_eq!(t["name"], name);
        let v = t["mean_accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn memorized_checkpoint_scores_its_training_set() {
    let dir = TempDir::new().unwrap();
    let extra = "synthetic_mode = xor\nsynthetic_train = 40\nsynthetic_noise = 0.3\nmax_epochs = 60\npatience = 60\nlr_grid = 0.01\nval_fraction = 0.2\n";
    let (cfg, train, _) = setup(dir.path(), extra);
    // validate on the training manifest itself so the best epoch is the best fit
    let out = dir.path().join("run");
    let code = run(args(&[
        "train",
        "--config",
        p(&cfg),
        "--manifest",
        p(&train),
        "--set",
        &format!("val_manifest={}", p(&train)),
        "--out",
        p(&out),
    ]));
    assert_eq!(code, 0);
    let eval_out = dir.path().join("eval");
    let ckpt = out.join("model.s2s");
    assert_eq!(
        run(args(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&train), "--out", p(&eval_out)])),
        0
    );
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("metrics.json")).unwrap()).unwrap();
    let acc = eval["metrics"]["accuracy"].as_f64().unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
}
