use std::path::Path;
use std::process::{Command, Output};

use grurcn::metrics::MetricsReport;

const TINY: &str = "\
seed = 3
data.canvas = 12
data.frames = 5
data.sprite_min = 3
data.sprite_max = 4
data.train = 8
data.val = 4
data.test = 64
model.input = 8
model.hidden = 2,2
model.dropout = 0.2
backbone.widths = 2,2
backbone.pools = 2,2
train.crop_sizes = 8,6
train.crop_frames = 3
train.epochs = 2
eval.sub_volumes = 2
";

fn grurcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grurcn"))
        .args(args)
        .output()
        .unwrap()
}

/// Writes `TINY` with the keys in `extra` replaced or added.
fn write_config(dir: &Path, extra: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = TINY
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "trainlog.jsonl" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_byte_reproducible_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = grurcn(&["generate", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    assert!(a.join("clip_test_63.grcn").exists());

    let c = tmp.path().join("c");
    let o = grurcn(&[
        "generate",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(tree_bytes(&a), tree_bytes(&c));

    let from_disk = write_config(
        tmp.path(),
        &format!("data.path = {}\ntrain.epochs = 1\n", a.display()),
    );
    let run = tmp.path().join("run");
    let o = grurcn(&[
        "train",
        "--config",
        &from_disk,
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn untrained_model_scores_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "train.epochs = 0\n");
    let out = tmp.path().join("out");
    let o = grurcn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = MetricsReport::read(&out.join("metrics.json")).unwrap();
    let run = &report.runs[0];
    assert_eq!(run.epochs_run, 0);
    assert_eq!(run.best_epoch, None);
    let sigma = (0.125f64 * 0.875 / 64.0).sqrt();
    assert!(
        (run.test_accuracy - 0.125).abs() <= 3.0 * sigma,
        "{}",
        run.test_accuracy
    );
}

#[test]
fn training_is_byte_reproducible_and_evaluation_recomputes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = grurcn(&["train", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let report = MetricsReport::read(&a.join("metrics.json")).unwrap();
    let run = &report.runs[0];
    assert_eq!(report.class_names.len(), 8);
    assert!((0.0..=1.0).contains(&run.test_accuracy));
    assert_eq!(run.parameters.recurrent, run.parameters.recurrent_formula);
    assert_eq!(run.confusion.iter().flatten().sum::<usize>(), 64);
    let log = std::fs::read_to_string(a.join("trainlog.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["epoch", "train_loss", "val_loss", "val_acc", "seconds"] {
            assert!(v.get(k).is_some(), "{line}");
        }
    }

    let o = grurcn(&["evaluate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(e["test_accuracy"].as_f64().unwrap(), run.test_accuracy);
    let confusion: Vec<Vec<usize>> = serde_json::from_value(e["confusion"].clone()).unwrap();
    assert_eq!(confusion, run.confusion);
}

#[test]
fn compare_reports_every_architecture_and_fusion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "train.epochs = 1\neval.sub_volumes = 1\n");
    let out = tmp.path().join("cmp");
    let o = grurcn(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = MetricsReport::read(&out.join("metrics.json")).unwrap();
    let names: Vec<_> = report.runs.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "fc_gru_baseline",
            "gru_rcn",
            "bidir_gru_rcn",
            "gru_rcn_framediff"
        ]
    );
    for r in &report.runs {
        assert!(out.join(&r.checkpoint).join("manifest.json").exists());
        assert!(out.join(&r.trainlog).exists());
    }
    let f = report.fusion.unwrap();
    assert_eq!(
        (f.appearance.as_str(), f.motion.as_str()),
        ("gru_rcn", "gru_rcn_framediff")
    );
    assert!((0.0..=1.0).contains(&f.test_accuracy));
}

#[test]
fn describe_prints_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("d");
    let o = grurcn(&["describe", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!o.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("describe.json")).unwrap()).unwrap();
    assert_eq!(v["architecture"], "gru_rcn");
    let levels = v["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    // 3·3·3·(O_x·O_h + O_h·O_h) with O_x = O_h = 2
    assert_eq!(levels[0]["weights"], 216);
    assert_eq!(levels[0]["biases"], 6);
}

#[test]
fn gradcheck_passes() {
    let o = grurcn(&["gradcheck", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for name in [
        "gru_step",
        "convgru_step",
        "stacked_convgru_step",
        "run_layer",
        "gru_rcn_forward_nll",
    ] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    for (extra, key) in [
        ("model.architecture = lstm\n", "model.architecture"),
        ("train.lr = fast\n", "train.lr"),
        ("data.sprite_max = 40\n", "data"),
        ("model.colour = red\n", "model.colour"),
    ] {
        let cfg = write_config(tmp.path(), extra);
        let o = grurcn(&[
            "train",
            "--config",
            &cfg,
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "{extra}");
        assert!(stderr(&o).contains(key), "{extra}: {}", stderr(&o));
    }
    let cfg = write_config(tmp.path(), "");
    let o = grurcn(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out"));
}

#[test]
fn missing_files_fail_without_a_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = grurcn(&[
        "evaluate",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("none").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = grurcn(&[
        "train",
        "--config",
        tmp.path().join("absent.cfg").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
