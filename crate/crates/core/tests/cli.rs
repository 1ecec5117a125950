use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ericnn::data::{save_class_folders, synthetic_cross, ClassFolders, Split};
use ericnn::model::{save_weights, Network};

fn ericnn(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ericnn"));
    cmd.args(args).env_remove("ERICNN_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dataset(root: &Path, n: usize, seed: u64) -> PathBuf {
    let d = synthetic_cross(n, seed, Split::Train);
    save_class_folders(&d, root, &ClassFolders::default()).unwrap();
    root.to_path_buf()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data-root", data, "--out-dir", out, "--epochs", "1", "--batch-size", "8", "--seed", "4",
    ]
}

#[test]
fn train_writes_weights_history_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 20, 1);
    let out = tmp.path().join("run");
    let o = ericnn(&train_args(s(&data), s(&out)), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.ericnn", "history.csv", "config.effective"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join(".ericnn.lock").exists());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
}

#[test]
fn missing_data_root_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let o = ericnn(&train_args(s(&missing), s(&tmp.path().join("run"))), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn repeated_runs_and_reruns_from_effective_config_match() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 20, 2);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for out in [&a, &b] {
        let o = ericnn(&train_args(s(&data), s(out)), &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let cfg = a.join("config.effective");
    let o = ericnn(&["train", "--config", s(&cfg), "--out-dir", s(&c)], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.ericnn", "history.csv"] {
        let first = fs::read(a.join(f)).unwrap();
        assert_eq!(first, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
        assert_eq!(first, fs::read(c.join(f)).unwrap(), "{f} differs after rerun");
    }
}

#[test]
fn seed_variable_is_recorded_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 12, 3);
    let out = tmp.path().join("env");
    let args = ["train", "--data-root", s(&data), "--out-dir", s(&out), "--epochs", "1"];
    let o = ericnn(&args, &[("ERICNN_SEED", "77")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("config.effective")).unwrap();
    assert!(text.lines().any(|l| l == "seed = 77"), "{text}");

    let out = tmp.path().join("flag");
    let o = ericnn(&train_args(s(&data), s(&out)), &[("ERICNN_SEED", "77")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("config.effective")).unwrap();
    assert!(text.lines().any(|l| l == "seed = 4"), "{text}");
}

#[test]
fn bad_seed_variable_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 8, 3);
    let out = tmp.path().join("r");
    let args = ["train", "--data-root", s(&data), "--out-dir", s(&out)];
    let o = ericnn(&args, &[("ERICNN_SEED", "seven")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ERICNN_SEED"), "{}", stderr(&o));
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 8, 1);
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".ericnn.lock"), "").unwrap();
    let o = ericnn(&train_args(s(&data), s(&out)), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
    assert!(!out.join("model.ericnn").exists());
}

#[test]
fn eval_of_forced_positive_classifier_on_cactus_only_set() {
    let tmp = tempfile::tempdir().unwrap();
    let mut d = synthetic_cross(10, 5, Split::Test);
    d.items.retain(|i| i.label == 1);
    let test_dir = tmp.path().join("test");
    fs::create_dir_all(test_dir.join("no_cactus")).unwrap();
    save_class_folders(&d, &test_dir, &ClassFolders::default()).unwrap();
    let mut net = Network::<f32>::eri_cnn();
    for (name, t) in net.parameters_mut() {
        if name == "fc2.bias" {
            t.data_mut()[0] = 100.0;
        }
    }
    let weights = tmp.path().join("forced.ericnn");
    save_weights(&net, &weights).unwrap();
    let out = tmp.path().join("eval");
    let o = ericnn(&["eval", "--weights", s(&weights), "--test-dir", s(&test_dir), "--out-dir", s(&out)], &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let keys: BTreeSet<_> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["accuracy", "precision", "recall", "f1", "loss", "confusion"]));
    for k in ["accuracy", "precision", "recall", "f1"] {
        assert_eq!(json[k].as_f64(), Some(1.0), "{k}");
    }
    assert_eq!(json["confusion"]["tp"].as_u64(), Some(5));
    assert!(out.join("metrics.txt").is_file());
}

#[test]
fn eval_rejects_damaged_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let test_dir = dataset(&tmp.path().join("test"), 4, 1);
    let weights = tmp.path().join("bad.ericnn");
    fs::write(&weights, b"ERICNN01garbage").unwrap();
    let o = ericnn(
        &["eval", "--weights", s(&weights), "--test-dir", s(&test_dir), "--out-dir", s(&tmp.path().join("o"))],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weight file"), "{}", stderr(&o));
}

#[test]
fn ablate_reports_both_arms_from_the_same_start() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 16, 6);
    let test_dir = dataset(&tmp.path().join("test"), 8, 60);
    let out = tmp.path().join("ablate");
    let o = ericnn(
        &[
            "ablate", "--data-root", s(&data), "--test-dir", s(&test_dir), "--out-dir", s(&out), "--epochs", "1",
            "--batch-size", "8",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json["evaluated_on"], "test");
    let arms = json["arms"].as_array().unwrap();
    let names: Vec<_> = arms.iter().map(|a| a["arm"].as_str().unwrap()).collect();
    assert_eq!(names, ["with_augmentation", "without_augmentation"]);
    for a in arms {
        for k in ["accuracy", "precision", "recall", "f1", "loss"] {
            assert!(a[k].is_number(), "{k}");
        }
    }
    assert_eq!(arms[0]["initial_weights_checksum"], arms[1]["initial_weights_checksum"]);
    assert!(out.join("ablation.txt").is_file());
}

#[test]
fn init_stats_over_ten_thousand_units() {
    let tmp = tempfile::tempdir().unwrap();
    let max_abs = |alpha: &str, out: &Path| -> f64 {
        let o = ericnn(&["init-stats", "--alpha-min", alpha, "--out-dir", s(out)], &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = fs::read_to_string(out.join("init_stats.txt")).unwrap();
        assert!(text.contains("violations = 0\n"), "{text}");
        let csv = fs::read_to_string(out.join("init_stats.csv")).unwrap();
        assert_eq!(csv.lines().count(), 10_001);
        let line = text.lines().find(|l| l.starts_with("max_abs_weight = ")).unwrap();
        line["max_abs_weight = ".len()..].parse().unwrap()
    };
    let at_30 = max_abs("30", &tmp.path().join("a30"));
    let at_89 = max_abs("89", &tmp.path().join("a89"));
    assert!(at_89 > at_30, "{at_89} <= {at_30}");

    let o = ericnn(&["init-stats", "--alpha-min", "90", "--out-dir", s(&tmp.path().join("a90"))], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha_min"), "{}", stderr(&o));
}

#[test]
fn augment_preview_writes_images() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(&tmp.path().join("data"), 6, 2);
    let out = tmp.path().join("preview");
    let o = ericnn(
        &["augment-preview", "--data-root", s(&data), "--out-dir", s(&out), "--count", "2", "--variants", "3"],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let n = fs::read_dir(out.join("preview")).unwrap().count();
    assert_eq!(n, 2 * (1 + 3));
    let img = image::open(out.join("preview/000_aug0.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[test]
fn unknown_config_key_and_bad_flags_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "# comment\nepochs = 1\nbogus = 3\n").unwrap();
    let o = ericnn(&["train", "--config", s(&cfg)], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
    let o = ericnn(&["train", "--epochs", "lots"], &[]);
    assert_eq!(o.status.code(), Some(1));
}
