use std::fs;
use std::path::Path;

use alesal_cli::run;

fn alesal(args: &[&str]) -> i32 {
    run(std::iter::once("alesal").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, per_class: &str, seed: &str) {
    assert_eq!(alesal(&["synth", "--per-class", per_class, "--subcarriers", "30", "--seed", seed, "--out", p(dir)]), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(alesal(&["train", "--bogus"]), 2);
    assert_eq!(alesal(&["frobnicate"]), 2);
    assert_eq!(alesal(&["synth", "--per-class", "x", "--out", "d"]), 2);
    assert_eq!(alesal(&["train", "--data", "d", "--out", "m", "--band", "0.1-2"]), 2);
    assert_eq!(alesal(&["train", "--help"]), 0);
    assert_eq!(alesal(&["inspect-attention", "--help"]), 0);
}

#[test]
fn pipeline_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(alesal(&["train", "--data", p(&tmp.path().join("missing")), "--out", "m.ckpt"]), 1);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nnot_a_field = 1\n").unwrap();
    assert_eq!(alesal(&["--config", p(&cfg), "synth", "--out", p(tmp.path())]), 1);
}

#[test]
fn synth_writes_sessions_labels_and_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "1", "7");
    synth(&b, "1", "7");
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    assert!(names.contains(&"manifest.json".to_string()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert_eq!(fs::read_to_string(a.join("session_00001.labels")).unwrap().trim(), "0 20 apnea");
}

#[test]
fn train_eval_infer_inspect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (train_dir, test_dir) = (d.join("train"), d.join("test"));
    synth(&train_dir, "4", "1");
    synth(&test_dir, "2", "2");
    let model = d.join("m.ckpt");
    let hist = d.join("hist.json");
    assert_eq!(
        alesal(&["train", "--data", p(&train_dir), "--out", p(&model), "--seed", "1", "--epochs", "3", "--history", p(&hist)]),
        0
    );
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(&hist).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 3);

    let report = d.join("report.csv");
    assert_eq!(alesal(&["eval", "--model", p(&model), "--data", p(&test_dir), "--out", p(&report)]), 0);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("metric,class,value\n"));
    assert!(csv.contains("weighted_f1,all,"));
    assert_eq!(alesal(&["eval", "--model", p(&model), "--data", p(&test_dir), "--out", p(&report), "--min-accuracy", "100.1"]), 1);

    // Unlabeled sessions are fine for inference but not for evaluation.
    fs::remove_file(test_dir.join("session_00000.labels")).unwrap();
    let preds = d.join("pred.csv");
    assert_eq!(alesal(&["infer", "--model", p(&model), "--data", p(&test_dir), "--out", p(&preds)]), 0);
    let lines: Vec<String> = fs::read_to_string(&preds).unwrap().lines().map(String::from).collect();
    assert_eq!(lines[0], "window_id,predicted,p_normal,p_apnea,p_plmd");
    assert_eq!(lines.len(), 7);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        let s: f64 = f[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(alesal(&["eval", "--model", p(&model), "--data", p(&test_dir)]), 1);

    let out = d.join("att");
    assert_eq!(alesal(&["inspect-attention", "--model", p(&model), "--window", "3", "--out-dir", p(&out)]), 0);
    let ta = fs::read_to_string(out.join("time_attention.csv")).unwrap();
    let mut rows = std::collections::BTreeMap::<(u32, usize, usize), f64>::new();
    for l in ta.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[0], "3");
        *rows.entry((f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())).or_default() += f[4].parse::<f64>().unwrap();
    }
    assert_eq!(rows.len(), 4 * 11);
    assert!(rows.values().all(|s| (s - 1.0).abs() < 1e-6));
    let pa = fs::read_to_string(out.join("pair_attention.csv")).unwrap();
    assert_eq!(pa.lines().count(), 1 + 64);
    for l in pa.lines().skip(1) {
        let w: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(w > 0.0 && w < 1.0);
    }
    assert_eq!(alesal(&["inspect-attention", "--model", p(&model), "--window", "99", "--out-dir", p(&out)]), 1);
}

#[test]
fn blob_training_config_precedence_and_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    synth(&data, "2", "3");
    let blob = d.join("f.blob");
    assert_eq!(alesal(&["preprocess", "--data", p(&data), "--out", p(&blob)]), 0);

    let cfg = d.join("run.toml");
    fs::write(&cfg, "seed = 4\n[train]\nmax_epochs = 2\nval_fraction = 0.0\n").unwrap();
    let hist = d.join("h.json");
    let model = d.join("m.ckpt");
    let train = |extra: &[&str]| {
        let mut args = vec!["--config", p(&cfg), "train", "--data", p(&blob), "--out", p(&model), "--history", p(&hist)];
        args.extend_from_slice(extra);
        alesal(&args)
    };
    let epochs = |h: &Path| serde_json::from_str::<serde_json::Value>(&fs::read_to_string(h).unwrap()).unwrap()["epochs"].as_array().unwrap().len();
    assert_eq!(train(&[]), 0);
    assert_eq!(epochs(&hist), 2);
    assert_eq!(train(&["--epochs", "1", "--no-ta", "--no-pa"]), 0);
    assert_eq!(epochs(&hist), 1);
    assert_eq!(train(&["--epochs", "1", "--arch", "dmlp"]), 0);
    assert_eq!(alesal(&["eval", "--model", p(&model), "--data", p(&blob), "--out", p(&d.join("r.csv"))]), 0);
    // The baseline has no attention to inspect.
    assert_eq!(alesal(&["inspect-attention", "--model", p(&model), "--out-dir", p(d)]), 1);

    let runs = d.join("runs.csv");
    assert_eq!(
        alesal(&["ablate", "--train-data", p(&blob), "--test-data", p(&blob), "--seeds", "2", "--epochs", "1", "--variants", "full,dmlp", "--out", p(&runs)]),
        0
    );
    let csv = fs::read_to_string(&runs).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("full,0,"));
    assert!(csv.lines().nth(3).unwrap().starts_with("dmlp,0,"));
    assert_eq!(alesal(&["ablate", "--train-data", p(&blob), "--test-data", p(&blob), "--variants", "bogus"]), 1);
}

#[test]
fn table_overrides_change_the_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    assert_eq!(alesal(&["synth", "--per-class", "1", "--subcarriers", "30", "--duration-sec", "40", "--out", p(&data)]), 0);
    let blob = d.join("f.blob");
    assert_eq!(alesal(&["preprocess", "--data", p(&data), "--out", p(&blob), "--window-sec", "10", "--stft-window-sec", "5", "--band", "0.2:1.5"]), 0);
    let model = d.join("m.ckpt");
    assert_eq!(alesal(&["train", "--data", p(&blob), "--out", p(&model), "--epochs", "1"]), 0);
    let preds = d.join("p.csv");
    assert_eq!(alesal(&["infer", "--model", p(&model), "--data", p(&blob), "--out", p(&preds)]), 0);
    // 40 s sessions cut into 10 s windows.
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 1 + 12);
    // Invalid geometry is a pipeline error.
    assert_eq!(alesal(&["preprocess", "--data", p(&data), "--out", p(&blob), "--stft-window-sec", "30"]), 1);
}

#[test]
fn readme_config_example_parses() {
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let tmp = tempfile::NamedTempFile::new().unwrap();
    fs::write(tmp.path(), block).unwrap();
    let s = alesal_cli::Settings::load(Some(tmp.path()), None, None).unwrap();
    assert_eq!((s.seed, s.threads, s.train.seed), (7, Some(1), 7));
    assert_eq!(s.dataset.per_class, [300; 3]);
    assert_eq!(s.train.adam.lr, 0.001);
    // Flags win over the file.
    let s = alesal_cli::Settings::load(Some(tmp.path()), Some(9), Some(2)).unwrap();
    assert_eq!((s.seed, s.threads, s.train.seed), (9, Some(2), 9));
}
