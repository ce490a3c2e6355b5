use std::path::Path;
use std::process::{Command, Output};

fn tinycd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinycd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_dataset(root: &Path) {
    let o = tinycd(&["synth", "--out", p(root), "--train", "6", "--val", "4", "--test", "4", "--size", "16"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_writes_requested_counts() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    for (split, n) in [("train", 6), ("val", 4), ("test", 4)] {
        for sub in ["A", "B", "label"] {
            let count = std::fs::read_dir(dir.path().join(split).join(sub)).unwrap().count();
            assert_eq!(count, n, "{split}/{sub}");
        }
        assert!(dir.path().join(split).join("shapes.json").exists());
    }
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    small_dataset(&data);

    let o = tinycd(&["train", "--data-root", p(&data), "--epochs", "2", "--set", "batch_size=4", "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("best epoch"));
    for f in ["config.toml", "train_log.jsonl", "best.ckpt", "last.ckpt", "metrics.json", "metrics.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    // Re-evaluating best.ckpt on val reproduces the logged best F1 exactly.
    let evals = dir.path().join("eval");
    let ckpt = run.join("best.ckpt");
    let o =
        tinycd(&["eval", "--checkpoint", p(&ckpt), "--data-root", p(&data), "--batch-size", "4", "--out", p(&evals)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&evals.join("metrics_val.json"))["f1"], json(&run.join("metrics.json"))["f1"]);
    assert!(stdout(&o).contains("f1: "));

    let a = data.join("test/A/synth_00000.png");
    let b = data.join("test/B/synth_00000.png");
    let pred = dir.path().join("pred");
    let o = tinycd(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--image-a",
        p(&a),
        "--image-b",
        p(&b),
        "--dump-masks",
        "--out",
        p(&pred),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Three stride-2 levels: three masks plus the prediction.
    let mut files: Vec<_> =
        std::fs::read_dir(&pred).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["mask_0.png", "mask_1.png", "mask_2.png", "prediction.png"]);
    let img = image::open(pred.join("prediction.png")).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (16, 16));
    assert!(img.pixels().all(|px| px.0[0] == 0 || px.0[0] == 255));
}

#[test]
fn predict_rejects_mismatched_pair() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    small_dataset(&data);
    let o = tinycd(&["train", "--data-root", p(&data), "--epochs", "0", "--out", p(&run)]);
    assert_eq!(code(&o), 0);
    let small = dir.path().join("small.png");
    image::RgbImage::new(8, 8).save(&small).unwrap();
    let a = data.join("test/A/synth_00000.png");
    let ckpt = run.join("best.ckpt");
    let o = tinycd(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--image-a",
        p(&a),
        "--image-b",
        p(&small),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_and_catches_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = tinycd(&["gradcheck", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert_eq!(json(&dir.path().join("gradcheck.json"))["passed"], true);

    let o = tinycd(&["gradcheck", "--inject-fault", "conv2d"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("conv2d ") && l.ends_with("FAIL")), "{out}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&tinycd(&["train", "--bogus"])), 2);
    assert_eq!(code(&tinycd(&["gradcheck", "--inject-fault", "no_such_op"])), 2);
    assert_eq!(code(&tinycd(&["train", "--set", "epochz=3", "--out", "/tmp/unused"])), 2);
    assert_eq!(code(&tinycd(&["train", "--set", "lr"])), 2);
    assert_eq!(code(&tinycd(&["synth", "--size", "20", "--out", "/tmp/unused"])), 2);
}

#[test]
fn missing_files_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tinycd(&["eval", "--checkpoint", p(&dir.path().join("none.ckpt")), "--data-root", p(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ablate_refuses_oversized_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        tinycd(&["ablate", "--grid", "seed=0,1,2,3,4", "--grid", "lr=0.1,0.01,0.001,0.0001", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max-cells"));
}

#[test]
fn ablate_tabulates_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("ablate");
    small_dataset(&data);
    let o = tinycd(&[
        "ablate",
        "--grid",
        "use_skip_connections=true,false",
        "--data-root",
        p(&data),
        "--epochs",
        "1",
        "--parallel",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&out.join("ablation.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["params"].as_u64().unwrap() > rows[1]["params"].as_u64().unwrap());
    assert!(rows.iter().all(|r| r["test"]["f1"].is_number()));
    assert!(std::fs::read_to_string(out.join("ablation.txt")).unwrap().contains("model.use_skip_connections=false"));
}

fn trained_run(dir: &Path, epochs: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let run = dir.join("run");
    small_dataset(&data);
    let o = tinycd(&["train", "--data-root", p(&data), "--epochs", epochs, "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (data, run)
}

#[test]
fn zero_epochs_evaluates_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained_run(dir.path(), "0");
    assert_eq!(std::fs::read_to_string(run.join("train_log.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read(run.join("best.ckpt")).unwrap(), std::fs::read(run.join("last.ckpt")).unwrap());
    assert!(run.join("metrics.json").exists());
}

#[test]
fn higher_threshold_never_raises_recall() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained_run(dir.path(), "1");
    let ckpt = run.join("best.ckpt");
    let recall = |t: &str| {
        let out = dir.path().join(format!("eval_{t}"));
        let o =
            tinycd(&["eval", "--checkpoint", p(&ckpt), "--data-root", p(&data), "--threshold", t, "--out", p(&out)]);
        assert_eq!(code(&o), 0);
        json(&out.join("metrics_val.json"))["recall"].as_f64().unwrap()
    };
    assert!(recall("0.9") <= recall("0.5"));
    let o = tinycd(&["eval", "--checkpoint", p(&ckpt), "--data-root", p(&data), "--threshold", "1.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_split_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained_run(dir.path(), "0");
    let empty = dir.path().join("empty");
    let o = tinycd(&["synth", "--out", p(&empty), "--train", "0", "--val", "0", "--test", "0", "--size", "16"]);
    assert_eq!(code(&o), 0);
    let ckpt = run.join("best.ckpt");
    let o = tinycd(&["eval", "--checkpoint", p(&ckpt), "--data-root", p(&empty), "--split", "test"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no samples"));
}

#[test]
fn predict_on_identical_pair_and_bad_size() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained_run(dir.path(), "0");
    let ckpt = run.join("best.ckpt");
    let a = data.join("val/A/synth_00001.png");
    let out = dir.path().join("nested/out");
    let o = tinycd(&["predict", "--checkpoint", p(&ckpt), "--image-a", p(&a), "--image-b", p(&a), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(image::open(out.join("prediction.png")).is_ok());

    let odd = dir.path().join("odd.png");
    image::RgbImage::new(20, 20).save(&odd).unwrap();
    let o =
        tinycd(&["predict", "--checkpoint", p(&ckpt), "--image-a", p(&odd), "--image-b", p(&odd), "--out", p(&out)]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("multiples of 8"));
}

#[test]
fn gradcheck_report_lists_each_op_once() {
    let dir = tempfile::tempdir().unwrap();
    let o = tinycd(&["gradcheck", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let report = json(&dir.path().join("gradcheck.json"));
    let mut names: Vec<&str> =
        report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    let total = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), total);
    for op in ["conv2d", "instance_norm", "prelu", "sigmoid", "interleave_concat", "bilinear_upsample", "model"] {
        assert!(names.contains(&op), "{op}");
    }
    assert_eq!(stdout(&o).lines().count(), total);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_dataset(&a);
    small_dataset(&b);
    for sub in ["train/A/synth_00003.png", "val/B/synth_00000.png", "test/label/synth_00002.png", "train/shapes.json"] {
        assert_eq!(std::fs::read(a.join(sub)).unwrap(), std::fs::read(b.join(sub)).unwrap(), "{sub}");
    }
}

fn ablate_rows(dir: &Path, data: &Path, name: &str, axes: &[&str], epochs: &str) -> Vec<serde_json::Value> {
    let out = dir.join(name);
    let mut args = vec!["ablate", "--data-root", p(data), "--epochs", epochs, "--out", p(&out)];
    for a in axes {
        args.extend(["--grid", a]);
    }
    let o = tinycd(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    json(&out.join("ablation.json")).as_array().unwrap().clone()
}

#[test]
fn ablation_parameter_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data);

    let rows = ablate_rows(
        dir.path(),
        &data,
        "skip_classifier",
        &["use_skip_connections=true,false", "classifier=pw_mlp,direct_sigmoid"],
        "0",
    );
    let params: Vec<u64> = rows.iter().map(|r| r["params"].as_u64().unwrap()).collect();
    assert_eq!(params.len(), 4);
    let mut distinct = params.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 4);
    // The MLP head costs the same fixed amount with or without skips.
    assert_eq!(params[0] - params[1], params[2] - params[3]);
    assert!(params[0] > params[1]);

    let rows = ablate_rows(
        dir.path(),
        &data,
        "mixing",
        &["mixing_strategy_bottleneck=subtraction,interleave_grouped,concat_conv"],
        "0",
    );
    let params: Vec<u64> = rows.iter().map(|r| r["params"].as_u64().unwrap()).collect();
    assert!(params[0] < params[1] && params[1] < params[2], "{params:?}");
}

#[test]
fn single_cell_grid_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained_run(dir.path(), "1");
    let rows = ablate_rows(dir.path(), &data, "single", &["seed=0"], "1");
    assert_eq!(rows.len(), 1);
    let trained = json(&run.join("metrics.json"));
    assert_eq!(rows[0]["val"]["f1"], trained["f1"]);
    assert_eq!(
        std::fs::read(dir.path().join("single/cell_00/best.ckpt")).unwrap(),
        std::fs::read(run.join("best.ckpt")).unwrap()
    );
}
