use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gradsup(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradsup"))
        .args(args)
        .current_dir(cwd)
        .env("GRADSUP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = gradsup(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_spurious(dir: &Path, name: &str) {
    ok(
        &["gen", "spurious", "--n", "300", "--n-validation", "100", "--n-test", "200", "--seed", "1", "--out", name],
        dir,
    );
}

#[test]
fn gen_writes_splits_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["gen", "spurious", "--n", "2000", "--rho", "0.95", "--seed", "1", "--out", "a"], dir);
    ok(&["gen", "spurious", "--n", "2000", "--rho", "0.95", "--seed", "1", "--out", "b"], dir);
    for f in ["train.jsonl", "validation.jsonl", "ood_test.jsonl", "manifest.json"] {
        let (a, b) = (fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn gen_rejects_weak_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gradsup(&["gen", "spurious", "--rho", "0.3", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rho"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn gen_multilabel_writes_edited_splits() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gen", "multilabel", "--n", "300", "--n-test", "100", "--seed", "2", "--out", "ml"], tmp.path());
    for f in ["train", "validation", "test_original", "test_edited", "test_hard_edited"] {
        assert!(tmp.path().join("ml").join(format!("{f}.jsonl")).is_file(), "{f}");
    }
}

#[test]
fn train_missing_dir_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gradsup(&["train", "--data", "no-such-dir", "--out", "m.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no-such-dir"));
}

#[test]
fn train_writes_checkpoint_and_history_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    ok(&["train", "--data", "sp", "--lambda", "10", "--out", "a.json"], dir);
    ok(&["train", "--data", "sp", "--lambda", "10", "--out", "b.json"], dir);
    assert_eq!(fs::read(dir.join("a.json")).unwrap(), fs::read(dir.join("b.json")).unwrap());
    let history = fs::read_to_string(dir.join("a.history.csv")).unwrap();
    assert!(history.starts_with("epoch,main_loss,gs_loss,val_metric\n"));
    assert!(history.lines().count() > 1);
}

#[test]
fn lambda_zero_equals_config_lambda_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    fs::write(dir.join("cfg.json"), r#"{"train": {"gs": {"lambda": 0.0}, "max_epochs": 5}}"#).unwrap();
    fs::write(dir.join("cfg5.json"), r#"{"train": {"max_epochs": 5}}"#).unwrap();
    ok(&["train", "--data", "sp", "--config", "cfg.json", "--out", "a.json"], dir);
    ok(
        &["train", "--data", "sp", "--config", "cfg5.json", "--lambda", "0", "--ablation", "none", "--out", "b.json"],
        dir,
    );
    assert_eq!(fs::read(dir.join("a.json")).unwrap(), fs::read(dir.join("b.json")).unwrap());
}

#[test]
fn every_ablation_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    for ab in ["none", "random-relations", "no-cf-data", "shuffled-labels"] {
        ok(&["train", "--data", "sp", "--ablation", ab, "--out", &format!("{ab}.json")], dir);
    }
    let out = gradsup(&["train", "--data", "sp", "--ablation", "bogus", "--out", "x.json"], dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_single_and_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    let mut models = Vec::new();
    for seed in 0..6 {
        let name = format!("m{seed}.json");
        ok(&["train", "--data", "sp", "--seed", &seed.to_string(), "--out", &name], dir);
        models.push(name);
    }
    ok(&["eval", "--model", "m0.json", "--data", "sp", "--report", "single.json"], dir);
    let single: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("single.json")).unwrap()).unwrap();
    assert_eq!(single["members"], 1);
    assert_eq!(single["rows"].as_array().unwrap().len(), 2);
    assert!(dir.join("single.txt").is_file());

    let mut args = vec!["eval"];
    for m in &models {
        args.extend(["--model", m.as_str()]);
    }
    args.extend(["--data", "sp", "--report", "ens.json"]);
    ok(&args, dir);
    ok(&args[..args.len() - 1].iter().copied().chain(["ens2.json"]).collect::<Vec<_>>(), dir);
    let ens: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("ens.json")).unwrap()).unwrap();
    assert_eq!(ens["members"], 6);
    assert_eq!(fs::read(dir.join("ens.json")).unwrap(), fs::read(dir.join("ens2.json")).unwrap());
}

#[test]
fn shuffled_labels_eval_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["gen", "spurious", "--seed", "3", "--out", "sp"], dir);
    // One label-independent linear model can sit far from chance on this
    // data (its sign along the core axis is a coin flip); the mean cannot.
    let mut gaps = Vec::new();
    for seed in 0..16 {
        let (model, seed) = (format!("c{seed}.json"), seed.to_string());
        ok(&["train", "--data", "sp", "--ablation", "shuffled-labels", "--seed", &seed, "--out", &model], dir);
        ok(&["eval", "--model", &model, "--data", "sp", "--report", "r.json"], dir);
        let r: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("r.json")).unwrap()).unwrap();
        let ood = &r["rows"][1];
        gaps.push(ood["metric"].as_f64().unwrap() - ood["analytic_chance"].as_f64().unwrap());
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean.abs() < 0.15, "{mean} from {gaps:?}");
}

#[test]
fn corrupt_checkpoint_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    fs::write(dir.join("broken.json"), "{ not json").unwrap();
    let out = gradsup(&["eval", "--model", "broken.json", "--data", "sp", "--report", "r.json"], dir);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("broken.json"));
}

#[test]
fn eval_rejects_arity_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    ok(&["gen", "multilabel", "--n", "200", "--n-test", "50", "--out", "ml"], dir);
    ok(&["train", "--data", "sp", "--out", "m.json"], dir);
    let out = gradsup(&["eval", "--model", "m.json", "--data", "ml", "--report", "r.json"], dir);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("does not match"));
}

fn write_2d(dir: &Path, with_pair: bool) {
    let link = if with_pair { r#""a""# } else { "null" };
    let rows = [
        r#"{"id":"a","features":[0.0,0.0],"tokens":null,"labels":[0],"counterfactual_of":null,"split":"train"}"#
            .to_string(),
        format!(
            r#"{{"id":"b","features":[10.0,5.0],"tokens":null,"labels":[1],"counterfactual_of":{link},"split":"train"}}"#
        ),
        r#"{"id":"c","features":[2.0,4.0],"tokens":null,"labels":[0],"counterfactual_of":null,"split":"train"}"#
            .to_string(),
    ];
    fs::write(dir.join("train.jsonl"), rows.join("\n") + "\n").unwrap();
    fs::write(dir.join("validation.jsonl"), rows.join("\n") + "\n").unwrap();
}

#[test]
fn plot_boundary_grid_and_segments() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir(dir.join("paired")).unwrap();
    fs::create_dir(dir.join("plain")).unwrap();
    write_2d(&dir.join("paired"), true);
    write_2d(&dir.join("plain"), false);
    ok(&["train", "--data", "paired", "--out", "m.json"], dir);

    ok(&["plot-boundary", "--model", "m.json", "--data", "paired", "--res", "3", "--out", "p.svg"], dir);
    let csv = fs::read_to_string(dir.join("p.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!((rows[0][0], rows[0][1]), (-1.0, -0.5));
    assert_eq!((rows[8][0], rows[8][1]), (11.0, 5.5));
    assert!(fs::read_to_string(dir.join("p.svg")).unwrap().contains(r#"id="pairs""#));

    ok(&["plot-boundary", "--model", "m.json", "--data", "plain/train.jsonl", "--res", "3", "--out", "q.svg"], dir);
    assert!(!fs::read_to_string(dir.join("q.svg")).unwrap().contains(r#"id="pairs""#));
}

#[test]
fn plot_boundary_needs_projection_for_wide_models() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_spurious(dir, "sp");
    ok(&["train", "--data", "sp", "--out", "m.json"], dir);
    let out = gradsup(&["plot-boundary", "--model", "m.json", "--data", "sp", "--res", "4", "--out", "p.svg"], dir);
    assert_eq!(out.status.code(), Some(2));
    ok(
        &["plot-boundary", "--model", "m.json", "--data", "sp", "--res", "4", "--project", "0,1", "--out", "p.svg"],
        dir,
    );
}

#[test]
fn bad_thread_count_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gradsup"))
        .args(["gen", "spurious", "--out", "x"])
        .current_dir(tmp.path())
        .env("GRADSUP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
