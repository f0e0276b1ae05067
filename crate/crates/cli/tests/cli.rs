use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctxgcn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxgcn"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = ctxgcn(&["synth", "--out-dir", "data", "--samples-per-class", "6", "--nodes", "8"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

const QUICK: [&str; 10] = [
    "--train-path",
    "data/train.jsonl",
    "--test-path",
    "data/test.jsonl",
    "--skeleton",
    "chain",
    "--k",
    "2",
    "--channels",
    "4",
];

#[test]
fn bound_prints_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctxgcn(&["bound", "--k", "2", "--delta", "0.01", "--eps", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 528.8).abs() < 0.05, "{v}");
}

#[test]
fn bound_rejects_bad_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctxgcn(&["bound", "--k", "2", "--delta", "0.01", "--eps", "0.7"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctxgcn(&["train", "--epochs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_print_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctxgcn(&["train", "--seed", "1", "--frobnicate", "3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn sym_with_stc_is_a_constraint_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec!["train", "--seed", "1", "--constraint", "sym+stc"];
    args.extend(QUICK);
    let o = ctxgcn(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("constraint error"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_for_orth_stc() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctxgcn(&["gradcheck", "--spec", "orth+stc", "--k", "4", "--n", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{out}");
}

#[test]
fn train_eval_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let run = || {
        let mut args = vec![
            "train",
            "--seed",
            "5",
            "--epochs",
            "3",
            "--metrics-path",
            "m.jsonl",
            "--artifact-path",
            "a.bin",
        ];
        args.extend(QUICK);
        let o = ctxgcn(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read(dir.path().join("m.jsonl")).unwrap(),
            fs::read(dir.path().join("a.bin")).unwrap(),
        )
    };
    let (a, model_a) = run();
    let (b, model_b) = run();
    assert_eq!(a, b);
    assert_eq!(model_a, model_b);

    let text = String::from_utf8(a).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    let mut keys: Vec<&String> = lines[0].as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(
        keys,
        ["epoch", "gamma_eff", "loss", "lr", "max_overlap", "test_acc", "train_acc"]
    );

    let o = ctxgcn(&["eval", "--model", "a.bin", "--data", "data/test.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let last = &lines[3];
    assert!((v["macro_accuracy"].as_f64().unwrap() - last["test_acc"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn metrics_go_to_stdout_without_a_path() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec!["train", "--seed", "1", "--epochs", "2", "--dry-run", "true"];
    args.extend(QUICK);
    let o = ctxgcn(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    fs::write(
        dir.path().join("run.cfg"),
        "# quick run\nepochs = 4\nk = 2\nchannels = 4\nskeleton = chain\n\
         train_path = data/train.jsonl\ntest_path = data/test.jsonl\n",
    )
    .unwrap();
    let o = ctxgcn(&["train", "--seed", "1", "--config", "run.cfg", "--epochs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);

    fs::write(dir.path().join("bad.cfg"), "epochs = 4\nthis line is wrong\n").unwrap();
    let o = ctxgcn(&["train", "--seed", "1", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = ctxgcn(&["train", "--seed", "1", "--train-path", "missing.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.jsonl"));

    fs::write(dir.path().join("fold.json"), r#"{"format": 1, "train": [0, 1], "test": [1, 2]}"#).unwrap();
    let o = ctxgcn(
        &[
            "train",
            "--seed",
            "1",
            "--train-path",
            "data/train.jsonl",
            "--fold-path",
            "fold.json",
            "--skeleton",
            "chain",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split error"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let frame = |v: f64| format!("[[{v},{v},{v}],[{v},{v},{v}],[{v},{v},{v}]]");
    let rec = |label: &str, v: f64| {
        format!(
            "{{\"format\":1,\"label\":\"{label}\",\"frames\":[{},{}]}}\n",
            frame(v),
            frame(-v)
        )
    };
    let text = [rec("a", 1e300), rec("b", 0.5), rec("a", 0.2), rec("b", -0.3)].concat();
    fs::write(dir.path().join("big.jsonl"), &text).unwrap();
    fs::write(dir.path().join("ok.jsonl"), rec("a", 0.1) + &rec("b", 0.2)).unwrap();
    let o = ctxgcn(
        &[
            "train",
            "--seed",
            "1",
            "--train-path",
            "big.jsonl",
            "--test-path",
            "ok.jsonl",
            "--skeleton",
            "chain",
            "--k",
            "2",
            "--m",
            "2",
            "--epochs",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
}

#[test]
fn ablate_marks_inapplicable_cells() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec![
        "ablate", "--seed", "1", "--epochs", "2", "--modes", "hpm,ours", "--kinds", "none,orth", "--ks", "1,2",
        "--out", "table.json",
    ];
    args.extend(&QUICK[..6]);
    let o = ctxgcn(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    let k1 = table.lines().find(|l| l.starts_with("hpm") && l.contains("    1 ")).unwrap();
    assert!(k1.contains("--"), "{table}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("table.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2 * 3);
    assert_eq!(v["rows"][0]["cells"]["orth"]["status"], "not_applicable");
}

#[test]
fn chunk_writes_one_descriptor_per_sequence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = ctxgcn(&["chunk", "--input", "data/test.jsonl", "--m", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    let rows = first["descriptor"].as_array().unwrap();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0].as_array().unwrap().len(), 8);
    let test_lines = fs::read_to_string(dir.path().join("data/test.jsonl")).unwrap().lines().count();
    assert_eq!(out.lines().count(), test_lines);
}
