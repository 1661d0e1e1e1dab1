use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropkge::checkpoint::load_checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cropkge"));
    c.env_remove("CROPKGE_DATA_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cropkge")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing command.
fn fails(args: &[&str]) -> (i32, String) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    (out.status.code().unwrap(), err.trim_end().to_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("kg");
    ok(&[
        "synth", "--entities", "40", "--relations", "6", "--triples", "300", "--latent-dim", "4",
        "--out", s(&data),
    ]);
    Fixture { _dir: dir, root, data }
}

fn train(f: &Fixture, out: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(out);
    let mut args = vec![
        "train", "--data", s(&f.data), "--epochs", "4", "--batch-size", "32", "--neg", "4", "--lr",
        "0.01", "--out", s(&out),
    ];
    if !extra.contains(&"--dims") {
        args.extend_from_slice(&["--dims", "4,8,12"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn train_eval_and_determinism() {
    let f = fixture();
    let a = train(&f, "a", &[]);
    let b = train(&f, "b", &[]);
    for name in ["model.ckpt", "train.log.jsonl", "config.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["dataset_sha256"].as_str().unwrap().len(), 64);

    let ckpt = a.join("model.ckpt");
    let mut reports = Vec::new();
    for out in ["e1", "e2"] {
        let out = f.root.join(out);
        ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&ckpt), "--arr", "--out", s(&out)]);
        reports.push(out);
    }
    for name in ["report.csv", "report.series.tsv", "arr.json", "arr_matrix.tsv"] {
        assert_eq!(
            fs::read(reports[0].join(name)).unwrap(),
            fs::read(reports[1].join(name)).unwrap(),
            "{name}"
        );
    }
    let csv = fs::read_to_string(reports[0].join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    let arr: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(reports[0].join("arr.json")).unwrap()).unwrap();
    assert!(arr["arr"].as_f64().unwrap() >= 0.0);
}

#[test]
fn crop_matches_prefix_evaluation() {
    let f = fixture();
    let run_dir = train(&f, "m", &[]);
    let ckpt = run_dir.join("model.ckpt");
    let full = load_checkpoint(&ckpt).unwrap();

    let top = f.root.join("top");
    ok(&["crop", "--checkpoint", s(&ckpt), "--dim", "12", "--out", s(&top)]);
    assert_eq!(load_checkpoint(top.join("model.ckpt")).unwrap().tables(), full.tables());

    let small = f.root.join("small");
    let printed = ok(&["crop", "--checkpoint", s(&ckpt), "--dim", "8", "--out", s(&small)]);
    assert_eq!(printed.trim(), full.param_count(8).to_string());

    let prefix = f.root.join("prefix");
    ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&ckpt), "--dim", "8", "--out", s(&prefix)]);
    let cropped = f.root.join("cropped");
    ok(&["eval", "--data", s(&f.data), "--checkpoint", s(&small.join("model.ckpt")), "--dim", "8", "--out", s(&cropped)]);
    assert_eq!(
        fs::read(prefix.join("report.csv")).unwrap(),
        fs::read(cropped.join("report.csv")).unwrap()
    );

    let (code, msg) = fails(&["crop", "--checkpoint", s(&ckpt), "--dim", "37", "--out", s(&f.root.join("x"))]);
    assert_eq!(code, 1);
    assert!(msg.contains("[4, 8, 12]"), "{msg}");
}

#[test]
fn baselines_and_importance() {
    let f = fixture();
    let dt = train(&f, "dt", &["--method", "dt", "--dims", "12"]);
    let dt_ckpt = dt.join("model.ckpt");
    assert_eq!(load_checkpoint(&dt_ckpt).unwrap().schedule().dims(), &[12]);

    let bkd = train(&f, "bkd", &["--method", "bkd", "--teacher", s(&dt_ckpt), "--dims", "4"]);
    assert_eq!(load_checkpoint(bkd.join("model.ckpt")).unwrap().full_dim(), 4);

    let imp = f.root.join("imp");
    ok(&["importance", "--checkpoint", s(&dt_ckpt), "--mode", "value", "--apply", "--out", s(&imp)]);
    assert_eq!(fs::read_to_string(imp.join("importance.tsv")).unwrap().lines().count(), 12);
    let ext_v = f.root.join("extv");
    ok(&[
        "eval", "--data", s(&f.data), "--checkpoint", s(&imp.join("model.ckpt")), "--dims", "4,8,12",
        "--out", s(&ext_v),
    ]);
    assert_eq!(fs::read_to_string(ext_v.join("report.csv")).unwrap().lines().count(), 4);

    let loss = f.root.join("loss");
    ok(&[
        "importance", "--data", s(&f.data), "--checkpoint", s(&dt_ckpt), "--mode", "loss", "--out",
        s(&loss),
    ]);
    let (_, msg) = fails(&["importance", "--checkpoint", s(&dt_ckpt), "--mode", "loss", "--out", s(&loss)]);
    assert!(msg.contains("no dataset"), "{msg}");
}

#[test]
fn usage_errors_are_single_lines() {
    let f = fixture();
    let out = f.root.join("o");
    let (code, msg) = fails(&["train", "--data", s(&f.data), "--method", "bkd", "--dims", "4", "--out", s(&out)]);
    assert_eq!(code, 1);
    assert!(msg.contains("--teacher"), "{msg}");
    let (_, msg) = fails(&["train", "--data", s(&f.data), "--dims", "10,5", "--out", s(&out)]);
    assert!(msg.contains("increasing"), "{msg}");
    let (code, _) = fails(&["train", "--bogus", "--out", s(&out)]);
    assert_eq!(code, 2);
    let (_, msg) = fails(&["eval", "--checkpoint", "nope.ckpt", "--out", s(&out)]);
    assert!(msg.contains("no dataset"), "{msg}");
    let (_, msg) = fails(&["eval", "--data", s(&f.root.join("missing")), "--checkpoint", "x", "--out", s(&out)]);
    assert!(msg.contains("not found"), "{msg}");
}

#[test]
fn data_dir_environment_fallback() {
    let f = fixture();
    let out = bin()
        .args(["stats", "--data", "kg"])
        .env("CROPKGE_DATA_DIR", &f.root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["entities"], 40);
    let out = bin().args(["stats"]).env("CROPKGE_DATA_DIR", &f.data).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn dump_writes_one_row_per_embedding() {
    let f = fixture();
    let m = train(&f, "m", &["--score-fn", "rotate"]);
    let out = f.root.join("dump");
    ok(&["dump", "--checkpoint", s(&m.join("model.ckpt")), "--dim", "4", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("entity_re.tsv")).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(text.lines().all(|l| l.split('\t').count() == 5));
    assert!(out.join("relation_phase.tsv").is_file());
}
