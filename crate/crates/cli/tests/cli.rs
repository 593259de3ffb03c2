use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn threatlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threatlens"))
        .args(args)
        .env_remove("THREATLENS_SEED")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_checks_expected_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("train.jsonl");
    let train = fixtures().join("train");
    let ok = threatlens(&[
        "ingest",
        "--dir",
        p(&train),
        "--out",
        p(&out),
        "--expect",
        "docs=20,sents=200",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 200);

    let bad = threatlens(&["ingest", "--dir", p(&train), "--out", p(&out), "--expect", "sents=201"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("201"));
}

#[test]
fn ingest_rejects_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = threatlens(&[
        "ingest",
        "--dir",
        p(tmp.path()),
        "--out",
        p(&tmp.path().join("x.jsonl")),
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn malformed_file_is_a_data_error_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("good.tsv"), "The\tO\nbackdoor\tB-Entity\n.\tO\n").unwrap();
    fs::write(dir.join("broken.tsv"), "The\tO\nbackdoor\tO\textra\n").unwrap();
    let o = threatlens(&["ingest", "--dir", p(&dir), "--out", p(&tmp.path().join("x.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.tsv"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(threatlens(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(threatlens(&["train"]).status.code(), Some(1));
    assert_eq!(threatlens(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_all_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixtures().join("linear.toml");
    let mut metrics = Vec::new();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let o = threatlens(&["run-all", "--config", p(&config), "--out-dir", p(&dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        metrics.push(fs::read(dir.join("metrics.json")).unwrap());
        manifests.push(fs::read(dir.join("manifest.json")).unwrap());
        assert!(dir.join("model.bin").exists());
        assert!(dir.join("predictions.jsonl").exists());
    }
    assert_eq!(metrics[0], metrics[1]);
    assert_eq!(manifests[0], manifests[1]);
    let m: serde_json::Value = serde_json::from_slice(&metrics[0]).unwrap();
    assert!(m["f1"].as_f64().unwrap() >= 0.85, "{m}");
}

#[test]
fn seed_flag_beats_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixtures().join("linear.toml");
    let dir = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_threatlens"))
        .args(["run-all", "--config", p(&config), "--out-dir", p(&dir), "--seed", "99"])
        .env("THREATLENS_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"), "{manifest}");
}

#[test]
fn train_evaluate_highlight_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.bin");
    let f = fixtures();
    let o = threatlens(&[
        "train",
        "--corpus",
        p(&f.join("train")),
        "--model",
        "linear",
        "--out",
        p(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let metrics = tmp.path().join("metrics.json");
    let preds = tmp.path().join("preds.jsonl");
    let o = threatlens(&[
        "evaluate",
        "--model",
        p(&model),
        "--corpus",
        p(&f.join("dev")),
        "--out",
        p(&metrics),
        "--predictions",
        p(&preds),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .all(|l| l.contains("\"score\":")));

    let o = threatlens(&[
        "highlight",
        "--model",
        p(&model),
        "--document",
        p(&f.join("dev/dev-000.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with('►')), "{text}");
}

#[test]
fn highlight_of_empty_document_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.bin");
    let o = threatlens(&[
        "train",
        "--corpus",
        p(&fixtures().join("train")),
        "--model",
        "linear",
        "--out",
        p(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = tmp.path().join("empty.txt");
    fs::write(&doc, "").unwrap();
    let o = threatlens(&["highlight", "--model", p(&model), "--document", p(&doc)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn evaluation_without_gold_labels_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.bin");
    let o = threatlens(&[
        "train",
        "--corpus",
        p(&fixtures().join("train")),
        "--model",
        "linear",
        "--out",
        p(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // Token-only TSV has no annotations, so nothing can be scored against it.
    let dir = tmp.path().join("unlabelled");
    fs::create_dir(&dir).unwrap();
    fs::write(
        dir.join("doc.tsv"),
        "The\nbackdoor\ndrops\na\nfile\n.\n\nThe\nreport\nwas\npublished\n.\n",
    )
    .unwrap();
    let o = threatlens(&[
        "evaluate",
        "--model",
        p(&model),
        "--corpus",
        p(&dir),
        "--out",
        p(&tmp.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gold"), "{}", stderr(&o));
}
