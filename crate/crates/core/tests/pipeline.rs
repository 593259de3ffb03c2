use std::fs;
use std::path::Path;

use proptest::prelude::*;
use threatlens::pipeline::{hash_inputs, run_all, Manifest, PipelineConfig, StageStatus};

fn fixture_config(out: &Path) -> PipelineConfig {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut cfg = PipelineConfig::load(&dir.join("linear.toml")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn run_all_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_all(&fixture_config(tmp.path())).unwrap();
    for f in [
        "train.jsonl",
        "eval.jsonl",
        "stats.json",
        "train.normalized.jsonl",
        "eval.normalized.jsonl",
        "normalize_train.csv",
        "normalize_eval.csv",
        "train.sampled.jsonl",
        "sampling.json",
        "train_report.json",
        "model.bin",
        "metrics.json",
        "predictions.jsonl",
        "report.txt",
        "manifest.json",
    ] {
        assert!(tmp.path().join(f).is_file(), "missing {f}");
    }
    assert!(outcome.manifest.stages.iter().all(|s| s.status == StageStatus::Ok));
    assert!(outcome.metrics.f1 >= 0.85);
}

#[test]
fn missing_gold_labels_stop_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let unlabelled = tmp.path().join("unlabelled");
    fs::create_dir(&unlabelled).unwrap();
    fs::write(unlabelled.join("doc.tsv"), "The\nbackdoor\nran\n\nAnalysts\nwrote\n").unwrap();
    let mut cfg = fixture_config(&tmp.path().join("out"));
    cfg.data.dev = unlabelled;
    let err = run_all(&cfg).unwrap_err();
    assert!(err.to_string().contains("gold"), "{err}");
    let manifest: Manifest = serde_json::from_slice(&fs::read(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    // Checked right after normalization, before any training time is spent.
    let failed = manifest
        .stages
        .iter()
        .position(|s| s.status == StageStatus::Failed)
        .unwrap();
    assert!(manifest.stages[failed].error.as_deref().unwrap().contains("gold"));
    assert!(manifest.stages[failed + 1..]
        .iter()
        .all(|s| s.status == StageStatus::Skipped));
    assert!(!tmp.path().join("out/metrics.json").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_hash_tracks_every_byte(bytes in prop::collection::vec(any::<u8>(), 1..256), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("in");
        fs::create_dir(&dir).unwrap();
        let file = dir.join("a.tsv");
        fs::write(&file, &bytes).unwrap();
        let first = hash_inputs(&[&dir]).unwrap();
        prop_assert_eq!(&hash_inputs(&[&dir]).unwrap(), &first);
        let mut changed = bytes.clone();
        let i = pos.index(changed.len());
        changed[i] ^= flip;
        fs::write(&file, &changed).unwrap();
        prop_assert_ne!(&hash_inputs(&[&dir]).unwrap(), &first);
        fs::write(&file, &bytes).unwrap();
        prop_assert_eq!(hash_inputs(&[&dir]).unwrap(), first);
    }
}

#[test]
fn example_behaviour_sentence_stands_out() {
    use threatlens::fixture::example_report;
    use threatlens::pipeline::{fit_linear, highlight, sentences};
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path());
    let norm = cfg.normalizer().unwrap();
    let corpus = threatlens::corpus::load_corpus(&cfg.data.train, threatlens::Split::Train).unwrap();
    let train = sentences(&norm.normalize_corpus(&corpus).0);
    let (sampled, weights) = threatlens::sampling::apply(&train, &cfg.sampling_config()).unwrap();
    let classifier = fit_linear(&sampled, weights, &cfg.linear).unwrap().0;
    let report = highlight(&classifier, &norm, &example_report()).unwrap();
    let mut scores: Vec<f64> = report.sentences.iter().map(|s| s.score).collect();
    scores.sort_by(f64::total_cmp);
    let median = scores[scores.len() / 2];
    let target = report
        .sentences
        .iter()
        .find(|s| s.text.contains("versioning info"))
        .unwrap();
    println!("example sentence {:.3}, document median {median:.3}", target.score);
    assert!(target.score > median);
}
