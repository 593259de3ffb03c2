//! End-to-end wiring: configuration files, model fitting, highlighting and
//! the `run-all` driver with its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    apply_gold_labels, corpus_stats, load_corpus, parse_annotated_document, parse_gold_labels, write_jsonl, Corpus,
    CorpusStats, Document, Label, Sentence, SentenceRecord, Split,
};
use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix, Metrics, ReportRow};
use crate::model::{
    build_vocab, finetune_classifier, finetune_lm, pretrain_lm, train_linear, Classifier, HashingFeaturizer,
    LinearTrainReport, StageReport, TinyTransformer, TrainConfig, TransformerConfig, DEFAULT_HASH_DIM,
};
use crate::normalize::{NormalizeSummary, Normalizer, RuleSet};
use crate::sampling::{self, ClassWeights, Ratio, SamplingConfig, SamplingMode};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "THREATLENS_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Linear,
    Transformer,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Transformer => "transformer",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    /// Scored instead of `dev` when present.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Extra unlabelled text added to LM pretraining.
    #[serde(default)]
    pub lm_extra: Option<PathBuf>,
    /// `doc_id\tindex\tlabel` overrides for the evaluation split.
    #[serde(default)]
    pub gold_labels: Option<PathBuf>,
    /// Normalization rule file (TOML).
    #[serde(default)]
    pub rules: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub mode: SamplingMode,
    pub ratio: Ratio,
    pub ratio_is_duplication_factor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSection {
    pub hash_dim: usize,
    pub train: TrainConfig,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            hash_dim: DEFAULT_HASH_DIM,
            train: TrainConfig::linear(),
        }
    }
}

/// Architecture plus the three stage configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    pub architecture: TransformerConfig,
    pub min_freq: usize,
    pub lm_pretrain: TrainConfig,
    pub lm_finetune: TrainConfig,
    pub classifier: TrainConfig,
}

impl Default for TransformerSection {
    fn default() -> Self {
        Self {
            architecture: TransformerConfig::default(),
            min_freq: 1,
            lm_pretrain: TrainConfig::lm_pretrain(),
            lm_finetune: TrainConfig::lm_finetune(),
            classifier: TrainConfig::classifier(),
        }
    }
}

impl TransformerSection {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.lm_pretrain.validate()?;
        self.lm_finetune.validate()?;
        self.classifier.validate()
    }
}

/// Versioned TOML configuration of a full run. Relative paths are resolved
/// against the directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub linear: LinearSection,
    #[serde(default)]
    pub transformer: TransformerSection,
}

fn default_threshold() -> f64 {
    crate::model::DEFAULT_THRESHOLD
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads the seed override from the environment, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.output_dir = resolve(base_dir, &cfg.output_dir);
        let d = &mut cfg.data;
        d.train = resolve(base_dir, &d.train);
        d.dev = resolve(base_dir, &d.dev);
        for p in [&mut d.test, &mut d.lm_extra, &mut d.gold_labels, &mut d.rules]
            .into_iter()
            .flatten()
        {
            *p = resolve(base_dir, p);
        }
        let seed = cfg.seed;
        cfg.set_seed(seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// Sets the run seed and propagates it to every training stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.linear.train.seed = seed;
        let t = &mut self.transformer;
        for c in [&mut t.lm_pretrain, &mut t.lm_finetune, &mut t.classifier] {
            c.seed = seed;
        }
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            mode: self.sampling.mode,
            ratio: self.sampling.ratio,
            seed: self.seed,
            ratio_is_duplication_factor: self.sampling.ratio_is_duplication_factor,
        }
    }

    /// Input files that must exist, in a fixed order.
    pub fn input_paths(&self) -> Vec<&Path> {
        let d = &self.data;
        let mut out = vec![d.train.as_path(), d.dev.as_path()];
        out.extend(
            [&d.test, &d.lm_extra, &d.gold_labels, &d.rules]
                .into_iter()
                .flatten()
                .map(PathBuf::as_path),
        );
        out
    }

    /// Checks every path and nested setting before any work starts.
    pub fn validate(&self) -> Result<()> {
        for p in self.input_paths() {
            if !p.exists() {
                return Err(Error::Validation(format!("input path {} does not exist", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        HashingFeaturizer::new(self.linear.hash_dim)?;
        self.linear.train.validate()?;
        self.transformer.validate()
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        Ok(Normalizer::new(match &self.data.rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::default(),
        }))
    }
}

pub fn fit_linear(
    train: &[Sentence],
    weights: ClassWeights,
    section: &LinearSection,
) -> Result<(Classifier, LinearTrainReport)> {
    let featurizer = HashingFeaturizer::new(section.hash_dim)?;
    let features: Vec<_> = train.iter().map(|s| featurizer.featurize(s.words())).collect();
    let labels: Vec<Label> = train.iter().map(|s| s.label).collect();
    let (model, report) = train_linear(&features, &labels, weights, &section.train)?;
    Ok((Classifier::linear(model)?, report))
}

/// Builds the vocabulary from `lm_text`, then runs all three stages:
/// pretraining on `lm_text`, LM fine-tuning on `task_text`, and classifier
/// fine-tuning on `labelled`.
pub fn fit_transformer(
    lm_text: &[Sentence],
    task_text: &[Sentence],
    labelled: &[Sentence],
    weights: ClassWeights,
    section: &TransformerSection,
    seed: u64,
) -> Result<(Classifier, Vec<StageReport>)> {
    section.validate()?;
    let vocab = crate::model::Vocab::build(lm_text.iter().map(|s| s.words()), section.min_freq)?;
    let mut model = TinyTransformer::new(section.architecture, vocab, seed)?;
    let r1 = pretrain_lm(&mut model, lm_text, &section.lm_pretrain)?;
    let r2 = finetune_lm(&mut model, task_text, &section.lm_finetune)?;
    let r3 = finetune_classifier(&mut model, labelled, weights, &section.classifier)?;
    Ok((Classifier::transformer(model), vec![r1, r2, r3]))
}

/// Vocabulary over a corpus, exposed for the `pretrain` command.
pub fn new_transformer(corpus: &Corpus, section: &TransformerSection, seed: u64) -> Result<TinyTransformer> {
    TinyTransformer::new(section.architecture, build_vocab(corpus, section.min_freq)?, seed)
}

pub fn sentences(corpus: &Corpus) -> Vec<Sentence> {
    corpus.sentences().cloned().collect()
}

/// Metrics file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub split: Split,
    pub n_sentences: usize,
    pub model: String,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn new(cm: &ConfusionMatrix, m: &Metrics, split: Split, classifier: &Classifier) -> Self {
        Self {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: cm.tp,
            fp: cm.fp,
            fn_: cm.fn_,
            tn: cm.tn,
            split,
            n_sentences: cm.total(),
            model: classifier.kind().to_string(),
            threshold: classifier.threshold(),
        }
    }
}

/// Corpus records with the model's `score` appended.
pub fn scored_records(classifier: &Classifier, sentences: &[Sentence]) -> Result<Vec<serde_json::Value>> {
    let scores = classifier.predict_batch(sentences)?;
    sentences
        .iter()
        .zip(scores)
        .map(|(s, score)| {
            let mut v = serde_json::to_value(SentenceRecord::from(s))?;
            v["score"] = serde_json::json!(score);
            Ok(v)
        })
        .collect()
}

pub fn write_json_lines(path: &Path, values: &[serde_json::Value]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::from(e).in_file(parent))?;
    }
    fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HighlightedSentence {
    pub index: usize,
    pub text: String,
    pub score: f64,
    pub predicted: Label,
    pub gold: Option<Label>,
    /// Removed by normalization; scored as 0.
    pub dropped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HighlightedReport {
    pub doc_id: String,
    pub threshold: f64,
    pub sentences: Vec<HighlightedSentence>,
}

pub const HIGHLIGHT_MARK: char = '►';

impl HighlightedReport {
    /// One line per sentence; predicted-relevant lines start with `►`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let mark = if s.predicted.is_relevant() {
                format!("{HIGHLIGHT_MARK} ")
            } else {
                "  ".to_string()
            };
            out.push_str(&format!("{mark}{} [{:.2}]\n", s.text, s.score));
        }
        out
    }
}

/// Scores every sentence of `doc` in source order.
pub fn highlight(classifier: &Classifier, normalizer: &Normalizer, doc: &Document) -> Result<HighlightedReport> {
    let normalized: Vec<Option<Sentence>> = doc
        .sentences
        .iter()
        .map(|s| normalizer.normalize_sentence(s).0)
        .collect();
    let kept: Vec<Sentence> = normalized.iter().flatten().cloned().collect();
    let mut scores = classifier.predict_batch(&kept)?.into_iter();
    let sentences = doc
        .sentences
        .iter()
        .zip(&normalized)
        .map(|(s, n)| {
            let score = if n.is_some() {
                scores.next().expect("one score per kept sentence")
            } else {
                0.0
            };
            HighlightedSentence {
                index: s.index,
                text: s.text(),
                score,
                predicted: classifier.decide(score),
                gold: s.gold.then_some(s.label),
                dropped: n.is_none(),
            }
        })
        .collect();
    Ok(HighlightedReport {
        doc_id: doc.id.clone(),
        threshold: classifier.threshold(),
        sentences,
    })
}

/// Reads a document for highlighting: token-per-line `.tsv`, or plain text
/// with one sentence per line. Blank input yields an empty document.
pub fn read_document(path: &Path) -> Result<Document> {
    let raw = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Ok(Document::new(id, Vec::new()));
    }
    if path.extension().is_some_and(|e| e == "tsv") {
        return parse_annotated_document(&raw, &id).map_err(|e| e.in_file(path));
    }
    let text = String::from_utf8(raw).map_err(|_| {
        Error::Parse {
            line: 0,
            message: "input is not UTF-8".into(),
        }
        .in_file(path)
    })?;
    let sentences = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let tokens = line
                .split_whitespace()
                .map(|w| crate::corpus::Token::outside(w).map_err(Error::Validation))
                .collect::<Result<Vec<_>>>()?;
            let mut s = Sentence::from_tokens(id.as_str(), i, tokens)?;
            s.gold = false;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Document::new(id, sentences))
}

/// SHA-256 of every input file; directories contribute each `.tsv` file.
pub fn hash_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for &p in paths {
        let mut files = Vec::new();
        if p.is_dir() {
            for e in fs::read_dir(p).map_err(|e| Error::from(e).in_file(p))? {
                let f = e.map_err(|e| Error::from(e).in_file(p))?.path();
                if f.is_file() {
                    files.push(f);
                }
            }
            files.sort();
        } else {
            files.push(p.to_path_buf());
        }
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::from(e).in_file(&f))?;
            out.insert(f.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Written to `manifest.json` after every run, including failed ones.
/// Holds no timestamps so identical runs give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub seed: u64,
    pub model: ModelKind,
    pub sampling: SamplingSection,
    pub evaluation_split: Split,
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

pub const RUN_STAGES: [&str; 5] = ["ingest", "normalize", "sample", "train", "evaluate"];

/// Everything a successful run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: MetricsReport,
    pub manifest: Manifest,
    pub report: String,
}

struct Loaded {
    train: Corpus,
    eval: Corpus,
    lm_extra: Option<Corpus>,
}

/// ingest -> normalize -> sample -> train -> evaluate, writing each
/// intermediate artifact to `output_dir`.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::from(e).in_file(out))?;
    let eval_split = if cfg.data.test.is_some() {
        Split::Test
    } else {
        Split::Dev
    };
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        model: cfg.model,
        sampling: cfg.sampling,
        evaluation_split: eval_split,
        inputs: hash_inputs(&cfg.input_paths())?,
        stages: RUN_STAGES
            .iter()
            .map(|n| StageRecord {
                name: n.to_string(),
                status: StageStatus::Skipped,
                error: None,
            })
            .collect(),
    };
    let result = run_stages(cfg, eval_split, &mut manifest);
    write_json(&out.join("manifest.json"), &manifest)?;
    let (metrics, report) = result?;
    Ok(RunOutcome {
        metrics,
        manifest,
        report,
    })
}

fn stage<T>(manifest: &mut Manifest, i: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let started = Instant::now();
    let r = f();
    let rec = &mut manifest.stages[i];
    match &r {
        Ok(_) => {
            rec.status = StageStatus::Ok;
            info!("{} finished in {:.2?}", rec.name, started.elapsed());
        }
        Err(e) => {
            rec.status = StageStatus::Failed;
            rec.error = Some(e.to_string());
        }
    }
    r
}

fn write_corpus(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, sentences)?;
    write_file(path, &buf)
}

#[derive(Serialize)]
struct IngestStats {
    train: CorpusStats,
    eval: CorpusStats,
    lm_extra: Option<CorpusStats>,
}

#[derive(Serialize)]
struct SampleInfo {
    config: SamplingConfig,
    n_relevant: usize,
    n_irrelevant: usize,
    class_weights: ClassWeights,
}

fn run_stages(cfg: &PipelineConfig, eval_split: Split, manifest: &mut Manifest) -> Result<(MetricsReport, String)> {
    let out = cfg.output_dir.clone();
    let loaded = stage(manifest, 0, || {
        let train = load_corpus(&cfg.data.train, Split::Train)?;
        let mut eval = load_corpus(cfg.data.test.as_ref().unwrap_or(&cfg.data.dev), eval_split)?;
        if let Some(p) = &cfg.data.gold_labels {
            let text = fs::read_to_string(p).map_err(|e| Error::from(e).in_file(p))?;
            apply_gold_labels(&mut eval, &parse_gold_labels(&text).map_err(|e| e.in_file(p))?)?;
        }
        let lm_extra = match &cfg.data.lm_extra {
            Some(p) => Some(load_corpus(p, Split::Train)?),
            None => None,
        };
        write_file(&out.join("train.jsonl"), &crate::corpus::corpus_to_jsonl(&train)?)?;
        write_file(&out.join("eval.jsonl"), &crate::corpus::corpus_to_jsonl(&eval)?)?;
        write_json(
            &out.join("stats.json"),
            &IngestStats {
                train: corpus_stats(&train),
                eval: corpus_stats(&eval),
                lm_extra: lm_extra.as_ref().map(corpus_stats),
            },
        )?;
        Ok(Loaded { train, eval, lm_extra })
    })?;

    let (train, eval, lm_extra) = stage(manifest, 1, || {
        let normalizer = cfg.normalizer()?;
        let (train, train_summary) = normalizer.normalize_corpus(&loaded.train);
        let (eval, eval_summary) = normalizer.normalize_corpus(&loaded.eval);
        let lm_extra = loaded.lm_extra.as_ref().map(|c| normalizer.normalize_corpus(c).0);
        let train = sentences(&train);
        let eval = sentences(&eval);
        if let Some(s) = eval.iter().find(|s| !s.gold) {
            return Err(Error::MissingGold(format!(
                "evaluation sentence {}#{} has no gold label",
                s.doc_id, s.index
            )));
        }
        write_corpus(&out.join("train.normalized.jsonl"), &train)?;
        write_corpus(&out.join("eval.normalized.jsonl"), &eval)?;
        write_file(&out.join("normalize_train.csv"), train_summary.to_csv()?.as_bytes())?;
        write_file(&out.join("normalize_eval.csv"), eval_summary.to_csv()?.as_bytes())?;
        Ok((train, eval, lm_extra.map(|c| sentences(&c)).unwrap_or_default()))
    })?;

    let (sampled, weights) = stage(manifest, 2, || {
        let scfg = cfg.sampling_config();
        let (sampled, weights) = sampling::apply(&train, &scfg)?;
        write_corpus(&out.join("train.sampled.jsonl"), &sampled)?;
        write_json(
            &out.join("sampling.json"),
            &SampleInfo {
                config: scfg,
                n_relevant: sampled.iter().filter(|s| s.label.is_relevant()).count(),
                n_irrelevant: sampled.iter().filter(|s| !s.label.is_relevant()).count(),
                class_weights: weights,
            },
        )?;
        Ok((sampled, weights))
    })?;

    let (mut classifier, epochs) = stage(manifest, 3, || {
        let (classifier, epochs) = match cfg.model {
            ModelKind::Linear => {
                let (c, report) = fit_linear(&sampled, weights, &cfg.linear)?;
                write_json(
                    &out.join("train_report.json"),
                    &serde_json::json!({ "epoch_losses": report.epoch_losses, "final_loss": report.final_loss }),
                )?;
                (c, cfg.linear.train.epochs)
            }
            ModelKind::Transformer => {
                let lm_text: Vec<Sentence> = lm_extra.iter().chain(&train).cloned().collect();
                let (c, reports) = fit_transformer(&lm_text, &train, &sampled, weights, &cfg.transformer, cfg.seed)?;
                let stages: Vec<_> = reports
                    .iter()
                    .map(|r| serde_json::json!({ "stage": r.stage, "epoch_losses": r.epoch_losses, "steps": r.steps }))
                    .collect();
                write_json(&out.join("train_report.json"), &stages)?;
                (c, cfg.transformer.classifier.epochs)
            }
        };
        Ok((classifier, epochs))
    })?;
    classifier.set_threshold(cfg.threshold)?;
    classifier.save(&out.join("model.bin"))?;

    stage(manifest, 4, || {
        let (cm, m) = eval::evaluate(&classifier, &eval)?;
        let metrics = MetricsReport::new(&cm, &m, eval_split, &classifier);
        write_json(&out.join("metrics.json"), &metrics)?;
        write_json_lines(&out.join("predictions.jsonl"), &scored_records(&classifier, &eval)?)?;
        let row = ReportRow {
            model: cfg.model.to_string(),
            remarks: describe_sampling(&cfg.sampling),
            epochs: epochs.to_string(),
            metrics: Some(m),
        };
        let report = eval::report(&[row]);
        write_file(&out.join("report.txt"), report.as_bytes())?;
        Ok((metrics, report))
    })
}

pub fn describe_sampling(s: &SamplingSection) -> String {
    match s.mode {
        SamplingMode::None => "No sampling".into(),
        SamplingMode::Weights => "Class weights".into(),
        SamplingMode::Over => format!("Oversampling {}", s.ratio),
        SamplingMode::Under => format!("Undersampling {}", s.ratio),
    }
}

/// Normalization statistics for a whole corpus, for the `normalize` command.
pub fn normalize_corpus(normalizer: &Normalizer, corpus: &Corpus) -> (Corpus, NormalizeSummary) {
    normalizer.normalize_corpus(corpus)
}
