use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use threatlens::corpus::{
    apply_gold_labels, corpus_stats, corpus_to_jsonl, load_corpus, merge_corpora, parse_gold_labels, Corpus,
    CorpusStats, Split,
};
use threatlens::error::{exit_code, Error, Result};
use threatlens::eval::{self, ReportRow, SweepPlan};
use threatlens::model::{finetune_classifier, finetune_lm, pretrain_lm, Classifier};
use threatlens::normalize::{Normalizer, RuleSet};
use threatlens::pipeline::{
    self, fit_linear, fit_transformer, highlight, read_document, scored_records, sentences, write_file, write_json,
    write_json_lines, DataPaths, MetricsReport, ModelKind, PipelineConfig, SamplingSection, SCHEMA_VERSION,
};
use threatlens::sampling::{self, Ratio, SamplingMode};

#[derive(Parser)]
#[command(
    name = "threatlens",
    version,
    about = "Flag malware-behaviour sentences in threat reports"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a directory of .tsv files into canonical JSONL.
    Ingest(IngestArgs),
    /// Print corpus statistics as JSON.
    Stats(StatsArgs),
    /// Replace artifacts with placeholders and drop unusable sentences.
    Normalize(NormalizeArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Run masked-LM stage 1 (pretraining) or stage 2 (fine-tuning).
    Pretrain(PretrainArgs),
    /// Score a model against gold labels.
    Evaluate(EvaluateArgs),
    /// Append a `score` field to every sentence of a corpus.
    Predict(PredictArgs),
    /// Train and score one model per sampling mode and ratio.
    Sweep(SweepArgs),
    /// Mark likely malware-behaviour sentences in a report.
    Highlight(HighlightArgs),
    /// Ingest, normalize, sample, train and evaluate from a config file.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of `<doc_id>.tsv` files.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Expected counts, e.g. `docs=65,sents=9424`.
    #[arg(long)]
    expect: Option<String>,
    /// Gold-label override file (`doc_id<TAB>index<TAB>label`).
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory of .tsv files or a JSONL dump.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-placeholder substitution and drop counts (CSV).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Rule file (TOML).
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Transformer,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Linear => ModelKind::Linear,
            ModelArg::Transformer => ModelKind::Transformer,
        }
    }
}

/// Settings shared by the training commands; flags override the config file.
#[derive(Args, Clone)]
struct TrainingFlags {
    /// Pipeline config (TOML); only its model settings are used here.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampling: Option<SamplingMode>,
    /// Target minority:majority ratio, e.g. `1:2`.
    #[arg(long)]
    ratio: Option<Ratio>,
    /// Read the ratio as a duplication/retention factor instead of counts.
    #[arg(long)]
    ratio_is_duplication_factor: bool,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Start the classifier stage from a stage-2 model file.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Extra unlabelled text for LM pretraining.
    #[arg(long)]
    lm_corpus: Option<PathBuf>,
    /// Run the classifier stage even if LM stages were skipped.
    #[arg(long)]
    skip_lm_stages: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long)]
    corpus: PathBuf,
    /// Additional text merged into the stage-1 corpus.
    #[arg(long)]
    extra: Option<PathBuf>,
    /// Stage-1 model to continue from (required for stage 2).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Split name recorded in the output.
    #[arg(long, default_value = "dev")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Also write scored JSONL here.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "over,under")]
    modes: Vec<SamplingMode>,
    #[arg(long, value_delimiter = ',', default_value = "1:1,1:2,1:5,1:10")]
    ratios: Vec<Ratio>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// CSV output (`ratio,mode,precision,recall,f1`).
    #[arg(long)]
    out: PathBuf,
    /// Also write the formatted table here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args)]
struct HighlightArgs {
    #[arg(long)]
    model: PathBuf,
    /// A `.tsv` document or plain text with one sentence per line.
    #[arg(long)]
    document: PathBuf,
    /// Write the full report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit_code::VALIDATION
            } else {
                exit_code::SUCCESS
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = (|| {
        if let Some(n) = cli.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidConfig(format!("--jobs: {e}")))?;
        }
        run(cli.command)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::Normalize(a) => normalize(a),
        Command::Train(a) => train(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Sweep(a) => sweep(a),
        Command::Highlight(a) => highlight_cmd(a),
        Command::RunAll(a) => run_all(a),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

/// Parses `docs=65,sents=9424` into expected document and sentence counts.
fn parse_expect(spec: &str) -> Result<(Option<usize>, Option<usize>)> {
    let mut docs = None;
    let mut sents = None;
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let bad = || Error::InvalidConfig(format!("invalid --expect entry `{part}`"));
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        let v: usize = v.trim().parse().map_err(|_| bad())?;
        match k.trim() {
            "docs" | "documents" => docs = Some(v),
            "sents" | "sentences" => sents = Some(v),
            _ => return Err(bad()),
        }
    }
    Ok((docs, sents))
}

fn check_expect(stats: &CorpusStats, spec: &str) -> Result<()> {
    let (docs, sents) = parse_expect(spec)?;
    let mut problems = Vec::new();
    if let Some(d) = docs.filter(|&d| d != stats.n_documents) {
        problems.push(format!("expected {d} documents, found {}", stats.n_documents));
    }
    if let Some(s) = sents.filter(|&s| s != stats.n_sentences) {
        problems.push(format!("expected {s} sentences, found {}", stats.n_sentences));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems.join("; ")))
    }
}

fn apply_gold(corpus: &mut Corpus, gold: Option<&Path>) -> Result<()> {
    if let Some(p) = gold {
        let text = std::fs::read_to_string(p).map_err(|e| Error::from(e).in_file(p))?;
        let n = apply_gold_labels(corpus, &parse_gold_labels(&text).map_err(|e| e.in_file(p))?)?;
        info!("applied {n} gold labels from {}", p.display());
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    if !a.dir.is_dir() {
        return Err(Error::Validation(format!("{} is not a directory", a.dir.display())));
    }
    let mut corpus = load_corpus(&a.dir, a.split)?;
    apply_gold(&mut corpus, a.gold.as_deref())?;
    write_file(&a.out, &corpus_to_jsonl(&corpus)?)?;
    let stats = corpus_stats(&corpus);
    print_json(&stats)?;
    if let Some(spec) = &a.expect {
        check_expect(&stats, spec)?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    print_json(&corpus_stats(&load_corpus(&a.corpus, Split::Train)?))
}

fn normalizer(rules: Option<&Path>) -> Result<Normalizer> {
    Ok(Normalizer::new(match rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default(),
    }))
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus, Split::Train)?;
    let (normalized, summary) = normalizer(a.rules.as_deref())?.normalize_corpus(&corpus);
    write_file(&a.out, &corpus_to_jsonl(&normalized)?)?;
    let csv = summary.to_csv()?;
    match &a.summary {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => emit(&csv)?,
    }
    Ok(())
}

/// Config file (or defaults), then environment seed, then flags.
fn training_config(flags: &TrainingFlags, model: Option<ModelArg>) -> Result<PipelineConfig> {
    let mut cfg = match &flags.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            model: ModelKind::Linear,
            threshold: threatlens::model::DEFAULT_THRESHOLD,
            output_dir: PathBuf::from("."),
            data: DataPaths {
                train: PathBuf::new(),
                dev: PathBuf::new(),
                test: None,
                lm_extra: None,
                gold_labels: None,
                rules: None,
            },
            sampling: SamplingSection::default(),
            linear: Default::default(),
            transformer: Default::default(),
        },
    };
    if let Some(seed) = pipeline::seed_from_env()? {
        cfg.set_seed(seed);
    }
    if let Some(seed) = flags.seed {
        cfg.set_seed(seed);
    }
    if let Some(m) = model {
        cfg.model = m.into();
    }
    if let Some(mode) = flags.sampling {
        cfg.sampling.mode = mode;
    }
    if let Some(r) = flags.ratio {
        cfg.sampling.ratio = r;
    }
    if flags.ratio_is_duplication_factor {
        cfg.sampling.ratio_is_duplication_factor = true;
    }
    if let Some(r) = &flags.rules {
        cfg.data.rules = Some(r.clone());
    }
    Ok(cfg)
}

fn load_normalized(path: &Path, split: Split, normalizer: &Normalizer) -> Result<Corpus> {
    let corpus = load_corpus(path, split)?;
    let (normalized, summary) = normalizer.normalize_corpus(&corpus);
    info!(
        "{}: kept {} of {} sentences",
        path.display(),
        normalized.n_sentences(),
        corpus.n_sentences()
    );
    let _ = summary;
    Ok(normalized)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = training_config(&a.flags, a.model)?;
    if a.skip_lm_stages {
        cfg.transformer.classifier.skip_lm_stages = true;
    }
    let norm = cfg.normalizer()?;
    let corpus = load_normalized(&a.corpus, Split::Train, &norm)?;
    let train = sentences(&corpus);
    let (sampled, weights) = sampling::apply(&train, &cfg.sampling_config())?;
    info!("training on {} sentences after sampling", sampled.len());
    let mut classifier = match (cfg.model, &a.init) {
        (ModelKind::Linear, Some(_)) => {
            return Err(Error::InvalidConfig("--init applies to transformer models only".into()));
        }
        (ModelKind::Linear, None) => fit_linear(&sampled, weights, &cfg.linear)?.0,
        (ModelKind::Transformer, Some(init)) => {
            let Classifier::Transformer { mut model, .. } = Classifier::load(init)? else {
                return Err(Error::InvalidConfig(format!(
                    "{} is not a transformer model",
                    init.display()
                )));
            };
            finetune_classifier(&mut model, &sampled, weights, &cfg.transformer.classifier)?;
            Classifier::transformer(*model)
        }
        (ModelKind::Transformer, None) => {
            let mut lm_text = train.clone();
            if let Some(p) = &a.lm_corpus {
                lm_text.extend(sentences(&load_normalized(p, Split::Train, &norm)?));
            }
            fit_transformer(&lm_text, &train, &sampled, weights, &cfg.transformer, cfg.seed)?.0
        }
    };
    classifier.set_threshold(a.threshold.unwrap_or(cfg.threshold))?;
    classifier.save(&a.out)?;
    eprintln!("wrote {} model to {}", classifier.kind(), a.out.display());
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = training_config(&a.flags, Some(ModelArg::Transformer))?;
    let norm = cfg.normalizer()?;
    let mut corpus = load_normalized(&a.corpus, Split::Train, &norm)?;
    let mut model = match (a.stage, &a.init) {
        (1, None) => {
            if let Some(extra) = &a.extra {
                corpus = merge_corpora(&corpus, &load_normalized(extra, Split::Train, &norm)?)?;
            }
            info!("stage 1 corpus: {} sentences", corpus.n_sentences());
            pipeline::new_transformer(&corpus, &cfg.transformer, cfg.seed)?
        }
        (_, Some(init)) => match Classifier::load(init)? {
            Classifier::Transformer { model, .. } => *model,
            Classifier::Linear { .. } => {
                return Err(Error::InvalidConfig(format!(
                    "{} is not a transformer model",
                    init.display()
                )));
            }
        },
        (_, None) => return Err(Error::InvalidConfig("stage 2 needs --init <stage-1 model>".into())),
    };
    let text = sentences(&corpus);
    let report = if a.stage == 1 {
        pretrain_lm(&mut model, &text, &cfg.transformer.lm_pretrain)?
    } else {
        finetune_lm(&mut model, &text, &cfg.transformer.lm_finetune)?
    };
    print_json(&serde_json::json!({ "stage": report.stage, "epoch_losses": report.epoch_losses }))?;
    Classifier::transformer(model).save(&a.out)
}

fn load_model(path: &Path, threshold: Option<f64>) -> Result<Classifier> {
    let mut c = Classifier::load(path)?;
    if let Some(t) = threshold {
        c.set_threshold(t)?;
    }
    Ok(c)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let classifier = load_model(&a.model, a.threshold)?;
    let mut corpus = load_corpus(&a.corpus, a.split)?;
    apply_gold(&mut corpus, a.gold.as_deref())?;
    let (normalized, _) = normalizer(a.rules.as_deref())?.normalize_corpus(&corpus);
    let eval_set = sentences(&normalized);
    let (cm, m) = eval::evaluate(&classifier, &eval_set)?;
    let report = MetricsReport::new(&cm, &m, a.split, &classifier);
    write_json(&a.out, &report)?;
    if let Some(p) = &a.predictions {
        write_json_lines(p, &scored_records(&classifier, &eval_set)?)?;
    }
    print_json(&report)
}

fn predict(a: PredictArgs) -> Result<()> {
    let classifier = load_model(&a.model, None)?;
    let corpus = load_corpus(&a.corpus, Split::Test)?;
    let (normalized, _) = normalizer(a.rules.as_deref())?.normalize_corpus(&corpus);
    write_json_lines(&a.out, &scored_records(&classifier, &sentences(&normalized))?)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = training_config(&a.flags, a.model)?;
    let norm = cfg.normalizer()?;
    let train = sentences(&load_normalized(&a.train, Split::Train, &norm)?);
    let dev = sentences(&load_normalized(&a.dev, Split::Dev, &norm)?);
    let epochs = match cfg.model {
        ModelKind::Linear => cfg.linear.train.epochs,
        ModelKind::Transformer => cfg.transformer.classifier.epochs,
    };
    let plan = SweepPlan {
        modes: a.modes,
        ratios: a.ratios,
        seed: cfg.seed,
        ratio_is_duplication_factor: cfg.sampling.ratio_is_duplication_factor,
        epochs,
    };
    let rows = eval::sweep(&train, &dev, &plan, |sampled, weights, seed| {
        let mut local = cfg.clone();
        local.set_seed(seed);
        let mut c = match local.model {
            ModelKind::Linear => fit_linear(sampled, weights, &local.linear)?.0,
            ModelKind::Transformer => fit_transformer(&train, &train, sampled, weights, &local.transformer, seed)?.0,
        };
        c.set_threshold(local.threshold)?;
        Ok(c)
    });
    write_file(&a.out, eval::sweep_csv(&rows)?.as_bytes())?;
    let table: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow::from_sweep(&cfg.model.to_string(), r))
        .collect();
    let mut text = eval::report(&table);
    let ratio = Ratio::default();
    match eval::compare_over_under(&rows, ratio) {
        Some(c) => text.push_str(&format!(
            "\nAt {ratio}: oversampling F1 {:.2} vs undersampling F1 {:.2} ({}).\n",
            c.over_f1,
            c.under_f1,
            if c.oversampling_better() {
                "oversampling better or equal"
            } else {
                "undersampling better"
            }
        )),
        None => text.push_str(&format!("\nNo over/under comparison available at {ratio}.\n")),
    }
    if let Some(p) = &a.report {
        write_file(p, text.as_bytes())?;
    }
    emit(&text)?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        warn!("{failed} sweep rows failed");
    }
    Ok(())
}

fn highlight_cmd(a: HighlightArgs) -> Result<()> {
    let classifier = load_model(&a.model, a.threshold)?;
    let doc = read_document(&a.document)?;
    let report = highlight(&classifier, &normalizer(a.rules.as_deref())?, &doc)?;
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    emit(&report.render_text())
}

fn run_all(a: RunAllArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(seed) = pipeline::seed_from_env()? {
        cfg.set_seed(seed);
    }
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = a.out_dir {
        cfg.output_dir = dir;
    }
    let outcome = pipeline::run_all(&cfg)?;
    emit(&outcome.report)?;
    eprintln!("artifacts written to {}", cfg.output_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expect_parsing() {
        assert_eq!(parse_expect("docs=65,sents=9424").unwrap(), (Some(65), Some(9424)));
        assert_eq!(parse_expect("sents=3").unwrap(), (None, Some(3)));
        assert!(parse_expect("docs=x").is_err());
        assert!(parse_expect("pages=3").is_err());
    }
}
