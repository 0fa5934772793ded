//! Command-line front end: training runs with manifests, evaluation reports,
//! blind-set predictions and cross-model comparison tables.
//!
//! Exit codes are 0 on success, 1 on a runtime or data error and 2 on a
//! usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use techdom::corpus::{corpus_stats, load_corpus, load_unlabeled, stratified_split};
use techdom::evaluation::{comparison_table, evaluate, load_reports, render_confusion, EvaluationReport};
use techdom::features::load_word_embeddings;
use techdom::models::{Architecture, Classifier, ClassifierConfig, ClassifierModel, EncoderAdapter, EncoderSource};
use techdom::training::{set_seed, train, FeatureInput, TrainingConfig, TrainingTrace};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Share of the training file held out for model selection when no `--dev` is given.
pub const DEFAULT_DEV_FRACTION: f64 = 0.1;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing flags; exit code 2.
    Usage(String),
    /// Anything that goes wrong while doing the work; exit code 1.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<techdom::Error> for CliError {
    fn from(e: techdom::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "techdom", version, about = "Technical-domain sentence classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write its model directory.
    Train(TrainArgs),
    /// Score a trained model on a labeled file.
    Evaluate(EvaluateArgs),
    /// Label a blind file, one sentence per line.
    Predict(PredictArgs),
    /// Build the comparison table from saved evaluation reports.
    Report(ReportArgs),
    /// Print label counts and length percentiles of a labeled file.
    Stats(StatsArgs),
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    s.parse().map_err(|e: techdom::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// svm_tfidf, cnn (cnn_text), transformer_cls or transformer_cnn.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Labeled training file (sentence<TAB>label).
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled dev file; without it a stratified share of --train is held out.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Model directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat TOML file of training and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Registered checkpoint name or local checkpoint directory.
    #[arg(long)]
    pub encoder: Option<String>,
    /// Word vectors in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Column name in comparison tables; defaults to the model directory name.
    #[arg(long)]
    pub model_id: Option<String>,
    /// Row name in comparison tables; defaults to the data file stem.
    #[arg(long)]
    pub dataset_id: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Append per-class probabilities, in the order of the model's labels.txt.
    #[arg(long)]
    pub probs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Glob matching report.json files, e.g. "runs/*/eval/report.json".
    #[arg(long)]
    pub reports: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings accepted in a `--config` file. Every key is optional; flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub early_stop_patience: Option<usize>,
    pub dev_fraction: Option<f64>,
    pub dropout: Option<f64>,
    pub svm_c: Option<f64>,
    pub max_len: Option<usize>,
    pub freeze_encoder: Option<bool>,
    pub ngram_max: Option<usize>,
    pub cnn_filter_widths: Option<Vec<usize>>,
    pub cnn_maps_per_width: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
    }
}

/// Settings after merging defaults, the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub training: TrainingConfig,
    pub classifier: ClassifierConfig,
    /// Held-out share used when no dev file was given.
    pub dev_fraction: Option<f64>,
}

pub fn resolve_config(args: &TrainArgs, file: &FileConfig) -> ResolvedConfig {
    let mut training = TrainingConfig::default();
    let mut classifier = ClassifierConfig::new(args.arch);
    macro_rules! take {
        ($target:expr, $value:expr) => {
            if let Some(v) = $value.clone() {
                $target = v;
            }
        };
    }
    take!(training.batch_size, file.batch_size);
    take!(training.epochs, file.epochs);
    take!(training.seed, file.seed);
    if file.learning_rate.is_some() {
        training.learning_rate = file.learning_rate;
    }
    if file.early_stop_patience.is_some() {
        training.early_stop_patience = file.early_stop_patience;
    }
    take!(classifier.dropout, file.dropout);
    take!(classifier.svm_c, file.svm_c);
    take!(classifier.max_len, file.max_len);
    take!(classifier.freeze_encoder, file.freeze_encoder);
    take!(classifier.ngram_max, file.ngram_max);
    take!(classifier.cnn_filter_widths, file.cnn_filter_widths);
    take!(classifier.cnn_maps_per_width, file.cnn_maps_per_width);

    take!(training.batch_size, args.batch_size);
    take!(training.epochs, args.epochs);
    take!(training.seed, args.seed);
    if args.learning_rate.is_some() {
        training.learning_rate = args.learning_rate;
    }
    let dev_fraction = args
        .dev
        .is_none()
        .then(|| file.dev_fraction.unwrap_or(DEFAULT_DEV_FRACTION));
    ResolvedConfig { training, classifier, dev_fraction }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a training job, written before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub config: ResolvedConfig,
    pub encoder: Option<String>,
    /// Keyed by role: train, dev, config, embeddings, encoder.
    pub inputs: BTreeMap<String, InputDigest>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_text(path, &(serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"))
    }
}

/// Hex SHA-256 of a file, or of every file under a directory in sorted
/// relative-path order (path and content both hashed).
pub fn digest_path(path: &Path) -> CliResult<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0u8]);
            let full = path.join(&rel);
            hasher.update(std::fs::read(&full).map_err(|e| io_err(&full, e))?);
        }
    } else {
        hasher.update(std::fs::read(path).map_err(|e| io_err(path, e))?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

impl TrainArgs {
    /// Canonical command line recorded in the manifest.
    pub fn to_argv(&self) -> Vec<String> {
        let mut v = vec![
            "techdom".to_string(),
            "train".into(),
            "--arch".into(),
            self.arch.to_string(),
            "--train".into(),
            self.train.display().to_string(),
        ];
        let mut opt = |flag: &str, value: Option<String>| {
            if let Some(value) = value {
                v.push(flag.to_string());
                v.push(value);
            }
        };
        opt("--dev", self.dev.as_ref().map(|p| p.display().to_string()));
        opt("--out", Some(self.out.display().to_string()));
        opt("--config", self.config.as_ref().map(|p| p.display().to_string()));
        opt("--seed", self.seed.map(|s| s.to_string()));
        opt("--encoder", self.encoder.clone());
        opt("--embeddings", self.embeddings.as_ref().map(|p| p.display().to_string()));
        opt("--epochs", self.epochs.map(|s| s.to_string()));
        opt("--batch-size", self.batch_size.map(|s| s.to_string()));
        opt("--learning-rate", self.learning_rate.map(|s| s.to_string()));
        v
    }

    /// Flags whose necessity depends on the architecture.
    fn check_required(&self) -> CliResult<()> {
        if self.arch.uses_encoder() && self.encoder.is_none() {
            return Err(CliError::Usage(format!("--encoder is required for --arch {}", self.arch)));
        }
        if self.arch == Architecture::CnnText && self.embeddings.is_none() {
            return Err(CliError::Usage(format!("--embeddings is required for --arch {}", self.arch)));
        }
        Ok(())
    }
}

/// Trains one model. The output directory receives the manifest first, then
/// the model files and the training trace.
pub fn cmd_train(args: &TrainArgs) -> CliResult<PathBuf> {
    args.check_required()?;
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let resolved = resolve_config(args, &file);
    resolved.classifier.validate()?;
    resolved.training.validate(args.arch)?;

    let mut inputs = BTreeMap::new();
    let mut record = |role: &str, path: &Path| -> CliResult<()> {
        let sha256 = digest_path(path)?;
        inputs.insert(role.to_string(), InputDigest { path: path.to_path_buf(), sha256 });
        Ok(())
    };
    record("train", &args.train)?;
    if let Some(p) = &args.dev {
        record("dev", p)?;
    }
    if let Some(p) = &args.config {
        record("config", p)?;
    }
    if args.arch == Architecture::CnnText {
        if let Some(p) = &args.embeddings {
            record("embeddings", p)?;
        }
    }
    let source = match (&args.encoder, args.arch.uses_encoder()) {
        (Some(name), true) => {
            let source = EncoderSource::resolve(name)?;
            if let EncoderSource::Checkpoint { dir, .. } = &source {
                record("encoder", dir)?;
            }
            Some(source)
        }
        _ => None,
    };

    let training_file = load_corpus(&args.train)?;
    let (train_set, dev_set) = match (&args.dev, resolved.dev_fraction) {
        (Some(p), _) => (training_file, load_corpus(p)?),
        (None, fraction) => {
            let split = stratified_split(&training_file, fraction.unwrap_or(DEFAULT_DEV_FRACTION), resolved.training.seed)?;
            (split.train, split.dev)
        }
    };

    let manifest = RunManifest {
        command: args.to_argv(),
        config_file: args.config.clone(),
        config: resolved.clone(),
        encoder: source.as_ref().map(|_| args.encoder.clone().unwrap_or_default()),
        inputs,
        seed: resolved.training.seed,
        out_dir: args.out.clone(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
    };
    create_dir(&args.out)?;
    manifest.save(&args.out.join(MANIFEST_FILE))?;

    let seeds = set_seed(resolved.training.seed);
    let features = match (args.arch, &source, &args.embeddings) {
        (Architecture::SvmTfidf, _, _) => FeatureInput::None,
        (Architecture::CnnText, _, Some(path)) => FeatureInput::Embeddings(load_word_embeddings(path, &seeds)?),
        (_, Some(source), _) => {
            let texts: Vec<&str> = train_set.iter().map(|e| e.text.as_str()).collect();
            FeatureInput::Encoder(EncoderAdapter::from_source(source, &texts, &seeds)?)
        }
        _ => unreachable!("required flags checked above"),
    };
    log::info!(
        "training {} on {} sentences ({} dev), seed {}",
        args.arch,
        train_set.len(),
        dev_set.len(),
        resolved.training.seed
    );
    let (model, trace) = train(&train_set, &dev_set, &resolved.classifier, &resolved.training, features)?;
    model.save(&args.out)?;
    trace.save(&args.out)?;
    println!("{}", train_summary(&trace, &args.out));
    Ok(args.out.clone())
}

fn train_summary(trace: &TrainingTrace, out: &Path) -> String {
    match trace.best_epoch.and_then(|b| trace.epochs.iter().find(|e| e.epoch == b)) {
        Some(best) => format!(
            "best epoch {} (dev macro F1 {:.4}), model written to {}",
            best.epoch,
            best.dev_macro_f1,
            out.display()
        ),
        None => format!("model written to {}", out.display()),
    }
}

fn default_id(path: &Path, stem: bool) -> String {
    let name = if stem { path.file_stem() } else { path.file_name() };
    name.map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Files written by `cmd_evaluate`.
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CONFUSION_IMAGE_FILE: &str = "confusion.png";
pub const CONFUSION_TEXT_FILE: &str = "confusion.txt";
pub const PREDICTIONS_FILE: &str = "predictions.txt";

/// Scores a saved model on a labeled file and writes the report, its text
/// rendering, the confusion heatmap and the predicted labels.
pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<EvaluationReport> {
    let model = ClassifierModel::load(&args.model)?;
    let data = load_corpus(&args.data)?;
    let model_id = args.model_id.clone().unwrap_or_else(|| default_id(&args.model, false));
    let dataset_id = args.dataset_id.clone().unwrap_or_else(|| default_id(&args.data, true));
    let texts: Vec<String> = data.iter().map(|e| e.text.clone()).collect();
    let mut report = evaluate(&model, &data, &model_id, &dataset_id)?;
    report.architecture = Some(model.architecture());
    let predicted = model.predict_indices(&texts)?;

    create_dir(&args.out)?;
    report.save(args.out.join(REPORT_FILE))?;
    let text = report.render_text();
    write_text(&args.out.join(REPORT_TEXT_FILE), &text)?;
    let grid = render_confusion(&report.confusion, &report.labels, &args.out.join(CONFUSION_IMAGE_FILE))?;
    write_text(&args.out.join(CONFUSION_TEXT_FILE), &grid)?;
    let mut lines = String::new();
    for &i in &predicted {
        lines.push_str(model.labels().label(i));
        lines.push('\n');
    }
    write_text(&args.out.join(PREDICTIONS_FILE), &lines)?;
    print!("{text}");
    Ok(report)
}

/// Writes one predicted label per input sentence; with `probs`, each label
/// is followed by tab-separated class probabilities.
pub fn cmd_predict(args: &PredictArgs) -> CliResult<usize> {
    let model = ClassifierModel::load(&args.model)?;
    let texts = load_unlabeled(&args.input)?;
    let predictions = model.predict(&texts)?;
    let mut out = String::new();
    for p in &predictions {
        out.push_str(&p.label);
        if args.probs {
            for x in &p.probabilities {
                let _ = write!(out, "\t{x}");
            }
        }
        out.push('\n');
    }
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(&args.output, &out)?;
    Ok(predictions.len())
}

pub const TABLE_TEXT_FILE: &str = "table.txt";
pub const TABLE_TSV_FILE: &str = "table.tsv";
pub const TABLE_MARKDOWN_FILE: &str = "table.md";

/// Collects every report matched by the glob into one dataset × model table.
pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let paths: Vec<PathBuf> = glob::glob(&args.reports)
        .map_err(|e| CliError::Usage(format!("--reports: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Run(e.to_string()))?;
    if paths.is_empty() {
        return Err(CliError::Run(format!("no report files match {:?}", args.reports)));
    }
    let reports = load_reports(&paths)?;
    let table = comparison_table(&reports)?;
    create_dir(&args.out)?;
    let text = table.render_text();
    write_text(&args.out.join(TABLE_TEXT_FILE), &text)?;
    write_text(&args.out.join(TABLE_TSV_FILE), &table.render_tsv())?;
    write_text(&args.out.join(TABLE_MARKDOWN_FILE), &table.render_markdown())?;
    print!("{text}");
    Ok(text)
}

pub const STATS_FILE: &str = "stats.json";

pub fn cmd_stats(args: &StatsArgs) -> CliResult<String> {
    let stats = corpus_stats(&load_corpus(&args.data)?)?;
    let text = stats.render_text();
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(
            &out.join(STATS_FILE),
            &(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"),
        )?;
    }
    print!("{text}");
    Ok(text)
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(a).map(drop),
        Command::Predict(a) => cmd_predict(a).map(drop),
        Command::Report(a) => cmd_report(a).map(drop),
        Command::Stats(a) => cmd_stats(a).map(drop),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
