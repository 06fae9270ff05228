//! End-to-end experiment pipeline: splits, both training objectives over
//! sample-size grids, evaluation and on-disk artifacts.
//!
//! Every artifact embeds the configuration and seeds that produced it. Grid
//! points are keyed by a SHA-256 hash of their effective configuration so an
//! interrupted grid can be resumed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{ModelError, TrainedModel};
use crate::compare::CompareError;
use crate::corpus::{self, BalanceSpec, CorpusError, Dataset, LabelBalance, Shortfall};
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::eval::{self, ConfusionCounts, EvalError, Scores};
use crate::explain::{ExplainError, LimeConfig};
use crate::rng::derive_seed;
use crate::text::TextConfig;
use crate::training::{self, Profile, TrainConfig, TrainError, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Process exit status for a failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config = 1,
    Data = 2,
    Numeric = 3,
}

impl PipelineError {
    pub fn kind(&self) -> FailureKind {
        use FailureKind::*;
        match self {
            PipelineError::Config(_) => Config,
            PipelineError::Corpus(CorpusError::InvalidArgument(_)) => Config,
            PipelineError::Corpus(_) => Data,
            PipelineError::Train(TrainError::InvalidConfig(_)) => Config,
            PipelineError::Train(TrainError::NonFinite { .. }) => Numeric,
            PipelineError::Train(TrainError::Model(ModelError::Inconsistent(_))) => Config,
            PipelineError::Train(_) => Data,
            PipelineError::Encoder(EncoderError::InvalidConfig(_)) => Config,
            PipelineError::Encoder(_) => Data,
            PipelineError::Model(ModelError::Inconsistent(_)) => Config,
            PipelineError::Model(_) => Data,
            PipelineError::Eval(_) => Data,
            PipelineError::Explain(ExplainError::InvalidConfig(_)) => Config,
            PipelineError::Explain(_) => Data,
            PipelineError::Compare(_) => Data,
            PipelineError::Io { .. } | PipelineError::Json { .. } | PipelineError::Csv(_) => Data,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Held-out test examples per label.
    pub test_per_label: usize,
    /// Share of the remaining examples of each label that goes to dev.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_per_label: 25,
            dev_fraction: 0.2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Vanilla,
    Contrastive,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Vanilla => "vanilla",
            Objective::Contrastive => "contrastive",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Objective::Vanilla),
            "contrastive" => Ok(Objective::Contrastive),
            other => Err(format!("unknown objective `{other}` (expected contrastive or vanilla)")),
        }
    }
}

fn default_contrastive_grid() -> Vec<usize> {
    vec![4, 8, 12, 16]
}

fn default_vanilla_grid() -> Vec<usize> {
    vec![50, 100, 150, 200]
}

fn default_profile() -> Profile {
    Profile::Paper
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub supplemental: Option<PathBuf>,
    /// Balancing applied to the dataset before splitting.
    #[serde(default)]
    pub balance: Option<BalanceSpec>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_contrastive_grid")]
    pub contrastive_grid: Vec<usize>,
    #[serde(default = "default_vanilla_grid")]
    pub vanilla_grid: Vec<usize>,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Replaces the profile's hyperparameters when present.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub text: TextConfig,
    #[serde(default)]
    pub lime: LimeConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            supplemental: None,
            balance: None,
            split: SplitSpec::default(),
            contrastive_grid: default_contrastive_grid(),
            vanilla_grid: default_vanilla_grid(),
            profile: default_profile(),
            train: None,
            encoder: EncoderConfig::default(),
            text: TextConfig::default(),
            lime: LimeConfig::default(),
            output_dir: output_dir.into(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train
            .clone()
            .unwrap_or_else(|| TrainConfig::for_profile(self.profile))
    }

    pub fn validate(&self) -> Result<()> {
        if self.contrastive_grid.is_empty() && self.vanilla_grid.is_empty() {
            return Err(PipelineError::Config("both sample-size grids are empty".into()));
        }
        if self.contrastive_grid.iter().chain(&self.vanilla_grid).any(|&n| n == 0) {
            return Err(PipelineError::Config("grid sizes must be >= 1".into()));
        }
        if self.split.test_per_label == 0 {
            return Err(PipelineError::Config("test_per_label must be >= 1".into()));
        }
        if !(self.split.dev_fraction > 0.0 && self.split.dev_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "dev_fraction must lie in (0, 1), got {}",
                self.split.dev_fraction
            )));
        }
        if self.encoder.vocab_buckets != self.text.vocab_buckets {
            return Err(PipelineError::Config(format!(
                "encoder has {} buckets but the tokenizer {}",
                self.encoder.vocab_buckets, self.text.vocab_buckets
            )));
        }
        self.encoder.validate()?;
        self.train_config().validate()?;
        self.lime.validate()?;
        Ok(())
    }

    /// The few-shot sampling seed for a sample size. Both objectives draw
    /// the same sample at equal sizes.
    pub fn point_seed(&self, n_per_label: usize) -> u64 {
        derive_seed(self.seed, &format!("few-shot/{n_per_label}"))
    }
}

/// Record of how the corpus was split, written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRunLog {
    pub split: SplitSpec,
    pub balance: Option<BalanceSpec>,
    pub balance_report: Vec<LabelBalance>,
    pub source_counts: Vec<(String, usize)>,
    pub test_counts: Vec<(String, usize)>,
    pub train_counts: Vec<(String, usize)>,
    pub dev_counts: Vec<(String, usize)>,
    pub test_shortfalls: Vec<Shortfall>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub log: SplitRunLog,
}

/// Balances (when configured) and splits the corpus into train/dev/test.
pub fn prepare_splits(
    dataset: &Dataset,
    supplemental: Option<&Dataset>,
    balance: Option<&BalanceSpec>,
    split: &SplitSpec,
) -> Result<Splits> {
    let (source, balance_report) = match balance {
        Some(spec) => {
            let b = corpus::balance(dataset, spec, supplemental)?;
            (b.dataset, b.report)
        }
        None => (dataset.clone(), Vec::new()),
    };
    let t = corpus::split_test(&source, split.test_per_label, split.seed);
    let td = corpus::split_train_dev(&t.rest, split.dev_fraction, derive_seed(split.seed, "dev"))?;
    let log = SplitRunLog {
        split: *split,
        balance: balance.cloned(),
        balance_report,
        source_counts: source.label_counts(),
        test_counts: t.test.label_counts(),
        train_counts: td.train.label_counts(),
        dev_counts: td.dev.label_counts(),
        test_shortfalls: t.shortfalls,
    };
    Ok(Splits {
        train: td.train,
        dev: td.dev,
        test: t.test,
        log,
    })
}

pub fn load_splits_input(config: &ExperimentConfig) -> Result<Splits> {
    let dataset = corpus::load_jsonl(&config.dataset)?;
    let supplemental = match &config.supplemental {
        Some(p) => Some(corpus::load_jsonl(p)?),
        None => None,
    };
    prepare_splits(&dataset, supplemental.as_ref(), config.balance.as_ref(), &config.split)
}

pub fn save_splits(splits: &Splits, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    corpus::save_jsonl(&splits.train, dir.join("train.jsonl"))?;
    corpus::save_jsonl(&splits.dev, dir.join("dev.jsonl"))?;
    corpus::save_jsonl(&splits.test, dir.join("test.jsonl"))?;
    write_json(&dir.join("split_log.json"), &splits.log)
}

/// Trains one model on `train` with the given objective.
pub fn train_model(
    objective: Objective,
    train: &Dataset,
    encoder_config: &EncoderConfig,
    text_config: &TextConfig,
    train_config: &TrainConfig,
) -> Result<(TrainedModel, TrainSummary)> {
    if encoder_config.vocab_buckets != text_config.vocab_buckets {
        return Err(PipelineError::Config(
            "encoder and tokenizer bucket counts differ".into(),
        ));
    }
    let encoder = Encoder::init(*encoder_config)?;
    match objective {
        Objective::Contrastive => {
            let pairs = training::generate_pairs(train, train_config.pairs_per_class, train_config.seed)?;
            let (tuned, log) = training::train_contrastive(&encoder, text_config, &pairs, train_config)?;
            let fit = training::train_head(&tuned, text_config, train, train_config)?;
            let summary = TrainSummary {
                training_examples: train.len(),
                pair_count: Some(pairs.pairs.len()),
                head_training_set_size: Some(fit.report.training_set_size),
                head_iterations: Some(fit.report.iterations),
                head_converged: Some(fit.report.converged),
                log,
            };
            Ok((fit.model, summary))
        }
        Objective::Vanilla => {
            let (model, log) = training::train_vanilla(&encoder, text_config, train, train_config)?;
            let summary = TrainSummary {
                training_examples: train.len(),
                pair_count: None,
                head_training_set_size: None,
                head_iterations: None,
                head_converged: None,
                log,
            };
            Ok((model, summary))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub training_examples: usize,
    pub pair_count: Option<usize>,
    pub head_training_set_size: Option<usize>,
    pub head_iterations: Option<usize>,
    pub head_converged: Option<bool>,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSeeds {
    pub global: u64,
    pub split: u64,
    pub few_shot: u64,
    pub encoder_init: u64,
    pub training: u64,
}

/// Everything that determines a grid point's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfig {
    pub objective: Objective,
    pub samples_per_label: usize,
    pub dataset: PathBuf,
    pub supplemental: Option<PathBuf>,
    pub balance: Option<BalanceSpec>,
    pub split: SplitSpec,
    pub profile: Profile,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub seeds: PointSeeds,
}

impl PointConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("point config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub config_hash: String,
    pub config: PointConfig,
    pub few_shot_shortfalls: Vec<Shortfall>,
    pub test_size: usize,
    pub training: TrainSummary,
    pub scores: Scores,
    pub confusion: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub objective: Objective,
    pub samples_per_label: usize,
    pub training_examples: Option<usize>,
    pub accuracy: Option<f64>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub status: String,
}

impl SummaryRow {
    fn ok(m: &PointMetrics, status: &str) -> Self {
        Self {
            objective: m.config.objective,
            samples_per_label: m.config.samples_per_label,
            training_examples: Some(m.training.training_examples),
            accuracy: Some(m.scores.accuracy),
            micro_f1: Some(m.scores.micro_f1),
            macro_f1: Some(m.scores.macro_f1),
            weighted_f1: Some(m.scores.weighted_f1),
            status: status.into(),
        }
    }

    fn failed(objective: Objective, n: usize, err: &PipelineError) -> Self {
        Self {
            objective,
            samples_per_label: n,
            training_examples: None,
            accuracy: None,
            micro_f1: None,
            macro_f1: None,
            weighted_f1: None,
            status: format!("failed: {err}"),
        }
    }
}

/// Grid points in reporting order: the i-th vanilla point, then the i-th
/// contrastive point, each grid ascending.
pub fn grid_points(config: &ExperimentConfig) -> Vec<(Objective, usize)> {
    let mut v = config.vanilla_grid.clone();
    let mut c = config.contrastive_grid.clone();
    v.sort_unstable();
    v.dedup();
    c.sort_unstable();
    c.dedup();
    let mut out = Vec::with_capacity(v.len() + c.len());
    for i in 0..v.len().max(c.len()) {
        if let Some(&n) = v.get(i) {
            out.push((Objective::Vanilla, n));
        }
        if let Some(&n) = c.get(i) {
            out.push((Objective::Contrastive, n));
        }
    }
    out
}

pub fn point_config(config: &ExperimentConfig, objective: Objective, n: usize) -> PointConfig {
    let train = config.train_config();
    PointConfig {
        objective,
        samples_per_label: n,
        dataset: config.dataset.clone(),
        supplemental: config.supplemental.clone(),
        balance: config.balance.clone(),
        split: config.split,
        profile: config.profile,
        seeds: PointSeeds {
            global: config.seed,
            split: config.split.seed,
            few_shot: config.point_seed(n),
            encoder_init: config.encoder.seed,
            training: train.seed,
        },
        train,
        encoder: config.encoder,
        text: config.text,
    }
}

pub fn point_dir(output_dir: &Path, objective: Objective, n: usize) -> PathBuf {
    output_dir.join("points").join(format!("{objective}-{n}"))
}

/// Samples, trains and evaluates one grid point and writes its checkpoint,
/// classification report and metrics JSON into `dir`.
pub fn run_point(point: &PointConfig, train_pool: &Dataset, test: &Dataset, dir: &Path) -> Result<PointMetrics> {
    let sample = corpus::sample_few_shot(train_pool, point.samples_per_label, point.seeds.few_shot)?;
    let (model, training) = train_model(
        point.objective,
        &sample.dataset,
        &point.encoder,
        &point.text,
        &point.train,
    )?;
    let confusion = eval::evaluate(&model, test)?;
    let scores = eval::scores(&confusion)?;

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    model.save(dir.join("model.bin"))?;
    let report = dir.join("report.csv");
    let file = fs::File::create(&report).map_err(io_err(&report))?;
    eval::write_report_csv(&scores, file)?;

    let metrics = PointMetrics {
        config_hash: point.hash(),
        config: point.clone(),
        few_shot_shortfalls: sample.shortfalls,
        test_size: test.len(),
        training,
        scores,
        confusion,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn completed(point: &PointConfig, dir: &Path) -> Option<PointMetrics> {
    if !dir.join("model.bin").is_file() {
        return None;
    }
    let m: PointMetrics = read_json(&dir.join("metrics.json")).ok()?;
    (m.config_hash == point.hash()).then_some(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub experiment: ExperimentConfig,
    pub rows: Vec<SummaryRow>,
}

/// Runs every grid point, skipping points whose artifacts already match
/// their configuration, then writes `summary.json`, `summary.csv` and
/// `accuracy_curve.csv`.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridSummary> {
    config.validate()?;
    let splits = load_splits_input(config)?;
    save_splits(&splits, &config.output_dir.join("splits"))?;

    let mut rows = Vec::new();
    for (objective, n) in grid_points(config) {
        let point = point_config(config, objective, n);
        let dir = point_dir(&config.output_dir, objective, n);
        if let Some(m) = completed(&point, &dir) {
            log::info!("{objective}-{n}: up to date, skipped");
            rows.push(SummaryRow::ok(&m, "cached"));
            continue;
        }
        log::info!("{objective}-{n}: training");
        match run_point(&point, &splits.train, &splits.test, &dir) {
            Ok(m) => {
                log::info!("{objective}-{n}: weighted F1 {:.4}", m.scores.weighted_f1);
                rows.push(SummaryRow::ok(&m, "ok"));
            }
            Err(e) => {
                log::error!("{objective}-{n}: {e}");
                rows.push(SummaryRow::failed(objective, n, &e));
            }
        }
    }

    let summary = GridSummary {
        experiment: config.clone(),
        rows,
    };
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    write_summary_csv(&summary.rows, &config.output_dir.join("summary.csv"))?;
    write_curve_csv(&summary.rows, &config.output_dir.join("accuracy_curve.csv"))?;
    Ok(summary)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "samples_per_label",
        "training_examples",
        "accuracy",
        "micro_f1",
        "macro_f1",
        "weighted_f1",
        "status",
    ])?;
    for r in rows {
        w.write_record([
            r.objective.name().to_string(),
            r.samples_per_label.to_string(),
            r.training_examples.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.accuracy),
            opt(r.micro_f1),
            opt(r.macro_f1),
            opt(r.weighted_f1),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

/// Accuracy against training-set size, one series per model kind.
pub fn write_curve_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut sorted: Vec<&SummaryRow> = rows.iter().filter(|r| r.accuracy.is_some()).collect();
    sorted.sort_by_key(|r| (r.objective, r.samples_per_label));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "samples_per_label", "training_examples", "accuracy", "weighted_f1"])?;
    for r in sorted {
        w.write_record([
            r.objective.name().to_string(),
            r.samples_per_label.to_string(),
            r.training_examples.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.accuracy),
            opt(r.weighted_f1),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{keyword_corpus, KeywordCorpusSpec};

    fn small_config(dir: &Path) -> ExperimentConfig {
        let data = dir.join("data.jsonl");
        let ds = keyword_corpus(&KeywordCorpusSpec {
            n_labels: 3,
            per_label: 40,
            ..KeywordCorpusSpec::default()
        });
        corpus::save_jsonl(&ds, &data).unwrap();
        let mut cfg = ExperimentConfig::new(data, dir.join("out"));
        cfg.contrastive_grid = vec![4];
        cfg.vanilla_grid = vec![5];
        cfg.split.test_per_label = 10;
        cfg.profile = Profile::Desk;
        cfg.encoder = EncoderConfig {
            vocab_buckets: 512,
            embed_dim: 8,
            hidden_dim: 8,
            out_dim: 8,
            ..EncoderConfig::default()
        };
        cfg.text.vocab_buckets = 512;
        cfg
    }

    #[test]
    fn point_ordering_pairs_vanilla_before_contrastive() {
        let mut cfg = ExperimentConfig::new("d", "o");
        cfg.contrastive_grid = vec![16, 4, 8, 12];
        let names: Vec<String> = grid_points(&cfg).iter().map(|(o, n)| format!("{o}-{n}")).collect();
        assert_eq!(
            names,
            [
                "vanilla-50",
                "contrastive-4",
                "vanilla-100",
                "contrastive-8",
                "vanilla-150",
                "contrastive-12",
                "vanilla-200",
                "contrastive-16"
            ]
        );
    }

    #[test]
    fn grid_writes_two_rows_and_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        let summary = run_grid(&cfg).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert!(summary.rows.iter().all(|r| r.status == "ok"), "{:?}", summary.rows);
        let metrics = point_dir(&cfg.output_dir, Objective::Contrastive, 4).join("metrics.json");
        let first = fs::read(&metrics).unwrap();

        let again = run_grid(&cfg).unwrap();
        assert!(again.rows.iter().all(|r| r.status == "cached"));
        assert_eq!(again.rows[0].weighted_f1, summary.rows[0].weighted_f1);

        fs::remove_dir_all(cfg.output_dir.join("points")).unwrap();
        run_grid(&cfg).unwrap();
        assert_eq!(fs::read(&metrics).unwrap(), first);

        let csv = fs::read_to_string(cfg.output_dir.join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(cfg.output_dir.join("splits/split_log.json").is_file());
    }

    #[test]
    fn changed_config_invalidates_cache() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small_config(tmp.path());
        cfg.contrastive_grid = vec![];
        run_grid(&cfg).unwrap();
        cfg.seed = 9;
        let rows = run_grid(&cfg).unwrap().rows;
        assert_eq!(rows[0].status, "ok");
    }

    #[test]
    fn failing_point_is_recorded_and_others_proceed() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small_config(tmp.path());
        let single: Vec<_> = corpus::load_jsonl(&cfg.dataset)
            .unwrap()
            .iter()
            .filter(|e| e.label == "Notices")
            .cloned()
            .collect();
        corpus::save_jsonl(&Dataset::new(single).unwrap(), &cfg.dataset).unwrap();
        cfg.output_dir = tmp.path().join("single");
        let rows = run_grid(&cfg).unwrap().rows;
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("failed:"), "{}", rows[1].status);
        assert!(rows[1].weighted_f1.is_none());
    }

    #[test]
    fn stage_errors_map_to_exit_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small_config(tmp.path());
        cfg.train = Some(TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::desk()
        });
        assert_eq!(run_grid(&cfg).unwrap_err().kind(), FailureKind::Config);

        let mut cfg = small_config(tmp.path());
        cfg.dataset = tmp.path().join("missing.jsonl");
        assert_eq!(run_grid(&cfg).unwrap_err().kind(), FailureKind::Data);

        let e = PipelineError::Train(TrainError::NonFinite { step: 3, loss: f64::NAN });
        assert_eq!(e.kind() as i32, 3);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"dataset": "d.jsonl", "output_dir": "out"}"#).unwrap();
        assert_eq!(cfg.contrastive_grid, [4, 8, 12, 16]);
        assert_eq!(cfg.vanilla_grid, [50, 100, 150, 200]);
        assert_eq!(cfg.split.test_per_label, 25);
        assert_eq!(cfg.train_config(), TrainConfig::paper());
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.vanilla_grid.clear();
        bad.contrastive_grid.clear();
        assert!(bad.validate().is_err());
    }
}
