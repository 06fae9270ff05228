use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fewshot::classify::{self, TrainedModel};
use fewshot::compare::{self, FeatureTable};
use fewshot::corpus::{self, BalanceSpec, Dataset};
use fewshot::encoder::EncoderConfig;
use fewshot::eval;
use fewshot::experiment::{self, ExperimentConfig, Objective, PipelineError, SplitSpec};
use fewshot::explain::{self, ExplanationRecord, LimeConfig};
use fewshot::synth::{self, KeywordCorpusSpec};
use fewshot::text::TextConfig;
use fewshot::training::{Profile, TrainConfig};

#[derive(Parser)]
#[command(name = "fewshot", version, about = "Few-shot text classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the most frequent labels and bring each to a fixed size.
    Balance(BalanceArgs),
    /// Split a corpus into train, dev and test sets.
    Split(SplitArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a model on a labeled dataset.
    Eval(EvalArgs),
    /// Explain a model's predictions for one label with LIME.
    Explain(ExplainArgs),
    /// Compare two models' aggregated LIME features for one label.
    Compare(CompareArgs),
    /// Run both objectives over their sample-size grids.
    Grid(GridArgs),
    /// Write the bundled synthetic corpora.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    supplemental: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long, default_value_t = 800)]
    cap: usize,
    #[arg(long)]
    allow_replacement: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 25)]
    test_per_label: usize,
    #[arg(long, default_value_t = 0.2)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncoderArgs {
    #[arg(long, default_value_t = 1 << 15)]
    vocab_buckets: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    out_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
}

impl EncoderArgs {
    fn configs(&self) -> (EncoderConfig, TextConfig) {
        (
            EncoderConfig {
                vocab_buckets: self.vocab_buckets,
                embed_dim: self.embed_dim,
                hidden_dim: self.hidden_dim,
                out_dim: self.out_dim,
                init_scale: self.init_scale,
                seed: self.encoder_seed,
            },
            TextConfig {
                vocab_buckets: self.vocab_buckets,
                ..TextConfig::default()
            },
        )
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    objective: Objective,
    /// Training examples (JSON Lines).
    #[arg(long)]
    train: PathBuf,
    /// Draw this many examples per label from the training file first.
    #[arg(long)]
    samples_per_label: Option<usize>,
    #[arg(long, default_value = "paper")]
    profile: Profile,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Checkpoint path; the run log is written next to it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Texts to explain (JSON Lines); only examples with `--label` are used.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    label: String,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 25)]
    n_samples: usize,
    #[arg(long, default_value_t = 25.0)]
    kernel_width: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Explanation records of the first model (JSON Lines).
    #[arg(long)]
    a: PathBuf,
    /// Explanation records of the second model (JSON Lines).
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    label: String,
    #[arg(long, default_value_t = 15)]
    top_n: usize,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    labels: usize,
    #[arg(long, default_value_t = 60)]
    per_label: usize,
    #[arg(long)]
    output: PathBuf,
    /// Also write the long-tailed corpus and its supplemental pool here.
    #[arg(long)]
    skewed_dir: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Dataset> {
    corpus::load_jsonl(path)
        .map_err(PipelineError::from)
        .with_context(|| format!("loading {}", path.display()))
}

fn save(ds: &Dataset, path: &Path) -> Result<()> {
    corpus::save_jsonl(ds, path)
        .map_err(PipelineError::from)
        .with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(experiment::write_json(path, value)?)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".log.json");
    path.with_file_name(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })
        .map_err(Into::into)
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufWriter::new(file))
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::load(path)
        .map_err(PipelineError::from)
        .with_context(|| format!("loading model {}", path.display()))
}

#[derive(Serialize)]
struct BalanceLog<'a> {
    input: &'a Path,
    supplemental: Option<&'a PathBuf>,
    spec: &'a BalanceSpec,
    labels: &'a [corpus::LabelBalance],
    total: usize,
}

fn balance(a: BalanceArgs) -> Result<()> {
    let ds = load(&a.input)?;
    let supplemental = a.supplemental.as_deref().map(load).transpose()?;
    let spec = BalanceSpec {
        top_k_labels: a.top_k,
        cap: a.cap,
        allow_replacement: a.allow_replacement,
        seed: a.seed,
    };
    let balanced = corpus::balance(&ds, &spec, supplemental.as_ref()).map_err(PipelineError::from)?;
    save(&balanced.dataset, &a.output)?;
    json(
        &sidecar(&a.output),
        &BalanceLog {
            input: &a.input,
            supplemental: a.supplemental.as_ref(),
            spec: &spec,
            labels: &balanced.report,
            total: balanced.dataset.len(),
        },
    )?;
    log::info!("wrote {} examples to {}", balanced.dataset.len(), a.output.display());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let ds = load(&a.input)?;
    let spec = SplitSpec {
        test_per_label: a.test_per_label,
        dev_fraction: a.dev_fraction,
        seed: a.seed,
    };
    let splits = experiment::prepare_splits(&ds, None, None, &spec)?;
    experiment::save_splits(&splits, &a.out_dir)?;
    log::info!(
        "train {}, dev {}, test {} examples in {}",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRunLog<'a> {
    objective: Objective,
    train_file: &'a Path,
    samples_per_label: Option<usize>,
    few_shot_seed: Option<u64>,
    few_shot_shortfalls: Vec<corpus::Shortfall>,
    profile: Profile,
    train_config: &'a TrainConfig,
    encoder: EncoderConfig,
    text: TextConfig,
    summary: experiment::TrainSummary,
}

fn train(a: TrainArgs) -> Result<()> {
    let mut data = load(&a.train)?;
    let mut config = TrainConfig::for_profile(a.profile);
    if let Some(lr) = a.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let mut shortfalls = Vec::new();
    if let Some(n) = a.samples_per_label {
        let sample = corpus::sample_few_shot(&data, n, config.seed).map_err(PipelineError::from)?;
        shortfalls = sample.shortfalls;
        data = sample.dataset;
    }
    let (encoder, text) = a.encoder.configs();
    let (model, summary) = experiment::train_model(a.objective, &data, &encoder, &text, &config)?;
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&a.output).map_err(PipelineError::from)?;
    json(
        &sidecar(&a.output),
        &TrainRunLog {
            objective: a.objective,
            train_file: &a.train,
            samples_per_label: a.samples_per_label,
            few_shot_seed: a.samples_per_label.map(|_| config.seed),
            few_shot_shortfalls: shortfalls,
            profile: a.profile,
            train_config: &config,
            encoder,
            text,
            summary,
        },
    )?;
    log::info!("saved {} model to {}", a.objective, a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a Path,
    test: &'a Path,
    train_config: &'a TrainConfig,
    scores: &'a eval::Scores,
    confusion: &'a eval::ConfusionCounts,
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = load(&a.test)?;
    let counts = eval::evaluate(&model, &test).map_err(PipelineError::from)?;
    let scores = eval::scores(&counts).map_err(PipelineError::from)?;
    create_dir(&a.out_dir)?;
    eval::write_report_csv(&scores, create_file(&a.out_dir.join("report.csv"))?).map_err(PipelineError::from)?;
    let rows = classify::predict_dataset(&model, &test);
    classify::write_predictions_csv(&rows, create_file(&a.out_dir.join("predictions.csv"))?)
        .map_err(PipelineError::from)?;
    json(
        &a.out_dir.join("metrics.json"),
        &EvalOutput {
            model: &a.model,
            test: &a.test,
            train_config: &model.train_config,
            scores: &scores,
            confusion: &counts,
        },
    )?;
    println!(
        "accuracy {:.4}  micro-F1 {:.4}  macro-F1 {:.4}  weighted-F1 {:.4}",
        scores.accuracy, scores.micro_f1, scores.macro_f1, scores.weighted_f1
    );
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load(&a.input)?;
    let config = LimeConfig {
        k: a.k,
        n_samples: a.n_samples,
        kernel_width: a.kernel_width,
        seed: a.seed,
    };
    let model_id = a.model_id.clone().unwrap_or_else(|| {
        a.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    create_dir(&a.out_dir)?;
    let mut records = create_file(&a.out_dir.join("explanations.jsonl"))?;
    let mut explanations = Vec::new();
    let chosen = data
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == a.label)
        .take(a.limit.unwrap_or(usize::MAX));
    for (text_id, ex) in chosen {
        let per_text = LimeConfig {
            seed: fewshot::rng::derive_seed(a.seed, &text_id.to_string()),
            ..config
        };
        let e = explain::explain(&model, &ex.text, &a.label, &per_text).map_err(PipelineError::from)?;
        let record = ExplanationRecord::new(&model_id, text_id, &e, &per_text);
        serde_json::to_writer(&mut records, &record)?;
        records.write_all(b"\n")?;
        explanations.push(e);
    }
    records.flush()?;
    let table = compare::aggregate_features(&model_id, &a.label, &explanations).map_err(PipelineError::from)?;
    json(&a.out_dir.join("aggregate.json"), &table)?;
    log::info!(
        "explained {} `{}` texts, {} distinct words",
        explanations.len(),
        a.label,
        table.entries.len()
    );
    Ok(())
}

fn read_records(path: &Path, label: &str) -> Result<FeatureTable> {
    let file = fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut model_id = None;
    let mut explanations = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExplanationRecord = serde_json::from_str(&line).map_err(|e| {
            PipelineError::Corpus(corpus::CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        if record.label == label {
            model_id.get_or_insert_with(|| record.model_id.clone());
            explanations.push(record.to_explanation());
        }
    }
    let id = model_id.unwrap_or_else(|| path.display().to_string());
    Ok(compare::aggregate_features(&id, label, &explanations).map_err(PipelineError::from)?)
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let ta = read_records(&a.a, &a.label).with_context(|| format!("reading {}", a.a.display()))?;
    let tb = read_records(&a.b, &a.label).with_context(|| format!("reading {}", a.b.display()))?;
    let report = compare::compare_tables(&ta, &tb, a.top_n).map_err(PipelineError::from)?;
    create_dir(&a.out_dir)?;
    json(&a.out_dir.join("comparison.json"), &report)?;
    compare::write_report_csv(&report, create_file(&a.out_dir.join("comparison.csv"))?)
        .map_err(PipelineError::from)?;
    if a.svg {
        let charts = [
            ("common_positive", report.common_positive.iter().map(|c| (c.word.clone(), c.weight_a)).collect::<Vec<_>>()),
            ("common_negative", report.common_negative.iter().map(|c| (c.word.clone(), c.weight_a)).collect()),
            ("a_top", top_rows(&report.model_a)),
            ("b_top", top_rows(&report.model_b)),
        ];
        for (name, rows) in charts {
            let title = format!("{} {}", report.label, name.replace('_', " "));
            let path = a.out_dir.join(format!("{name}.svg"));
            fs::write(&path, compare::bar_chart_svg(&title, &rows))
                .map_err(|source| PipelineError::Io { path, source })?;
        }
    }
    println!(
        "{} common positive and {} common negative features for `{}`",
        report.common_positive.len(),
        report.common_negative.len(),
        report.label
    );
    Ok(())
}

fn top_rows(side: &compare::ModelFeatures) -> Vec<(String, f64)> {
    side.top_positive
        .iter()
        .chain(&side.top_negative)
        .map(|e| (e.word.clone(), e.aggregate_weight))
        .collect()
}

fn grid(a: GridArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(p) = a.profile {
        config.profile = p;
    }
    if let Some(dir) = a.output_dir {
        config.output_dir = dir;
    }
    let summary = experiment::run_grid(&config)?;
    for row in &summary.rows {
        match row.weighted_f1 {
            Some(f1) => println!(
                "{:<12} {:>4}/label  accuracy {:.4}  weighted-F1 {f1:.4}  ({})",
                row.objective.name(),
                row.samples_per_label,
                row.accuracy.unwrap_or_default(),
                row.status
            ),
            None => println!("{:<12} {:>4}/label  {}", row.objective.name(), row.samples_per_label, row.status),
        }
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    if !(1..=synth::LABEL_KEYWORDS.len()).contains(&a.labels) {
        return Err(PipelineError::Config(format!(
            "--labels must lie in 1..={}",
            synth::LABEL_KEYWORDS.len()
        ))
        .into());
    }
    let spec = KeywordCorpusSpec {
        n_labels: a.labels,
        per_label: a.per_label,
        seed: a.seed,
        ..KeywordCorpusSpec::default()
    };
    save(&synth::keyword_corpus(&spec), &a.output)?;
    json(&sidecar(&a.output), &spec)?;
    if let Some(dir) = a.skewed_dir {
        create_dir(&dir)?;
        let skewed = synth::skewed_corpus(a.seed);
        save(&skewed.main, &dir.join("skewed.jsonl"))?;
        save(&skewed.supplemental, &dir.join("supplemental.jsonl"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Balance(a) => balance(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Grid(a) => grid(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<PipelineError>())
        .map(|e| e.kind() as u8)
        .unwrap_or(2)
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !prev.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
