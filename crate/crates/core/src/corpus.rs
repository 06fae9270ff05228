//! Labeled text corpora: JSON-lines ingestion, seeded splits, few-shot
//! sampling and label balancing.
//!
//! Every operation is a pure function of its inputs and seed. Outputs that
//! are drawn per label are grouped in label-inventory order.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: field `{field}` is missing or empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("example {index}: `{field}` is empty")]
    InvalidExample { index: usize, field: &'static str },
    #[error("label `{label}` is {deficit} examples short of the cap")]
    Shortfall { label: String, deficit: usize },
    #[error("{requested} labels requested but only {available} present")]
    TooFewLabels { requested: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A single provision and its class name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Ordered examples plus the label inventory in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Dataset {
    examples: Vec<Example>,
    labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, rejecting examples with blank text or label.
    pub fn new(examples: Vec<Example>) -> Result<Self, CorpusError> {
        for (index, ex) in examples.iter().enumerate() {
            if ex.text.trim().is_empty() {
                return Err(CorpusError::InvalidExample {
                    index,
                    field: "text",
                });
            }
            if ex.label.trim().is_empty() {
                return Err(CorpusError::InvalidExample {
                    index,
                    field: "label",
                });
            }
        }
        Ok(Self::from_valid(examples))
    }

    // Caller guarantees every example already passed validation.
    fn from_valid(examples: Vec<Example>) -> Self {
        let mut seen = HashSet::new();
        let mut labels = Vec::new();
        for ex in &examples {
            if seen.insert(ex.label.as_str()) {
                labels.push(ex.label.clone());
            }
        }
        Self { examples, labels }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Example indices grouped by label, in inventory order.
    pub fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.labels.len()];
        let lookup: BTreeMap<&str, usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        for (i, ex) in self.examples.iter().enumerate() {
            groups[lookup[ex.label.as_str()]].push(i);
        }
        groups
    }

    /// Per-label example counts in inventory order.
    pub fn label_counts(&self) -> Vec<(String, usize)> {
        self.labels
            .iter()
            .cloned()
            .zip(self.indices_by_label().into_iter().map(|g| g.len()))
            .collect()
    }

    fn select(&self, indices: impl IntoIterator<Item = usize>) -> Dataset {
        Dataset::from_valid(
            indices
                .into_iter()
                .map(|i| self.examples[i].clone())
                .collect(),
        )
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[derive(Deserialize)]
struct RawLine {
    text: Option<String>,
    label: Option<String>,
}

/// Reads a JSON-lines file with string fields `text` and `label`. Blank
/// lines are skipped; reported line numbers are 1-based physical lines.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let text = raw
            .text
            .filter(|t| !t.trim().is_empty())
            .ok_or(CorpusError::EmptyField {
                line: line_no,
                field: "text",
            })?;
        let label = raw
            .label
            .filter(|l| !l.trim().is_empty())
            .ok_or(CorpusError::EmptyField {
                line: line_no,
                field: "label",
            })?;
        examples.push(Example { text, label });
    }
    Ok(Dataset::from_valid(examples))
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in dataset {
        let line = serde_json::to_string(ex).expect("examples always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// A label that could not supply the requested number of examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub label: String,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone)]
pub struct TestSplit {
    pub test: Dataset,
    pub rest: Dataset,
    pub shortfalls: Vec<Shortfall>,
}

/// Draws `per_label` examples of every label (or all of them, when fewer
/// exist) into a held-out test set. `rest` keeps the input order.
pub fn split_test(dataset: &Dataset, per_label: usize, seed: u64) -> TestSplit {
    let mut rng = rng::seeded(seed);
    let mut chosen = Vec::new();
    let mut shortfalls = Vec::new();
    for (label, mut group) in dataset.labels.iter().zip(dataset.indices_by_label()) {
        if group.len() < per_label {
            log::warn!(
                "label `{label}` has {} examples, fewer than the {per_label} requested for test",
                group.len()
            );
            shortfalls.push(Shortfall {
                label: label.clone(),
                requested: per_label,
                available: group.len(),
            });
        }
        group.shuffle(&mut rng);
        group.truncate(per_label);
        chosen.extend(group);
    }
    let taken: HashSet<usize> = chosen.iter().copied().collect();
    TestSplit {
        test: dataset.select(chosen),
        rest: dataset.select((0..dataset.len()).filter(|i| !taken.contains(i))),
        shortfalls,
    }
}

#[derive(Debug, Clone)]
pub struct TrainDevSplit {
    pub train: Dataset,
    pub dev: Dataset,
}

/// Number of a label's `n` examples that go to dev.
///
/// `round(fraction * n)`, at least one when `n >= 2`, and never the whole
/// label so train keeps at least one example of it.
pub fn dev_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Stratified train/dev split. Both sides keep the input order.
pub fn split_train_dev(
    dataset: &Dataset,
    dev_fraction: f64,
    seed: u64,
) -> Result<TrainDevSplit, CorpusError> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::InvalidArgument(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut dev_set = HashSet::new();
    for mut group in dataset.indices_by_label() {
        let d = dev_count(group.len(), dev_fraction);
        group.shuffle(&mut rng);
        dev_set.extend(group.into_iter().take(d));
    }
    let (dev, train): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|i| dev_set.contains(i));
    Ok(TrainDevSplit {
        train: dataset.select(train),
        dev: dataset.select(dev),
    })
}

#[derive(Debug, Clone)]
pub struct FewShotSample {
    pub dataset: Dataset,
    pub shortfalls: Vec<Shortfall>,
}

/// Draws up to `n_per_label` examples of each label without replacement.
pub fn sample_few_shot(
    dataset: &Dataset,
    n_per_label: usize,
    seed: u64,
) -> Result<FewShotSample, CorpusError> {
    if n_per_label == 0 {
        return Err(CorpusError::InvalidArgument(
            "few-shot sample size must be at least 1".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut chosen = Vec::new();
    let mut shortfalls = Vec::new();
    for (label, mut group) in dataset.labels.iter().zip(dataset.indices_by_label()) {
        if group.len() < n_per_label {
            log::info!(
                "label `{label}` capped at {} of {n_per_label} few-shot samples",
                group.len()
            );
            shortfalls.push(Shortfall {
                label: label.clone(),
                requested: n_per_label,
                available: group.len(),
            });
        }
        group.shuffle(&mut rng);
        group.truncate(n_per_label);
        chosen.extend(group);
    }
    Ok(FewShotSample {
        dataset: dataset.select(chosen),
        shortfalls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSpec {
    pub top_k_labels: usize,
    pub cap: usize,
    #[serde(default)]
    pub allow_replacement: bool,
    pub seed: u64,
}

/// What happened to one label during balancing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBalance {
    pub label: String,
    pub original: usize,
    pub duplicates_removed: usize,
    pub downsampled: usize,
    pub supplemented: usize,
    pub resampled: usize,
}

#[derive(Debug, Clone)]
pub struct Balanced {
    pub dataset: Dataset,
    pub report: Vec<LabelBalance>,
}

/// Labels ordered by descending frequency, ties broken lexicographically.
pub fn labels_by_frequency(dataset: &Dataset) -> Vec<(String, usize)> {
    let mut counts = dataset.label_counts();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts
}

/// Keeps the `top_k_labels` most frequent labels and brings each to exactly
/// `cap` examples: exact-text duplicates are dropped, large labels are
/// downsampled, small ones are topped up from `supplemental` and, when
/// allowed, by resampling with replacement.
///
/// Output labels follow frequency rank.
pub fn balance(
    dataset: &Dataset,
    spec: &BalanceSpec,
    supplemental: Option<&Dataset>,
) -> Result<Balanced, CorpusError> {
    if spec.top_k_labels == 0 || spec.cap == 0 {
        return Err(CorpusError::InvalidArgument(
            "top_k_labels and cap must be at least 1".into(),
        ));
    }
    let ranked = labels_by_frequency(dataset);
    if ranked.len() < spec.top_k_labels {
        return Err(CorpusError::TooFewLabels {
            requested: spec.top_k_labels,
            available: ranked.len(),
        });
    }
    let groups = dataset.indices_by_label();
    let mut rng = rng::seeded(spec.seed);
    let mut examples = Vec::with_capacity(spec.top_k_labels * spec.cap);
    let mut report = Vec::with_capacity(spec.top_k_labels);

    for (label, original) in ranked.into_iter().take(spec.top_k_labels) {
        let group = &groups[dataset.label_index(&label).expect("ranked labels exist")];
        let mut texts = HashSet::new();
        let mut pool: Vec<&Example> = group
            .iter()
            .map(|&i| &dataset.examples[i])
            .filter(|ex| texts.insert(ex.text.as_str()))
            .collect();
        let mut entry = LabelBalance {
            label: label.clone(),
            original,
            duplicates_removed: original - pool.len(),
            downsampled: 0,
            supplemented: 0,
            resampled: 0,
        };

        if pool.len() > spec.cap {
            entry.downsampled = pool.len() - spec.cap;
            pool.shuffle(&mut rng);
            pool.truncate(spec.cap);
        } else if pool.len() < spec.cap {
            let mut fresh: Vec<&Example> = supplemental
                .map(|s| s.examples.as_slice())
                .unwrap_or_default()
                .iter()
                .filter(|ex| ex.label == label && texts.insert(ex.text.as_str()))
                .collect();
            let deficit = spec.cap - pool.len();
            if fresh.len() > deficit {
                fresh.shuffle(&mut rng);
                fresh.truncate(deficit);
            }
            entry.supplemented = fresh.len();
            pool.extend(fresh);
        }

        let mut label_examples: Vec<Example> = pool.into_iter().cloned().collect();
        let deficit = spec.cap - label_examples.len();
        if deficit > 0 {
            if !spec.allow_replacement || label_examples.is_empty() {
                return Err(CorpusError::Shortfall { label, deficit });
            }
            let n = label_examples.len();
            for _ in 0..deficit {
                let pick = label_examples[rng.gen_range(0..n)].clone();
                label_examples.push(pick);
            }
            entry.resampled = deficit;
        }
        examples.extend(label_examples);
        report.push(entry);
    }

    Ok(Balanced {
        dataset: Dataset::from_valid(examples),
        report,
    })
}
