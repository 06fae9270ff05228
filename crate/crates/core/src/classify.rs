//! Inference for both model kinds: `label = head(encoder(text))`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError};
use crate::corpus::Dataset;
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::linalg::{argmax, softmax};
use crate::text::{tokenize, TextConfig, TokenSeq};
use crate::training::TrainConfig;

const MAGIC: &[u8; 8] = b"FSMODEL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Logistic head fitted on frozen encoder outputs.
    FrozenEmbedding,
    /// Softmax layer trained jointly with the encoder.
    EndToEnd,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::FrozenEmbedding => "frozen-embedding",
            HeadKind::EndToEnd => "end-to-end",
        })
    }
}

/// Affine map followed by softmax. `weights` is row-major
/// `in_dim x n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    pub in_dim: usize,
    pub n_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxHead {
    pub fn zeros(in_dim: usize, n_classes: usize) -> Self {
        Self {
            in_dim,
            n_classes,
            weights: vec![0.0; in_dim * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.weights[k * self.n_classes..(k + 1) * self.n_classes];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += xk * w;
            }
        }
        z
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Anything that maps token sequences to a distribution over an ordered
/// label inventory. LIME and the evaluation harness work against this.
pub trait TextClassifier: Sync {
    fn labels(&self) -> &[String];

    fn tokenize(&self, text: &str) -> TokenSeq;

    fn predict_proba_tokens(&self, seq: &TokenSeq) -> Vec<f64>;

    fn predict_proba(&self, text: &str) -> Vec<f64> {
        self.predict_proba_tokens(&self.tokenize(text))
    }

    fn predict_index(&self, text: &str) -> usize {
        argmax(&self.predict_proba(text))
    }

    fn predict(&self, text: &str) -> &str {
        &self.labels()[self.predict_index(text)]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("failed to write predictions: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: Encoder,
    pub text_config: TextConfig,
    pub head_kind: HeadKind,
    pub head: SoftmaxHead,
    pub labels: Vec<String>,
    pub train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    head_kind: HeadKind,
    labels: Vec<String>,
    text_config: TextConfig,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    head_in_dim: usize,
}

impl TrainedModel {
    pub fn new(
        encoder: Encoder,
        text_config: TextConfig,
        head_kind: HeadKind,
        head: SoftmaxHead,
        labels: Vec<String>,
        train_config: TrainConfig,
    ) -> Result<Self, ModelError> {
        if head.n_classes != labels.len() {
            return Err(ModelError::Inconsistent(format!(
                "head has {} outputs for {} labels",
                head.n_classes,
                labels.len()
            )));
        }
        if head.in_dim != encoder.out_dim()
            || head.weights.len() != head.in_dim * head.n_classes
            || head.bias.len() != head.n_classes
        {
            return Err(ModelError::Inconsistent(
                "head shape does not match the encoder output".into(),
            ));
        }
        if text_config.vocab_buckets != encoder.config().vocab_buckets {
            return Err(ModelError::Inconsistent(format!(
                "tokenizer has {} buckets but the encoder has {}",
                text_config.vocab_buckets,
                encoder.config().vocab_buckets
            )));
        }
        Ok(Self {
            encoder,
            text_config,
            head_kind,
            head,
            labels,
            train_config,
        })
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<(), ModelError> {
        let header = ModelHeader {
            format: "fewshot-model".into(),
            head_kind: self.head_kind,
            labels: self.labels.clone(),
            text_config: self.text_config,
            encoder_config: *self.encoder.config(),
            train_config: self.train_config.clone(),
            head_in_dim: self.head.in_dim,
        };
        checkpoint::write(
            w,
            MAGIC,
            &header,
            &[self.encoder.params(), &self.head.weights, &self.head.bias],
        )?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self, ModelError> {
        let (h, arrays): (ModelHeader, Vec<Vec<f64>>) = checkpoint::read(r, MAGIC)?;
        let [params, weights, bias]: [Vec<f64>; 3] = arrays.try_into().map_err(|a: Vec<_>| {
            CheckpointError::Inconsistent(format!("expected 3 arrays, found {}", a.len()))
        })?;
        let encoder = Encoder::from_params(h.encoder_config, params)?;
        let head = SoftmaxHead {
            in_dim: h.head_in_dim,
            n_classes: h.labels.len(),
            weights,
            bias,
        };
        Self::new(encoder, h.text_config, h.head_kind, head, h.labels, h.train_config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let f = File::create(path).map_err(CheckpointError::from)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let f = File::open(path).map_err(CheckpointError::from)?;
        Self::read_from(BufReader::new(f))
    }
}

impl TextClassifier for TrainedModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text, &self.text_config)
    }

    fn predict_proba_tokens(&self, seq: &TokenSeq) -> Vec<f64> {
        self.head.proba(self.encoder.embed(seq).values())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub text_id: usize,
    pub gold_label: String,
    pub predicted_label: String,
    pub max_probability: f64,
}

/// Predicts every example; `text_id` is the example's position in the
/// dataset.
pub fn predict_dataset<M: TextClassifier>(model: &M, data: &Dataset) -> Vec<PredictionRow> {
    data.examples()
        .par_iter()
        .enumerate()
        .map(|(text_id, ex)| {
            let proba = model.predict_proba(&ex.text);
            let best = argmax(&proba);
            PredictionRow {
                text_id,
                gold_label: ex.label.clone(),
                predicted_label: model.labels()[best].clone(),
                max_probability: proba[best],
            }
        })
        .collect()
}

/// CSV with columns `text_id,gold_label,predicted_label,max_probability`.
pub fn write_predictions_csv<W: std::io::Write>(
    rows: &[PredictionRow],
    w: W,
) -> Result<(), ModelError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn model(seed: u64, n_classes: usize) -> TrainedModel {
        let enc = Encoder::init(EncoderConfig {
            vocab_buckets: 64,
            embed_dim: 6,
            hidden_dim: 5,
            out_dim: 4,
            init_scale: 0.8,
            seed,
        })
        .unwrap();
        let mut rng = crate::rng::seeded(seed ^ 0xabc);
        let mut head = SoftmaxHead::zeros(4, n_classes);
        head.weights.iter_mut().for_each(|w| *w = rng.gen_range(-3.0..3.0));
        head.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        TrainedModel::new(
            enc,
            TextConfig {
                vocab_buckets: 64,
                ..TextConfig::default()
            },
            HeadKind::EndToEnd,
            head,
            (0..n_classes).map(|i| format!("L{i}")).collect(),
            TrainConfig::desk(),
        )
        .unwrap()
    }

    #[test]
    fn zero_head_is_uniform_and_picks_first_label() {
        let mut m = model(1, 5);
        m.head = SoftmaxHead::zeros(4, 5);
        let p = m.predict_proba("any text at all");
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        assert_eq!(m.predict("any text at all"), "L0");
    }

    #[test]
    fn argmax_on_fixed_posterior() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn empty_text_is_valid() {
        let m = model(2, 3);
        let p = m.predict_proba("");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = model(1, 3);
        let err = TrainedModel::new(
            m.encoder.clone(),
            m.text_config,
            HeadKind::EndToEnd,
            SoftmaxHead::zeros(4, 2),
            m.labels.clone(),
            TrainConfig::desk(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = model(7, 3);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(TrainedModel::read_from(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn predictions_csv_layout() {
        let m = model(3, 2);
        let ds = Dataset::new(vec![Example::new("alpha beta", "L1"), Example::new("gamma", "L0")]).unwrap();
        let rows = predict_dataset(&m, &ds);
        let mut buf = Vec::new();
        write_predictions_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("text_id,gold_label,predicted_label,max_probability"));
        assert!(lines.next().unwrap().starts_with("0,L1,"));
        assert!(lines.next().unwrap().starts_with("1,L0,"));
    }

    #[test]
    fn predict_agrees_with_proba_on_many_inputs() {
        let m = model(4, 6);
        let mut rng = crate::rng::seeded(99);
        for _ in 0..1000 {
            let n = rng.gen_range(0..8);
            let text: Vec<String> = (0..n).map(|_| format!("w{}", rng.gen_range(0..200))).collect();
            let text = text.join(" ");
            let p = m.predict_proba(&text);
            let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = p.iter().position(|&v| v == best).unwrap();
            assert_eq!(m.predict(&text), m.labels[first]);
        }
    }

    proptest! {
        #[test]
        fn proba_is_a_distribution(seed: u64, text in "[a-z ]{0,40}") {
            let m = model(seed % 16, 4);
            let p = m.predict_proba(&text);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(p.clone(), m.predict_proba(&text));
            prop_assert_eq!(m.predict_index(&text), argmax(&p));
        }
    }
}
