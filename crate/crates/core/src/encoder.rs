//! Trainable sentence encoder.
//!
//! A hashed embedding bag is mean-pooled and passed through a dense tanh
//! layer and a dense linear projection:
//!
//! ```text
//! pooled = mean(E[slot] for each token)     (zero when empty)
//! hidden = tanh(pooled * W1 + b1)
//! output = hidden * W2 + b2
//! ```
//!
//! All parameters live in one flat `f64` buffer so the optimizer, the
//! gradient checks and the checkpoint code can treat them uniformly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError};
use crate::rng;
use crate::text::TokenSeq;

const MAGIC: &[u8; 8] = b"FSENCODR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_buckets: 1 << 15,
            embed_dim: 64,
            hidden_dim: 64,
            out_dim: 64,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("upstream gradient has length {got}, expected {expected}")]
    UpstreamLength { got: usize, expected: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("vocab_buckets", self.vocab_buckets),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("out_dim", self.out_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(EncoderError::InvalidConfig(format!("{name} must be >= 1")));
        }
        if !((2.0 * self.init_scale).is_finite() && self.init_scale >= 0.0) {
            return Err(EncoderError::InvalidConfig(format!(
                "init_scale must be non-negative with a finite range width, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub len: usize,
}

impl Layout {
    fn new(c: &EncoderConfig) -> Self {
        let w1 = c.vocab_buckets * c.embed_dim;
        let b1 = w1 + c.embed_dim * c.hidden_dim;
        let w2 = b1 + c.hidden_dim;
        let b2 = w2 + c.hidden_dim * c.out_dim;
        Self {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            out_dim: c.out_dim,
            w1,
            b1,
            w2,
            b2,
            len: b2 + c.out_dim,
        }
    }

    /// Offset of the first dense-layer parameter; everything before it is
    /// the embedding table.
    pub fn dense_start(&self) -> usize {
        self.w1
    }

    pub fn row(&self, slot: usize) -> std::ops::Range<usize> {
        slot * self.embed_dim..(slot + 1) * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVec(pub Vec<f64>);

impl EmbeddingVec {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub slots: Vec<usize>,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gradient with respect to the encoder parameters. The embedding part is
/// sparse: only rows of slots present in the input appear, sorted by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub rows: Vec<(usize, Vec<f64>)>,
    /// Gradient of every parameter from `Layout::dense_start` onwards.
    pub dense: Vec<f64>,
}

impl EncoderGrad {
    /// Adds `scale * self` into a flat buffer with the encoder's layout.
    pub fn add_scaled_to(&self, flat: &mut [f64], layout: &Layout, scale: f64) {
        for (slot, row) in &self.rows {
            for (dst, g) in flat[layout.row(*slot)].iter_mut().zip(row) {
                *dst += scale * g;
            }
        }
        for (dst, g) in flat[layout.dense_start()..].iter_mut().zip(&self.dense) {
            *dst += scale * g;
        }
    }

    pub fn to_dense(&self, layout: &Layout) -> Vec<f64> {
        let mut flat = vec![0.0; layout.len];
        self.add_scaled_to(&mut flat, layout, 1.0);
        flat
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderHeader {
    format: String,
    config: EncoderConfig,
}

impl Encoder {
    /// Parameters drawn uniformly from `[-init_scale, init_scale]`.
    pub fn init(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = rng::seeded(config.seed);
        let s = config.init_scale;
        let params = if s == 0.0 {
            vec![0.0; layout.len]
        } else {
            (0..layout.len).map(|_| rng.gen_range(-s..=s)).collect()
        };
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(EncoderError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, seq: &TokenSeq) -> Activations {
        let l = &self.layout;
        let p = &self.params;
        let slots: Vec<usize> = seq.slots().collect();

        let mut pooled = vec![0.0; l.embed_dim];
        if !slots.is_empty() {
            for &slot in &slots {
                for (acc, v) in pooled.iter_mut().zip(&p[l.row(slot)]) {
                    *acc += v;
                }
            }
            let n = slots.len() as f64;
            pooled.iter_mut().for_each(|v| *v /= n);
        }

        let mut hidden = p[l.b1..l.b1 + l.hidden_dim].to_vec();
        for (k, &x) in pooled.iter().enumerate() {
            let w = &p[l.w1 + k * l.hidden_dim..l.w1 + (k + 1) * l.hidden_dim];
            for (h, wi) in hidden.iter_mut().zip(w) {
                *h += x * wi;
            }
        }
        hidden.iter_mut().for_each(|h| *h = h.tanh());

        let mut output = p[l.b2..l.b2 + l.out_dim].to_vec();
        for (i, &h) in hidden.iter().enumerate() {
            let w = &p[l.w2 + i * l.out_dim..l.w2 + (i + 1) * l.out_dim];
            for (o, wj) in output.iter_mut().zip(w) {
                *o += h * wj;
            }
        }

        Activations {
            slots,
            pooled,
            hidden,
            output,
        }
    }

    pub fn embed(&self, seq: &TokenSeq) -> EmbeddingVec {
        EmbeddingVec(self.forward(seq).output)
    }

    /// Gradient of `upstream · output` given a cached forward pass.
    pub fn backward(&self, acts: &Activations, upstream: &[f64]) -> EncoderGrad {
        let l = &self.layout;
        let p = &self.params;
        let dense_len = l.len - l.dense_start();
        let mut dense = vec![0.0; dense_len];
        let off = |abs: usize| abs - l.dense_start();

        // output layer
        for (i, &h) in acts.hidden.iter().enumerate() {
            let base = off(l.w2) + i * l.out_dim;
            for (j, &g) in upstream.iter().enumerate() {
                dense[base + j] = h * g;
            }
        }
        dense[off(l.b2)..off(l.b2) + l.out_dim].copy_from_slice(upstream);

        // back through tanh
        let mut d_pre = vec![0.0; l.hidden_dim];
        for (i, d) in d_pre.iter_mut().enumerate() {
            let w = &p[l.w2 + i * l.out_dim..l.w2 + (i + 1) * l.out_dim];
            let dh: f64 = w.iter().zip(upstream).map(|(a, b)| a * b).sum();
            let h = acts.hidden[i];
            *d = dh * (1.0 - h * h);
        }

        for (k, &x) in acts.pooled.iter().enumerate() {
            let base = off(l.w1) + k * l.hidden_dim;
            for (i, &d) in d_pre.iter().enumerate() {
                dense[base + i] = x * d;
            }
        }
        dense[off(l.b1)..off(l.b1) + l.hidden_dim].copy_from_slice(&d_pre);

        let mut rows = Vec::new();
        if !acts.slots.is_empty() {
            let mut d_pooled = vec![0.0; l.embed_dim];
            for (k, dp) in d_pooled.iter_mut().enumerate() {
                let w = &p[l.w1 + k * l.hidden_dim..l.w1 + (k + 1) * l.hidden_dim];
                *dp = w.iter().zip(&d_pre).map(|(a, b)| a * b).sum();
            }
            let mut slots = acts.slots.clone();
            slots.sort_unstable();
            let n = acts.slots.len() as f64;
            for chunk in slots.chunk_by(|a, b| a == b) {
                let scale = chunk.len() as f64 / n;
                rows.push((chunk[0], d_pooled.iter().map(|g| g * scale).collect()));
            }
        }

        EncoderGrad { rows, dense }
    }

    /// Exact gradient of `upstream · embed(seq)` with respect to every
    /// parameter.
    pub fn grad_embed(&self, seq: &TokenSeq, upstream: &[f64]) -> Result<EncoderGrad, EncoderError> {
        if upstream.len() != self.config.out_dim {
            return Err(EncoderError::UpstreamLength {
                got: upstream.len(),
                expected: self.config.out_dim,
            });
        }
        Ok(self.backward(&self.forward(seq), upstream))
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<(), EncoderError> {
        let header = EncoderHeader {
            format: "fewshot-encoder".into(),
            config: self.config,
        };
        checkpoint::write(w, MAGIC, &header, &[&self.params])?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self, EncoderError> {
        let (header, mut arrays): (EncoderHeader, _) = checkpoint::read(r, MAGIC)?;
        if arrays.len() != 1 {
            return Err(CheckpointError::Inconsistent(format!(
                "expected 1 parameter array, found {}",
                arrays.len()
            ))
            .into());
        }
        Self::from_params(header.config, arrays.remove(0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let f = File::create(path).map_err(CheckpointError::from)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let f = File::open(path).map_err(CheckpointError::from)?;
        Self::read_from(BufReader::new(f))
    }
}
