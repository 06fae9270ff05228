//! LIME for text classifiers.
//!
//! Words are the interpretable features. Perturbations delete random subsets
//! of the instance's tokens, each perturbation is weighted by an exponential
//! kernel on its cosine distance to the original instance, and a sparse
//! weighted ridge regression of the target-class probability is fitted by
//! forward stepwise selection of at most `k` token positions.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::TextClassifier;
use crate::linalg::cholesky_solve;
use crate::rng;
use crate::text::mask_tokens;

pub const SURROGATE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    /// Maximum number of nonzero surrogate weights.
    pub k: usize,
    /// Perturbations per explanation, the instance itself included.
    pub n_samples: usize,
    pub kernel_width: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_samples: 25,
            kernel_width: 25.0,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.k == 0 {
            return Err(ExplainError::InvalidConfig("k must be >= 1".into()));
        }
        if self.n_samples < self.k + 1 {
            return Err(ExplainError::InvalidConfig(format!(
                "n_samples ({}) must be at least k + 1 ({})",
                self.n_samples,
                self.k + 1
            )));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return Err(ExplainError::InvalidConfig(format!(
                "kernel_width must be > 0, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExplainError {
    #[error("invalid LIME config: {0}")]
    InvalidConfig(String),
    #[error("text has no tokens to perturb")]
    EmptyText,
    #[error("label `{0}` is not in the model's inventory")]
    UnknownLabel(String),
    #[error("surrogate input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub mask: Vec<bool>,
    pub kept_fraction: f64,
}

/// The first perturbation is the unmodified instance. Each further one
/// removes `u` distinct positions, with `u` uniform on `1..=len`.
pub fn sample_perturbations(
    len: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Perturbation>, ExplainError> {
    if len == 0 {
        return Err(ExplainError::EmptyText);
    }
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(n_samples);
    out.push(Perturbation {
        mask: vec![true; len],
        kept_fraction: 1.0,
    });
    for _ in 1..n_samples {
        let removed = rng.gen_range(1..=len);
        let mut mask = vec![true; len];
        for pos in index::sample(&mut rng, len, removed) {
            mask[pos] = false;
        }
        out.push(Perturbation {
            mask,
            kept_fraction: (len - removed) as f64 / len as f64,
        });
    }
    Ok(out)
}

/// Cosine distance between a binary mask and the all-ones vector.
pub fn cosine_distance_to_full(mask: &[bool]) -> f64 {
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return 1.0;
    }
    1.0 - (kept as f64 / mask.len() as f64).sqrt()
}

/// `exp(-d^2 / width^2)` with `d` the cosine distance to the instance.
pub fn kernel_weight(mask: &[bool], kernel_width: f64) -> f64 {
    let d = cosine_distance_to_full(mask);
    (-(d * d) / (kernel_width * kernel_width)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    /// Token positions in selection order.
    pub selected: Vec<usize>,
    /// One coefficient per entry of `selected`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub weighted_sse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub weighted_sse: f64,
}

/// Weighted ridge regression of `responses` on the mask columns `columns`
/// with an unpenalized intercept, solved on weighted-centered data.
pub fn weighted_ridge(
    masks: &[Vec<bool>],
    responses: &[f64],
    weights: &[f64],
    columns: &[usize],
    ridge: f64,
) -> Option<RidgeSolution> {
    let p = columns.len();
    let total: f64 = weights.iter().sum();
    let x = |i: usize, j: usize| if masks[i][columns[j]] { 1.0 } else { 0.0 };
    let y_mean = weights.iter().zip(responses).map(|(w, y)| w * y).sum::<f64>() / total;
    let x_mean: Vec<f64> = (0..p)
        .map(|j| (0..masks.len()).map(|i| weights[i] * x(i, j)).sum::<f64>() / total)
        .collect();

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (i, (&w, &y)) in weights.iter().zip(responses).enumerate() {
        if w == 0.0 {
            continue;
        }
        let xc: Vec<f64> = (0..p).map(|j| x(i, j) - x_mean[j]).collect();
        for a in 0..p {
            rhs[a] += w * xc[a] * (y - y_mean);
            for b in 0..p {
                gram[a * p + b] += w * xc[a] * xc[b];
            }
        }
    }
    for a in 0..p {
        gram[a * p + a] += ridge;
    }
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        cholesky_solve(&gram, &rhs, p)?
    };
    let intercept = y_mean - x_mean.iter().zip(&coefficients).map(|(m, c)| m * c).sum::<f64>();
    let weighted_sse = (0..masks.len())
        .map(|i| {
            let pred = intercept + (0..p).map(|j| coefficients[j] * x(i, j)).sum::<f64>();
            weights[i] * (responses[i] - pred).powi(2)
        })
        .sum();
    Some(RidgeSolution {
        coefficients,
        intercept,
        weighted_sse,
    })
}

/// Forward stepwise selection of up to `k` positions. Each step adds the
/// position whose inclusion gives the lowest weighted squared error after a
/// weighted ridge refit; selection stops early once no position improves
/// the fit. Positions that do not vary across weighted samples are never
/// candidates.
pub fn fit_surrogate(
    masks: &[Vec<bool>],
    responses: &[f64],
    weights: &[f64],
    k: usize,
) -> Result<SurrogateFit, ExplainError> {
    let n = masks.len();
    if n < 2 || responses.len() != n || weights.len() != n {
        return Err(ExplainError::BadInput(format!(
            "need >= 2 samples with matching lengths (masks {n}, responses {}, weights {})",
            responses.len(),
            weights.len()
        )));
    }
    let width = masks[0].len();
    if masks.iter().any(|m| m.len() != width) {
        return Err(ExplainError::BadInput("masks differ in length".into()));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) || weights.iter().all(|&w| w == 0.0) {
        return Err(ExplainError::BadInput(
            "weights must be non-negative and not all zero".into(),
        ));
    }

    let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    let candidates: Vec<usize> = (0..width)
        .filter(|&j| active.iter().any(|&i| masks[i][j] != masks[active[0]][j]))
        .collect();

    let mut selected: Vec<usize> = Vec::new();
    let mut best = weighted_ridge(masks, responses, weights, &[], SURROGATE_RIDGE)
        .expect("intercept-only fit always exists");
    while selected.len() < k {
        let mut step_best: Option<(usize, RidgeSolution)> = None;
        for &j in candidates.iter().filter(|j| !selected.contains(j)) {
            let mut cols = selected.clone();
            cols.push(j);
            let Some(sol) = weighted_ridge(masks, responses, weights, &cols, SURROGATE_RIDGE) else {
                continue;
            };
            if step_best.as_ref().is_none_or(|(_, b)| sol.weighted_sse < b.weighted_sse) {
                step_best = Some((j, sol));
            }
        }
        match step_best {
            Some((j, sol)) if sol.weighted_sse < best.weighted_sse => {
                selected.push(j);
                best = sol;
            }
            _ => break,
        }
    }

    Ok(SurrogateFit {
        selected,
        coefficients: best.coefficients,
        intercept: best.intercept,
        weighted_sse: best.weighted_sse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub label: String,
    /// Sorted by descending absolute weight; at most `k` entries.
    pub features: Vec<FeatureWeight>,
    pub intercept: f64,
    pub n_samples: usize,
}

impl Explanation {
    pub fn positive(&self) -> impl Iterator<Item = &FeatureWeight> {
        self.features.iter().filter(|f| f.weight > 0.0)
    }

    pub fn negative(&self) -> impl Iterator<Item = &FeatureWeight> {
        self.features.iter().filter(|f| f.weight < 0.0)
    }
}

/// Explains `model`'s probability of `target_label` for `text`.
pub fn explain<M: TextClassifier>(
    model: &M,
    text: &str,
    target_label: &str,
    config: &LimeConfig,
) -> Result<Explanation, ExplainError> {
    config.validate()?;
    let target = model
        .labels()
        .iter()
        .position(|l| l == target_label)
        .ok_or_else(|| ExplainError::UnknownLabel(target_label.to_string()))?;
    let seq = model.tokenize(text);
    let perturbations = sample_perturbations(seq.len(), config.n_samples, config.seed)?;

    let responses: Vec<f64> = perturbations
        .par_iter()
        .map(|p| {
            let masked = mask_tokens(&seq, &p.mask).expect("mask built for this sequence");
            model.predict_proba_tokens(&masked)[target]
        })
        .collect();
    let weights: Vec<f64> = perturbations
        .iter()
        .map(|p| kernel_weight(&p.mask, config.kernel_width))
        .collect();
    let masks: Vec<Vec<bool>> = perturbations.into_iter().map(|p| p.mask).collect();
    let fit = fit_surrogate(&masks, &responses, &weights, config.k)?;

    let mut features: Vec<FeatureWeight> = Vec::new();
    for (&pos, &coef) in fit.selected.iter().zip(&fit.coefficients) {
        let word = &seq.tokens[pos].surface;
        match features.iter_mut().find(|f| &f.word == word) {
            Some(f) => f.weight += coef,
            None => features.push(FeatureWeight {
                word: word.clone(),
                weight: coef,
            }),
        }
    }
    features.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then_with(|| a.word.cmp(&b.word))
    });

    Ok(Explanation {
        label: target_label.to_string(),
        features,
        intercept: fit.intercept,
        n_samples: masks.len(),
    })
}

/// One explanation as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub model_id: String,
    pub text_id: usize,
    pub label: String,
    pub features: Vec<(String, f64)>,
    pub intercept: f64,
    pub config: LimeConfig,
}

impl ExplanationRecord {
    pub fn new(model_id: &str, text_id: usize, explanation: &Explanation, config: &LimeConfig) -> Self {
        Self {
            model_id: model_id.to_string(),
            text_id,
            label: explanation.label.clone(),
            features: explanation
                .features
                .iter()
                .map(|f| (f.word.clone(), f.weight))
                .collect(),
            intercept: explanation.intercept,
            config: *config,
        }
    }

    pub fn to_explanation(&self) -> Explanation {
        Explanation {
            label: self.label.clone(),
            features: self
                .features
                .iter()
                .map(|(word, weight)| FeatureWeight {
                    word: word.clone(),
                    weight: *weight,
                })
                .collect(),
            intercept: self.intercept,
            n_samples: self.config.n_samples,
        }
    }
}
