use rayon::prelude::*;

use super::{TrainConfig, TrainError};
use crate::classify::{HeadKind, SoftmaxHead, TrainedModel};
use crate::corpus::Dataset;
use crate::encoder::Encoder;
use crate::linalg::softmax;
use crate::text::{tokenize, TextConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadFitOptions {
    /// L2 penalty on every head parameter, bias included.
    pub ridge: f64,
    /// Stop once the gradient's max-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HeadFitOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            tolerance: 1e-6,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadFitReport {
    /// Number of (embedding, label) rows the head was fitted on.
    pub training_set_size: usize,
    pub iterations: usize,
    pub grad_max_norm: f64,
    pub converged: bool,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct HeadFit {
    pub model: TrainedModel,
    pub report: HeadFitReport,
}

/// Mean cross-entropy plus `ridge/2 * ||params||^2`, and its gradient laid
/// out as `weights` followed by `bias`.
pub fn head_loss_and_grad(
    head: &SoftmaxHead,
    features: &[Vec<f64>],
    targets: &[usize],
    ridge: f64,
) -> (f64, Vec<f64>) {
    let c = head.n_classes;
    let n = features.len() as f64;
    let mut grad = vec![0.0; head.n_params()];
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(targets) {
        let mut p = softmax(&head.logits(x));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        p[y] -= 1.0;
        for (k, &xk) in x.iter().enumerate() {
            for (g, d) in grad[k * c..(k + 1) * c].iter_mut().zip(&p) {
                *g += xk * d;
            }
        }
        for (g, d) in grad[head.weights.len()..].iter_mut().zip(&p) {
            *g += d;
        }
    }
    let params = head.weights.iter().chain(&head.bias);
    let mut penalty = 0.0;
    for (g, w) in grad.iter_mut().zip(params) {
        *g = *g / n + ridge * w;
        penalty += w * w;
    }
    (loss / n + 0.5 * ridge * penalty, grad)
}

/// Full-batch gradient descent with the fixed step `1 / L`, where
/// `L = mean(||x||^2 + 1) / 2 + ridge` bounds the loss curvature.
///
/// The initial head is first shifted so every feature's weights (and the
/// bias) sum to zero across classes. The shift leaves its probabilities
/// unchanged and the optimum lies in that subspace, so every
/// initialization converges to the same weights.
pub fn fit_logistic_head(
    features: &[Vec<f64>],
    targets: &[usize],
    init: SoftmaxHead,
    opts: &HeadFitOptions,
) -> (SoftmaxHead, HeadFitReport) {
    let n = features.len().max(1) as f64;
    let mean_sq: f64 = features
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum::<f64>()
        / n;
    let step = 1.0 / (0.5 * mean_sq + opts.ridge);

    let mut head = init;
    center_classes(&mut head);
    let n_weights = head.weights.len();
    let mut iterations = 0;
    loop {
        let (loss, grad) = head_loss_and_grad(&head, features, targets, opts.ridge);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < opts.tolerance || iterations >= opts.max_iterations {
            let report = HeadFitReport {
                training_set_size: features.len(),
                iterations,
                grad_max_norm: gmax,
                converged: gmax < opts.tolerance,
                final_loss: loss,
            };
            return (head, report);
        }
        for (w, g) in head.weights.iter_mut().zip(&grad[..n_weights]) {
            *w -= step * g;
        }
        for (b, g) in head.bias.iter_mut().zip(&grad[n_weights..]) {
            *b -= step * g;
        }
        iterations += 1;
    }
}

fn center_classes(head: &mut SoftmaxHead) {
    let c = head.n_classes;
    for row in head.weights.chunks_mut(c).chain(std::iter::once(&mut head.bias[..])) {
        let mean = row.iter().sum::<f64>() / c as f64;
        row.iter_mut().for_each(|w| *w -= mean);
    }
}

/// Encodes every training example once with the frozen encoder and fits a
/// multinomial logistic head on the embeddings.
pub fn train_head(
    encoder: &Encoder,
    text_config: &TextConfig,
    train: &Dataset,
    config: &TrainConfig,
) -> Result<HeadFit, TrainError> {
    train_head_with(encoder, text_config, train, config, &HeadFitOptions::default())
}

pub(crate) fn train_head_with(
    encoder: &Encoder,
    text_config: &TextConfig,
    train: &Dataset,
    config: &TrainConfig,
    opts: &HeadFitOptions,
) -> Result<HeadFit, TrainError> {
    if train.is_empty() {
        return Err(TrainError::Data("cannot fit a head on an empty dataset".into()));
    }
    let features: Vec<Vec<f64>> = train
        .examples()
        .par_iter()
        .map(|ex| encoder.embed(&tokenize(&ex.text, text_config)).0)
        .collect();
    let targets: Vec<usize> = train
        .iter()
        .map(|ex| train.label_index(&ex.label).expect("label in inventory"))
        .collect();
    assert_eq!(
        features.len(),
        train.len(),
        "head training set must hold exactly one embedding per example"
    );

    let init = SoftmaxHead::zeros(encoder.out_dim(), train.labels().len());
    let (head, report) = fit_logistic_head(&features, &targets, init, opts);
    if !report.final_loss.is_finite() {
        return Err(TrainError::NonFinite {
            step: report.iterations,
            loss: report.final_loss,
        });
    }
    if !report.converged {
        log::info!(
            "head stopped after {} iterations with gradient max-norm {:e}",
            report.iterations,
            report.grad_max_norm
        );
    }
    let model = TrainedModel::new(
        encoder.clone(),
        *text_config,
        HeadKind::FrozenEmbedding,
        head,
        train.labels().to_vec(),
        config.clone(),
    )?;
    Ok(HeadFit { model, report })
}
