use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{check_finite, Adam, TrainConfig, TrainError, TrainLog, WarmupLinear};
use crate::classify::{HeadKind, SoftmaxHead, TrainedModel};
use crate::corpus::Dataset;
use crate::encoder::{Encoder, EncoderGrad};
use crate::linalg::softmax;
use crate::rng;
use crate::text::{tokenize, TextConfig, TokenSeq};

/// Gradient of the mean cross-entropy over a batch.
#[derive(Debug, Clone)]
pub struct VanillaGrad {
    /// Flat, in the encoder's parameter layout.
    pub encoder: Vec<f64>,
    /// Head weights followed by head bias.
    pub head: Vec<f64>,
}

struct ExampleGrad {
    loss: f64,
    encoder: EncoderGrad,
    head: Vec<f64>,
}

fn example_grad(enc: &Encoder, head: &SoftmaxHead, seq: &TokenSeq, target: usize) -> ExampleGrad {
    let acts = enc.forward(seq);
    let mut p = softmax(&head.logits(&acts.output));
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;

    let c = head.n_classes;
    let mut head_grad = vec![0.0; head.n_params()];
    let mut upstream = vec![0.0; head.in_dim];
    for (k, &x) in acts.output.iter().enumerate() {
        let row = &head.weights[k * c..(k + 1) * c];
        for cls in 0..c {
            head_grad[k * c + cls] = x * p[cls];
            upstream[k] += row[cls] * p[cls];
        }
    }
    head_grad[head.weights.len()..].copy_from_slice(&p);
    ExampleGrad {
        loss,
        encoder: enc.backward(&acts, &upstream),
        head: head_grad,
    }
}

fn batch_grad(
    enc: &Encoder,
    head: &SoftmaxHead,
    batch: &[(&TokenSeq, usize)],
    enc_grad: &mut [f64],
    head_grad: &mut [f64],
) -> f64 {
    let per_example: Vec<ExampleGrad> = batch
        .par_iter()
        .map(|(seq, y)| example_grad(enc, head, seq, *y))
        .collect();
    enc_grad.iter_mut().for_each(|g| *g = 0.0);
    head_grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for eg in &per_example {
        loss += eg.loss;
        eg.encoder.add_scaled_to(enc_grad, enc.layout(), scale);
        for (dst, g) in head_grad.iter_mut().zip(&eg.head) {
            *dst += scale * g;
        }
    }
    loss * scale
}

/// Output layer before training: weights uniform in `±1/sqrt(in_dim)`,
/// zero bias.
pub(crate) fn initial_head(in_dim: usize, n_classes: usize, seed: u64) -> SoftmaxHead {
    let mut head = SoftmaxHead::zeros(in_dim, n_classes);
    let bound = 1.0 / (in_dim as f64).sqrt();
    let mut rng = rng::seeded(rng::derive_seed(seed, "vanilla-head"));
    head.weights
        .iter_mut()
        .for_each(|w| *w = rng.gen_range(-bound..bound));
    head
}

/// Mean cross-entropy of `softmax(head(encoder(x)))` over a batch, with the
/// gradient of every parameter.
pub fn vanilla_loss_and_grad(
    encoder: &Encoder,
    head: &SoftmaxHead,
    batch: &[(&TokenSeq, usize)],
) -> (f64, VanillaGrad) {
    let mut enc_grad = vec![0.0; encoder.layout().len];
    let mut head_grad = vec![0.0; head.n_params()];
    let loss = batch_grad(encoder, head, batch, &mut enc_grad, &mut head_grad);
    (
        loss,
        VanillaGrad {
            encoder: enc_grad,
            head: head_grad,
        },
    )
}

/// Attaches a softmax output layer to the encoder and trains everything end
/// to end on cross-entropy.
pub fn train_vanilla(
    encoder: &Encoder,
    text_config: &TextConfig,
    train: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainLog), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Data("cannot train on an empty dataset".into()));
    }
    let seqs: Vec<TokenSeq> = train
        .iter()
        .map(|ex| tokenize(&ex.text, text_config))
        .collect();
    let targets: Vec<usize> = train
        .iter()
        .map(|ex| train.label_index(&ex.label).expect("label in inventory"))
        .collect();

    let mut enc = encoder.clone();
    let n_classes = train.labels().len();
    let mut head = initial_head(enc.out_dim(), n_classes, config.seed);

    let steps_per_epoch = seqs.len().div_ceil(config.batch_size);
    let schedule = WarmupLinear::new(steps_per_epoch * config.epochs, config.warmup_ratio);
    let mut enc_adam = Adam::new(enc.layout().len);
    let mut head_adam = Adam::new(head.n_params());
    let mut enc_grad = vec![0.0; enc.layout().len];
    let mut head_grad = vec![0.0; head.n_params()];
    let mut head_params = vec![0.0; head.n_params()];
    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut log = TrainLog {
        total_steps: schedule.total_steps,
        warmup_steps: schedule.warmup_steps,
        batch_losses: Vec::with_capacity(schedule.total_steps),
    };
    let mut step = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&TokenSeq, usize)> =
                chunk.iter().map(|&i| (&seqs[i], targets[i])).collect();
            let loss = batch_grad(&enc, &head, &batch, &mut enc_grad, &mut head_grad);
            check_finite(step, loss)?;
            log.batch_losses.push(loss);

            let lr = config.learning_rate * schedule.multiplier(step);
            enc_adam.step(enc.params_mut(), &enc_grad, lr);
            let nw = head.weights.len();
            head_params[..nw].copy_from_slice(&head.weights);
            head_params[nw..].copy_from_slice(&head.bias);
            head_adam.step(&mut head_params, &head_grad, lr);
            head.weights.copy_from_slice(&head_params[..nw]);
            head.bias.copy_from_slice(&head_params[nw..]);
            step += 1;
        }
    }

    let model = TrainedModel::new(
        enc,
        *text_config,
        HeadKind::EndToEnd,
        head,
        train.labels().to_vec(),
        config.clone(),
    )?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::TextClassifier;
    use crate::corpus::Example;
    use crate::encoder::EncoderConfig;

    fn corpus() -> Dataset {
        let kw = [
            ["alpha", "beta", "gamma", "delta"],
            ["red", "green", "blue", "white"],
            ["one", "two", "three", "four"],
        ];
        let mut v = Vec::new();
        for (c, words) in kw.iter().enumerate() {
            for i in 0..8 {
                let text = format!("{} the {} of a", words[i % 4], words[(i + 2) % 4]);
                v.push(Example::new(text, format!("c{c}")));
            }
        }
        Dataset::new(v).unwrap()
    }

    fn setup() -> (Encoder, TextConfig) {
        let cfg = EncoderConfig {
            vocab_buckets: 1024,
            embed_dim: 16,
            hidden_dim: 16,
            out_dim: 16,
            init_scale: 0.1,
            seed: 3,
        };
        (
            Encoder::init(cfg).unwrap(),
            TextConfig {
                vocab_buckets: 1024,
                ..TextConfig::default()
            },
        )
    }

    #[test]
    fn separable_corpus_reaches_high_training_accuracy() {
        let (enc, text) = setup();
        let ds = corpus();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::desk()
        };
        let (model, _) = train_vanilla(&enc, &text, &ds, &cfg).unwrap();
        let correct = ds.iter().filter(|ex| model.predict(&ex.text) == ex.label).count();
        assert!(correct as f64 / ds.len() as f64 >= 0.95, "{correct}/{}", ds.len());
        assert_eq!(model.head_kind, HeadKind::EndToEnd);
    }

    #[test]
    fn vanishing_rate_keeps_initial_predictions() {
        let (enc, text) = setup();
        let ds = corpus();
        let tiny = TrainConfig {
            learning_rate: 1e-300,
            ..TrainConfig::desk()
        };
        let (trained, _) = train_vanilla(&enc, &text, &ds, &tiny).unwrap();
        assert_eq!(trained.encoder.params(), enc.params());
        let initial = TrainedModel::new(
            enc.clone(),
            text,
            HeadKind::EndToEnd,
            initial_head(16, 3, tiny.seed),
            ds.labels().to_vec(),
            tiny.clone(),
        )
        .unwrap();
        for ex in &ds {
            assert_eq!(trained.predict_proba(&ex.text), initial.predict_proba(&ex.text));
        }
    }

    #[test]
    fn deterministic() {
        let (enc, text) = setup();
        let ds = corpus();
        let a = train_vanilla(&enc, &text, &ds, &TrainConfig::desk()).unwrap();
        let b = train_vanilla(&enc, &text, &ds, &TrainConfig::desk()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
