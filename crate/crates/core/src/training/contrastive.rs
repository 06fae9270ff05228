use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{check_finite, Adam, PairSet, TrainConfig, TrainError, TrainLog, WarmupLinear};
use crate::encoder::{EmbeddingVec, Encoder, EncoderGrad};
use crate::linalg::dot;
use crate::rng;
use crate::text::{tokenize, TextConfig, TokenSeq};

const MIN_NORM: f64 = 1e-12;

/// `(cos(a, b) - target)^2`. A near-zero embedding has cosine 0.
pub fn contrastive_loss(a: &EmbeddingVec, b: &EmbeddingVec, target: u8) -> f64 {
    contrastive_loss_grad(a.values(), b.values(), target).0
}

/// Loss plus its gradients with respect to both embeddings.
pub fn contrastive_loss_grad(a: &[f64], b: &[f64], target: u8) -> (f64, Vec<f64>, Vec<f64>) {
    let t = f64::from(target);
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < MIN_NORM || nb < MIN_NORM {
        log::debug!("degenerate embedding norm ({na:e}, {nb:e}); cosine taken as 0");
        return (t * t, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let cos = dot(a, b) / (na * nb);
    let coef = 2.0 * (cos - t);
    let ga = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| coef * (bi / (na * nb) - cos * ai / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| coef * (ai / (na * nb) - cos * bi / (nb * nb)))
        .collect();
    ((cos - t).powi(2), ga, gb)
}

/// Siamese finetuning: both members of a pair go through the same encoder
/// and the squared gap between their cosine similarity and the target is
/// minimized with Adam under a warmup-then-decay schedule.
pub fn train_contrastive(
    encoder: &Encoder,
    text_config: &TextConfig,
    pairs: &PairSet,
    config: &TrainConfig,
) -> Result<(Encoder, TrainLog), TrainError> {
    config.validate()?;
    if pairs.pairs.is_empty() {
        return Err(TrainError::Data("empty pair set".into()));
    }

    let mut cache: HashMap<&str, TokenSeq> = HashMap::new();
    for p in &pairs.pairs {
        for text in [&p.a.text, &p.b.text] {
            cache
                .entry(text.as_str())
                .or_insert_with(|| tokenize(text, text_config));
        }
    }
    let seqs: Vec<(&TokenSeq, &TokenSeq, u8)> = pairs
        .pairs
        .iter()
        .map(|p| (&cache[p.a.text.as_str()], &cache[p.b.text.as_str()], p.target))
        .collect();

    let mut enc = encoder.clone();
    let layout = *enc.layout();
    let steps_per_epoch = seqs.len().div_ceil(config.batch_size);
    let schedule = WarmupLinear::new(steps_per_epoch * config.epochs, config.warmup_ratio);
    let mut adam = Adam::new(layout.len);
    let mut rng = rng::seeded(config.seed);
    let mut grad = vec![0.0; layout.len];
    let mut log = TrainLog {
        total_steps: schedule.total_steps,
        warmup_steps: schedule.warmup_steps,
        batch_losses: Vec::with_capacity(schedule.total_steps),
    };
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut step = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let per_pair: Vec<(f64, EncoderGrad, EncoderGrad)> = batch
                .par_iter()
                .map(|&i| {
                    let (sa, sb, target) = seqs[i];
                    let fa = enc.forward(sa);
                    let fb = enc.forward(sb);
                    let (loss, ga, gb) = contrastive_loss_grad(&fa.output, &fb.output, target);
                    (loss, enc.backward(&fa, &ga), enc.backward(&fb, &gb))
                })
                .collect();

            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for (l, ga, gb) in &per_pair {
                loss += l;
                ga.add_scaled_to(&mut grad, &layout, scale);
                gb.add_scaled_to(&mut grad, &layout, scale);
            }
            let loss = loss * scale;
            check_finite(step, loss)?;
            log.batch_losses.push(loss);

            let lr = config.learning_rate * schedule.multiplier(step);
            adam.step(enc.params_mut(), &grad, lr);
            step += 1;
        }
    }
    Ok((enc, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Example};
    use crate::encoder::EncoderConfig;
    use crate::training::generate_pairs;

    fn v(x: &[f64]) -> EmbeddingVec {
        EmbeddingVec(x.to_vec())
    }

    #[test]
    fn loss_special_cases() {
        assert!(contrastive_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), 1) < 1e-15);
        assert_eq!(contrastive_loss(&v(&[1.0, 0.0]), &v(&[0.0, 3.0]), 0), 0.0);
        assert!((contrastive_loss(&v(&[1.0, -2.0]), &v(&[-1.0, 2.0]), 1) - 4.0).abs() < 1e-12);
        assert_eq!(contrastive_loss(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 1), 1.0);
        assert_eq!(contrastive_loss(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 0), 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let a = [0.3, -1.1, 0.7];
        let b = [1.2, 0.4, -0.5];
        for target in [0, 1] {
            let (_, ga, gb) = contrastive_loss_grad(&a, &b, target);
            let h = 1e-6;
            for i in 0..3 {
                let mut ap = a;
                ap[i] += h;
                let mut am = a;
                am[i] -= h;
                let num = (contrastive_loss_grad(&ap, &b, target).0
                    - contrastive_loss_grad(&am, &b, target).0)
                    / (2.0 * h);
                assert!((num - ga[i]).abs() < 1e-8);
                let mut bp = b;
                bp[i] += h;
                let mut bm = b;
                bm[i] -= h;
                let num = (contrastive_loss_grad(&a, &bp, target).0
                    - contrastive_loss_grad(&a, &bm, target).0)
                    / (2.0 * h);
                assert!((num - gb[i]).abs() < 1e-8);
            }
        }
    }

    fn keyword_corpus() -> Dataset {
        let mut v = Vec::new();
        let kw = [["alpha", "beta", "gamma"], ["delta", "epsilon", "zeta"]];
        for (c, words) in kw.iter().enumerate() {
            for i in 0..6 {
                let text = format!("{} {} the of", words[i % 3], words[(i + 1) % 3]);
                v.push(Example::new(text, format!("class{c}")));
            }
        }
        Dataset::new(v).unwrap()
    }

    fn small_encoder() -> (Encoder, TextConfig) {
        let cfg = EncoderConfig {
            vocab_buckets: 512,
            embed_dim: 16,
            hidden_dim: 16,
            out_dim: 16,
            init_scale: 0.1,
            seed: 1,
        };
        (
            Encoder::init(cfg).unwrap(),
            TextConfig {
                vocab_buckets: 512,
                ..TextConfig::default()
            },
        )
    }

    #[test]
    fn loss_decreases_on_separable_corpus() {
        let (enc, text) = small_encoder();
        let ds = keyword_corpus();
        let pairs = generate_pairs(&ds, 20, 3).unwrap();
        let (_, log) = train_contrastive(&enc, &text, &pairs, &TrainConfig::desk()).unwrap();
        let first = log.batch_losses[..5].iter().sum::<f64>() / 5.0;
        let n = log.batch_losses.len();
        let last = log.batch_losses[n - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < first, "first {first} last {last}");
        assert_eq!(log.total_steps, n);
    }

    #[test]
    fn vanishing_rate_leaves_parameters_unchanged() {
        let (enc, text) = small_encoder();
        let pairs = generate_pairs(&keyword_corpus(), 4, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-300,
            ..TrainConfig::desk()
        };
        let (out, _) = train_contrastive(&enc, &text, &pairs, &cfg).unwrap();
        assert_eq!(out.params(), enc.params());
    }

    #[test]
    fn deterministic() {
        let (enc, text) = small_encoder();
        let pairs = generate_pairs(&keyword_corpus(), 6, 3).unwrap();
        let a = train_contrastive(&enc, &text, &pairs, &TrainConfig::desk()).unwrap();
        let b = train_contrastive(&enc, &text, &pairs, &TrainConfig::desk()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
