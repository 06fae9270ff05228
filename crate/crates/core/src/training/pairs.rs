use rand::Rng as _;

use super::TrainError;
use crate::corpus::{Dataset, Example};
use crate::rng;

/// Two examples and whether they share a class (1) or not (0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub a: Example,
    pub b: Example,
    pub target: u8,
}

impl Pair {
    /// `None` when the target contradicts the labels.
    pub fn new(a: Example, b: Example, target: u8) -> Option<Self> {
        let consistent = match target {
            1 => a.label == b.label,
            0 => a.label != b.label,
            _ => false,
        };
        consistent.then_some(Self { a, b, target })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub pairs_per_class: usize,
    pub class_count: usize,
}

/// For every class, `r` positive pairs drawn within the class and `r`
/// negative pairs whose second member comes from any other class. A pair
/// repeats the same example only when its class has a single example.
///
/// Pairs are grouped per class in label-inventory order, positives first.
pub fn generate_pairs(train: &Dataset, r: usize, seed: u64) -> Result<PairSet, TrainError> {
    if train.labels().len() < 2 {
        return Err(TrainError::Data(format!(
            "need at least 2 labels to form negative pairs, found {}",
            train.labels().len()
        )));
    }
    if r == 0 {
        return Err(TrainError::InvalidConfig("pairs_per_class must be >= 1".into()));
    }
    let ex = train.examples();
    let groups = train.indices_by_label();
    let mut rng = rng::seeded(seed);
    let mut pairs = Vec::with_capacity(2 * r * groups.len());

    for (c, group) in groups.iter().enumerate() {
        let n = group.len();
        for _ in 0..r {
            let i = rng.gen_range(0..n);
            let j = if n == 1 {
                i
            } else {
                let j = rng.gen_range(0..n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            };
            pairs.push(Pair {
                a: ex[group[i]].clone(),
                b: ex[group[j]].clone(),
                target: 1,
            });
        }
        let others: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != c)
            .flat_map(|(_, g)| g.iter().copied())
            .collect();
        for _ in 0..r {
            let a = group[rng.gen_range(0..n)];
            let b = others[rng.gen_range(0..others.len())];
            pairs.push(Pair {
                a: ex[a].clone(),
                b: ex[b].clone(),
                target: 0,
            });
        }
    }

    Ok(PairSet {
        pairs,
        pairs_per_class: r,
        class_count: groups.len(),
    })
}

/// Every distinct unordered pair of example positions, the pool from which
/// contrastive pairs are drawn. Its size is `K(K - 1) / 2`.
pub fn candidate_pairs(train: &Dataset) -> Vec<(usize, usize)> {
    let k = train.len();
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect()
}
