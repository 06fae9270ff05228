//! Confusion counts, accuracy and micro/macro/weighted F1.
//!
//! Undefined precision or recall (zero denominator) is reported as 0, and
//! every label of the model's inventory takes part in the macro average,
//! including labels with no support.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::TextClassifier;
use crate::corpus::Dataset;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    Empty,
    #[error("gold label `{0}` is not in the model's inventory")]
    UnknownLabel(String),
    #[error("prediction index {index} out of range for {n_labels} labels")]
    IndexOutOfRange { index: usize, n_labels: usize },
    #[error("{gold} gold labels but {predicted} predictions")]
    LengthMismatch { gold: usize, predicted: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub labels: Vec<String>,
    pub true_positives: Vec<u64>,
    pub false_positives: Vec<u64>,
    pub false_negatives: Vec<u64>,
    pub support: Vec<u64>,
    pub total: u64,
}

impl ConfusionCounts {
    /// Counts from parallel gold/predicted index lists.
    pub fn from_indices(
        labels: Vec<String>,
        gold: &[usize],
        predicted: &[usize],
    ) -> Result<Self, EvalError> {
        if gold.len() != predicted.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                predicted: predicted.len(),
            });
        }
        let n = labels.len();
        let mut c = Self {
            true_positives: vec![0; n],
            false_positives: vec![0; n],
            false_negatives: vec![0; n],
            support: vec![0; n],
            total: gold.len() as u64,
            labels,
        };
        for (&g, &p) in gold.iter().zip(predicted) {
            for index in [g, p] {
                if index >= n {
                    return Err(EvalError::IndexOutOfRange { index, n_labels: n });
                }
            }
            c.support[g] += 1;
            if g == p {
                c.true_positives[g] += 1;
            } else {
                c.false_positives[p] += 1;
                c.false_negatives[g] += 1;
            }
        }
        Ok(c)
    }

    pub fn correct(&self) -> u64 {
        self.true_positives.iter().sum()
    }
}

/// Runs the classifier over `test` and tallies the outcomes.
pub fn evaluate<M: TextClassifier>(model: &M, test: &Dataset) -> Result<ConfusionCounts, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let labels = model.labels();
    let gold = test
        .iter()
        .map(|ex| {
            labels
                .iter()
                .position(|l| *l == ex.label)
                .ok_or_else(|| EvalError::UnknownLabel(ex.label.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let predicted: Vec<usize> = test
        .examples()
        .par_iter()
        .map(|ex| model.predict_index(&ex.text))
        .collect();
    ConfusionCounts::from_indices(labels.to_vec(), &gold, &predicted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p == r {
        return p;
    }
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn scores(c: &ConfusionCounts) -> Result<Scores, EvalError> {
    if c.total == 0 {
        return Err(EvalError::Empty);
    }
    let per_class: Vec<ClassScore> = (0..c.labels.len())
        .map(|i| {
            let tp = c.true_positives[i];
            let precision = ratio(tp, tp + c.false_positives[i]);
            let recall = ratio(tp, tp + c.false_negatives[i]);
            ClassScore {
                label: c.labels[i].clone(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: c.support[i],
            }
        })
        .collect();

    let tp: u64 = c.correct();
    let fp: u64 = c.false_positives.iter().sum();
    let fn_: u64 = c.false_negatives.iter().sum();
    let micro_f1 = f1(ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|s| s.f1).sum::<f64>() / per_class.len() as f64
    };
    let support_total: u64 = c.support.iter().sum();
    let weighted_f1 = per_class
        .iter()
        .map(|s| s.f1 * s.support as f64)
        .sum::<f64>()
        / support_total as f64;

    Ok(Scores {
        accuracy: ratio(tp, c.total),
        micro_f1,
        macro_f1,
        weighted_f1,
        per_class,
    })
}

/// Per-label rows `label,precision,recall,f1,support` followed by the
/// accuracy and micro/macro/weighted average rows.
pub fn write_report_csv<W: std::io::Write>(s: &Scores, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "precision", "recall", "f1", "support"])?;
    let fmt = |v: f64| format!("{v:.4}");
    for row in &s.per_class {
        out.write_record([
            row.label.clone(),
            fmt(row.precision),
            fmt(row.recall),
            fmt(row.f1),
            row.support.to_string(),
        ])?;
    }
    let total: u64 = s.per_class.iter().map(|r| r.support).sum();
    let mean = |f: fn(&ClassScore) -> f64| s.per_class.iter().map(f).sum::<f64>() / s.per_class.len().max(1) as f64;
    let wmean = |f: fn(&ClassScore) -> f64| {
        s.per_class.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total.max(1) as f64
    };
    out.write_record(["accuracy", "", "", &fmt(s.accuracy), &total.to_string()])?;
    out.write_record(["micro avg", &fmt(s.micro_f1), &fmt(s.micro_f1), &fmt(s.micro_f1), &total.to_string()])?;
    out.write_record([
        "macro avg",
        &fmt(mean(|r| r.precision)),
        &fmt(mean(|r| r.recall)),
        &fmt(s.macro_f1),
        &total.to_string(),
    ])?;
    out.write_record([
        "weighted avg",
        &fmt(wmean(|r| r.precision)),
        &fmt(wmean(|r| r.recall)),
        &fmt(s.weighted_f1),
        &total.to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    #[test]
    fn hand_example() {
        // gold [A,B,B], predicted [A,A,B]
        let c = ConfusionCounts::from_indices(labels(2), &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!(c.true_positives, [1, 1]);
        assert_eq!(c.false_positives, [1, 0]);
        assert_eq!(c.false_negatives, [0, 1]);
        let s = scores(&c).unwrap();
        let two_thirds = 2.0 / 3.0;
        assert!((s.micro_f1 - two_thirds).abs() < 1e-12);
        assert!((s.per_class[0].precision - 0.5).abs() < 1e-12);
        assert_eq!(s.per_class[0].recall, 1.0);
        assert!((s.per_class[0].f1 - two_thirds).abs() < 1e-12);
        assert_eq!(s.per_class[1].precision, 1.0);
        assert_eq!(s.per_class[1].recall, 0.5);
        assert!((s.per_class[1].f1 - two_thirds).abs() < 1e-12);
        assert!((s.macro_f1 - two_thirds).abs() < 1e-12);
        assert!((s.weighted_f1 - two_thirds).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let c = ConfusionCounts::from_indices(labels(3), &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert!(c.false_positives.iter().chain(&c.false_negatives).all(|&v| v == 0));
        let s = scores(&c).unwrap();
        assert_eq!((s.accuracy, s.micro_f1, s.macro_f1, s.weighted_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor() {
        let c = ConfusionCounts::from_indices(labels(2), &[0, 0, 1, 1, 1], &[0; 5]).unwrap();
        assert_eq!(c.false_positives[0], 3);
        assert_eq!(c.false_negatives[1], 3);
    }

    #[test]
    fn absent_class_contributes_zero() {
        let c = ConfusionCounts::from_indices(labels(3), &[0, 1], &[0, 1]).unwrap();
        let s = scores(&c).unwrap();
        assert_eq!(s.per_class[2].f1, 0.0);
        assert_eq!(s.per_class[2].support, 0);
        assert!((s.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.weighted_f1, 1.0);
    }

    #[test]
    fn errors() {
        let c = ConfusionCounts::from_indices(labels(2), &[], &[]).unwrap();
        assert_eq!(scores(&c).unwrap_err(), EvalError::Empty);
        assert!(ConfusionCounts::from_indices(labels(2), &[0], &[2]).is_err());
        assert!(ConfusionCounts::from_indices(labels(2), &[0], &[]).is_err());
    }

    #[test]
    fn report_layout() {
        let c = ConfusionCounts::from_indices(labels(2), &[0, 1, 1], &[0, 0, 1]).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&scores(&c).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,precision,recall,f1,support");
        assert_eq!(lines[1], "L0,0.5000,1.0000,0.6667,1");
        assert_eq!(lines[3], "accuracy,,,0.6667,3");
        assert!(lines[6].starts_with("weighted avg,"));
    }

    proptest! {
        #[test]
        fn invariants(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let c = ConfusionCounts::from_indices(labels(4), &gold, &pred).unwrap();
            prop_assert_eq!(c.support.iter().sum::<u64>(), c.total);
            for i in 0..4 {
                prop_assert!(c.true_positives[i] <= c.support[i]);
            }
            let s = scores(&c).unwrap();
            prop_assert_eq!(s.micro_f1, s.accuracy);
            for v in [s.accuracy, s.micro_f1, s.macro_f1, s.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn weighted_equals_macro_under_equal_support(
            preds in prop::collection::vec(0usize..3, 9),
        ) {
            let gold = [0, 0, 0, 1, 1, 1, 2, 2, 2];
            let c = ConfusionCounts::from_indices(labels(3), &gold, &preds).unwrap();
            let s = scores(&c).unwrap();
            prop_assert!((s.weighted_f1 - s.macro_f1).abs() < 1e-12);
        }
    }
}
