//! Side-by-side analysis of two models' LIME features for one label.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::explain::Explanation;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CompareError {
    #[error("explanation for label `{found}` mixed into the `{expected}` table")]
    MixedLabels { expected: String, found: String },
    #[error("cannot compare tables for `{0}` and `{1}`")]
    LabelMismatch(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn matches(self, weight: f64) -> bool {
        match self {
            Sign::Positive => weight > 0.0,
            Sign::Negative => weight < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub word: String,
    pub aggregate_weight: f64,
    pub occurrence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub label: String,
    pub model_id: String,
    /// Sorted by descending absolute weight, one entry per word.
    pub entries: Vec<FeatureEntry>,
}

impl FeatureTable {
    pub fn get(&self, word: &str) -> Option<&FeatureEntry> {
        self.entries.iter().find(|e| e.word == word)
    }

    /// The `n` strongest entries of the given sign.
    pub fn top(&self, sign: Sign, n: usize) -> Vec<&FeatureEntry> {
        self.entries
            .iter()
            .filter(|e| sign.matches(e.aggregate_weight))
            .take(n)
            .collect()
    }
}

fn by_magnitude(a: f64, b: f64, wa: &str, wb: &str) -> std::cmp::Ordering {
    b.abs().total_cmp(&a.abs()).then_with(|| wa.cmp(wb))
}

/// Sums each word's signed weight across explanations of `label`.
pub fn aggregate_features(
    model_id: &str,
    label: &str,
    explanations: &[Explanation],
) -> Result<FeatureTable, CompareError> {
    let mut entries: Vec<FeatureEntry> = Vec::new();
    for e in explanations {
        if e.label != label {
            return Err(CompareError::MixedLabels {
                expected: label.to_string(),
                found: e.label.clone(),
            });
        }
        for f in &e.features {
            match entries.iter_mut().find(|x| x.word == f.word) {
                Some(x) => {
                    x.aggregate_weight += f.weight;
                    x.occurrence_count += 1;
                }
                None => entries.push(FeatureEntry {
                    word: f.word.clone(),
                    aggregate_weight: f.weight,
                    occurrence_count: 1,
                }),
            }
        }
    }
    entries.sort_by(|a, b| by_magnitude(a.aggregate_weight, b.aggregate_weight, &a.word, &b.word));
    Ok(FeatureTable {
        label: label.to_string(),
        model_id: model_id.to_string(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonFeature {
    pub word: String,
    pub weight_a: f64,
    pub weight_b: f64,
}

/// Words carrying the requested sign in both tables, strongest shared
/// magnitude first.
pub fn common_features(
    a: &FeatureTable,
    b: &FeatureTable,
    sign: Sign,
) -> Result<Vec<CommonFeature>, CompareError> {
    if a.label != b.label {
        return Err(CompareError::LabelMismatch(a.label.clone(), b.label.clone()));
    }
    let mut out: Vec<CommonFeature> = a
        .entries
        .iter()
        .filter(|ea| sign.matches(ea.aggregate_weight))
        .filter_map(|ea| {
            b.get(&ea.word)
                .filter(|eb| sign.matches(eb.aggregate_weight))
                .map(|eb| CommonFeature {
                    word: ea.word.clone(),
                    weight_a: ea.aggregate_weight,
                    weight_b: eb.aggregate_weight,
                })
        })
        .collect();
    out.sort_by(|x, y| {
        let mx = x.weight_a.abs().min(x.weight_b.abs());
        let my = y.weight_a.abs().min(y.weight_b.abs());
        by_magnitude(mx, my, &x.word, &y.word)
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFeatures {
    pub model_id: String,
    pub top_positive: Vec<FeatureEntry>,
    pub top_negative: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label: String,
    pub top_n: usize,
    pub common_positive: Vec<CommonFeature>,
    pub common_negative: Vec<CommonFeature>,
    pub model_a: ModelFeatures,
    pub model_b: ModelFeatures,
}

pub fn compare_tables(
    a: &FeatureTable,
    b: &FeatureTable,
    top_n: usize,
) -> Result<ComparisonReport, CompareError> {
    let side = |t: &FeatureTable| ModelFeatures {
        model_id: t.model_id.clone(),
        top_positive: t.top(Sign::Positive, top_n).into_iter().cloned().collect(),
        top_negative: t.top(Sign::Negative, top_n).into_iter().cloned().collect(),
    };
    let mut common_positive = common_features(a, b, Sign::Positive)?;
    let mut common_negative = common_features(a, b, Sign::Negative)?;
    common_positive.truncate(top_n);
    common_negative.truncate(top_n);
    Ok(ComparisonReport {
        label: a.label.clone(),
        top_n,
        common_positive,
        common_negative,
        model_a: side(a),
        model_b: side(b),
    })
}

/// Flat CSV: `section,model_id,word,weight_a,weight_b,occurrences`.
pub fn write_report_csv<W: std::io::Write>(r: &ComparisonReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["section", "model_id", "word", "weight_a", "weight_b", "occurrences"])?;
    for (section, rows) in [
        ("common_positive", &r.common_positive),
        ("common_negative", &r.common_negative),
    ] {
        for c in rows {
            out.write_record([
                section,
                "",
                &c.word,
                &c.weight_a.to_string(),
                &c.weight_b.to_string(),
                "",
            ])?;
        }
    }
    for side in [&r.model_a, &r.model_b] {
        for (section, rows) in [("top_positive", &side.top_positive), ("top_negative", &side.top_negative)] {
            for e in rows {
                out.write_record([
                    section,
                    &side.model_id,
                    &e.word,
                    &e.aggregate_weight.to_string(),
                    "",
                    &e.occurrence_count.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart, one bar per `(word, weight)` row. Bars grow right
/// for positive weights and left for negative ones.
pub fn bar_chart_svg(title: &str, rows: &[(String, f64)]) -> String {
    const ROW: f64 = 22.0;
    const LABEL: f64 = 140.0;
    const HALF: f64 = 220.0;
    let height = 40.0 + ROW * rows.len() as f64;
    let width = LABEL + 2.0 * HALF + 80.0;
    let max = rows.iter().map(|r| r.1.abs()).fold(0.0f64, f64::max).max(1e-12);
    let axis = LABEL + HALF;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="8" y="18" font-weight="bold">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r#"<line x1="{axis}" y1="28" x2="{axis}" y2="{}" stroke="black"/>"#,
        height - 6.0
    );
    for (i, (word, weight)) in rows.iter().enumerate() {
        let y = 30.0 + ROW * i as f64;
        let len = HALF * weight.abs() / max;
        let (x, color) = if *weight >= 0.0 {
            (axis, "#2b7bb9")
        } else {
            (axis - len, "#d9534f")
        };
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{}">{}</text><rect x="{x:.2}" y="{y}" width="{len:.2}" height="{}" fill="{color}"/><text x="{:.2}" y="{}">{weight:.4}</text>"#,
            y + 14.0,
            escape(word),
            ROW - 6.0,
            LABEL + 2.0 * HALF + 8.0,
            y + 14.0,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::FeatureWeight;
    use proptest::prelude::*;

    fn expl(label: &str, feats: &[(&str, f64)]) -> Explanation {
        Explanation {
            label: label.into(),
            features: feats
                .iter()
                .map(|(w, v)| FeatureWeight {
                    word: (*w).into(),
                    weight: *v,
                })
                .collect(),
            intercept: 0.0,
            n_samples: 25,
        }
    }

    fn table(model: &str, feats: &[(&str, f64)]) -> FeatureTable {
        aggregate_features(model, "Authority", &[expl("Authority", feats)]).unwrap()
    }

    #[test]
    fn single_explanation_is_identity() {
        let t = table("m", &[("power", 0.5), ("which", -0.2), ("act", 0.1)]);
        let words: Vec<(&str, f64, usize)> = t
            .entries
            .iter()
            .map(|e| (e.word.as_str(), e.aggregate_weight, e.occurrence_count))
            .collect();
        assert_eq!(words, [("power", 0.5, 1), ("which", -0.2, 1), ("act", 0.1, 1)]);
    }

    #[test]
    fn weights_are_summed() {
        let t = aggregate_features(
            "m",
            "A",
            &[expl("A", &[("shares", 0.3)]), expl("A", &[("shares", -0.1)])],
        )
        .unwrap();
        assert!((t.entries[0].aggregate_weight - 0.2).abs() < 1e-15);
        assert_eq!(t.entries[0].occurrence_count, 2);
    }

    #[test]
    fn empty_and_mixed() {
        assert!(aggregate_features("m", "A", &[]).unwrap().entries.is_empty());
        assert!(matches!(
            aggregate_features("m", "A", &[expl("B", &[])]),
            Err(CompareError::MixedLabels { .. })
        ));
    }

    #[test]
    fn common_feature_rules() {
        let a = table("a", &[("x", 0.4), ("y", 0.2)]);
        let b = table("b", &[("z", 0.4)]);
        assert!(common_features(&a, &b, Sign::Positive).unwrap().is_empty());

        let b = table("b", &[("x", -0.3), ("y", 0.5)]);
        let common = common_features(&a, &b, Sign::Positive).unwrap();
        assert_eq!(common.len(), 1);
        assert_eq!(common[0].word, "y");

        let common = common_features(&a, &a, Sign::Positive).unwrap();
        assert_eq!(common.len(), 2);
        assert!(common.iter().all(|c| c.weight_a == c.weight_b));

        let mut other = a.clone();
        other.label = "Adjustments".into();
        assert!(common_features(&a, &other, Sign::Positive).is_err());
    }

    #[test]
    fn report_and_svg() {
        let a = table("setfit", &[("authority", 0.6), ("power", 0.3), ("which", -0.2)]);
        let b = table("vanilla", &[("authority", 0.2), ("which", -0.4), ("the", 0.1)]);
        let r = compare_tables(&a, &b, 15).unwrap();
        assert_eq!(r.common_positive.len(), 1);
        assert_eq!(r.common_negative[0].word, "which");
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert!(csv.starts_with("section,model_id,word,weight_a,weight_b,occurrences"));
        assert!(csv.contains("top_positive,setfit,authority,0.6,,1"));

        let rows: Vec<(String, f64)> = r
            .common_positive
            .iter()
            .map(|c| (c.word.clone(), c.weight_a))
            .collect();
        let svg = bar_chart_svg("Authority <common>", &rows);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;common&gt;"));
    }

    fn arb_table(model: &'static str) -> impl Strategy<Value = FeatureTable> {
        prop::collection::vec(("[a-e]", -1.0f64..1.0), 0..8).prop_map(move |v| {
            let feats: Vec<(&str, f64)> = v.iter().map(|(w, x)| (w.as_str(), *x)).collect();
            // leak-free: build via owned strings
            let e = Explanation {
                label: "L".into(),
                features: feats
                    .iter()
                    .map(|(w, x)| FeatureWeight {
                        word: w.to_string(),
                        weight: *x,
                    })
                    .collect(),
                intercept: 0.0,
                n_samples: 25,
            };
            aggregate_features(model, "L", &[e]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn common_is_symmetric_in_words(a in arb_table("a"), b in arb_table("b")) {
            for sign in [Sign::Positive, Sign::Negative] {
                let ab = common_features(&a, &b, sign).unwrap();
                let ba = common_features(&b, &a, sign).unwrap();
                let mut wa: Vec<_> = ab.iter().map(|c| c.word.clone()).collect();
                let mut wb: Vec<_> = ba.iter().map(|c| c.word.clone()).collect();
                wa.sort();
                wb.sort();
                prop_assert_eq!(wa, wb);
                for c in &ab {
                    prop_assert!(sign.matches(c.weight_a) && sign.matches(c.weight_b));
                }
            }
        }

        #[test]
        fn tables_have_unique_sorted_words(t in arb_table("a")) {
            for w in t.entries.windows(2) {
                prop_assert!(w[0].aggregate_weight.abs() >= w[1].aggregate_weight.abs());
            }
            let mut words: Vec<_> = t.entries.iter().map(|e| &e.word).collect();
            words.sort();
            words.dedup();
            prop_assert_eq!(words.len(), t.entries.len());
        }
    }
}
