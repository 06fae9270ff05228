//! Seeded synthetic corpora of contract-provision-like texts.
//!
//! Each label owns a small keyword vocabulary. A text mixes a few of its
//! label's keywords into boilerplate filler, sometimes with a keyword
//! borrowed from another label.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::rng::{self, Rng};

pub const LABEL_KEYWORDS: [(&str, [&str; 8]); 12] = [
    ("Governing Laws", ["governed", "construed", "laws", "jurisdiction", "state", "courts", "venue", "conflict"]),
    ("Notices", ["notice", "writing", "delivered", "mail", "address", "registered", "courier", "addressee"]),
    ("Authority", ["authority", "power", "authorized", "execute", "corporate", "requisite", "duly", "capacity"]),
    ("Amendments", ["amended", "modified", "amendment", "supplemented", "modification", "signed", "instrument", "mutual"]),
    ("Counterparts", ["counterparts", "original", "facsimile", "electronic", "copies", "together", "executed", "pdf"]),
    ("Entire Agreements", ["entire", "supersedes", "understandings", "prior", "contemporaneous", "negotiations", "oral", "representations"]),
    ("Severability", ["invalid", "unenforceable", "severable", "illegal", "remaining", "void", "extent", "severed"]),
    ("Waivers", ["waiver", "waive", "failure", "delay", "exercise", "right", "remedy", "partial"]),
    ("Terminations", ["terminate", "termination", "expiration", "breach", "cure", "days", "effective", "cause"]),
    ("Assignments", ["assign", "assignment", "successors", "permitted", "consent", "transfer", "delegate", "assigns"]),
    ("Confidentiality", ["confidential", "disclose", "proprietary", "secret", "recipient", "disclosure", "nonpublic", "protect"]),
    ("Indemnifications", ["indemnify", "indemnification", "harmless", "defend", "losses", "claims", "damages", "liabilities"]),
];

pub const FILLER: [&str; 40] = [
    "the", "of", "and", "to", "this", "agreement", "party", "parties", "shall", "any",
    "such", "by", "in", "or", "be", "hereunder", "herein", "company", "with", "all",
    "other", "as", "may", "under", "each", "which", "its", "for", "not", "that",
    "hereto", "thereof", "applicable", "without", "including", "respect", "section", "time", "person", "obligations",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordCorpusSpec {
    /// Uses the first `n_labels` entries of [`LABEL_KEYWORDS`].
    pub n_labels: usize,
    pub per_label: usize,
    pub keywords_per_text: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    /// Probability that a text also carries one keyword of another label.
    pub confuser_rate: f64,
    pub seed: u64,
}

impl Default for KeywordCorpusSpec {
    fn default() -> Self {
        Self {
            n_labels: 10,
            per_label: 60,
            keywords_per_text: 4,
            min_filler: 8,
            max_filler: 12,
            confuser_rate: 0.1,
            seed: 42,
        }
    }
}

fn compose(rng: &mut Rng, label: usize, n_labels: usize, spec: &KeywordCorpusSpec) -> String {
    let own = &LABEL_KEYWORDS[label].1;
    let mut words: Vec<&str> = own
        .choose_multiple(rng, spec.keywords_per_text.min(own.len()))
        .copied()
        .collect();
    if n_labels > 1 && rng.gen_bool(spec.confuser_rate) {
        let other = (label + rng.gen_range(1..n_labels)) % n_labels;
        words.push(LABEL_KEYWORDS[other].1.choose(rng).expect("non-empty"));
    }
    let n_filler = rng.gen_range(spec.min_filler..=spec.max_filler);
    words.extend((0..n_filler).map(|_| *FILLER.choose(rng).expect("non-empty")));
    words.shuffle(rng);
    let mut text = words.join(" ");
    text.push('.');
    text
}

/// Balanced keyword corpus, examples grouped by label. Texts within a
/// label are distinct.
pub fn keyword_corpus(spec: &KeywordCorpusSpec) -> Dataset {
    assert!(
        (1..=LABEL_KEYWORDS.len()).contains(&spec.n_labels),
        "n_labels must lie in 1..={}",
        LABEL_KEYWORDS.len()
    );
    assert!(spec.min_filler <= spec.max_filler && spec.keywords_per_text >= 1);
    let mut rng = rng::seeded(spec.seed);
    let mut examples = Vec::with_capacity(spec.n_labels * spec.per_label);
    for (label, (name, _)) in LABEL_KEYWORDS.iter().enumerate().take(spec.n_labels) {
        let mut seen = std::collections::HashSet::new();
        while seen.len() < spec.per_label {
            let text = compose(&mut rng, label, spec.n_labels, spec);
            if seen.insert(text.clone()) {
                examples.push(Example::new(text, *name));
            }
        }
    }
    Dataset::new(examples).expect("generated examples are non-empty")
}

/// A long-tailed corpus over all [`LABEL_KEYWORDS`] labels, with exact
/// duplicate texts mixed in, and a supplemental pool of fresh texts for
/// the smaller labels.
pub struct SkewedCorpus {
    pub main: Dataset,
    pub supplemental: Dataset,
}

/// Label sizes before duplicates are added, by label position.
pub const SKEWED_COUNTS: [usize; 12] = [400, 320, 250, 180, 130, 95, 60, 30, 20, 12, 8, 5];

pub fn skewed_corpus(seed: u64) -> SkewedCorpus {
    let spec = KeywordCorpusSpec {
        n_labels: LABEL_KEYWORDS.len(),
        seed,
        ..KeywordCorpusSpec::default()
    };
    let mut rng = rng::seeded(seed);
    let mut main = Vec::new();
    let mut supplemental = Vec::new();
    for (label, &count) in SKEWED_COUNTS.iter().enumerate() {
        let name = LABEL_KEYWORDS[label].0;
        let mut seen = std::collections::HashSet::new();
        let mut texts = Vec::new();
        while texts.len() < count + 150 {
            let text = compose(&mut rng, label, spec.n_labels, &spec);
            if seen.insert(text.clone()) {
                texts.push(text);
            }
        }
        let (own, extra) = texts.split_at(count);
        for text in own {
            main.push(Example::new(text.clone(), name));
        }
        for text in own.iter().take(count / 10) {
            main.push(Example::new(text.clone(), name));
        }
        for text in extra.iter().chain(own.iter().take(5)) {
            supplemental.push(Example::new(text.clone(), name));
        }
    }
    main.shuffle(&mut rng);
    SkewedCorpus {
        main: Dataset::new(main).expect("non-empty"),
        supplemental: Dataset::new(supplemental).expect("non-empty"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize, TextConfig};

    #[test]
    fn keyword_corpus_shape() {
        let ds = keyword_corpus(&KeywordCorpusSpec::default());
        assert_eq!(ds.len(), 600);
        assert_eq!(ds.labels().len(), 10);
        assert!(ds.label_counts().iter().all(|(_, c)| *c == 60));
        let cfg = TextConfig::default();
        for ex in &ds {
            let i = ds.label_index(&ex.label).unwrap();
            let seq = tokenize(&ex.text, &cfg);
            let own = seq.surfaces().filter(|w| LABEL_KEYWORDS[i].1.contains(w)).count();
            assert!(own >= 4, "{}", ex.text);
        }
    }

    #[test]
    fn keyword_corpus_is_seeded() {
        let spec = KeywordCorpusSpec::default();
        assert_eq!(keyword_corpus(&spec).examples(), keyword_corpus(&spec).examples());
        let other = KeywordCorpusSpec { seed: 7, ..spec.clone() };
        assert_ne!(keyword_corpus(&spec).examples(), keyword_corpus(&other).examples());
    }

    #[test]
    fn skewed_corpus_has_duplicates_and_a_long_tail() {
        let s = skewed_corpus(1);
        let counts = s.main.label_counts();
        let authority = counts.iter().find(|(l, _)| l == "Authority").unwrap().1;
        assert_eq!(authority, 250 + 25);
        let unique: std::collections::HashSet<(&str, &str)> =
            s.main.iter().map(|e| (e.text.as_str(), e.label.as_str())).collect();
        assert!(unique.len() < s.main.len());
        assert_eq!(s.supplemental.len(), 12 * 155);
    }
}
