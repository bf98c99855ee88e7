//! Entity-level precision/recall/F1 and token-level label agreement.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{extract_entities, Corpus, CorpusError, EntitySpan, LabelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("sentence {sentence}: expected {expected} labels, found {found}")]
    LengthMismatch {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} sentences, found {found}")]
    SentenceCountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Score {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    /// Ratios with the 0/0 conventions: P = 0 without predictions, R = 0
    /// without gold entities, F1 = 0 when P + R = 0.
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            true_positives as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            true_positives as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub entity_types: Vec<String>,
    pub per_type: Vec<Score>,
    pub micro: Score,
}

impl F1Report {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "type", "tp", "pred", "gold", "precision", "recall", "f1"
        );
        let rows = self
            .entity_types
            .iter()
            .map(String::as_str)
            .zip(&self.per_type)
            .chain(std::iter::once(("micro", &self.micro)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                name, s.true_positives, s.predicted, s.gold, s.precision, s.recall, s.f1
            );
        }
        out
    }

    /// `row.field=value` lines, per type and `micro`.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let rows = self
            .entity_types
            .iter()
            .map(String::as_str)
            .zip(&self.per_type)
            .chain(std::iter::once(("micro", &self.micro)));
        for (name, s) in rows {
            let _ = writeln!(out, "{name}.tp={}", s.true_positives);
            let _ = writeln!(out, "{name}.predicted={}", s.predicted);
            let _ = writeln!(out, "{name}.gold={}", s.gold);
            let _ = writeln!(out, "{name}.precision={}", s.precision);
            let _ = writeln!(out, "{name}.recall={}", s.recall);
            let _ = writeln!(out, "{name}.f1={}", s.f1);
        }
        out
    }
}

/// Scores label sequences against gold label sequences. Predictions are
/// IOB2-repaired before span extraction.
pub fn entity_f1_sequences(
    gold: &[Vec<usize>],
    predicted: &[Vec<usize>],
    label_set: &LabelSet,
) -> Result<F1Report, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::SentenceCountMismatch {
            expected: gold.len(),
            found: predicted.len(),
        });
    }
    let types = label_set.entity_types().len();
    let mut tp = vec![0usize; types];
    let mut pred = vec![0usize; types];
    let mut gold_n = vec![0usize; types];
    for (s, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                sentence: s,
                expected: g.len(),
                found: p.len(),
            });
        }
        let gold_spans: HashSet<EntitySpan> = extract_entities(g, label_set)?.into_iter().collect();
        for span in &gold_spans {
            gold_n[span.entity_type] += 1;
        }
        for span in extract_entities(p, label_set)? {
            pred[span.entity_type] += 1;
            if gold_spans.contains(&span) {
                tp[span.entity_type] += 1;
            }
        }
    }
    let per_type = (0..types)
        .map(|t| Score::from_counts(tp[t], pred[t], gold_n[t]))
        .collect();
    let micro = Score::from_counts(tp.iter().sum(), pred.iter().sum(), gold_n.iter().sum());
    Ok(F1Report {
        entity_types: label_set.entity_types().to_vec(),
        per_type,
        micro,
    })
}

/// Micro-averaged exact-match entity scores of `predicted` against `gold`.
pub fn entity_f1(gold: &Corpus, predicted: &[Vec<usize>]) -> Result<F1Report, EvalError> {
    let gold_labels: Vec<Vec<usize>> = gold.sentences.iter().map(|s| s.labels.clone()).collect();
    entity_f1_sequences(&gold_labels, predicted, &gold.label_set)
}

/// Fraction of token positions where the two labelings agree.
pub fn label_agreement(a: &[Vec<usize>], b: &[Vec<usize>]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::SentenceCountMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut same = 0usize;
    let mut total = 0usize;
    for (s, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(EvalError::LengthMismatch {
                sentence: s,
                expected: x.len(),
                found: y.len(),
            });
        }
        total += x.len();
        same += x.iter().zip(y).filter(|(p, q)| p == q).count();
    }
    Ok(if total == 0 { 1.0 } else { same as f64 / total as f64 })
}
