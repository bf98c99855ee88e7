//! Training objectives: token cross-entropy, label-contrastive (token level),
//! translation-contrastive (sentence level), their weighted sum, and the
//! distillation MSE.
//!
//! Each objective is built on a [`Tape`] so gradients reach every
//! representation involved. The `*_loss` wrappers evaluate the same graphs on
//! plain tensors.

use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Floor applied to probabilities before taking logs in [`ce`].
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label-contrastive loss needs at least 2 tokens, got {0}")]
    TooFewTokens(usize),
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gold label {label} out of range for {labels} labels")]
    LabelOutOfRange { label: usize, labels: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau_lcl: f64,
    pub tau_tcl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.25,
            tau_lcl: 0.1,
            tau_tcl: 0.1,
        }
    }
}

/// Per-step loss values. Disabled terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: Option<f64>,
    pub l_lcl: Option<f64>,
    pub l_tcl: Option<f64>,
    pub l_total: f64,
    pub l_kd: Option<f64>,
}

/// `alpha * l_ce + beta * (l_lcl + l_tcl)`.
pub fn joint_loss(l_ce: f64, l_lcl: f64, l_tcl: f64, weights: &LossWeights) -> f64 {
    weights.alpha * l_ce + weights.beta * (l_lcl + l_tcl)
}

fn check_groups(groups: &[Vec<usize>], rows: usize) -> Result<(), LossError> {
    for g in groups {
        for &r in g {
            if r >= rows {
                return Err(NumericsError::IndexOutOfRange { index: r, len: rows }.into());
            }
        }
    }
    Ok(())
}

/// Cross-entropy averaged over the tokens of each sentence, then over
/// sentences. `probs` is `[rows, labels]`; `sentences[s]` lists the rows of
/// sentence `s` (padding rows are simply not listed). `gold` is indexed by
/// row. Sentences with no rows are skipped.
pub fn ce(tape: &mut Tape, probs: Var, gold: &[usize], sentences: &[Vec<usize>]) -> Result<Var, LossError> {
    let p = tape.value(probs);
    let (rows, labels) = (p.rows(), p.cols());
    if gold.len() != rows {
        return Err(LossError::ShapeMismatch {
            what: "gold labels per row",
            expected: rows,
            found: gold.len(),
        });
    }
    check_groups(sentences, rows)?;
    let counted = sentences.iter().filter(|s| !s.is_empty()).count();
    let mut weights = vec![0.0; rows * labels];
    for rows_of in sentences.iter().filter(|s| !s.is_empty()) {
        let w = 1.0 / (rows_of.len() as f64 * counted as f64);
        for &r in rows_of {
            let g = gold[r];
            if g >= labels {
                return Err(LossError::LabelOutOfRange { label: g, labels });
            }
            weights[r * labels + g] += w;
        }
    }
    let logp = tape.log(probs, LOG_FLOOR);
    let w = tape.constant(Tensor::new(vec![rows, labels], weights)?);
    let picked = tape.mul(logp, w)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0))
}

/// Temperature-scaled cosine similarity matrix of the rows of `x`.
fn similarity_logits(tape: &mut Tape, x: Var, tau: f64) -> Result<Var, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::InvalidTemperature(tau));
    }
    let unit = tape.normalize_rows(x)?;
    let unit_t = tape.transpose(unit)?;
    let sim = tape.matmul(unit, unit_t)?;
    Ok(tape.scale(sim, 1.0 / tau))
}

fn off_diagonal(n: usize) -> Vec<bool> {
    (0..n * n).map(|k| k / n != k % n).collect()
}

/// Label-contrastive loss over token representations `h` (`[M, d]`).
///
/// Anchor `i` averages `-log softmax_{k != i}(sim(h_i, h_k)/tau)` over its
/// positives (other tokens with the same label). Anchors without positives
/// are skipped; the result is the mean over the remaining anchors, or 0 when
/// there are none.
pub fn lcl(tape: &mut Tape, h: Var, labels: &[usize], tau: f64) -> Result<Var, LossError> {
    let m = tape.value(h).rows();
    if m < 2 {
        return Err(LossError::TooFewTokens(m));
    }
    if labels.len() != m {
        return Err(LossError::ShapeMismatch {
            what: "labels per token",
            expected: m,
            found: labels.len(),
        });
    }
    let logits = similarity_logits(tape, h, tau)?;
    let lse = tape.masked_log_sum_exp(logits, &off_diagonal(m))?;

    let mut anchor_w = vec![0.0; m];
    let mut pair_w = vec![0.0; m * m];
    let mut eligible = 0usize;
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        eligible += 1;
        anchor_w[i] = 1.0;
        let inv = 1.0 / positives.len() as f64;
        for p in positives {
            pair_w[i * m + p] = inv;
        }
    }
    if eligible == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let aw = tape.constant(Tensor::vector(anchor_w));
    let pw = tape.constant(Tensor::new(vec![m, m], pair_w)?);
    let denom = tape.mul(lse, aw)?;
    let denom = tape.sum(denom);
    let numer = tape.mul(logits, pw)?;
    let numer = tape.sum(numer);
    let neg = tape.scale(numer, -1.0);
    let total = tape.add(denom, neg)?;
    Ok(tape.scale(total, 1.0 / eligible as f64))
}

/// Checks that `partner` is a fixed-point-free involution on `0..n`.
pub fn validate_pairing(partner: &[usize]) -> Result<(), LossError> {
    let n = partner.len();
    if n < 2 {
        return Err(LossError::InvalidPairing(format!("need at least 2 sentences, got {n}")));
    }
    for (i, &p) in partner.iter().enumerate() {
        if p >= n || p == i || partner[p] != i {
            return Err(LossError::InvalidPairing(format!("partner({i}) = {p}")));
        }
    }
    Ok(())
}

/// Translation-contrastive loss over sentence representations `r` (`[2N, d]`):
/// mean over anchors of `-log softmax_{k != i}(sim(r_i, r_k)/tau)` at
/// `k = partner[i]`.
pub fn tcl(tape: &mut Tape, r: Var, partner: &[usize], tau: f64) -> Result<Var, LossError> {
    let n = tape.value(r).rows();
    if partner.len() != n {
        return Err(LossError::ShapeMismatch {
            what: "partners per sentence",
            expected: n,
            found: partner.len(),
        });
    }
    validate_pairing(partner)?;
    let logits = similarity_logits(tape, r, tau)?;
    let lse = tape.masked_log_sum_exp(logits, &off_diagonal(n))?;
    let mut pair_w = vec![0.0; n * n];
    for (i, &p) in partner.iter().enumerate() {
        pair_w[i * n + p] = 1.0;
    }
    let pw = tape.constant(Tensor::new(vec![n, n], pair_w)?);
    let denom = tape.sum(lse);
    let numer = tape.mul(logits, pw)?;
    let numer = tape.sum(numer);
    let neg = tape.scale(numer, -1.0);
    let total = tape.add(denom, neg)?;
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Distillation loss: per-token mean squared difference over labels, averaged
/// over each sentence's tokens and then over sentences. `teacher` enters as a
/// constant.
pub fn kd_mse(tape: &mut Tape, student: Var, teacher: &Tensor, sentences: &[Vec<usize>]) -> Result<Var, LossError> {
    let s = tape.value(student);
    if s.shape() != teacher.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "kd_mse",
            lhs: s.shape().to_vec(),
            rhs: teacher.shape().to_vec(),
        }
        .into());
    }
    let (rows, labels) = (s.rows(), s.cols());
    check_groups(sentences, rows)?;
    let counted = sentences.iter().filter(|g| !g.is_empty()).count();
    let mut weights = vec![0.0; rows * labels];
    for rows_of in sentences.iter().filter(|g| !g.is_empty()) {
        let w = 1.0 / (labels as f64 * rows_of.len() as f64 * counted as f64);
        for &r in rows_of {
            weights[r * labels..(r + 1) * labels].iter_mut().for_each(|x| *x += w);
        }
    }
    let neg_teacher: Vec<f64> = teacher.data().iter().map(|v| -v).collect();
    let t = tape.constant(Tensor::new(teacher.shape().to_vec(), neg_teacher)?);
    let diff = tape.add(student, t)?;
    let sq = tape.mul(diff, diff)?;
    let w = tape.constant(Tensor::new(vec![rows, labels], weights)?);
    let weighted = tape.mul(sq, w)?;
    Ok(tape.sum(weighted))
}

/// [`ce`] on plain values.
pub fn ce_loss(probs: &Tensor, gold: &[usize], sentences: &[Vec<usize>]) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let out = ce(&mut tape, p, gold, sentences)?;
    Ok(tape.value(out).item())
}

/// [`lcl`] on plain values.
pub fn lcl_loss(h: &Tensor, labels: &[usize], tau: f64) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let v = tape.constant(h.clone());
    let out = lcl(&mut tape, v, labels, tau)?;
    Ok(tape.value(out).item())
}

/// [`tcl`] on plain values.
pub fn tcl_loss(r: &Tensor, partner: &[usize], tau: f64) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let v = tape.constant(r.clone());
    let out = tcl(&mut tape, v, partner, tau)?;
    Ok(tape.value(out).item())
}

/// [`kd_mse`] on plain values.
pub fn kd_mse_loss(student: &Tensor, teacher: &Tensor, sentences: &[Vec<usize>]) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let v = tape.constant(student.clone());
    let out = kd_mse(&mut tape, v, teacher, sentences)?;
    Ok(tape.value(out).item())
}
