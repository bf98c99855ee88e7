//! Teacher training with the joint objective, dev-based checkpoint
//! selection, teacher-to-student distillation and inference.

mod checkpoint;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use optim::{AdamW, AdamWConfig};

use crate::bilingen::BilingualCorpora;
use crate::corpus::{build_vocabulary, repair_iob2, Corpus, CorpusError, LabelSet, Vocabulary};
use crate::encoder::{
    classify_on_tape, encode_on_tape, forward_probs, EncoderConfig, EncoderError, ModelParams, PaddedBatch,
};
use crate::eval::{entity_f1, EvalError};
use crate::losses::{self, LossBreakdown, LossError, LossWeights};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{stream_rng, stream_seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("sentence index {index} out of range for {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corpora are not aligned: {0}")]
    MisalignedCorpora(String),
    #[error("non-finite loss at step {step}\n{dump}")]
    NonFiniteLoss { step: u64, dump: String },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training data: {0}")]
    NoData(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl From<crate::numerics::NumericsError> for TrainError {
    fn from(e: crate::numerics::NumericsError) -> Self {
        TrainError::Encoder(e.into())
    }
}

/// Architecture hyperparameters; vocabulary and label sizes come from data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            max_len: 32,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self, vocab_size: usize, label_count: usize, init_seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            label_count,
            init_seed,
            init_scale: self.init_scale,
        }
    }

    fn matches(&self, e: &EncoderConfig) -> Result<(), TrainError> {
        let pairs = [
            ("embed_dim", self.embed_dim, e.embed_dim),
            ("num_layers", self.num_layers, e.num_layers),
            ("num_heads", self.num_heads, e.num_heads),
            ("ffn_dim", self.ffn_dim, e.ffn_dim),
            ("max_len", self.max_len, e.max_len),
        ];
        for (name, want, have) in pairs {
            if want != have {
                return Err(TrainError::ArchitectureMismatch(format!(
                    "{name}: config {want}, teacher {have}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudentInit {
    Fresh,
    CopyTeacher,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Source sentences per step (the batch holds their translations too).
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional hard cap on teacher steps.
    pub max_steps: Option<u64>,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    pub eval_every: u64,
    pub seed: u64,
    pub use_lcl: bool,
    pub use_tcl: bool,
    pub use_kd: bool,
    pub use_src: bool,
    pub use_tgt: bool,
    /// When false, `O` tokens take no part in the label-contrastive term.
    pub lcl_include_o: bool,
    pub kd_epochs: usize,
    pub kd_steps: Option<u64>,
    pub student_init: StudentInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            max_steps: None,
            optimizer: AdamWConfig::default(),
            weights: LossWeights::default(),
            eval_every: 100,
            seed: 1,
            use_lcl: true,
            use_tcl: true,
            use_kd: true,
            use_src: true,
            use_tgt: true,
            lcl_include_o: true,
            kd_epochs: 5,
            kd_steps: None,
            student_init: StudentInit::Fresh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !self.use_src && !self.use_tgt {
            return bad("at least one of use_src and use_tgt must be set");
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("beta1 and beta2 must lie in [0,1)");
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        let w = &self.weights;
        if !(w.tau_lcl > 0.0 && w.tau_tcl > 0.0) {
            return bad("temperatures must be positive");
        }
        Ok(())
    }

    /// Translation pairing exists only when both languages are in the batch.
    pub fn tcl_active(&self) -> bool {
        self.use_tcl && self.use_src && self.use_tgt
    }
}

/// A corpus mapped through a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCorpus {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<usize>>,
}

impl EncodedCorpus {
    pub fn new(corpus: &Corpus, vocab: &Vocabulary) -> Self {
        Self {
            ids: corpus.sentences.iter().map(|s| vocab.encode(&s.tokens)).collect(),
            labels: corpus.sentences.iter().map(|s| s.labels.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sentences of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct BilingualBatch {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<usize>>,
    /// `pairing[i]` is the translation partner of sentence `i`.
    pub pairing: Option<Vec<usize>>,
    /// Unmasked tokens in the batch.
    pub token_count: usize,
}

fn check_index(index: usize, len: usize) -> Result<(), TrainError> {
    if index >= len {
        return Err(TrainError::IndexOutOfRange { index, len });
    }
    Ok(())
}

/// `[src[i_0..], tgt[i_0..]]` with sentence `k` paired to `k + N`.
pub fn build_bilingual_batch(
    d_src: &EncodedCorpus,
    d_tgt: &EncodedCorpus,
    indices: &[usize],
) -> Result<BilingualBatch, TrainError> {
    if d_src.len() != d_tgt.len() {
        return Err(TrainError::MisalignedCorpora(format!(
            "{} source sentences, {} translations",
            d_src.len(),
            d_tgt.len()
        )));
    }
    let n = indices.len();
    let mut ids = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for side in [d_src, d_tgt] {
        for &i in indices {
            check_index(i, side.len())?;
            ids.push(side.ids[i].clone());
            labels.push(side.labels[i].clone());
        }
    }
    for &i in indices {
        if d_src.ids[i].len() != d_tgt.ids[i].len() {
            return Err(TrainError::MisalignedCorpora(format!(
                "sentence {i}: source length {}, translation length {}",
                d_src.ids[i].len(),
                d_tgt.ids[i].len()
            )));
        }
    }
    let pairing = (0..2 * n).map(|k| (k + n) % (2 * n)).collect();
    let token_count = ids.iter().map(Vec::len).sum();
    Ok(BilingualBatch {
        ids,
        labels,
        pairing: Some(pairing),
        token_count,
    })
}

/// Single-language batch without translation pairing.
pub fn build_monolingual_batch(corpus: &EncodedCorpus, indices: &[usize]) -> Result<BilingualBatch, TrainError> {
    let mut ids = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        check_index(i, corpus.len())?;
        ids.push(corpus.ids[i].clone());
        labels.push(corpus.labels[i].clone());
    }
    let token_count = ids.iter().map(Vec::len).sum();
    Ok(BilingualBatch {
        ids,
        labels,
        pairing: None,
        token_count,
    })
}

/// Which objective terms a step builds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub use_lcl: bool,
    pub use_tcl: bool,
    pub lcl_include_o: bool,
}

impl Objective {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            weights: config.weights,
            use_lcl: config.use_lcl,
            use_tcl: config.tcl_active(),
            lcl_include_o: config.lcl_include_o,
        }
    }
}

/// Builds the joint objective for one batch on `tape`.
pub fn joint_objective_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &crate::encoder::ParamVars,
    batch: &BilingualBatch,
    objective: &Objective,
    outside: usize,
) -> Result<(Var, LossBreakdown), TrainError> {
    let padded = PaddedBatch::from_sequences(&batch.ids);
    let h = encode_on_tape(tape, params, vars, &padded)?;
    let probs = classify_on_tape(tape, vars, h)?;
    let mut gold = vec![outside; padded.ids.len()];
    for (s, labels) in batch.labels.iter().enumerate() {
        gold[s * padded.width..s * padded.width + labels.len()].copy_from_slice(labels);
    }
    let sentences = padded.sentence_rows();
    let l_ce = losses::ce(tape, probs, &gold, &sentences)?;
    let w = objective.weights;
    let mut total = tape.scale(l_ce, w.alpha);
    let mut breakdown = LossBreakdown {
        l_ce: Some(tape.value(l_ce).item()),
        ..LossBreakdown::default()
    };

    let mut contrastive: Option<Var> = None;
    if objective.use_lcl {
        let rows: Vec<usize> = padded
            .valid_rows()
            .into_iter()
            .filter(|&r| objective.lcl_include_o || gold[r] != outside)
            .collect();
        let l_lcl = if objective.lcl_include_o || rows.len() >= 2 {
            let reps = tape.gather_rows(h, &rows)?;
            let labels: Vec<usize> = rows.iter().map(|&r| gold[r]).collect();
            losses::lcl(tape, reps, &labels, w.tau_lcl)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        breakdown.l_lcl = Some(tape.value(l_lcl).item());
        contrastive = Some(l_lcl);
    }
    if objective.use_tcl {
        if let Some(pairing) = &batch.pairing {
            let pooled = tape.mean_rows(h, &sentences)?;
            let l_tcl = losses::tcl(tape, pooled, pairing, w.tau_tcl)?;
            breakdown.l_tcl = Some(tape.value(l_tcl).item());
            contrastive = Some(match contrastive {
                Some(c) => tape.add(c, l_tcl)?,
                None => l_tcl,
            });
        }
    }
    if let Some(c) = contrastive {
        let c = tape.scale(c, w.beta);
        total = tape.add(total, c)?;
    }
    breakdown.l_total = tape.value(total).item();
    Ok((total, breakdown))
}

/// Value and parameter gradients of the joint objective on one batch.
pub fn joint_objective_gradients(
    params: &ModelParams,
    batch: &BilingualBatch,
    objective: &Objective,
    outside: usize,
) -> Result<(LossBreakdown, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let (total, breakdown) = joint_objective_on_tape(&mut tape, params, &vars, batch, objective, outside)?;
    let grads = tape.backward(total)?;
    let g = vars
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    Ok((breakdown, g))
}

/// One line of a training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogEntry {
    Step { step: u64, losses: LossBreakdown },
    Dev { step: u64, f1: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// Tab-separated: `step l_ce l_lcl l_tcl l_total [l_kd]` per step with
    /// `-` for inactive terms, and `dev step f1` at evaluations.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        let mut out = String::new();
        for e in &self.entries {
            match e {
                LogEntry::Step { step, losses } => {
                    let _ = write!(
                        out,
                        "{step}\t{}\t{}\t{}\t{}",
                        opt(losses.l_ce),
                        opt(losses.l_lcl),
                        opt(losses.l_tcl),
                        losses.l_total
                    );
                    if let Some(kd) = losses.l_kd {
                        let _ = write!(out, "\t{kd}");
                    }
                    out.push('\n');
                }
                LogEntry::Dev { step, f1 } => {
                    let _ = writeln!(out, "dev\t{step}\t{f1}");
                }
            }
        }
        out
    }

    pub fn steps(&self) -> impl Iterator<Item = (u64, &LossBreakdown)> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Step { step, losses } => Some((*step, losses)),
            LogEntry::Dev { .. } => None,
        })
    }

    pub fn dev_scores(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Dev { step, f1 } => Some((*step, *f1)),
            LogEntry::Step { .. } => None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub final_step: u64,
}

#[derive(Clone, Debug)]
pub struct StudentRun {
    pub checkpoint: Checkpoint,
    /// Parameters before the first update.
    pub init: ModelParams,
    pub log: TrainLog,
}

/// Vocabulary over every training-visible corpus; the test split is excluded.
pub fn training_vocabulary(corpora: &BilingualCorpora) -> Vocabulary {
    build_vocabulary(
        &[&corpora.d_src, &corpora.d_tgt, &corpora.d_unlabeled, &corpora.d_dev],
        1,
    )
}

/// Per-token argmax (lowest index on ties), then IOB2 repair.
pub fn decode(probs: &Tensor, lengths: &[usize], width: usize, label_set: &LabelSet) -> Result<Vec<Vec<usize>>, TrainError> {
    let labels = probs.cols();
    let mut out = Vec::with_capacity(lengths.len());
    for (s, &len) in lengths.iter().enumerate() {
        let raw: Vec<usize> = (0..len)
            .map(|t| {
                let row = &probs.data()[(s * width + t) * labels..(s * width + t + 1) * labels];
                let mut best = 0;
                for (j, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        out.push(repair_iob2(&raw, label_set)?);
    }
    Ok(out)
}

const PREDICT_CHUNK: usize = 64;

/// Label sequences for id sequences. Empty sentences yield empty outputs.
pub fn predict_ids(params: &ModelParams, ids: &[Vec<usize>], label_set: &LabelSet) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(PREDICT_CHUNK) {
        let probs = chunk_probs(params, chunk)?;
        let lengths: Vec<usize> = chunk.iter().map(Vec::len).collect();
        out.extend(decode(&probs.0, &lengths, probs.1, label_set)?);
    }
    Ok(out)
}

fn chunk_probs(params: &ModelParams, chunk: &[Vec<usize>]) -> Result<(Tensor, usize), TrainError> {
    let padded = PaddedBatch::from_sequences(chunk);
    Ok((forward_probs(params, &padded)?, padded.width))
}

/// Predicted labels for a single tokenized sentence.
pub fn predict(checkpoint: &Checkpoint, tokens: &[String]) -> Result<Vec<usize>, TrainError> {
    let ids = checkpoint.vocab.encode(tokens);
    Ok(predict_ids(&checkpoint.params, &[ids], &checkpoint.label_set)?.remove(0))
}

/// Predicted labels for every sentence of `corpus`.
pub fn predict_corpus(checkpoint: &Checkpoint, corpus: &Corpus) -> Result<Vec<Vec<usize>>, TrainError> {
    let ids: Vec<Vec<usize>> = corpus
        .sentences
        .iter()
        .map(|s| checkpoint.vocab.encode(&s.tokens))
        .collect();
    predict_ids(&checkpoint.params, &ids, &checkpoint.label_set)
}

fn dev_f1(params: &ModelParams, dev: &Corpus, dev_ids: &[Vec<usize>]) -> Result<f64, TrainError> {
    let predicted = predict_ids(params, dev_ids, &dev.label_set)?;
    Ok(entity_f1(dev, &predicted)?.micro.f1)
}

fn dump_batch(batch: &BilingualBatch, indices: &[usize], losses: &LossBreakdown, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "losses: {losses:?}");
    let _ = writeln!(out, "source indices: {indices:?}");
    for (s, ids) in batch.ids.iter().enumerate() {
        let tokens: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
        let _ = writeln!(out, "sentence {s}: {} | labels {:?}", tokens.join(" "), batch.labels[s]);
    }
    out
}

fn all_finite(b: &LossBreakdown) -> bool {
    [b.l_ce, b.l_lcl, b.l_tcl, b.l_kd]
        .into_iter()
        .flatten()
        .chain([b.l_total])
        .all(f64::is_finite)
}

/// Trains the teacher on the configured language mix and returns the
/// parameters with the best dev micro-F1 (earliest on ties).
pub fn train_teacher(
    config: &TrainConfig,
    model: &ModelConfig,
    corpora: &BilingualCorpora,
    dev: &Corpus,
) -> Result<TeacherRun, TrainError> {
    config.validate()?;
    let vocab = training_vocabulary(corpora);
    let label_set = corpora.d_src.label_set.clone();
    if dev.label_set != label_set || corpora.d_tgt.label_set != label_set {
        return Err(TrainError::MisalignedCorpora("label sets differ between corpora".into()));
    }
    let src = EncodedCorpus::new(&corpora.d_src, &vocab);
    let tgt = EncodedCorpus::new(&corpora.d_tgt, &vocab);
    if src.len() != tgt.len() {
        return Err(TrainError::MisalignedCorpora(format!(
            "{} source sentences, {} translations",
            src.len(),
            tgt.len()
        )));
    }
    let n = config.batch_size;
    if src.len() < n {
        return Err(TrainError::NoData(format!(
            "{} training pairs cannot fill a batch of {n}",
            src.len()
        )));
    }
    let dev_ids: Vec<Vec<usize>> = dev.sentences.iter().map(|s| vocab.encode(&s.tokens)).collect();
    let enc = model.encoder_config(vocab.len(), label_set.len(), stream_seed(config.seed, "teacher-init", 0));
    let mut params = ModelParams::init(&enc)?;
    let mut opt = AdamW::new(config.optimizer, params.tensors());
    let objective = Objective::from_config(config);
    let outside = label_set.outside();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, u64, ModelParams)> = None;
    let mut step = 0u64;
    let mut last_eval = 0u64;
    let limit = config.max_steps.unwrap_or(u64::MAX);
    let consider = |params: &ModelParams,
                    step: u64,
                    log: &mut TrainLog,
                    best: &mut Option<(f64, u64, ModelParams)>|
     -> Result<(), TrainError> {
        let f1 = dev_f1(params, dev, &dev_ids)?;
        log.entries.push(LogEntry::Dev { step, f1 });
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            *best = Some((f1, step, params.clone()));
        }
        Ok(())
    };

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..src.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, "shuffle", epoch as u64));
        for indices in order.chunks_exact(n) {
            if step >= limit {
                break 'epochs;
            }
            step += 1;
            let batch = match (config.use_src, config.use_tgt) {
                (true, true) => build_bilingual_batch(&src, &tgt, indices)?,
                (true, false) => build_monolingual_batch(&src, indices)?,
                (false, _) => build_monolingual_batch(&tgt, indices)?,
            };
            let (losses, grads) = joint_objective_gradients(&params, &batch, &objective, outside)?;
            if !all_finite(&losses) {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    dump: dump_batch(&batch, indices, &losses, &vocab),
                });
            }
            log.entries.push(LogEntry::Step { step, losses });
            opt.step(params.tensors_mut(), &grads);
            if step % config.eval_every == 0 {
                consider(&params, step, &mut log, &mut best)?;
                last_eval = step;
            }
        }
    }
    if last_eval != step || best.is_none() {
        consider(&params, step, &mut log, &mut best)?;
    }
    let (f1, best_step, best_params) = best.expect("at least one evaluation");
    Ok(TeacherRun {
        checkpoint: Checkpoint {
            params: best_params,
            label_set,
            vocab,
            step: best_step,
            dev_f1: Some(f1),
        },
        log,
        final_step: step,
    })
}

/// Trains a student of the teacher's architecture to match the teacher's
/// label distributions on `unlabeled` (labels there are ignored). Returns
/// the final-step student.
pub fn distill_student(
    teacher: &Checkpoint,
    unlabeled: &Corpus,
    config: &TrainConfig,
    model: Option<&ModelConfig>,
) -> Result<StudentRun, TrainError> {
    config.validate()?;
    let t_cfg = &teacher.params.config;
    if let Some(m) = model {
        m.matches(t_cfg)?;
    }
    if unlabeled.label_set != teacher.label_set {
        return Err(TrainError::ArchitectureMismatch(format!(
            "label sets differ: teacher [{}], corpus [{}]",
            teacher.label_set, unlabeled.label_set
        )));
    }
    let init = match config.student_init {
        StudentInit::Fresh => {
            let mut cfg = t_cfg.clone();
            cfg.init_seed = stream_seed(config.seed, "student-init", 0);
            ModelParams::init(&cfg)?
        }
        StudentInit::CopyTeacher => teacher.params.clone(),
    };
    let mut params = init.clone();
    let ids: Vec<Vec<usize>> = unlabeled
        .sentences
        .iter()
        .map(|s| teacher.vocab.encode(&s.tokens))
        .collect();
    let mut opt = AdamW::new(config.optimizer, params.tensors());
    let limit = config.kd_steps.unwrap_or(u64::MAX);
    let mut log = TrainLog::default();
    let mut step = 0u64;

    'epochs: for epoch in 0..config.kd_epochs {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, "kd-shuffle", epoch as u64));
        for indices in order.chunks(config.batch_size) {
            if step >= limit {
                break 'epochs;
            }
            step += 1;
            let seqs: Vec<Vec<usize>> = indices.iter().map(|&i| ids[i].clone()).collect();
            let padded = PaddedBatch::from_sequences(&seqs);
            let soft = forward_probs(&teacher.params, &padded)?;
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let h = encode_on_tape(&mut tape, &params, &vars, &padded)?;
            let probs = classify_on_tape(&mut tape, &vars, h)?;
            let loss = losses::kd_mse(&mut tape, probs, &soft, &padded.sentence_rows())?;
            let l_kd = tape.value(loss).item();
            let losses = LossBreakdown {
                l_total: l_kd,
                l_kd: Some(l_kd),
                ..LossBreakdown::default()
            };
            if !l_kd.is_finite() {
                let labels = seqs.iter().map(|s| vec![0; s.len()]).collect();
                let batch = BilingualBatch {
                    ids: seqs,
                    labels,
                    pairing: None,
                    token_count: padded.token_count(),
                };
                return Err(TrainError::NonFiniteLoss {
                    step,
                    dump: dump_batch(&batch, indices, &losses, &teacher.vocab),
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t))
                .collect();
            log.entries.push(LogEntry::Step { step, losses });
            opt.step(params.tensors_mut(), &g);
        }
    }
    Ok(StudentRun {
        checkpoint: Checkpoint {
            params,
            label_set: teacher.label_set.clone(),
            vocab: teacher.vocab.clone(),
            step,
            dev_f1: None,
        },
        init,
        log,
    })
}
