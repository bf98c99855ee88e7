//! Toy transformer encoder, mean pooling and the per-token affine+softmax
//! classifier.
//!
//! Attention uses per-head projection matrices and sums the per-head output
//! projections, which is the same function as concatenating heads and
//! applying one output matrix.

use rand::Rng;
use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::rng::stream_rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("sentence of length {len} exceeds max_len {max_len}")]
    SentenceTooLong { len: usize, max_len: usize },
    #[error("all positions are masked")]
    AllMasked,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub label_count: usize,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must cover <pad> and <unk>");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if self.ffn_dim == 0 || self.max_len == 0 || self.label_count == 0 {
            return bad("ffn_dim, max_len and label_count must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Canonical `(name, shape)` list of every parameter tensor.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dh, f) = (self.embed_dim, self.head_dim(), self.ffn_dim);
        let mut out = vec![
            ("embed.token".to_string(), vec![self.vocab_size, d]),
            ("embed.position".to_string(), vec![self.max_len, d]),
        ];
        for l in 0..self.num_layers {
            for h in 0..self.num_heads {
                for part in ["query", "key", "value"] {
                    out.push((format!("layer{l}.attn.head{h}.{part}"), vec![d, dh]));
                }
                out.push((format!("layer{l}.attn.head{h}.output"), vec![dh, d]));
            }
            out.push((format!("layer{l}.norm1.gain"), vec![d]));
            out.push((format!("layer{l}.norm1.bias"), vec![d]));
            out.push((format!("layer{l}.ffn.w1"), vec![d, f]));
            out.push((format!("layer{l}.ffn.b1"), vec![f]));
            out.push((format!("layer{l}.ffn.w2"), vec![f, d]));
            out.push((format!("layer{l}.ffn.b2"), vec![d]));
            out.push((format!("layer{l}.norm2.gain"), vec![d]));
            out.push((format!("layer{l}.norm2.bias"), vec![d]));
        }
        out.push(("classifier.weight".to_string(), vec![self.label_count, d]));
        out.push(("classifier.bias".to_string(), vec![self.label_count]));
        out
    }
}

#[derive(Clone, Copy)]
enum Init {
    Uniform,
    Zero,
    One,
}

fn init_kind(name: &str) -> Init {
    if name.ends_with(".gain") {
        Init::One
    } else if name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
        Init::Zero
    } else {
        Init::Uniform
    }
}

/// All learnable tensors, in [`EncoderConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Weight matrices uniform in `[-init_scale, init_scale]`, biases zero,
    /// layer-norm gains one. Deterministic in `init_seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = stream_rng(config.init_seed, "param-init", 0);
        let s = config.init_scale;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let data = match init_kind(&name) {
                Init::One => vec![1.0; n],
                Init::Zero => vec![0.0; n],
                Init::Uniform if s == 0.0 => vec![0.0; n],
                Init::Uniform => (0..n).map(|_| rng.gen_range(-s..=s)).collect(),
            };
            tensors.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// config's layout.
    pub fn from_named(config: EncoderConfig, named: Vec<(String, Tensor)>) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(EncoderError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, shape), (got_name, t)) in layout.into_iter().zip(named) {
            if name != got_name || t.shape() != shape.as_slice() {
                return Err(EncoderError::ParamShape {
                    name: got_name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Concatenation of all tensors in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Registers every tensor as a constant (inference only).
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Tape handles for a [`ModelParams`], in layout order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

/// Index arithmetic over the layout.
struct Slots {
    heads: usize,
}

impl Slots {
    const TOKEN: usize = 0;
    const POSITION: usize = 1;

    fn layer_stride(&self) -> usize {
        4 * self.heads + 8
    }

    fn layer(&self, l: usize) -> usize {
        2 + l * self.layer_stride()
    }

    fn head(&self, l: usize, h: usize, part: usize) -> usize {
        self.layer(l) + 4 * h + part
    }

    fn after_heads(&self, l: usize, k: usize) -> usize {
        self.layer(l) + 4 * self.heads + k
    }
}

/// Sentences padded to a common width, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub width: usize,
}

impl PaddedBatch {
    /// Right-pads each id sequence with [`crate::corpus::PAD`].
    pub fn from_sequences(seqs: &[Vec<usize>]) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        let mut mask = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            ids.extend_from_slice(s);
            mask.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(crate::corpus::PAD, width - s.len()));
            mask.extend(std::iter::repeat_n(false, width - s.len()));
        }
        Self {
            ids,
            mask,
            batch: seqs.len(),
            width,
        }
    }

    /// Row indices (into the `[batch * width, d]` hidden matrix) of the
    /// unmasked positions of each sentence.
    pub fn sentence_rows(&self) -> Vec<Vec<usize>> {
        (0..self.batch)
            .map(|s| {
                (s * self.width..(s + 1) * self.width)
                    .filter(|&r| self.mask[r])
                    .collect()
            })
            .collect()
    }

    /// All unmasked rows in order.
    pub fn valid_rows(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&r| self.mask[r]).collect()
    }

    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Builds the encoder graph; returns hidden states `[batch * width, d]`.
///
/// Rows at masked positions are computed but never attended to.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    batch: &PaddedBatch,
) -> Result<Var, EncoderError> {
    let cfg = &params.config;
    if batch.width > cfg.max_len {
        return Err(EncoderError::SentenceTooLong {
            len: batch.width,
            max_len: cfg.max_len,
        });
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(EncoderError::IdOutOfRange {
            id,
            vocab: cfg.vocab_size,
        });
    }
    let slots = Slots { heads: cfg.num_heads };
    let v = |i: usize| vars.vars[i];

    let tok = tape.gather_rows(v(Slots::TOKEN), &batch.ids)?;
    let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.width).collect();
    let pos = tape.gather_rows(v(Slots::POSITION), &positions)?;
    let mut x = tape.add(tok, pos)?;

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    for l in 0..cfg.num_layers {
        let mut attn: Option<Var> = None;
        for h in 0..cfg.num_heads {
            let q = tape.matmul(x, v(slots.head(l, h, 0)))?;
            let k = tape.matmul(x, v(slots.head(l, h, 1)))?;
            let val = tape.matmul(x, v(slots.head(l, h, 2)))?;
            let mut outs = Vec::with_capacity(batch.batch);
            for s in 0..batch.batch {
                let rows: Vec<usize> = (s * batch.width..(s + 1) * batch.width).collect();
                let keep = &batch.mask[s * batch.width..(s + 1) * batch.width];
                let qs = tape.gather_rows(q, &rows)?;
                let ks = tape.gather_rows(k, &rows)?;
                let vs = tape.gather_rows(val, &rows)?;
                let kt = tape.transpose(ks)?;
                let scores = tape.matmul(qs, kt)?;
                let scores = tape.scale(scores, scale);
                let weights = tape.masked_softmax(scores, keep)?;
                outs.push(tape.matmul(weights, vs)?);
            }
            let heads = tape.concat_rows(&outs)?;
            let projected = tape.matmul(heads, v(slots.head(l, h, 3)))?;
            attn = Some(match attn {
                None => projected,
                Some(acc) => tape.add(acc, projected)?,
            });
        }
        let attn = attn.expect("num_heads >= 1");
        let res = tape.add(x, attn)?;
        x = tape.layer_norm(res, v(slots.after_heads(l, 0)), v(slots.after_heads(l, 1)), LAYER_NORM_EPS)?;

        let hidden = tape.matmul(x, v(slots.after_heads(l, 2)))?;
        let hidden = tape.add_row(hidden, v(slots.after_heads(l, 3)))?;
        let hidden = tape.relu(hidden);
        let ffn = tape.matmul(hidden, v(slots.after_heads(l, 4)))?;
        let ffn = tape.add_row(ffn, v(slots.after_heads(l, 5)))?;
        let res = tape.add(x, ffn)?;
        x = tape.layer_norm(res, v(slots.after_heads(l, 6)), v(slots.after_heads(l, 7)), LAYER_NORM_EPS)?;
    }
    Ok(x)
}

/// `softmax(W h + b)` for every row of `h`.
pub fn classify_on_tape(tape: &mut Tape, vars: &ParamVars, h: Var) -> Result<Var, EncoderError> {
    let n = vars.vars.len();
    let (w, b) = (vars.vars[n - 2], vars.vars[n - 1]);
    let wt = tape.transpose(w)?;
    let logits = tape.matmul(h, wt)?;
    let logits = tape.add_row(logits, b)?;
    Ok(tape.softmax(logits)?)
}

/// Hidden states for a padded batch, `[batch * width, d]`.
pub fn encode(params: &ModelParams, batch: &PaddedBatch) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let h = encode_on_tape(&mut tape, params, &vars, batch)?;
    Ok(tape.value(h).clone())
}

/// Label distribution for every row of a padded batch, `[batch * width, |Y|]`.
pub fn forward_probs(params: &ModelParams, batch: &PaddedBatch) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let h = encode_on_tape(&mut tape, params, &vars, batch)?;
    let p = classify_on_tape(&mut tape, &vars, h)?;
    Ok(tape.value(p).clone())
}

/// Label distribution for a single hidden vector.
pub fn classify(params: &ModelParams, h: &[f64]) -> Result<Vec<f64>, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let hv = tape.constant(Tensor::matrix(1, h.len(), h.to_vec())?);
    let p = classify_on_tape(&mut tape, &vars, hv)?;
    Ok(tape.value(p).data().to_vec())
}

/// Mean of the rows of `h` whose mask flag is set.
pub fn pool_sentence(h: &Tensor, mask: &[bool]) -> Result<Vec<f64>, EncoderError> {
    if mask.len() != h.rows() {
        return Err(NumericsError::LengthMismatch {
            expected: h.rows(),
            found: mask.len(),
        }
        .into());
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
    if rows.is_empty() {
        return Err(EncoderError::AllMasked);
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let r = tape.mean_rows(hv, &[rows])?;
    Ok(tape.value(r).data().to_vec())
}
