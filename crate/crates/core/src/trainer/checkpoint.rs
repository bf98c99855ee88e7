//! Self-describing binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CNER1\0"
//! version u16
//! u64     manifest byte length, then UTF-8 key=value lines
//! u64     tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u8  dtype (1 = f64)
//!   u32 rank, rank x u64 dims
//!   row-major f64 payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusError, LabelSet, Vocabulary};
use crate::encoder::{EncoderConfig, EncoderError, ModelParams};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 6] = b"CNER1\0";
pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("vocabulary hash mismatch: manifest {expected}, tokens hash to {found}")]
    VocabHash { expected: String, found: String },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub label_set: LabelSet,
    pub vocab: Vocabulary,
    pub step: u64,
    /// Dev micro-F1 the checkpoint was selected on; `None` for students.
    pub dev_f1: Option<f64>,
}

impl Checkpoint {
    fn manifest(&self) -> String {
        let c = &self.params.config;
        let mut lines = vec![
            format!("labels={}", self.label_set.labels().join(" ")),
            format!("entity_types={}", self.label_set.entity_types().join(" ")),
            format!("vocab.size={}", self.vocab.len()),
            format!("vocab.sha256={}", self.vocab.content_hash()),
            format!("vocab.tokens={}", self.vocab.tokens().join(" ")),
            format!("encoder.vocab_size={}", c.vocab_size),
            format!("encoder.embed_dim={}", c.embed_dim),
            format!("encoder.num_layers={}", c.num_layers),
            format!("encoder.num_heads={}", c.num_heads),
            format!("encoder.ffn_dim={}", c.ffn_dim),
            format!("encoder.max_len={}", c.max_len),
            format!("encoder.label_count={}", c.label_count),
            format!("encoder.init_seed={}", c.init_seed),
            format!("encoder.init_scale={}", c.init_scale),
            format!("step={}", self.step),
        ];
        lines.push(match self.dev_f1 {
            Some(f) => format!("dev_f1={f}"),
            None => "dev_f1=none".to_string(),
        });
        lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let manifest = self.manifest();
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.params.tensors().len() as u64).to_le_bytes());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = r.u64()? as usize;
        let manifest = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Manifest("manifest is not UTF-8".into()))?;
        let m = parse_manifest(manifest)?;

        let label_set = LabelSet::from_labels(m.get("labels")?.split(' '))?;
        let vocab = Vocabulary::from_tokens(m.get("vocab.tokens")?.split(' ').map(String::from).collect())?;
        let hash = vocab.content_hash();
        if hash != m.get("vocab.sha256")? {
            return Err(CheckpointError::VocabHash {
                expected: m.get("vocab.sha256")?.to_string(),
                found: hash,
            });
        }
        let config = EncoderConfig {
            vocab_size: m.parse("encoder.vocab_size")?,
            embed_dim: m.parse("encoder.embed_dim")?,
            num_layers: m.parse("encoder.num_layers")?,
            num_heads: m.parse("encoder.num_heads")?,
            ffn_dim: m.parse("encoder.ffn_dim")?,
            max_len: m.parse("encoder.max_len")?,
            label_count: m.parse("encoder.label_count")?,
            init_seed: m.parse("encoder.init_seed")?,
            init_scale: m.parse("encoder.init_scale")?,
        };
        if config.vocab_size != vocab.len() || config.label_count != label_set.len() {
            return Err(CheckpointError::Manifest(
                "encoder sizes disagree with the stored vocabulary or label set".into(),
            ));
        }
        let step = m.parse("step")?;
        let dev_f1 = match m.get("dev_f1")? {
            "none" => None,
            _ => Some(m.parse("dev_f1")?),
        };

        let count = r.u64()? as usize;
        let mut named = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Manifest("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(CheckpointError::UnsupportedDtype(dtype));
            }
            let rank = u32::from_le_bytes(r.array()?) as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(r.pos))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(EncoderError::from)?;
            named.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let params = ModelParams::from_named(config, named)?;
        Ok(Self {
            params,
            label_set,
            vocab,
            step,
            dev_f1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

struct Manifest(BTreeMap<String, String>);

impl Manifest {
    fn get(&self, key: &str) -> Result<&str, CheckpointError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Manifest(format!("missing key {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| CheckpointError::Manifest(format!("bad value for {key}: {raw:?}")))
    }
}

fn parse_manifest(text: &str) -> Result<Manifest, CheckpointError> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Manifest(format!("malformed line {line:?}")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(Manifest(map))
}
