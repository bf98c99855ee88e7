//! IOB2 sequence-labeling corpora: label sets, CoNLL-style parsing and
//! serialization, span extraction and vocabularies.

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("sentence {sentence}, position {position}: invalid IOB2 transition")]
    InvalidIob2 { sentence: usize, position: usize },
    #[error("line {0}: empty sentence")]
    EmptySentence(usize),
    #[error("line {0}: expected `token<TAB>label` or `token label`")]
    MalformedLine(usize),
    #[error("label index {index} out of range for {len} labels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("sentence has {tokens} tokens but {labels} labels")]
    LengthMismatch { tokens: usize, labels: usize },
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("input is not valid UTF-8 (byte offset {0})")]
    Encoding(usize),
}

/// Decoded form of a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// Ordered IOB2 label inventory.
///
/// The index of a label is its position in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    entity_types: Vec<String>,
    tags: Vec<Tag>,
    index: HashMap<String, usize>,
}

impl Default for LabelSet {
    /// `B-PER, B-LOC, B-ORG, B-MISC, I-PER, I-LOC, I-ORG, I-MISC, O`.
    fn default() -> Self {
        Self::for_types(["PER", "LOC", "ORG", "MISC"]).expect("default types are valid")
    }
}

impl LabelSet {
    /// All `B-` labels in type order, then all `I-` labels, then `O`.
    pub fn for_types<I, S>(types: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        let mut labels: Vec<String> = types.iter().map(|t| format!("B-{t}")).collect();
        labels.extend(types.iter().map(|t| format!("I-{t}")));
        labels.push("O".to_string());
        Self::from_labels(labels)
    }

    /// Builds a label set from an explicit label list, inferring entity types
    /// in order of first appearance.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut entity_types: Vec<String> = Vec::new();
        let mut tags = Vec::with_capacity(labels.len());
        let mut index = HashMap::new();
        let mut outside = 0;
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(CorpusError::InvalidLabelSet(format!("duplicate label {label}")));
            }
            let tag = if label == "O" {
                outside += 1;
                Tag::Outside
            } else {
                let (prefix, ty) = label
                    .split_once('-')
                    .filter(|(_, ty)| !ty.is_empty() && !ty.contains(char::is_whitespace))
                    .ok_or_else(|| CorpusError::InvalidLabelSet(format!("bad label {label}")))?;
                let t = match entity_types.iter().position(|e| e == ty) {
                    Some(t) => t,
                    None => {
                        entity_types.push(ty.to_string());
                        entity_types.len() - 1
                    }
                };
                match prefix {
                    "B" => Tag::Begin(t),
                    "I" => Tag::Inside(t),
                    _ => return Err(CorpusError::InvalidLabelSet(format!("bad label {label}"))),
                }
            };
            tags.push(tag);
        }
        if outside != 1 {
            return Err(CorpusError::InvalidLabelSet("exactly one O label required".into()));
        }
        for t in 0..entity_types.len() {
            for want in [Tag::Begin(t), Tag::Inside(t)] {
                if !tags.contains(&want) {
                    return Err(CorpusError::InvalidLabelSet(format!(
                        "type {} lacks a B- or I- label",
                        entity_types[t]
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            entity_types,
            tags,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn tag(&self, index: usize) -> Tag {
        self.tags[index]
    }

    pub fn outside(&self) -> usize {
        self.tags.iter().position(|t| *t == Tag::Outside).expect("one O label")
    }

    pub fn begin(&self, entity_type: usize) -> usize {
        self.tags.iter().position(|t| *t == Tag::Begin(entity_type)).expect("B- label")
    }

    pub fn inside(&self, entity_type: usize) -> usize {
        self.tags.iter().position(|t| *t == Tag::Inside(entity_type)).expect("I- label")
    }

    fn check_indices(&self, labels: &[usize]) -> Result<(), CorpusError> {
        match labels.iter().find(|&&l| l >= self.len()) {
            Some(&index) => Err(CorpusError::IndexOutOfRange {
                index,
                len: self.len(),
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.labels.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<String>, labels: Vec<usize>) -> Result<Self, CorpusError> {
        if tokens.len() != labels.len() {
            return Err(CorpusError::LengthMismatch {
                tokens: tokens.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<LabeledSentence>,
    pub label_set: LabelSet,
    pub language_tag: String,
}

impl Corpus {
    /// Validates every sentence (non-empty, in-range, IOB2-valid).
    pub fn new(
        sentences: Vec<LabeledSentence>,
        label_set: LabelSet,
        language_tag: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        for (s, sentence) in sentences.iter().enumerate() {
            if sentence.is_empty() {
                return Err(CorpusError::EmptySentence(s));
            }
            if let Some(v) = validate_iob2(&sentence.labels, &label_set)?.first() {
                return Err(CorpusError::InvalidIob2 {
                    sentence: s,
                    position: v.position,
                });
            }
        }
        Ok(Self {
            sentences,
            label_set,
            language_tag: language_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(LabeledSentence::len).sum()
    }

    pub fn with_language(mut self, tag: impl Into<String>) -> Self {
        self.language_tag = tag.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    /// Index into [`LabelSet::entity_types`].
    pub entity_type: usize,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Parses a CoNLL-style two-column corpus. Line numbers in errors are 1-based;
/// sentence numbers are 0-based.
pub fn parse_conll(text: &str, label_set: &LabelSet) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut pending_blank: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if tokens.is_empty() {
                pending_blank.get_or_insert(line_no);
            } else {
                finish_sentence(&mut sentences, &mut tokens, &mut labels, label_set)?;
            }
            continue;
        }
        if let Some(blank) = pending_blank.take() {
            return Err(CorpusError::EmptySentence(blank));
        }
        let (token, label) = split_line(line).ok_or(CorpusError::MalformedLine(line_no))?;
        let index = label_set
            .index_of(label)
            .ok_or_else(|| CorpusError::UnknownLabel {
                line: line_no,
                label: label.to_string(),
            })?;
        tokens.push(token.to_string());
        labels.push(index);
    }
    if !tokens.is_empty() {
        finish_sentence(&mut sentences, &mut tokens, &mut labels, label_set)?;
    }
    Ok(Corpus {
        sentences,
        label_set: label_set.clone(),
        language_tag: String::from("und"),
    })
}

/// Like [`parse_conll`] but rejects input that is not UTF-8.
pub fn parse_conll_bytes(bytes: &[u8], label_set: &LabelSet) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Encoding(e.valid_up_to()))?;
    parse_conll(text, label_set)
}

fn split_line(line: &str) -> Option<(&str, &str)> {
    let (token, label) = match line.split_once('\t') {
        Some(pair) => pair,
        None => {
            let mut parts = line.split(' ');
            let pair = (parts.next()?, parts.next()?);
            if parts.next().is_some() {
                return None;
            }
            pair
        }
    };
    if token.is_empty() || label.is_empty() || label.contains('\t') {
        return None;
    }
    Some((token, label))
}

fn finish_sentence(
    sentences: &mut Vec<LabeledSentence>,
    tokens: &mut Vec<String>,
    labels: &mut Vec<usize>,
    label_set: &LabelSet,
) -> Result<(), CorpusError> {
    if let Some(v) = validate_iob2(labels, label_set)?.first() {
        return Err(CorpusError::InvalidIob2 {
            sentence: sentences.len(),
            position: v.position,
        });
    }
    sentences.push(LabeledSentence {
        tokens: std::mem::take(tokens),
        labels: std::mem::take(labels),
    });
    Ok(())
}

pub fn serialize_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        for (token, &label) in sentence.tokens.iter().zip(&sentence.labels) {
            out.push_str(token);
            out.push('\t');
            out.push_str(corpus.label_set.name(label));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// `I-T` after `O` or at the start of the sentence.
    OrphanInside,
    /// `I-T` after a `B-U`/`I-U` with `U != T`.
    TypeMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub kind: ViolationKind,
}

/// Lists every IOB2 violation; empty iff the sequence is valid.
pub fn validate_iob2(labels: &[usize], label_set: &LabelSet) -> Result<Vec<Violation>, CorpusError> {
    label_set.check_indices(labels)?;
    let mut violations = Vec::new();
    let mut open: Option<usize> = None;
    for (position, &l) in labels.iter().enumerate() {
        match label_set.tag(l) {
            Tag::Outside => open = None,
            Tag::Begin(t) => open = Some(t),
            Tag::Inside(t) => match open {
                Some(u) if u == t => {}
                Some(u) => {
                    violations.push(Violation {
                        position,
                        kind: ViolationKind::TypeMismatch {
                            expected: u,
                            found: t,
                        },
                    });
                    open = Some(t);
                }
                None => {
                    violations.push(Violation {
                        position,
                        kind: ViolationKind::OrphanInside,
                    });
                    open = Some(t);
                }
            },
        }
    }
    Ok(violations)
}

/// Rewrites every `I-T` lacking a valid predecessor to `B-T`.
pub fn repair_iob2(labels: &[usize], label_set: &LabelSet) -> Result<Vec<usize>, CorpusError> {
    label_set.check_indices(labels)?;
    let mut out = labels.to_vec();
    let mut open: Option<usize> = None;
    for l in out.iter_mut() {
        match label_set.tag(*l) {
            Tag::Outside => open = None,
            Tag::Begin(t) => open = Some(t),
            Tag::Inside(t) => {
                if open != Some(t) {
                    *l = label_set.begin(t);
                }
                open = Some(t);
            }
        }
    }
    Ok(out)
}

/// Entity spans of a label sequence, sorted by start. Invalid sequences are
/// repaired first.
pub fn extract_entities(labels: &[usize], label_set: &LabelSet) -> Result<Vec<EntitySpan>, CorpusError> {
    let repaired = repair_iob2(labels, label_set)?;
    let mut spans = Vec::new();
    let mut current: Option<EntitySpan> = None;
    for (i, &l) in repaired.iter().enumerate() {
        match label_set.tag(l) {
            Tag::Inside(_) => {
                if let Some(span) = current.as_mut() {
                    span.end = i + 1;
                }
            }
            tag => {
                spans.extend(current.take());
                if let Tag::Begin(t) = tag {
                    current = Some(EntitySpan {
                        entity_type: t,
                        start: i,
                        end: i + 1,
                    });
                }
            }
        }
    }
    spans.extend(current);
    Ok(spans)
}

/// Token to id mapping with `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reconstructs a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(CorpusError::InvalidLabelSet(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidLabelSet(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Counts tokens over all corpora and keeps those seen at least `min_count`
/// times, ordered by count descending then lexicographically.
pub fn build_vocabulary(corpora: &[&Corpus], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for corpus in corpora {
        for sentence in &corpus.sentences {
            for t in &sentence.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && *t != PAD_TOKEN && *t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens).expect("reserved tokens first, no duplicates")
}
