//! Deterministic synthetic bilingual corpora.
//!
//! Both languages share a set of `vocab_size_per_language` concepts. A
//! concept's surface form is identical in both languages for a fraction
//! `overlap_fraction` of concepts and language-specific otherwise; the
//! source→target surface map is the bijection used by
//! [`translate_sentence`]. Concepts are partitioned into entity names (a
//! gazetteer per type), per-type trigger words and generic filler words, so
//! entity surface forms never occur as `O` tokens. Sentences come from
//! per-type templates: fillers, then trigger words immediately followed by
//! an entity, optionally a second triggered entity, then more fillers.
//!
//! Labeled source data (`d_src`, `d_dev`) only uses the common part of each
//! gazetteer; the target-language unlabeled and test corpora draw from the
//! whole gazetteer, so some test entities are never seen with a label.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{
    extract_entities, parse_conll, serialize_conll, Corpus, CorpusError, LabelSet, LabeledSentence, Tag,
};
use crate::rng::{stream_rng, stream_seed};

pub const SOURCE_LANGUAGE: &str = "src";
pub const TARGET_LANGUAGE: &str = "tgt";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("token {0:?} has no translation")]
    TokenNotInMapping(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    BadFile { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub vocab_size_per_language: usize,
    /// Fraction of concepts whose surface form is shared by both languages.
    pub overlap_fraction: f64,
    pub entity_types: Vec<String>,
    pub gazetteer_size_per_type: usize,
    pub templates_per_type: usize,
    /// Fraction of each gazetteer withheld from labeled source sentences.
    pub rare_name_fraction: f64,
    pub n_train: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub n_dev: usize,
    pub max_sentence_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            vocab_size_per_language: 200,
            overlap_fraction: 0.3,
            entity_types: ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
            gazetteer_size_per_type: 20,
            templates_per_type: 6,
            rare_name_fraction: 0.3,
            n_train: 500,
            n_unlabeled: 1000,
            n_test: 300,
            n_dev: 100,
            max_sentence_len: 16,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InfeasibleConfig(m));
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad(format!("overlap_fraction {} outside [0,1]", self.overlap_fraction));
        }
        if !(0.0..1.0).contains(&self.rare_name_fraction) {
            return bad(format!("rare_name_fraction {} outside [0,1)", self.rare_name_fraction));
        }
        if self.entity_types.is_empty() {
            return bad("entity_types is empty".into());
        }
        for (name, v) in [
            ("vocab_size_per_language", self.vocab_size_per_language),
            ("gazetteer_size_per_type", self.gazetteer_size_per_type),
            ("templates_per_type", self.templates_per_type),
            ("n_train", self.n_train),
            ("n_unlabeled", self.n_unlabeled),
            ("n_test", self.n_test),
            ("n_dev", self.n_dev),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.max_sentence_len < 3 {
            return bad(format!("max_sentence_len {} < 3", self.max_sentence_len));
        }
        let types = self.entity_types.len();
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_unlabeled", self.n_unlabeled),
            ("n_test", self.n_test),
            ("n_dev", self.n_dev),
        ] {
            if n < types {
                return bad(format!("{name} = {n} cannot cover {types} entity types"));
            }
        }
        let entity_concepts = types * self.gazetteer_size_per_type;
        if entity_concepts >= self.vocab_size_per_language {
            return bad(format!(
                "gazetteer ({entity_concepts} names) does not fit a vocabulary of {}",
                self.vocab_size_per_language
            ));
        }
        let other = self.vocab_size_per_language - entity_concepts;
        if other / 2 / types == 0 || other - other / 2 < 2 {
            return bad(format!(
                "{other} non-entity words are too few for {types} trigger sets and fillers"
            ));
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet, GenError> {
        Ok(LabelSet::for_types(self.entity_types.iter().cloned())?)
    }
}

/// Source→target surface bijection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMapping {
    pairs: Vec<(String, String)>,
    forward: HashMap<String, String>,
}

impl TokenMapping {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, GenError> {
        let mut forward = HashMap::with_capacity(pairs.len());
        let mut targets = HashSet::with_capacity(pairs.len());
        for (s, t) in &pairs {
            if forward.insert(s.clone(), t.clone()).is_some() || !targets.insert(t.clone()) {
                return Err(GenError::InfeasibleConfig(format!("mapping is not a bijection at {s}")));
            }
        }
        Ok(Self { pairs, forward })
    }

    pub fn identity<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let pairs = tokens.into_iter().map(|t| (t.clone(), t)).collect();
        Self::new(pairs).expect("identity is a bijection")
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.forward.get(token).map(String::as_str)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn to_tsv(&self) -> String {
        self.pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BilingualCorpora {
    pub d_src: Corpus,
    /// `d_tgt[i]` is the translation of `d_src[i]`.
    pub d_tgt: Corpus,
    pub d_unlabeled: Corpus,
    pub d_test: Corpus,
    /// Source-language development set for checkpoint selection.
    pub d_dev: Corpus,
    pub mapping: TokenMapping,
    /// Permutation seed used to translate each `d_src` sentence.
    pub translation_seeds: Vec<u64>,
}

/// Splits a sentence into maximal entity spans and single `O` tokens.
fn chunks(sentence: &LabeledSentence, label_set: &LabelSet) -> Result<Vec<(usize, usize)>, CorpusError> {
    let spans = extract_entities(&sentence.labels, label_set)?;
    let mut out = Vec::new();
    let mut spans = spans.into_iter().peekable();
    let mut i = 0;
    while i < sentence.len() {
        match spans.peek() {
            Some(span) if span.start == i => {
                out.push((span.start, span.end));
                i = span.end;
                spans.next();
            }
            _ => {
                out.push((i, i + 1));
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Applies a chunk order (a permutation of the chunk list) and maps every
/// token through `mapping`.
pub fn translate_with_order(
    sentence: &LabeledSentence,
    mapping: &TokenMapping,
    label_set: &LabelSet,
    order: &[usize],
) -> Result<LabeledSentence, GenError> {
    let parts = chunks(sentence, label_set)?;
    assert_eq!(order.len(), parts.len(), "order must permute the chunks");
    let mut tokens = Vec::with_capacity(sentence.len());
    let mut labels = Vec::with_capacity(sentence.len());
    for &c in order {
        let (start, end) = parts[c];
        for i in start..end {
            let token = &sentence.tokens[i];
            let mapped = mapping
                .get(token)
                .ok_or_else(|| GenError::TokenNotInMapping(token.clone()))?;
            tokens.push(mapped.to_string());
            labels.push(sentence.labels[i]);
        }
    }
    Ok(LabeledSentence { tokens, labels })
}

/// Chunk order that [`translate_sentence`] uses for `chunk_count` chunks.
pub fn chunk_order(chunk_count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..chunk_count).collect();
    order.shuffle(&mut stream_rng(seed, "chunk-order", 0));
    order
}

/// Seed-deterministic chunk reordering followed by token mapping.
pub fn translate_sentence(
    sentence: &LabeledSentence,
    mapping: &TokenMapping,
    seed: u64,
    label_set: &LabelSet,
) -> Result<LabeledSentence, GenError> {
    let n = chunks(sentence, label_set)?.len();
    translate_with_order(sentence, mapping, label_set, &chunk_order(n, seed))
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Filler,
    Trigger(usize),
    Entity { ty: usize, len: usize },
}

/// Concept layout shared by both languages.
struct Lexicon {
    types: usize,
    gazetteer: usize,
    common_names: usize,
    triggers_per_type: usize,
    filler_start: usize,
    vocab: usize,
    source_surface: Vec<String>,
    target_surface: Vec<String>,
}

impl Lexicon {
    fn new(config: &GenConfig) -> Self {
        let types = config.entity_types.len();
        let gazetteer = config.gazetteer_size_per_type;
        let vocab = config.vocab_size_per_language;
        let entity_concepts = types * gazetteer;
        let other = vocab - entity_concepts;
        let triggers_per_type = other / 2 / types;
        let filler_start = entity_concepts + triggers_per_type * types;
        let common_names =
            ((gazetteer as f64) * (1.0 - config.rare_name_fraction)).ceil().max(1.0) as usize;

        let shared_count = (config.overlap_fraction * vocab as f64).round() as usize;
        let mut concepts: Vec<usize> = (0..vocab).collect();
        concepts.shuffle(&mut stream_rng(config.seed, "shared-concepts", 0));
        let shared: HashSet<usize> = concepts[..shared_count].iter().copied().collect();

        let width = vocab.saturating_sub(1).to_string().len();
        let mut source_surface = Vec::with_capacity(vocab);
        let mut target_surface = Vec::with_capacity(vocab);
        for c in 0..vocab {
            if shared.contains(&c) {
                let s = format!("x{c:0width$}");
                source_surface.push(s.clone());
                target_surface.push(s);
            } else {
                source_surface.push(format!("s{c:0width$}"));
                target_surface.push(format!("t{c:0width$}"));
            }
        }
        Self {
            types,
            gazetteer,
            common_names,
            triggers_per_type,
            filler_start,
            vocab,
            source_surface,
            target_surface,
        }
    }

    fn mapping(&self) -> TokenMapping {
        let pairs = self
            .source_surface
            .iter()
            .cloned()
            .zip(self.target_surface.iter().cloned())
            .collect();
        TokenMapping::new(pairs).expect("surface forms are unique per language")
    }

    fn name(&self, ty: usize, k: usize) -> usize {
        ty * self.gazetteer + k
    }

    fn trigger(&self, ty: usize, k: usize) -> usize {
        self.types * self.gazetteer + ty * self.triggers_per_type + k
    }

    fn filler_count(&self) -> usize {
        self.vocab - self.filler_start
    }
}

fn entity_length(rng: &mut ChaCha8Rng, budget: usize) -> usize {
    let len = match rng.gen_range(0..10) {
        0..=3 => 1,
        4..=7 => 2,
        _ => 3,
    };
    len.min(budget).max(1)
}

fn build_template(lex: &Lexicon, config: &GenConfig, ty: usize, k: usize) -> Vec<Slot> {
    let mut rng = stream_rng(config.seed, "template", (ty * config.templates_per_type + k) as u64);
    let max_len = config.max_sentence_len;
    // primary entity with 1-2 triggers, optional secondary with 1 trigger
    let mut units: Vec<Vec<Slot>> = Vec::new();
    let triggers = if max_len >= 5 { rng.gen_range(1..=2) } else { 1 };
    let mut used = triggers + 2;
    let len = entity_length(&mut rng, max_len.saturating_sub(used).max(1));
    used += len - 1;
    let mut primary: Vec<Slot> = (0..triggers)
        .map(|_| Slot::Trigger(ty))
        .collect();
    primary.push(Slot::Entity { ty, len });
    units.push(primary);

    if lex.types > 1 && max_len >= used + 3 && rng.gen_bool(0.4) {
        let mut other = rng.gen_range(0..lex.types - 1);
        if other >= ty {
            other += 1;
        }
        let len2 = entity_length(&mut rng, max_len - used - 2);
        used += 2 + len2;
        let secondary = vec![Slot::Trigger(other), Slot::Entity { ty: other, len: len2 }];
        if rng.gen_bool(0.5) {
            units.insert(0, secondary);
        } else {
            units.push(secondary);
        }
    }
    // at least one filler, spread across the gaps between units
    let room = max_len.saturating_sub(used - 1);
    let fillers = rng.gen_range(1..=room.clamp(1, 5));
    let mut gaps = vec![0usize; units.len() + 1];
    for _ in 0..fillers {
        let g = rng.gen_range(0..gaps.len());
        gaps[g] += 1;
    }
    let mut template = Vec::new();
    for (i, unit) in units.into_iter().enumerate() {
        template.extend(std::iter::repeat_n(Slot::Filler, gaps[i]));
        template.extend(unit);
    }
    template.extend(std::iter::repeat_n(Slot::Filler, gaps[gaps.len() - 1]));
    template
}

/// Concept ids and labels of one sentence.
fn fill_template(
    lex: &Lexicon,
    label_set: &LabelSet,
    template: &[Slot],
    names_available: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut concepts = Vec::new();
    let mut labels = Vec::new();
    for slot in template {
        match *slot {
            Slot::Filler => {
                concepts.push(lex.filler_start + rng.gen_range(0..lex.filler_count()));
                labels.push(label_set.outside());
            }
            Slot::Trigger(ty) => {
                concepts.push(lex.trigger(ty, rng.gen_range(0..lex.triggers_per_type)));
                labels.push(label_set.outside());
            }
            Slot::Entity { ty, len } => {
                for i in 0..len {
                    concepts.push(lex.name(ty, rng.gen_range(0..names_available)));
                    labels.push(if i == 0 {
                        label_set.begin(ty)
                    } else {
                        label_set.inside(ty)
                    });
                }
            }
        }
    }
    (concepts, labels)
}

struct Generator<'a> {
    config: &'a GenConfig,
    lex: Lexicon,
    label_set: LabelSet,
    templates: Vec<Vec<Vec<Slot>>>,
}

impl Generator<'_> {
    /// Source-language sentence for stream `purpose`, draw `index`. The
    /// primary entity type cycles with `index` so every type occurs.
    fn source_sentence(&self, purpose: &str, index: u64, ordinal: usize, rare: bool) -> LabeledSentence {
        let mut rng = stream_rng(self.config.seed, purpose, index);
        let ty = ordinal % self.lex.types;
        let template = &self.templates[ty][rng.gen_range(0..self.config.templates_per_type)];
        let names = if rare { self.lex.gazetteer } else { self.lex.common_names };
        let (concepts, labels) = fill_template(&self.lex, &self.label_set, template, names, &mut rng);
        let tokens = concepts
            .into_iter()
            .map(|c| self.lex.source_surface[c].clone())
            .collect();
        LabeledSentence { tokens, labels }
    }
}

pub fn generate(config: &GenConfig) -> Result<BilingualCorpora, GenError> {
    config.validate()?;
    let label_set = config.label_set()?;
    let lex = Lexicon::new(config);
    let mapping = lex.mapping();
    let templates = (0..lex.types)
        .map(|ty| {
            (0..config.templates_per_type)
                .map(|k| build_template(&lex, config, ty, k))
                .collect()
        })
        .collect();
    let gen = Generator {
        config,
        lex,
        label_set: label_set.clone(),
        templates,
    };
    let seed = config.seed;

    let mut src = Vec::with_capacity(config.n_train);
    let mut tgt = Vec::with_capacity(config.n_train);
    let mut translation_seeds = Vec::with_capacity(config.n_train);
    for i in 0..config.n_train {
        let s = gen.source_sentence("train", i as u64, i, false);
        let t_seed = stream_seed(seed, "translate-train", i as u64);
        tgt.push(translate_sentence(&s, &mapping, t_seed, &label_set)?);
        src.push(s);
        translation_seeds.push(t_seed);
    }

    let dev: Vec<LabeledSentence> = (0..config.n_dev)
        .map(|i| gen.source_sentence("dev", i as u64, i, true))
        .collect();

    let mut unlabeled = Vec::with_capacity(config.n_unlabeled);
    for i in 0..config.n_unlabeled {
        let s = gen.source_sentence("unlabeled", i as u64, i, true);
        let t_seed = stream_seed(seed, "translate-unlabeled", i as u64);
        unlabeled.push(translate_sentence(&s, &mapping, t_seed, &label_set)?);
    }

    let seen: HashSet<&[String]> = tgt
        .iter()
        .chain(&unlabeled)
        .map(|s| s.tokens.as_slice())
        .collect();
    let mut test = Vec::with_capacity(config.n_test);
    let mut test_seen = HashSet::new();
    for i in 0..config.n_test {
        let mut attempt = 0u64;
        loop {
            let draw = (attempt << 32) | i as u64;
            let s = gen.source_sentence("test", draw, i, true);
            let t_seed = stream_seed(seed, "translate-test", draw);
            let t = translate_sentence(&s, &mapping, t_seed, &label_set)?;
            if !seen.contains(t.tokens.as_slice()) && test_seen.insert(t.tokens.clone()) {
                test.push(t);
                break;
            }
            attempt += 1;
            if attempt > 1000 {
                return Err(GenError::InfeasibleConfig(
                    "cannot draw test sentences disjoint from training data".into(),
                ));
            }
        }
    }

    let corpus = |sentences, lang: &str| Corpus::new(sentences, label_set.clone(), lang);
    Ok(BilingualCorpora {
        d_src: corpus(src, SOURCE_LANGUAGE)?,
        d_tgt: corpus(tgt, TARGET_LANGUAGE)?,
        d_unlabeled: corpus(unlabeled, TARGET_LANGUAGE)?,
        d_test: corpus(test, TARGET_LANGUAGE)?,
        d_dev: corpus(dev, SOURCE_LANGUAGE)?,
        mapping,
        translation_seeds,
    })
}

/// Problems found by [`check_invariants`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct InvariantReport {
    pub problems: Vec<String>,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.problems {
            writeln!(f, "{p}")?;
        }
        Ok(())
    }
}

fn entity_shape(sentence: &LabeledSentence, label_set: &LabelSet) -> Vec<(usize, usize)> {
    let mut shape: Vec<(usize, usize)> = extract_entities(&sentence.labels, label_set)
        .expect("labels in range")
        .into_iter()
        .map(|s| (s.entity_type, s.len()))
        .collect();
    shape.sort_unstable();
    shape
}

/// Checks alignment, label preservation, test disjointness, IOB2 validity and
/// per-corpus type coverage.
pub fn check_invariants(c: &BilingualCorpora) -> InvariantReport {
    let mut report = InvariantReport::default();
    let set = &c.d_src.label_set;
    if c.d_src.len() != c.d_tgt.len() {
        report
            .problems
            .push(format!("d_src has {} sentences, d_tgt {}", c.d_src.len(), c.d_tgt.len()));
    }
    for (i, (s, t)) in c.d_src.sentences.iter().zip(&c.d_tgt.sentences).enumerate() {
        if entity_shape(s, set) != entity_shape(t, set) {
            report.problems.push(format!("pair {i}: entity multisets differ"));
        }
        if let Some(&seed) = c.translation_seeds.get(i) {
            match translate_sentence(s, &c.mapping, seed, set) {
                Ok(again) if &again == t => {}
                _ => report.problems.push(format!("pair {i}: not reproducible from its seed")),
            }
        }
    }
    let seen: HashSet<&[String]> = c
        .d_tgt
        .sentences
        .iter()
        .chain(&c.d_unlabeled.sentences)
        .map(|s| s.tokens.as_slice())
        .collect();
    for (i, s) in c.d_test.sentences.iter().enumerate() {
        if seen.contains(s.tokens.as_slice()) {
            report.problems.push(format!("test sentence {i} also occurs in training data"));
        }
    }
    for (name, corpus) in [
        ("d_src", &c.d_src),
        ("d_tgt", &c.d_tgt),
        ("d_unlabeled", &c.d_unlabeled),
        ("d_test", &c.d_test),
        ("d_dev", &c.d_dev),
    ] {
        let mut types = HashSet::new();
        for (i, s) in corpus.sentences.iter().enumerate() {
            match crate::corpus::validate_iob2(&s.labels, set) {
                Ok(v) if v.is_empty() => {}
                _ => report.problems.push(format!("{name} sentence {i}: invalid IOB2")),
            }
            for &l in &s.labels {
                if let Tag::Begin(t) = set.tag(l) {
                    types.insert(t);
                }
            }
        }
        if types.len() != set.entity_types().len() {
            report.problems.push(format!("{name}: not every entity type occurs"));
        }
    }
    report
}

pub const CORPUS_FILES: [&str; 5] = [
    "d_src.conll",
    "d_tgt.conll",
    "d_unlabeled.conll",
    "d_test.conll",
    "d_dev.conll",
];
pub const MAPPING_FILE: &str = "phi.tsv";
pub const SEEDS_FILE: &str = "seeds.tsv";
pub const GEN_MANIFEST_FILE: &str = "manifest.txt";

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, GenError> {
    fs::write(&path, contents).map_err(|source| GenError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the five corpora, the token mapping, the per-sentence translation
/// seeds and a key=value manifest (`config_echo` lines first). Returns the
/// written paths in that order.
pub fn write_corpora(
    dir: &Path,
    corpora: &BilingualCorpora,
    config_echo: &[(String, String)],
) -> Result<Vec<PathBuf>, GenError> {
    fs::create_dir_all(dir).map_err(|source| GenError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, corpus) in CORPUS_FILES.iter().zip([
        &corpora.d_src,
        &corpora.d_tgt,
        &corpora.d_unlabeled,
        &corpora.d_test,
        &corpora.d_dev,
    ]) {
        written.push(write(dir.join(name), &serialize_conll(corpus))?);
    }
    written.push(write(dir.join(MAPPING_FILE), &corpora.mapping.to_tsv())?);
    let seeds: String = corpora
        .translation_seeds
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i}\t{s}\n"))
        .collect();
    written.push(write(dir.join(SEEDS_FILE), &seeds)?);

    let mut manifest = String::new();
    for (k, v) in config_echo {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    manifest.push_str(&format!("mapping_file={MAPPING_FILE}\n"));
    manifest.push_str(&format!("seeds_file={SEEDS_FILE}\n"));
    for (name, corpus) in CORPUS_FILES.iter().zip([
        &corpora.d_src,
        &corpora.d_tgt,
        &corpora.d_unlabeled,
        &corpora.d_test,
        &corpora.d_dev,
    ]) {
        manifest.push_str(&format!("corpus.{}={name}\n", name.trim_end_matches(".conll")));
        manifest.push_str(&format!(
            "corpus.{}.sentences={}\n",
            name.trim_end_matches(".conll"),
            corpus.len()
        ));
    }
    written.push(write(dir.join(GEN_MANIFEST_FILE), &manifest)?);
    Ok(written)
}

/// Reads back a directory written by [`write_corpora`].
pub fn read_corpora(dir: &Path, label_set: &LabelSet) -> Result<BilingualCorpora, GenError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| GenError::Io { path, source })
    };
    let mut corpora = Vec::new();
    for (name, lang) in CORPUS_FILES.iter().zip([
        SOURCE_LANGUAGE,
        TARGET_LANGUAGE,
        TARGET_LANGUAGE,
        TARGET_LANGUAGE,
        SOURCE_LANGUAGE,
    ]) {
        corpora.push(parse_conll(&read(name)?, label_set)?.with_language(lang));
    }
    let bad = |name: &str, message: String| GenError::BadFile {
        path: dir.join(name),
        message,
    };
    let mut pairs = Vec::new();
    for line in read(MAPPING_FILE)?.lines() {
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| bad(MAPPING_FILE, format!("bad line {line:?}")))?;
        pairs.push((s.to_string(), t.to_string()));
    }
    let mut translation_seeds = Vec::new();
    for line in read(SEEDS_FILE)?.lines() {
        let seed = line
            .split_once('\t')
            .and_then(|(_, s)| s.parse().ok())
            .ok_or_else(|| bad(SEEDS_FILE, format!("bad line {line:?}")))?;
        translation_seeds.push(seed);
    }
    let mut it = corpora.into_iter();
    let mut next = || it.next().expect("five corpora");
    Ok(BilingualCorpora {
        d_src: next(),
        d_tgt: next(),
        d_unlabeled: next(),
        d_test: next(),
        d_dev: next(),
        mapping: TokenMapping::new(pairs)?,
        translation_seeds,
    })
}
