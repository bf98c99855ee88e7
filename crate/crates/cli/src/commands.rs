use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use concner_core::bilingen::{generate, read_corpora, write_corpora, BilingualCorpora, CORPUS_FILES};
use concner_core::config::RunConfig;
use concner_core::corpus::{parse_conll, serialize_conll, Corpus, CorpusError, LabelSet, LabeledSentence};
use concner_core::eval::{entity_f1, label_agreement};
use concner_core::experiment::{run_grid, Variant};
use concner_core::trainer::{
    distill_student, predict_corpus, predict_ids, train_teacher, Checkpoint, TrainError,
};

use crate::error::CliError;
use crate::manifest::{sha256_file, RunManifest};

pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const STUDENT_FILE: &str = "student.ckpt";
pub const STUDENT_INIT_FILE: &str = "student_init.ckpt";
pub const DISTILL_LOG_FILE: &str = "distill.log";
pub const DUMP_FILE: &str = "nonfinite_dump.txt";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const PREDICTIONS_FILE: &str = "predictions.conll";
pub const RESULTS_FILE: &str = "results.tsv";

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Defaults, then the config file, then validation.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(p) = path {
        config.apply_text(&read_text(p)?)?;
    }
    Ok(config)
}

/// Sentences of whitespace-separated columns, blank-line separated; only the
/// first column (the token) is kept.
pub fn read_raw_tokens(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        match line.split_whitespace().next() {
            Some(token) => current.push(token.to_string()),
            None if !current.is_empty() => out.push(std::mem::take(&mut current)),
            None => {}
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Parses a labeled corpus against the checkpoint's label set, reporting
/// both label sets when the file uses labels the checkpoint lacks.
fn parse_against(path: &Path, label_set: &LabelSet) -> Result<Corpus, CliError> {
    let text = read_text(path)?;
    match parse_conll(&text, label_set) {
        Ok(c) => Ok(c),
        Err(CorpusError::UnknownLabel { .. }) => {
            let found: BTreeSet<&str> = text
                .lines()
                .filter_map(|l| l.split_whitespace().nth(1))
                .collect();
            Err(CliError::LabelSetMismatch {
                checkpoint: label_set.labels().join(" "),
                corpus: found.into_iter().collect::<Vec<_>>().join(" "),
            })
        }
        Err(source) => Err(CliError::Corpus {
            path: path.to_path_buf(),
            source,
        }),
    }
}

pub fn cmd_gen(config: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    config.validate()?;
    let corpora = generate(&config.gen)?;
    let written = write_corpora(out, &corpora, &config.echo())?;
    let mut manifest = RunManifest::new("gen", config.echo());
    for path in &written {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file").to_string();
        manifest.artifact(&name, path)?;
    }
    manifest.result("seed", config.gen.seed);
    manifest.write(out)?;
    Ok(manifest)
}

fn load_corpora(config: &RunConfig, data: &Path, manifest: &mut RunManifest) -> Result<BilingualCorpora, CliError> {
    let corpora = read_corpora(data, &config.gen.label_set()?)?;
    for name in CORPUS_FILES {
        manifest.input(name, &data.join(name))?;
    }
    Ok(corpora)
}

pub fn cmd_train(config: &RunConfig, data: &Path, out: &Path) -> Result<RunManifest, CliError> {
    config.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("train", config.echo());
    let corpora = load_corpora(config, data, &mut manifest)?;
    let run = match train_teacher(&config.train, &config.model, &corpora, &corpora.d_dev) {
        Err(TrainError::NonFiniteLoss { step, dump }) => {
            write_text(&out.join(DUMP_FILE), &dump)?;
            return Err(TrainError::NonFiniteLoss { step, dump }.into());
        }
        other => other?,
    };
    let ckpt = out.join(TEACHER_FILE);
    run.checkpoint.save(&ckpt)?;
    let log = out.join(TRAIN_LOG_FILE);
    write_text(&log, &run.log.to_text())?;
    manifest.artifact("teacher", &ckpt)?;
    manifest.artifact("log", &log)?;
    manifest.result("seed", config.train.seed);
    manifest.result("steps", run.final_step);
    manifest.result("best_step", run.checkpoint.step);
    manifest.result("best_dev_f1", run.checkpoint.dev_f1.unwrap_or(0.0));
    manifest.write(out)?;
    Ok(manifest)
}

pub fn cmd_distill(
    config: &RunConfig,
    teacher_path: &Path,
    unlabeled_path: &Path,
    check_architecture: bool,
    out: &Path,
) -> Result<RunManifest, CliError> {
    config.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("distill", config.echo());
    let before = sha256_file(teacher_path)?;
    manifest.input("teacher", teacher_path)?;
    manifest.input("unlabeled", unlabeled_path)?;
    let teacher = Checkpoint::load(teacher_path)?;
    let sentences = read_raw_tokens(&read_text(unlabeled_path)?)
        .into_iter()
        .map(|tokens| {
            let labels = vec![teacher.label_set.outside(); tokens.len()];
            LabeledSentence { tokens, labels }
        })
        .collect();
    let unlabeled = Corpus::new(sentences, teacher.label_set.clone(), "und").map_err(|source| CliError::Corpus {
        path: unlabeled_path.to_path_buf(),
        source,
    })?;
    let model = check_architecture.then_some(&config.model);
    let run = distill_student(&teacher, &unlabeled, &config.train, model)?;

    let init_path = out.join(STUDENT_INIT_FILE);
    let mut init = run.checkpoint.clone();
    init.params = run.init.clone();
    init.step = 0;
    init.save(&init_path)?;
    let student_path = out.join(STUDENT_FILE);
    run.checkpoint.save(&student_path)?;
    let log = out.join(DISTILL_LOG_FILE);
    write_text(&log, &run.log.to_text())?;

    let teacher_labels = predict_corpus(&teacher, &unlabeled)?;
    let student_labels = predict_corpus(&run.checkpoint, &unlabeled)?;
    let agreement = label_agreement(&teacher_labels, &student_labels)?;

    if sha256_file(teacher_path)? != before {
        return Err(CliError::TeacherModified(teacher_path.to_path_buf()));
    }
    manifest.artifact("student_init", &init_path)?;
    manifest.artifact("student", &student_path)?;
    manifest.artifact("log", &log)?;
    manifest.result("seed", config.train.seed);
    manifest.result("steps", run.checkpoint.step);
    manifest.result("teacher_sha256_before", &before);
    manifest.result("teacher_sha256_after", sha256_file(teacher_path)?);
    manifest.result("agreement", agreement);
    manifest.write(out)?;
    Ok(manifest)
}

pub fn cmd_eval(checkpoint: &Path, corpus_path: &Path, out: &Path) -> Result<(RunManifest, String), CliError> {
    create_dir(out)?;
    let mut manifest = RunManifest::new("eval", Vec::new());
    manifest.input("checkpoint", checkpoint)?;
    manifest.input("corpus", corpus_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let gold = parse_against(corpus_path, &ckpt.label_set)?;
    let predicted = predict_corpus(&ckpt, &gold)?;
    let report = entity_f1(&gold, &predicted)?;
    let text = report.to_text();
    let text_path = out.join(REPORT_TEXT_FILE);
    write_text(&text_path, &text)?;
    let kv_path = out.join(REPORT_KV_FILE);
    write_text(&kv_path, &report.to_key_values())?;
    manifest.artifact("report_text", &text_path)?;
    manifest.artifact("report_kv", &kv_path)?;
    manifest.result("micro_f1", report.micro.f1);
    manifest.write(out)?;
    Ok((manifest, text))
}

pub fn cmd_predict(checkpoint: &Path, input: &Path, out: &Path) -> Result<PathBuf, CliError> {
    create_dir(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let sentences = read_raw_tokens(&read_text(input)?);
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| ckpt.vocab.encode(s)).collect();
    let labels = predict_ids(&ckpt.params, &ids, &ckpt.label_set)?;
    let labeled = sentences
        .into_iter()
        .zip(labels)
        .map(|(tokens, labels)| LabeledSentence { tokens, labels })
        .collect();
    let corpus = Corpus::new(labeled, ckpt.label_set.clone(), "und").map_err(|source| CliError::Corpus {
        path: input.to_path_buf(),
        source,
    })?;
    let path = out.join(PREDICTIONS_FILE);
    write_text(&path, &serialize_conll(&corpus))?;
    let mut manifest = RunManifest::new("predict", Vec::new());
    manifest.input("checkpoint", checkpoint)?;
    manifest.input("tokens", input)?;
    manifest.artifact("predictions", &path)?;
    manifest.write(out)?;
    Ok(path)
}

pub fn parse_variants(list: &str) -> Result<Vec<Variant>, CliError> {
    if list == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    list.split(',')
        .map(|name| {
            Variant::ALL
                .iter()
                .copied()
                .find(|v| v.name() == name.trim())
                .ok_or_else(|| CliError::UnknownVariant(name.to_string()))
        })
        .collect()
}

pub fn cmd_experiment(
    config: &RunConfig,
    data: Option<&Path>,
    variants: &[Variant],
    seeds: &[u64],
    out: &Path,
) -> Result<String, CliError> {
    config.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("experiment", config.echo());
    let corpora = match data {
        Some(dir) => load_corpora(config, dir, &mut manifest)?,
        None => generate(&config.gen)?,
    };
    let table = run_grid(variants, seeds, &config.train, &config.model, &corpora)?;
    let tsv = table.to_tsv();
    let path = out.join(RESULTS_FILE);
    write_text(&path, &tsv)?;
    manifest.artifact("results", &path)?;
    manifest.result(
        "seeds",
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    manifest.write(out)?;
    Ok(tsv)
}
