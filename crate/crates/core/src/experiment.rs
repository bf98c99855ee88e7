//! Multi-seed variant grid scored on the target-language test set.

use std::fmt::Write as _;

use crate::bilingen::BilingualCorpora;
use crate::eval::entity_f1;
use crate::trainer::{distill_student, predict_corpus, train_teacher, ModelConfig, TrainConfig, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// CE on source sentences only.
    En,
    /// CE on translated sentences only.
    Trans,
    /// CE on the union.
    EnTrans,
    EnTransLcl,
    EnTransTcl,
    /// CE + LCL + TCL on the union.
    Full,
    /// Full teacher distilled into a student on unlabeled target data.
    FullKd,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::En,
        Variant::Trans,
        Variant::EnTrans,
        Variant::EnTransLcl,
        Variant::EnTransTcl,
        Variant::Full,
        Variant::FullKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::En => "En",
            Variant::Trans => "Trans",
            Variant::EnTrans => "En+Trans",
            Variant::EnTransLcl => "En+Trans+LCL",
            Variant::EnTransTcl => "En+Trans+TCL",
            Variant::Full => "En+Trans+LCL+TCL",
            Variant::FullKd => "En+Trans+LCL+TCL+KD",
        }
    }

    /// `base` with the variant's toggles applied.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let (src, tgt, lcl, tcl, kd) = match self {
            Variant::En => (true, false, false, false, false),
            Variant::Trans => (false, true, false, false, false),
            Variant::EnTrans => (true, true, false, false, false),
            Variant::EnTransLcl => (true, true, true, false, false),
            Variant::EnTransTcl => (true, true, false, true, false),
            Variant::Full => (true, true, true, true, false),
            Variant::FullKd => (true, true, true, true, true),
        };
        c.use_src = src;
        c.use_tgt = tgt;
        c.use_lcl = lcl;
        c.use_tcl = tcl;
        c.use_kd = kd;
        c
    }
}

/// Target-test micro-F1 of one variant under one training seed.
pub fn run_variant(
    variant: Variant,
    base: &TrainConfig,
    model: &ModelConfig,
    corpora: &BilingualCorpora,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut config = variant.configure(base);
    config.seed = seed;
    let teacher = train_teacher(&config, model, corpora, &corpora.d_dev)?.checkpoint;
    let scored = if config.use_kd {
        distill_student(&teacher, &corpora.d_unlabeled, &config, Some(model))?.checkpoint
    } else {
        teacher
    };
    let predicted = predict_corpus(&scored, &corpora.d_test)?;
    Ok(entity_f1(&corpora.d_test, &predicted)?.micro.f1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentTable {
    pub seeds: Vec<u64>,
    /// `(variant, per-seed F1)` rows.
    pub rows: Vec<(Variant, Vec<f64>)>,
}

impl ExperimentTable {
    pub fn mean(&self, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|(v, _)| *v == variant)
            .map(|(_, f)| f.iter().sum::<f64>() / f.len() as f64)
    }

    /// Header `variant seed=.. mean`, one row per variant, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            let _ = write!(out, "\tseed={s}");
        }
        out.push_str("\tmean\n");
        for (v, f1s) in &self.rows {
            out.push_str(v.name());
            for f in f1s {
                let _ = write!(out, "\t{f:.4}");
            }
            let _ = writeln!(out, "\t{:.4}", self.mean(*v).unwrap_or(0.0));
        }
        out
    }
}

pub fn run_grid(
    variants: &[Variant],
    seeds: &[u64],
    base: &TrainConfig,
    model: &ModelConfig,
    corpora: &BilingualCorpora,
) -> Result<ExperimentTable, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let f1s = seeds
            .iter()
            .map(|&s| run_variant(v, base, model, corpora, s))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((v, f1s));
    }
    Ok(ExperimentTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
