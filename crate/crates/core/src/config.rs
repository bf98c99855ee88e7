//! Plain `key=value` run configuration with `#` comments.
//!
//! Keys are grouped under `gen.`, `model.` and `train.`. Unknown keys are
//! rejected; values are validated per field so errors name the offending key.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bilingen::GenConfig;
use crate::trainer::{ModelConfig, StudentInit, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "gen.vocab_size_per_language",
    "gen.overlap_fraction",
    "gen.entity_types",
    "gen.gazetteer_size_per_type",
    "gen.templates_per_type",
    "gen.rare_name_fraction",
    "gen.n_train",
    "gen.n_unlabeled",
    "gen.n_test",
    "gen.n_dev",
    "gen.max_sentence_len",
    "gen.seed",
    "model.embed_dim",
    "model.num_layers",
    "model.num_heads",
    "model.ffn_dim",
    "model.max_len",
    "model.init_scale",
    "train.batch_size",
    "train.epochs",
    "train.max_steps",
    "train.learning_rate",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "train.alpha",
    "train.beta",
    "train.tau_lcl",
    "train.tau_tcl",
    "train.eval_every",
    "train.seed",
    "train.use_lcl",
    "train.use_tcl",
    "train.use_kd",
    "train.use_src",
    "train.use_tgt",
    "train.lcl_include_o",
    "train.kd_epochs",
    "train.kd_steps",
    "train.student_init",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse {value:?}")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<u64>, ConfigError> {
    match value {
        "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(invalid(key, format!("expected true or false, found {v:?}"))),
    }
}

fn show_optional(v: Option<u64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let g = &mut self.gen;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "gen.vocab_size_per_language" => g.vocab_size_per_language = parse(key, value)?,
            "gen.overlap_fraction" => g.overlap_fraction = parse(key, value)?,
            "gen.entity_types" => {
                g.entity_types = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "gen.gazetteer_size_per_type" => g.gazetteer_size_per_type = parse(key, value)?,
            "gen.templates_per_type" => g.templates_per_type = parse(key, value)?,
            "gen.rare_name_fraction" => g.rare_name_fraction = parse(key, value)?,
            "gen.n_train" => g.n_train = parse(key, value)?,
            "gen.n_unlabeled" => g.n_unlabeled = parse(key, value)?,
            "gen.n_test" => g.n_test = parse(key, value)?,
            "gen.n_dev" => g.n_dev = parse(key, value)?,
            "gen.max_sentence_len" => g.max_sentence_len = parse(key, value)?,
            "gen.seed" => g.seed = parse(key, value)?,
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.num_layers" => m.num_layers = parse(key, value)?,
            "model.num_heads" => m.num_heads = parse(key, value)?,
            "model.ffn_dim" => m.ffn_dim = parse(key, value)?,
            "model.max_len" => m.max_len = parse(key, value)?,
            "model.init_scale" => m.init_scale = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.max_steps" => t.max_steps = parse_optional(key, value)?,
            "train.learning_rate" => t.optimizer.learning_rate = parse(key, value)?,
            "train.beta1" => t.optimizer.beta1 = parse(key, value)?,
            "train.beta2" => t.optimizer.beta2 = parse(key, value)?,
            "train.eps" => t.optimizer.eps = parse(key, value)?,
            "train.weight_decay" => t.optimizer.weight_decay = parse(key, value)?,
            "train.alpha" => t.weights.alpha = parse(key, value)?,
            "train.beta" => t.weights.beta = parse(key, value)?,
            "train.tau_lcl" => t.weights.tau_lcl = parse(key, value)?,
            "train.tau_tcl" => t.weights.tau_tcl = parse(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.use_lcl" => t.use_lcl = parse_bool(key, value)?,
            "train.use_tcl" => t.use_tcl = parse_bool(key, value)?,
            "train.use_kd" => t.use_kd = parse_bool(key, value)?,
            "train.use_src" => t.use_src = parse_bool(key, value)?,
            "train.use_tgt" => t.use_tgt = parse_bool(key, value)?,
            "train.lcl_include_o" => t.lcl_include_o = parse_bool(key, value)?,
            "train.kd_epochs" => t.kd_epochs = parse(key, value)?,
            "train.kd_steps" => t.kd_steps = parse_optional(key, value)?,
            "train.student_init" => {
                t.student_init = match value {
                    "fresh" => StudentInit::Fresh,
                    "copy-teacher" => StudentInit::CopyTeacher,
                    v => return Err(invalid(key, format!("expected fresh or copy-teacher, found {v:?}"))),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (g, m, t) = (&self.gen, &self.model, &self.train);
        Some(match key {
            "gen.vocab_size_per_language" => g.vocab_size_per_language.to_string(),
            "gen.overlap_fraction" => g.overlap_fraction.to_string(),
            "gen.entity_types" => g.entity_types.join(","),
            "gen.gazetteer_size_per_type" => g.gazetteer_size_per_type.to_string(),
            "gen.templates_per_type" => g.templates_per_type.to_string(),
            "gen.rare_name_fraction" => g.rare_name_fraction.to_string(),
            "gen.n_train" => g.n_train.to_string(),
            "gen.n_unlabeled" => g.n_unlabeled.to_string(),
            "gen.n_test" => g.n_test.to_string(),
            "gen.n_dev" => g.n_dev.to_string(),
            "gen.max_sentence_len" => g.max_sentence_len.to_string(),
            "gen.seed" => g.seed.to_string(),
            "model.embed_dim" => m.embed_dim.to_string(),
            "model.num_layers" => m.num_layers.to_string(),
            "model.num_heads" => m.num_heads.to_string(),
            "model.ffn_dim" => m.ffn_dim.to_string(),
            "model.max_len" => m.max_len.to_string(),
            "model.init_scale" => m.init_scale.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.max_steps" => show_optional(t.max_steps),
            "train.learning_rate" => t.optimizer.learning_rate.to_string(),
            "train.beta1" => t.optimizer.beta1.to_string(),
            "train.beta2" => t.optimizer.beta2.to_string(),
            "train.eps" => t.optimizer.eps.to_string(),
            "train.weight_decay" => t.optimizer.weight_decay.to_string(),
            "train.alpha" => t.weights.alpha.to_string(),
            "train.beta" => t.weights.beta.to_string(),
            "train.tau_lcl" => t.weights.tau_lcl.to_string(),
            "train.tau_tcl" => t.weights.tau_tcl.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.use_lcl" => t.use_lcl.to_string(),
            "train.use_tcl" => t.use_tcl.to_string(),
            "train.use_kd" => t.use_kd.to_string(),
            "train.use_src" => t.use_src.to_string(),
            "train.use_tgt" => t.use_tgt.to_string(),
            "train.lcl_include_o" => t.lcl_include_o.to_string(),
            "train.kd_epochs" => t.kd_epochs.to_string(),
            "train.kd_steps" => show_optional(t.kd_steps),
            "train.student_init" => match t.student_init {
                StudentInit::Fresh => "fresh".to_string(),
                StudentInit::CopyTeacher => "copy-teacher".to_string(),
            },
            _ => return None,
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("every listed key resolves")))
            .collect()
    }

    /// Field-level range checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (g, m, t) = (&self.gen, &self.model, &self.train);
        let unit = |key: &str, v: f64, closed: bool| {
            let ok = if closed { (0.0..=1.0).contains(&v) } else { (0.0..1.0).contains(&v) };
            if ok {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} outside [0,1{}", if closed { "]" } else { ")" })))
            }
        };
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(invalid(key, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        let positive_real = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be positive and finite")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be non-negative and finite")))
            }
        };

        unit("gen.overlap_fraction", g.overlap_fraction, true)?;
        unit("gen.rare_name_fraction", g.rare_name_fraction, false)?;
        if g.entity_types.is_empty() {
            return Err(invalid("gen.entity_types", "at least one entity type required"));
        }
        positive("gen.vocab_size_per_language", g.vocab_size_per_language)?;
        positive("gen.gazetteer_size_per_type", g.gazetteer_size_per_type)?;
        positive("gen.templates_per_type", g.templates_per_type)?;
        positive("gen.n_train", g.n_train)?;
        positive("gen.n_unlabeled", g.n_unlabeled)?;
        positive("gen.n_test", g.n_test)?;
        positive("gen.n_dev", g.n_dev)?;
        if g.max_sentence_len < 3 {
            return Err(invalid("gen.max_sentence_len", format!("{} < 3", g.max_sentence_len)));
        }

        positive("model.embed_dim", m.embed_dim)?;
        positive("model.num_heads", m.num_heads)?;
        if m.embed_dim % m.num_heads != 0 {
            return Err(invalid(
                "model.num_heads",
                format!("{} does not divide embed_dim {}", m.num_heads, m.embed_dim),
            ));
        }
        positive("model.ffn_dim", m.ffn_dim)?;
        if m.max_len < g.max_sentence_len {
            return Err(invalid(
                "model.max_len",
                format!("{} is below gen.max_sentence_len {}", m.max_len, g.max_sentence_len),
            ));
        }
        non_negative("model.init_scale", m.init_scale)?;

        positive("train.batch_size", t.batch_size)?;
        if t.eval_every == 0 {
            return Err(invalid("train.eval_every", "must be at least 1"));
        }
        non_negative("train.learning_rate", t.optimizer.learning_rate)?;
        unit("train.beta1", t.optimizer.beta1, false)?;
        unit("train.beta2", t.optimizer.beta2, false)?;
        positive_real("train.eps", t.optimizer.eps)?;
        non_negative("train.weight_decay", t.optimizer.weight_decay)?;
        non_negative("train.alpha", t.weights.alpha)?;
        non_negative("train.beta", t.weights.beta)?;
        positive_real("train.tau_lcl", t.weights.tau_lcl)?;
        positive_real("train.tau_tcl", t.weights.tau_tcl)?;
        if !t.use_src && !t.use_tgt {
            return Err(invalid("train.use_src", "use_src and use_tgt cannot both be false"));
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.echo() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
        assert_eq!(c.echo().len(), KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\ngen.n_train = 40  # fewer\ntrain.use_lcl=false\n").unwrap();
        assert_eq!(c.gen.n_train, 40);
        assert!(!c.train.use_lcl);
    }

    #[test]
    fn overlap_out_of_range_names_the_field() {
        let c = RunConfig::parse("gen.overlap_fraction=1.5").unwrap();
        let err = c.validate().unwrap_err();
        assert!(matches!(&err, ConfigError::InvalidValue { key, .. } if key == "gen.overlap_fraction"));
        assert!(err.to_string().contains("gen.overlap_fraction"));
    }

    #[test]
    fn syntax_and_key_errors() {
        assert_eq!(
            RunConfig::parse("a\ngen.seed").unwrap_err(),
            ConfigError::Syntax {
                line: 1,
                text: "a".into()
            }
        );
        assert_eq!(
            RunConfig::parse("gen.colour=blue").unwrap_err(),
            ConfigError::UnknownKey("gen.colour".into())
        );
        assert!(matches!(
            RunConfig::parse("train.use_tcl=yes").unwrap_err(),
            ConfigError::InvalidValue { key, .. } if key == "train.use_tcl"
        ));
        assert!(matches!(
            RunConfig::parse("gen.n_train=-3").unwrap_err(),
            ConfigError::InvalidValue { key, .. } if key == "gen.n_train"
        ));
    }

    #[test]
    fn optional_and_enum_values() {
        let c = RunConfig::parse("train.kd_steps=0\ntrain.max_steps=none\ntrain.student_init=copy-teacher").unwrap();
        assert_eq!(c.train.kd_steps, Some(0));
        assert_eq!(c.train.max_steps, None);
        assert_eq!(c.train.student_init, StudentInit::CopyTeacher);
        assert_eq!(c.get("train.kd_steps").unwrap(), "0");
    }

    #[test]
    fn cross_field_checks() {
        let c = RunConfig::parse("model.num_heads=3").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::InvalidValue { key, .. }) if key == "model.num_heads"));
        let c = RunConfig::parse("train.use_src=false\ntrain.use_tgt=false").unwrap();
        assert!(c.validate().is_err());
    }
}
