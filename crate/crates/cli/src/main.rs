mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::*;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "concner", version, about = "Contrastive cross-lingual NER on synthetic bilingual data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value config file; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for this command (corpus seed for gen/experiment, training seed otherwise)
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the bilingual corpora
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the contrastive teacher
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen`
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        no_lcl: bool,
        #[arg(long)]
        no_tcl: bool,
        #[arg(long)]
        no_src: bool,
        #[arg(long)]
        no_tgt: bool,
    },
    /// Distill a teacher checkpoint into a student on unlabeled text
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
        /// Token file (first column used); defaults to DATA/d_unlabeled.conll
        #[arg(long, value_name = "PATH")]
        unlabeled: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Stop after N optimizer steps
        #[arg(long, value_name = "N")]
        kd_steps: Option<u64>,
    },
    /// Score a checkpoint on a labeled corpus
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Label a token file
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// One token per line, blank line between sentences
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run the multi-seed variant grid
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Use corpora from this directory instead of generating them
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Training seeds
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Comma-separated variant names, or `all`
        #[arg(long, default_value = "all")]
        variants: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.gen.seed = s;
            }
            cmd_gen(&config, &common.out)?;
            println!("wrote corpora to {}", common.out.display());
        }
        Command::Train {
            common,
            data,
            no_lcl,
            no_tcl,
            no_src,
            no_tgt,
        } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.train.seed = s;
            }
            let t = &mut config.train;
            t.use_lcl &= !no_lcl;
            t.use_tcl &= !no_tcl;
            t.use_src &= !no_src;
            t.use_tgt &= !no_tgt;
            let m = cmd_train(&config, &data, &common.out)?;
            for (k, v) in &m.results {
                println!("{k}={v}");
            }
        }
        Command::Distill {
            common,
            teacher,
            unlabeled,
            data,
            kd_steps,
        } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.train.seed = s;
            }
            if kd_steps.is_some() {
                config.train.kd_steps = kd_steps;
            }
            let unlabeled = unlabeled
                .or_else(|| data.map(|d| d.join("d_unlabeled.conll")))
                .ok_or_else(|| {
                    CliError::Config(concner_core::config::ConfigError::InvalidValue {
                        key: "--unlabeled".into(),
                        reason: "pass --unlabeled PATH or --data DIR".into(),
                    })
                })?;
            let m = cmd_distill(&config, &teacher, &unlabeled, common.config.is_some(), &common.out)?;
            for (k, v) in &m.results {
                println!("{k}={v}");
            }
        }
        Command::Eval { checkpoint, corpus, out } => {
            let (_, text) = cmd_eval(&checkpoint, &corpus, &out)?;
            print!("{text}");
        }
        Command::Predict { checkpoint, input, out } => {
            let path = cmd_predict(&checkpoint, &input, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Experiment {
            common,
            data,
            seeds,
            variants,
        } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.gen.seed = s;
            }
            let variants = parse_variants(&variants)?;
            let table = cmd_experiment(&config, data.as_deref(), &variants, &seeds, &common.out)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
