//! `hrt`: train, evaluate and query highway recurrent transformer models.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use hrt_core::data::{generate_synthetic, load_corpus, save_corpus};
use hrt_core::gradcheck::{check_model_gradients, tiny_model, FD_EPS, REL_TOL};
use hrt_core::train::{evaluate, holdout_split, score_corpus, train};
use hrt_core::{checkpoint, Config};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "hrt",
    version,
    about = "Highway recurrent transformer for response selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint; the log goes to stdout as JSON lines.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out corpus; without it `valid_fraction` of the corpus is held out.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recall@{1,10,50} and MRR of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Ranks the candidates of every dialogue in a file, one JSON result per line.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dialogue: PathBuf,
    },
    /// Writes a synthetic keyword-echo corpus.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        vocab: usize,
    },
    /// Compares analytic and finite-difference gradients on a tiny dialogue.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check at most this many entries per parameter.
        #[arg(long)]
        sample: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = seed {
        cfg.model.seed = seed;
    }
    Ok(cfg)
}

fn read_corpus(path: &Path) -> Result<Vec<hrt_core::DialogueRecord>> {
    load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<hrt_core::Model> {
    checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cli.command {
        Command::Train {
            config,
            corpus,
            out: ckpt,
            valid,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let records = read_corpus(&corpus)?;
            let (train_set, valid_set) = match valid {
                Some(v) => (records, read_corpus(&v)?),
                None => holdout_split(&records, cfg.train.valid_fraction),
            };
            info!(
                "training on {} dialogues, {} held out",
                train_set.len(),
                valid_set.len()
            );
            let outcome = train(&train_set, &valid_set, &cfg)?;
            for entry in &outcome.log {
                serde_json::to_writer(&mut out, entry)?;
                writeln!(out)?;
            }
            checkpoint::save(&outcome.model, &ckpt)
                .with_context(|| format!("writing checkpoint {}", ckpt.display()))?;
            info!("{} steps, checkpoint written to {}", outcome.steps, ckpt.display());
        }
        Command::Eval { ckpt, corpus, json } => {
            let model = read_checkpoint(&ckpt)?;
            let report = evaluate(&model, &read_corpus(&corpus)?)?;
            if json {
                serde_json::to_writer(&mut out, &report)?;
                writeln!(out)?;
            } else {
                writeln!(out, "{report}")?;
            }
        }
        Command::Predict { ckpt, dialogue } => {
            let model = read_checkpoint(&ckpt)?;
            for result in score_corpus(&model, &read_corpus(&dialogue)?)? {
                serde_json::to_writer(&mut out, &result)?;
                writeln!(out)?;
            }
        }
        Command::Synth {
            n,
            seed,
            out: path,
            vocab,
        } => {
            let records = generate_synthetic(n, vocab, &mut ChaCha8Rng::seed_from_u64(seed));
            save_corpus(&records, &path)?;
            info!("{n} dialogues written to {}", path.display());
        }
        Command::Gradcheck { config, sample, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (model, record) = tiny_model(&cfg)?;
            let report = check_model_gradients(&model, &record, &cfg.loss, FD_EPS, REL_TOL, sample)?;
            serde_json::to_writer(&mut out, &report)?;
            writeln!(out)?;
            out.flush()?;
            if !report.passed {
                return Err(anyhow!(
                    "max relative error {:.3e} exceeds {:.0e}",
                    report.max_rel_error,
                    report.tolerance
                ));
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `{"error": kind, "message": text}` on one line.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<hrt_core::Error>())
        .map_or_else(
            || {
                if err.chain().any(|e| e.is::<io::Error>()) {
                    "io"
                } else {
                    "cli"
                }
            },
            hrt_core::Error::kind,
        );
    let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_render_as_one_json_line() {
        let err = anyhow::Error::from(hrt_core::Config::from_json("{\"x\": 1}").unwrap_err()).context("reading config");
        let line = error_line(&err);
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "config");
        assert!(v["message"].as_str().unwrap().starts_with("reading config"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
