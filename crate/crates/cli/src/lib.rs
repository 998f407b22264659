//! `eos-edit` command-line front end.
//!
//! Every verb resolves a [`RunConfig`] (config file overlaid with flags),
//! opens only the models it needs, and writes its artifacts atomically with a
//! `.provenance.json` sidecar per artifact.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use eos_edit_core::{Error, ErrorClass, Result};

pub use commands::*;
pub use config::{Overrides, RunConfig};
pub use pipeline::{Needs, Pipeline};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Input => EXIT_INPUT,
        ErrorClass::Pipeline => EXIT_PIPELINE,
        ErrorClass::Backend => EXIT_BACKEND,
    }
}

#[derive(Debug, Parser)]
#[command(name = "eos-edit", version, about = "Zero-shot prompt editing through the <EOS> token embedding")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMode {
    /// Also generate from "<source>, <target>"
    Concat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print token ids and pieces for a prompt
    Tokenize { prompt: String },
    /// Encode a prompt and dump its hidden states
    Encode { prompt: String },
    /// Write the target's <EOS> state, scaled by --w, into the source embedding
    Edit { source: String, target: String },
    /// Generate one image from a prompt or a dumped embedding
    Generate {
        #[arg(required_unless_present = "embedding")]
        prompt: Option<String>,
        #[arg(long, conflicts_with = "prompt", value_name = "PATH")]
        embedding: Option<PathBuf>,
    },
    /// Paired images from one seed: source prompt vs. its <EOS>-edited version
    Compare {
        source: String,
        target: String,
        #[arg(long)]
        baseline: Option<BaselineMode>,
    },
    /// Prompt-concatenation baseline: "<source>, <attr1>, <attr2>, ..."
    Baseline { source: String, attributes: Vec<String> },
    /// Guidance sweep over evenly spaced w values with a fixed seed
    Sweep {
        source: String,
        target: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        w_min: f32,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        w_max: f32,
        #[arg(long, default_value_t = 9)]
        count: usize,
    },
    /// Moderation recipe: edit an unsafe prompt toward a replacement prompt
    Moderate { unsafe_prompt: String, replacement: String },
}

impl Command {
    fn needs(&self) -> Needs {
        match self {
            Command::Tokenize { .. } => Needs::Tokenizer,
            Command::Encode { .. } | Command::Edit { .. } => Needs::Encoder,
            _ => Needs::Generation,
        }
    }
}

/// Runs one parsed invocation, printing a short summary to `out`.
pub fn run(cli: Cli, argv: Vec<String>, out: &mut impl Write) -> Result<()> {
    let config = RunConfig::resolve(&cli.flags)?;
    let p = Pipeline::open(config, argv, cli.command.needs())?;
    let files = match &cli.command {
        Command::Tokenize { prompt } => {
            let t = cmd_tokenize(&p, prompt)?;
            let line = serde_json::to_string(&t).map_err(|e| Error::Io(e.into()))?;
            writeln!(out, "{line}")?;
            Vec::new()
        }
        Command::Encode { prompt } => cmd_encode(&p, prompt)?.files,
        Command::Edit { source, target } => {
            let e = cmd_edit(&p, source, target)?;
            writeln!(out, "embedding_distance {}", e.embedding_distance)?;
            e.files
        }
        Command::Generate { prompt, embedding } => {
            let input = match (prompt, embedding) {
                (_, Some(path)) => GenerateInput::Embedding(path.clone()),
                (Some(prompt), None) => GenerateInput::Prompt(prompt.clone()),
                (None, None) => return Err(Error::Input("give a prompt or --embedding".into())),
            };
            let g = cmd_generate(&p, &input)?;
            writeln!(out, "latent_digest {}", g.result.latent_digest)?;
            g.files
        }
        Command::Compare { source, target, baseline } => {
            let c = cmd_compare(&p, source, target, baseline.is_some())?;
            print_rows(out, &c.rows)?;
            c.files
        }
        Command::Moderate { unsafe_prompt, replacement } => {
            let c = cmd_moderate(&p, unsafe_prompt, replacement)?;
            print_rows(out, &c.rows)?;
            c.files
        }
        Command::Baseline { source, attributes } => {
            let b = cmd_baseline_concat(&p, source, attributes)?;
            writeln!(out, "{} latent_digest {}", b.prompt, b.result.latent_digest)?;
            b.files
        }
        Command::Sweep { source, target, w_min, w_max, count } => {
            let s = cmd_sweep(&p, source, target, *w_min, *w_max, *count)?;
            for r in &s.rows {
                writeln!(out, "w {} embedding_distance {} latent_digest {}", r.w, r.embedding_distance, r.latent_digest)?;
            }
            s.files
        }
    };
    for f in files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(())
}

fn print_rows(out: &mut impl Write, rows: &[CompareRow]) -> Result<()> {
    for r in rows {
        writeln!(
            out,
            "{} embedding_distance {} latent_digest {}",
            r.role, r.embedding_distance, r.latent_digest
        )?;
    }
    Ok(())
}
