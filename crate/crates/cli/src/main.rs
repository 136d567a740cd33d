//! `mddpm`: phantom generation, training, sampling, evaluation and export.
//!
//! Every subcommand prints a one-line JSON summary on stdout and logs to
//! stderr. Exit codes: 0 success, 2 configuration or argument error,
//! 3 numeric failure, 4 I/O or format failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;

use mddpm::io::validate_config;
use mddpm::phantom::WindowPreset;
use mddpm::pipeline::{self, SampleRequest, DEFAULT_EXTRACTOR_SEED};
use mddpm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mddpm", version, about = "Diffusion sampling with multi-condition low-pass guidance")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). MDDPM_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Procedural phantom datasets.
    #[command(subcommand)]
    Phantom(PhantomCommand),

    /// Train a noise predictor from an experiment config.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
    },

    /// Draw samples, unconditionally or guided by a manifest.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Guidance manifest (JSON). Omit for unconditional sampling.
        #[arg(long)]
        guidance: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Sampling seed; defaults to seeds.sample from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint; defaults to <output>/model.dnsr.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory; defaults to <output>/samples.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Compare a generated set against a reference set.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// JSON report path; a `.csv` of pairwise SSIM is written beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXTRACTOR_SEED)]
        extractor_seed: u64,
    },

    /// Write windowed 8-bit PGM views of an image.
    Export {
        #[arg(long)]
        image: PathBuf,
        /// Comma-separated: full, lung, bone, soft-tissue.
        #[arg(long, value_delimiter = ',', default_value = "full,lung,bone,soft-tissue")]
        windows: Vec<WindowPreset>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Print the command reference in Markdown.
    #[command(hide = true)]
    Reference,
}

#[derive(Subcommand, Debug)]
enum PhantomCommand {
    /// Generate images, label maps and a manifest.
    Gen {
        #[arg(long)]
        count: usize,
        /// Side length, or WIDTHxHEIGHT.
        #[arg(long, default_value = "64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size '{s}': {e}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Phantom(PhantomCommand::Gen { count, size, seed, out }) => {
            let m = pipeline::phantom_gen(&out, count, size, seed)?;
            Ok(json!({
                "command": "phantom gen",
                "count": m.samples.len(),
                "width": m.width,
                "height": m.height,
                "manifest": out.join(pipeline::MANIFEST_NAME),
            }))
        }
        Command::Train { config } => {
            let cfg = validate_config(&config)?;
            let r = pipeline::train_run(&cfg)?;
            Ok(json!({
                "command": "train",
                "checkpoint": r.checkpoint,
                "steps": r.losses.len(),
                "final_loss": r.losses.last(),
            }))
        }
        Command::Sample {
            config,
            guidance,
            count,
            seed,
            checkpoint,
            out,
        } => {
            let cfg = validate_config(&config)?;
            let req = SampleRequest {
                checkpoint,
                guidance,
                count,
                seed: seed.unwrap_or(cfg.seeds.sample),
                out,
            };
            let r = pipeline::sample_run(&cfg, &req)?;
            Ok(json!({
                "command": "sample",
                "output": r.output,
                "samples": r.provenance,
            }))
        }
        Command::Eval {
            generated,
            reference,
            out,
            extractor_seed,
        } => {
            let r = pipeline::eval_run(&generated, &reference, &out, extractor_seed)?;
            Ok(json!({
                "command": "eval",
                "set_ssim": r.set_ssim,
                "frechet": r.frechet,
                "extractor_seed": r.extractor_seed,
                "report": out,
            }))
        }
        Command::Export { image, windows, out } => {
            let files = pipeline::export_run(&image, &windows, &out)?;
            Ok(json!({ "command": "export", "files": files }))
        }
        Command::Reference => {
            print!("{}", reference_page());
            Ok(serde_json::Value::Null)
        }
    }
}

/// `--help` of every subcommand, as Markdown.
fn reference_page() -> String {
    fn walk(cmd: &mut clap::Command, prefix: &str, out: &mut String) {
        let name = if prefix.is_empty() {
            cmd.get_name().to_string()
        } else {
            format!("{prefix} {}", cmd.get_name())
        };
        if cmd.is_hide_set() {
            return;
        }
        out.push_str(&format!("## `{name}`\n\n```text\n{}```\n\n", cmd.render_long_help()));
        for sub in cmd.get_subcommands_mut() {
            walk(sub, &name, out);
        }
    }
    let mut cmd = Cli::command().disable_help_subcommand(true);
    cmd.build();
    let mut out = String::from("# mddpm command reference\n\nGenerated by `mddpm reference`.\n\n");
    walk(&mut cmd, "", &mut out);
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDDPM_LOG", level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
