//! `padapter`: dataset generation, training, inpainting and evaluation.

mod commands;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "padapter",
    version,
    about = "Patch-wise two-stage diffusion inpainting on synthetic scenes"
)]
pub struct Cli {
    /// Worker threads. Outputs never depend on this value.
    #[arg(long, global = true, env = "PADAPTER_JOBS", default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic scene dataset.
    GenData(commands::GenData),
    /// Train the base denoiser.
    Pretrain(commands::Pretrain),
    /// Train stage-1 adapters on a frozen base.
    TrainDca(commands::TrainDca),
    /// Train stage-2 reference adapters and the control branch.
    TrainRpa(commands::TrainRpa),
    /// Inpaint one image.
    Inpaint(commands::Inpaint),
    /// Run an ablation and write a metric report.
    Eval(commands::Eval),
    /// Re-run the command recorded in a run manifest and compare output hashes.
    Replay(commands::Replay),
}

/// Bad flags or inputs; exits with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
        .map(|l| l.trim_start_matches("error: "))
        .collect::<Vec<_>>()
        .join("; ")
}

fn report(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": kind, "message": one_line(message) })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    report("usage", &e.to_string());
                    ExitCode::from(2)
                }
            };
        }
    };
    if cli.jobs == 0 {
        report("usage", "--jobs must be at least 1");
        return ExitCode::from(2);
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, cli.jobs, manifest::strip_jobs(&argv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.downcast_ref::<Usage>().is_some() {
                "usage"
            } else {
                "runtime"
            };
            report(kind, &format!("{e:#}"));
            ExitCode::from(if kind == "usage" { 2 } else { 1 })
        }
    }
}
