// Copyright 2026 The sgfusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Command-line runner for zone-level federated learning experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgfusion::pipeline::{self, ExperimentConfig, Stage};
use sgfusion::Error;

#[derive(Parser, Debug)]
#[command(
    name = "sgfusion",
    version,
    about = "Zone-level federated learning with stochastic geographic gradient fusion"
)]
struct Cli {
    /// TOML experiment config; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides `master_seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Overrides `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated algorithm list, e.g. `sgeofl,sgfusion,topk_sgfusion(3)`.
    #[arg(long, global = true, value_name = "LIST")]
    algorithms: Option<String>,

    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run every stage (the default).
    Run,
    /// Generate the world, zone histograms and distance graph.
    GenWorld,
    /// Fit the dendrogram and write the per-zone probability trees.
    BuildHrg,
    /// Train every configured algorithm.
    Train,
    /// Compare algorithms and write the report.
    Report,
    /// Re-check the saved dendrogram and probability trees.
    Validate,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(list) = &cli.algorithms {
        cfg.algorithms = ExperimentConfig::parse_algorithms(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let outcome = match cli.command.unwrap_or(Command::Run) {
        Command::Run => pipeline::run_experiment(&cfg)?,
        Command::GenWorld => pipeline::run_stage(&cfg, Stage::GenWorld)?,
        Command::BuildHrg => pipeline::run_stage(&cfg, Stage::BuildHrg)?,
        Command::Train => pipeline::run_stage(&cfg, Stage::Train)?,
        Command::Report => pipeline::run_stage(&cfg, Stage::Report)?,
        Command::Validate => pipeline::run_stage(&cfg, Stage::Validate)?,
    };
    if !cli.quiet {
        for note in &outcome.notes {
            println!("{note}");
        }
        for file in &outcome.files {
            println!("wrote {}", file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
