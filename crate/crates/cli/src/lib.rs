//! Command-line driver: configuration, provenance, figures and the pipeline subcommands.

pub mod bench;
pub mod commands;
pub mod config;
pub mod fixture;
pub mod plot;
pub mod provenance;
pub mod svg;
pub mod validate;

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Run;
use config::Overrides;
use fixture::{Arch, FixtureOptions};

#[derive(Debug, Parser)]
#[command(name = "o2b", version, about = "Relate object classes seen by CNN filters to network-human alignment")]
pub struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict every image of the stimulus corpus.
    Predict(Overrides),
    /// Correlate model predictions with the 24 targets.
    Correlate(Overrides),
    /// Score every (filter, class) pair of each target layer.
    Emocam(Overrides),
    /// Ablate each filter of each target layer and record correlation deltas.
    Ablate(Overrides),
    /// Weight cubes, class weights, category contributions and plot data.
    O2b(Overrides),
    /// Category-by-category box overlap matrix.
    Overlap(Overrides),
    /// Run predict, correlate, emocam, ablate and o2b in order.
    Pipeline(Overrides),
    /// Render a JSON artifact as SVG.
    Render {
        input: PathBuf,
        /// Defaults to the input path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Target label for scatter figures.
        #[arg(long)]
        target: Option<String>,
    },
    /// Time resumed against full ablation sweeps on the toy network.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic experiment with its run configuration.
    Fixture {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Arch::Chain)]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs;
    let stage = |o: &Overrides| Run::new(o, jobs);
    match &cli.command {
        Command::Predict(o) => {
            let p = commands::predict(&stage(o)?)?;
            println!("{}", p.display());
        }
        Command::Correlate(o) => {
            commands::correlate(&stage(o)?)?;
        }
        Command::Emocam(o) => {
            commands::emocam(&stage(o)?)?;
        }
        Command::Ablate(o) => {
            commands::ablate(&stage(o)?)?;
        }
        Command::O2b(o) => {
            commands::attribution(&stage(o)?)?;
        }
        Command::Overlap(o) => {
            commands::overlap(&stage(o)?)?;
        }
        Command::Pipeline(o) => commands::pipeline(&stage(o)?)?,
        Command::Render { input, out, target } => {
            let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            let value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", input.display()))?;
            let svg = plot::render_value(&value, target.as_deref())?;
            let out = out.clone().unwrap_or_else(|| input.with_extension("svg"));
            o2b_core::io::write_text(&out, &svg)?;
            println!("{}", out.display());
        }
        Command::Bench { seed, repeats, out } => {
            let report = bench::run(*seed, *repeats)?;
            let json = o2b_core::io::to_json(&report);
            if let Some(p) = out {
                o2b_core::io::write_text(p, &json)?;
            }
            print!("{json}");
        }
        Command::Fixture { dir, arch, seed, seeds } => {
            let opts = FixtureOptions { arch: *arch, seed: *seed, seeds: *seeds, ..Default::default() };
            println!("{}", fixture::write_fixture(dir, &opts)?.display());
        }
    }
    Ok(())
}
