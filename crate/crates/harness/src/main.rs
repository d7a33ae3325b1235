use std::path::PathBuf;
use std::process::ExitCode;

use apollo_core::{LayerMap, SamplerKind, SamplerSpec, Saving, TrainSettings};
use apollo_harness::experiments::{self, out_dir};
use apollo_harness::{HarnessError, Result, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "apollo", version, about = "Progressive-depth transformer training at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (flat `section.key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Stack,
    Interpolation,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes metrics.jsonl, curve.json and final.aplo.
    Train(RunArgs),
    /// Train at half depth, then compare stack and interpolation growth.
    ExpandAnalyze(RunArgs),
    /// Scratch baseline plus one run per sampler; reports FLOPs savings.
    SamplerBench(RunArgs),
    /// Dump a depth pmf and Monte-Carlo frequencies as JSON.
    SampleDepth {
        #[arg(long, default_value = "lvps")]
        kind: String,
        #[arg(long)]
        k: Option<f64>,
        /// Stage floor N.
        #[arg(long)]
        floor: usize,
        /// Target depth L.
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the layer map from `from` slots to `to` layers.
    Map {
        #[arg(long, value_enum)]
        kind: MapArg,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
    },
    /// Saving ratio of a candidate curve.json against a baseline curve.json.
    Compare {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
    /// Write a synthetic English-like corpus.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        bytes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let dir = out_dir(&cfg, args.out.clone());
    Ok((cfg, dir))
}

/// Reports a model error caused by a bad flag value as a config error.
fn as_usage(e: impl Into<HarnessError>) -> HarnessError {
    match e.into() {
        HarnessError::Model(m) => HarnessError::Config(m.to_string()),
        other => other,
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, dir) = load(&args)?;
            let settings: TrainSettings = cfg.settings();
            let outcome = experiments::train_run(&cfg, &settings, Some(&dir))?;
            println!(
                "trained {} steps, final validation loss {:.4}, {} FLOPs -> {}",
                outcome.state.step,
                outcome.curve.final_loss().unwrap_or(f64::NAN),
                outcome.state.cum_flops,
                dir.display()
            );
        }
        Command::ExpandAnalyze(args) => {
            let (cfg, dir) = load(&args)?;
            let report = experiments::expand_analyze(&cfg, Some(&dir))?;
            for (name, c) in [
                ("pre-expansion", &report.pre_expansion),
                ("stack", &report.stack_expanded),
                ("interpolation", &report.interpolation_expanded),
                ("random", &report.random_init),
            ] {
                println!(
                    "{name:>14}: depth {:2}  loss {:.4}  |g| {:.3e} ± {:.3e}",
                    c.depth, c.val_loss, c.grad_mean, c.grad_std
                );
            }
        }
        Command::SamplerBench(args) => {
            let (cfg, dir) = load(&args)?;
            let report = experiments::sampler_bench(&cfg, Some(&dir))?;
            println!("scratch final loss {:.4}", report.baseline_final_val_loss);
            for r in &report.runs {
                match r.saving {
                    Some(s) => println!("{:>5}: saving {:+.3}", r.sampler, s),
                    None => println!("{:>5}: not-reached", r.sampler),
                }
            }
        }
        Command::SampleDepth {
            kind,
            k,
            floor,
            depth,
            draws,
            seed,
        } => {
            let kind = SamplerKind::from_name(&kind)
                .ok_or_else(|| HarnessError::Config(format!("--kind: unknown sampler `{kind}`")))?;
            let spec = SamplerSpec::with_k(kind, k.unwrap_or(kind.default_k()));
            let dump = experiments::sample_depth(spec, floor, depth, draws, seed).map_err(as_usage)?;
            print_json(&dump);
        }
        Command::Map { kind, from, to } => {
            let kind = match kind {
                MapArg::Stack => apollo_core::Expansion::Stack,
                MapArg::Interpolation => apollo_core::Expansion::Interpolation,
            };
            let map = LayerMap::build(kind, from, to).map_err(as_usage)?;
            print_json(&map.entries());
        }
        Command::Compare { candidate, baseline } => match experiments::compare(&candidate, &baseline)? {
            Saving::Reached(s) => println!("{s}"),
            Saving::NotReached => println!("not-reached"),
        },
        Command::Corpus { out, bytes, seed } => {
            let text = apollo_harness::corpus::synthetic_text(bytes, seed);
            std::fs::write(&out, text).map_err(|e| HarnessError::io(&out, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
