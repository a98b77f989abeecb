use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{error, info};

use amlcgl_core::data::{generate_synthetic, write_ibm, SyntheticSpec};
use amlcgl_core::experiment::{aggregate, expand_sweep, load_dataset, run_experiment, run_sweep, ExperimentConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "amlcgl", version, about = "Continual learning of GCNs on anti-money-laundering graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config for each of its seeds.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a grid file and run every point.
    Sweep {
        grid: PathBuf,
        #[arg(long, env = "AMLCGL_WORKERS")]
        workers: Option<usize>,
        /// Print the run ids without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Collect results records into scatter and table CSVs.
    Aggregate {
        dir: PathBuf,
        /// Output directory for the CSVs; defaults to `dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep per-task checkpoints instead of deleting them.
        #[arg(long)]
        keep_checkpoints: bool,
    },
    /// Generate a synthetic transaction graph in the transactions/attempts
    /// file layout.
    GenSynthetic {
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every run succeeded.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut c = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(o) = out {
                c.out_dir = o;
            }
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| c.seeds.clone());
            let data = load_dataset(&c.dataset).context("loading dataset")?;
            let mut ok = true;
            for s in seeds {
                match run_experiment(&c, s, &data) {
                    Ok(r) => println!(
                        "{}\tAP {:.4}\tAF {}\tFin {:.4}",
                        r.run_id,
                        r.ap,
                        r.af.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                        r.fin
                    ),
                    Err(e) => {
                        error!("{} failed: {e}", c.run_id(s));
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Sweep { grid, workers, dry_run } => {
            let sweep = SweepConfig::load(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let configs = expand_sweep(&sweep)?;
            if dry_run {
                for c in &configs {
                    println!("{}", c.run_id(c.seeds[0]));
                }
                return Ok(true);
            }
            let workers = match workers {
                Some(0) => bail!("worker count must be positive"),
                Some(w) => w,
                None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            };
            info!("{} runs on {workers} workers", configs.len());
            let summary = run_sweep(&configs, workers)?;
            println!("{} completed, {} failed", summary.completed, summary.failures.len());
            for (id, e) in &summary.failures {
                println!("FAILED {id}: {e}");
            }
            Ok(summary.failures.is_empty())
        }
        Command::Aggregate {
            dir,
            out,
            keep_checkpoints,
        } => {
            let out = out.unwrap_or_else(|| dir.clone());
            let s = aggregate(&dir, &out, keep_checkpoints)?;
            println!(
                "{} records, {} skipped, {} tables, {} checkpoints removed",
                s.records,
                s.skipped,
                s.tables.len(),
                s.pruned_checkpoints
            );
            Ok(true)
        }
        Command::GenSynthetic { spec, out, seed } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut s: SyntheticSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let data = generate_synthetic(&s)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let tx = out.join("transactions.csv");
            let pat = out.join("patterns.txt");
            write_ibm(&data.dataset, &tx, &pat, Some(&data.attempt_groups()))?;
            println!(
                "{} accounts, {} transactions, {} laundering in {} attempts",
                data.dataset.node_count(),
                data.dataset.edge_count(),
                data.dataset.laundering_count(),
                data.instances.len()
            );
            Ok(true)
        }
    }
}
