use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ocfl_cli::config::{parse_seeds, ExperimentConfig, RESOLVED_CONFIG};
use ocfl_cli::{generate, report, run, xai};

/// One-shot clustered federated learning laboratory.
///
/// Log verbosity is read from OCFL_LOG (error, warn, info, debug, trace;
/// default info).
#[derive(Parser)]
#[command(name = "ocfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic federated dataset of every seed.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to use instead of the config list, e.g. `0..10` or `1,4,7`.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Train and evaluate every seed of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
        /// Run seeds concurrently.
        #[arg(long)]
        parallel_seeds: bool,
    },
    /// Insertion/deletion evaluation of the final cluster models of a run.
    Xai {
        run_dir: PathBuf,
        /// Config whose [inde] table to use (default: the run's own config).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        parallel_seeds: bool,
    },
    /// Summarise one or more run directories into a CSV table.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "summary.csv")]
        out: PathBuf,
    },
}

fn load(config: &Path, seeds: &Option<String>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    Ok(cfg)
}

fn report_failures<T>(results: &[(u64, Result<T>)]) -> ExitCode {
    let mut failed = false;
    for (s, r) in results {
        if let Err(e) = r {
            eprintln!("seed {s} failed: {e:#}");
            failed = true;
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { config, out, seeds } => {
            let cfg = load(&config, &seeds)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            generate::cmd_generate(&cfg, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, out, seeds, parallel_seeds } => {
            let cfg = load(&config, &seeds)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let results = run::cmd_run(&cfg, &out, parallel_seeds)?;
            for (s, r) in &results {
                if let Ok(sum) = r {
                    println!(
                        "seed {s}: fired {} k={} ARI={:.3} AMI={:.3} avgARI={:.3} PF1={:.3} GF1={:.3} LG={:.3}",
                        sum.fired_round.map_or("never".to_string(), |t| format!("at round {t}")),
                        sum.final_k,
                        sum.final_ari,
                        sum.final_ami,
                        sum.avg_ari,
                        sum.pf1,
                        sum.gf1,
                        sum.lg
                    );
                }
            }
            Ok(report_failures(&results))
        }
        Command::Xai { run_dir, config, seeds, parallel_seeds } => {
            let cfg = ExperimentConfig::load(&config.unwrap_or_else(|| run_dir.join(RESOLVED_CONFIG)))?;
            let seeds = seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or_default();
            let results = xai::cmd_xai(&run_dir, &cfg.inde.unwrap_or_default(), &seeds, parallel_seeds)?;
            for (s, r) in &results {
                if let Ok(f) = r {
                    for b in &f.modes {
                        match (&b.result, &b.error) {
                            (Some(r), _) => println!(
                                "seed {s} {:?}: insertion AUC {:.4}, deletion AUC {:.4}",
                                b.mode, r.mean_insertion_auc, r.mean_deletion_auc
                            ),
                            (None, Some(e)) => println!("seed {s} {:?}: {e}", b.mode),
                            (None, None) => {}
                        }
                    }
                }
            }
            Ok(report_failures(&results))
        }
        Command::Report { run_dirs, out } => {
            let rows = report::cmd_report(&run_dirs, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCFL_LOG", "info")).init();
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
