use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use unifier_cli::pipeline::{self, Variant};
use unifier_cli::{Overrides, RunConfig};
use unifier_core::eval::{read_dump, Filter};

#[derive(Debug, Parser)]
#[command(name = "unifier", version, about = "Rule-reasoning datasets, neural unifier training and evaluation")]
struct Cli {
    /// Flat TOML config; keys may also be set as UNIFIER_<KEY> variables.
    #[arg(long, global = true, env = "UNIFIER_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (overrides config and environment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the command (dataset, checkpoint or report dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate every depth folder and the manifest.
    GenData,
    /// Train one model variant.
    Train {
        #[arg(long)]
        variant: Variant,
    },
    /// Predict validation and test splits; write dumps and accuracy tables.
    Eval {
        #[arg(long)]
        variant: Variant,
        /// Which accuracy row to print.
        #[arg(long, default_value = "all")]
        filter: Filter,
    },
    /// Tune per-depth ensemble weights on validation predictions.
    TuneEnsemble {
        #[arg(long, default_value = "nu-d2")]
        nu: Variant,
        #[arg(long, default_value = "rt-d2")]
        rt: Variant,
    },
    /// Paired randomization test between two prediction dumps.
    SigTest {
        dump_a: PathBuf,
        dump_b: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "all")]
        filter: Filter,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Combine saved reports into one table (all reports if none given).
    Report { files: Vec<PathBuf> },
    /// Print the resolved configuration.
    Config,
}

fn out_key(command: &Command) -> &'static str {
    match command {
        Command::GenData => "data_dir",
        Command::Train { .. } => "checkpoint_dir",
        _ => "report_dir",
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone().map(|p| (out_key(&cli.command), p)),
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), std::env::vars(), &overrides)?;
    match cli.command {
        Command::GenData => {
            let outcome = pipeline::gen_data(&cfg)?;
            let verb = if outcome.reused { "up to date" } else { "generated" };
            println!("{}: {verb}", cfg.data_dir.display());
            for folder in &outcome.manifest.folders {
                let counts: Vec<String> = folder
                    .splits
                    .iter()
                    .map(|(s, st)| format!("{}={} ({:.3} true)", s.name(), st.records, st.true_fraction()))
                    .collect();
                println!("  depth-{}: {}", folder.depth, counts.join(", "));
            }
        }
        Command::Train { variant } => {
            let outcome = pipeline::train(&cfg, variant)?;
            print!("{}", outcome.log.to_tsv());
            println!(
                "{variant}: best epoch {} of {}, val accuracy {:.4} -> {}",
                outcome.log.best_epoch,
                outcome.log.epochs_run(),
                outcome.log.best_val_accuracy,
                outcome.checkpoint.display()
            );
        }
        Command::Eval { variant, filter } => {
            let outcome = pipeline::eval(&cfg, variant)?;
            for r in &outcome.reports {
                let row: Vec<String> = r
                    .depths()
                    .into_iter()
                    .map(|d| match r.accuracy(filter, d) {
                        Some(a) => format!("d{d}={a:.4}"),
                        None => format!("d{d}=—"),
                    })
                    .collect();
                println!("{} [{}] {}", r.model, filter.name(), row.join(" "));
            }
        }
        Command::TuneEnsemble { nu, rt } => {
            let outcome = pipeline::tune_ensemble(&cfg, nu, rt)?;
            print!("{}", unifier_core::ensemble::format_weights(&outcome.weights));
        }
        Command::SigTest {
            dump_a,
            dump_b,
            n,
            filter,
            depth,
        } => {
            let t = pipeline::sig_test(
                &read_dump(&dump_a)?,
                &read_dump(&dump_b)?,
                n.unwrap_or(cfg.resamples),
                cfg.seed,
                filter,
                depth,
            )?;
            eprintln!(
                "{} examples, accuracy {:.4} vs {:.4}",
                t.examples, t.accuracy_a, t.accuracy_b
            );
            println!("{}", t.p_value);
        }
        Command::Report { files } => {
            let (tsv, txt) = pipeline::report(&cfg, &files, &cfg.report_dir)?;
            print!("{}", std::fs::read_to_string(&txt)?);
            eprintln!("wrote {} and {}", tsv.display(), txt.display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNIFIER_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
