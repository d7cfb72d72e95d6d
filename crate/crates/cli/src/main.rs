//! Command-line front end: run experiments, sweep hyperparameters, render
//! plots, pretty-print reports, and fetch the corpora.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cl_core::data;
use cl_core::runner::{self, ExperimentConfig, RunReport};

mod fetch;

#[derive(Parser)]
#[command(name = "cl-lab", version, about = "Continual-learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct IoArgs {
    /// Corpus directory (defaults to $CL_LAB_DATA).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Results root directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config for one seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rerun even if a report already exists.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Run the hyperparameter protocol (lambda grid + all seeds) for a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Emit plots for a run directory (results/<hash>/seed<k>) or for every
    /// seed under results/<hash>.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
    /// Pretty-print a run report.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Download and verify the corpora into a data directory.
    FetchData {
        #[arg(long)]
        dest: PathBuf,
        /// all | mnist | fashion | kmnist
        #[arg(long, default_value = "all")]
        corpus: String,
        /// Override the download mirror base URL, {corpus}/{file}.gz appended.
        #[arg(long)]
        mirror: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, seed, force, io } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data_root = data::corpus_root(io.data.as_deref())?;
            let report = runner::run_experiment(&cfg, seed, &data_root, &io.out, force)?;
            let dir = RunReport::run_dir(&io.out, &report.config_hash, seed);
            println!("status: {:?}", report.status);
            if let Some(sm) = &report.stream_metrics {
                println!(
                    "final stream accuracy {:.4}  A {:.4}  ACC {:.4}",
                    sm.final_stream_accuracy, sm.a, sm.acc
                );
            }
            if let Some(g) = report.gen_eval.last() {
                println!(
                    "final gen eval: fid {:?}  fitting-capacity {:?}",
                    g.fid, g.fitting_capacity
                );
            }
            println!("report: {}", RunReport::path_in(&dir).display());
            Ok(())
        }
        Command::Sweep { config, seeds, force, io } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            let data_root = data::corpus_root(io.data.as_deref())?;
            let result = runner::sweep(&cfg, &data_root, &io.out, force)?;
            print!("{}", runner::format_table(&[result]));
            Ok(())
        }
        Command::Plot { results } => {
            let mut dirs = Vec::new();
            if RunReport::path_in(&results).exists() {
                dirs.push(results.clone());
            } else {
                for entry in std::fs::read_dir(&results).context("reading results dir")? {
                    let path = entry?.path();
                    if RunReport::path_in(&path).exists() {
                        dirs.push(path);
                    }
                }
            }
            if dirs.is_empty() {
                bail!("no report.json under {}", results.display());
            }
            for dir in dirs {
                for file in runner::emit_plots(&dir)? {
                    println!("wrote {}", file.display());
                }
            }
            Ok(())
        }
        Command::Report { results } => {
            let path = if results.ends_with("report.json") {
                results
            } else {
                RunReport::path_in(&results)
            };
            let report = RunReport::load(&path)?;
            print_report(&report);
            Ok(())
        }
        Command::FetchData { dest, corpus, mirror } => {
            let corpora: Vec<data::Corpus> = match corpus.as_str() {
                "all" => vec![data::Corpus::Mnist, data::Corpus::Fashion, data::Corpus::Kmnist],
                name => vec![data::Corpus::parse(name)?],
            };
            for c in corpora {
                fetch::fetch_corpus(c, &dest, mirror.as_deref())
                    .with_context(|| format!("fetching {c}"))?;
            }
            println!("corpora ready under {}", dest.display());
            Ok(())
        }
    }
}

fn print_report(report: &RunReport) {
    println!("config   : {} ({})", report.config.name, report.config_hash);
    println!("seed     : {}", report.seed);
    println!("status   : {:?}", report.status);
    println!(
        "scenario : {:?}, {} tasks, head {}",
        report.scenario.kind, report.scenario.n_tasks, report.scenario.head_size
    );
    println!("strategy : {}", report.config.strategy.tag());
    if let Some(rows) = &report.r_matrix {
        println!("accuracy matrix R (rows = after task i, cols = test task j):");
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  [{}]", cells.join(", "));
        }
    }
    if let Some(sm) = &report.stream_metrics {
        println!("A        : {:.4}", sm.a);
        println!("ACC      : {:.4}", sm.acc);
        if let (Some(bwt), Some(rem), Some(bp), Some(fwt)) = (sm.bwt, sm.rem, sm.bwt_plus, sm.fwt) {
            println!("BWT      : {bwt:.4}  REM {rem:.4}  BWT+ {bp:.4}  FWT {fwt:.4}");
        }
        println!("MS       : {:.4}  CE {:.4}", sm.ms, sm.ce);
        println!("final    : {:.4} (stream accuracy)", sm.final_stream_accuracy);
    }
    for g in &report.gen_eval {
        println!(
            "task {:>2} : fid {}  fic {}  ({})",
            g.task,
            g.fid.map_or("-".into(), |v| format!("{v:.3}")),
            g.fitting_capacity.map_or("-".into(), |v| format!("{v:.4}")),
            g.annotator
        );
    }
    if let Some(failure) = &report.failure {
        println!("failure  : {failure}");
    }
}

