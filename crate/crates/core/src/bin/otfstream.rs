use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otfstream::backend::Variant;
use otfstream::orchestrator::{
    run_experiment, run_matrix, scenario_matrix, ConfigFile, ExperimentError, Seeds,
};

#[derive(Parser)]
#[command(
    name = "otfstream",
    version,
    about = "Run streaming experiments against the on-the-fly transcoding origin"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Sets every seed (catalog, arrivals, traces, noise) to this value.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the scenario grid from the config's [matrix] table.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            variant,
            clients,
            workers,
            seed,
            out,
        } => {
            let mut cfg = ConfigFile::load(&config)?.experiment;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(n) = clients {
                cfg.clients = n;
            }
            if let Some(k) = workers {
                cfg.workers = k;
            }
            if let Some(s) = seed {
                cfg.seeds = Seeds::all(s);
            }
            let res = run_experiment(&cfg)?;
            res.write(&out)?;
            println!(
                "{}: {} sessions, {:.3} stalls/session, {:.3} instantaneous, {} jobs, {:.2?} -> {}",
                cfg.label(),
                res.sessions.len(),
                res.mean_stalls(),
                res.instantaneous_fraction(),
                res.jobs.len(),
                res.elapsed,
                out.display()
            );
        }
        Command::Matrix { config, out } => {
            let file = ConfigFile::load(&config)?;
            let configs = scenario_matrix(&file.experiment, &file.matrix);
            eprintln!("running {} configurations", configs.len());
            let rows = run_matrix(&configs, &out)?;
            for r in rows {
                println!(
                    "{:<24} sessions={:<4} stalls={:<8.3} instantaneous={:.3} mean_rank={:.2}",
                    r.label, r.sessions, r.mean_stalls, r.instantaneous_fraction, r.mean_rank
                );
            }
        }
    }
    Ok(())
}
