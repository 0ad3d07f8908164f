use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use misspec::cli::{expand_sweep_input, run_file, summary_csv, sweep, RunFlags};
use misspec::Error;

#[derive(Parser)]
#[command(name = "misspec", version, about = "Run learning-while-optimizing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the seed of every config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for trace CSVs (and the sweep summary).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
    /// Run even when a steplength violates its admissibility condition.
    #[arg(long, global = true)]
    override_steplength_checks: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Run a directory of configs, a list file, or a grid config.
    Sweep { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = RunFlags {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        override_steplength_checks: cli.override_steplength_checks,
    };
    match cli.command {
        Command::Run { config } => match run_file(&config, &flags) {
            Ok(outcome) => {
                println!("{}", outcome.summary);
                ExitCode::SUCCESS
            }
            Err(Error::Diverged { k, .. }) => {
                eprintln!("error: iterates diverged at k = {k}; partial trace written");
                ExitCode::FAILURE
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Sweep { input } => {
            let outcome = expand_sweep_input(&input).and_then(|configs| sweep(&configs, cli.parallelism, &flags));
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            for entry in &outcome.entries {
                match &entry.result {
                    Ok(summary) => println!("{summary}"),
                    Err(msg) => println!("id={} status=failed error={msg}", entry.id),
                }
            }
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("."));
            let written = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("summary.csv"), summary_csv(&outcome)));
            if let Err(e) = written {
                eprintln!("error: writing summary: {e}");
                return ExitCode::FAILURE;
            }
            if outcome.failures() > 0 {
                eprintln!("{} of {} runs failed", outcome.failures(), outcome.entries.len());
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
