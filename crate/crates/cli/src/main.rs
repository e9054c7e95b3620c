use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridsim::report::fig2_text;
use hybridsim::{load_run, parse_seed_range, run_config, run_seeds, CliError};
use log::error;

#[derive(Parser)]
#[command(name = "hybridsim", version, about = "Hybrid-cloud distributed database simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed range A..B (end exclusive) or A..=B, run in parallel.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<String>,
    },
    /// Load and validate a config and everything it references.
    Validate { config: PathBuf },
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json_line());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYBRIDSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_run(&config).and_then(|l| l.workload(l.effective_seed(None))) {
            Ok(_) => {
                println!(r#"{{"status":"ok"}}"#);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { config, seed, out, seeds: None } => match run_config(&config, seed, out.as_deref()) {
            Ok(outcome) => {
                print!("{}", fig2_text(&outcome.fig2));
                println!("artifacts: {}", outcome.out_dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { config, out, seeds: Some(range), .. } => {
            let results = match parse_seed_range(&range).and_then(|r| run_seeds(&config, r, out.as_deref())) {
                Ok(results) => results,
                Err(e) => return fail(&e),
            };
            let mut worst: Option<CliError> = None;
            for result in results {
                match result {
                    Ok(outcome) => println!("seed {}: {}", outcome.seed, outcome.out_dir.display()),
                    Err(e) => {
                        error!("{e}");
                        if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                            worst = Some(e);
                        }
                    }
                }
            }
            worst.map_or(ExitCode::SUCCESS, |e| fail(&e))
        }
    }
}
