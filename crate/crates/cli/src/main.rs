use clap::{Parser, Subcommand, ValueEnum};
use refshare_core::runner::{self, Format};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "refshare", version, about = "Referee-mediated secret-sharing game protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Human,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and check its expectations.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: OutputFormat,
    },
    /// Print the M1-M9 size table.
    ProfileMessages,
    /// Parse and validate a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            report,
            format,
        } => {
            let mut s = match runner::load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let r = runner::run(&s);
            let fmt = match format {
                OutputFormat::Human => Format::Human,
                OutputFormat::Machine => Format::Machine,
            };
            let text = runner::emit_report(&r, fmt);
            if let Some(path) = report {
                if let Err(e) = std::fs::write(&path, &text) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            print!("{text}");
            if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::ProfileMessages => {
            print!("{}", runner::profile_messages());
            ExitCode::SUCCESS
        }
        Command::Validate { scenario } => match runner::load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} players, {} cheaters, {} rounds)",
                    scenario.display(),
                    s.players.len(),
                    s.cheaters().len(),
                    s.rounds
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", scenario.display());
                ExitCode::from(2)
            }
        },
    }
}
