use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glimmer_core::sim::{
    parse_config, run_scenario, scenarios, transcript_from_jsonl, transcript_to_jsonl, verify_transcripts,
    RunOptions, RunReport, Transport,
};

#[derive(Parser)]
#[command(name = "glimmer-sim", about = "Runs Glimmer protocol scenarios and checks their invariants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a bundled scenario by name.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "bus")]
        transport: Transport,
        #[arg(long)]
        capture_transcripts: bool,
        /// Directory for report.jsonl (and transcript.jsonl when captured).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-scan a captured transcript against a report's sentinels.
    Verify { report: PathBuf, transcript: PathBuf },
    /// List bundled scenarios.
    ListScenarios,
}

fn load(scenario: &str) -> Result<String, String> {
    let path = Path::new(scenario);
    if path.exists() {
        return fs::read_to_string(path).map_err(|e| format!("{scenario}: {e}"));
    }
    scenarios::bundled_source(scenario)
        .map(str::to_owned)
        .ok_or_else(|| format!("{scenario}: no such file or bundled scenario"))
}

fn run(cli: Cli) -> Result<u64, String> {
    match cli.command {
        Command::ListScenarios => {
            for (name, src) in scenarios::BUNDLED {
                println!("{name:<20} {}", scenarios::summary(src));
            }
            Ok(0)
        }
        Command::Run { scenario, seed, transport, capture_transcripts, out } => {
            let source = load(&scenario)?;
            let config = parse_config(&source).map_err(|e| format!("{scenario}: {e}"))?;
            let opts = RunOptions { seed, transport, ..RunOptions::default() };
            let output = run_scenario(&config, &opts).map_err(|e| e.to_string())?;
            let report = output.report.to_jsonl();
            match &out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                    fs::write(dir.join("report.jsonl"), &report).map_err(|e| e.to_string())?;
                    if capture_transcripts {
                        fs::write(dir.join("transcript.jsonl"), transcript_to_jsonl(&output.transcript))
                            .map_err(|e| e.to_string())?;
                    }
                }
                None => {
                    print!("{report}");
                    if capture_transcripts {
                        eprintln!("--capture-transcripts needs --out");
                    }
                }
            }
            let violations = output.report.violations();
            eprintln!("{}: {} rounds, {} invariant violations", config.name, config.rounds, violations);
            Ok(violations)
        }
        Command::Verify { report, transcript } => {
            let r = fs::read_to_string(&report).map_err(|e| format!("{}: {e}", report.display()))?;
            let t = fs::read_to_string(&transcript).map_err(|e| format!("{}: {e}", transcript.display()))?;
            let r = RunReport::from_jsonl(&r).map_err(|e| format!("{}: {e}", report.display()))?;
            let t = transcript_from_jsonl(&t).map_err(|e| format!("{}: {e}", transcript.display()))?;
            let violations = verify_transcripts(&r, &t);
            for v in &violations {
                println!("{v}");
            }
            eprintln!("{} messages scanned, {} violations", t.len(), violations.len());
            Ok(violations.len() as u64)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
