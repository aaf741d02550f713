use clap::{Parser, Subcommand};
use minirlhf::cli::{cmd_report, cmd_sweep, cmd_train, Overrides};
use minirlhf::runtime::RunMode;
use minirlhf::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Desk-scale sync/async RLHF training runs, sweeps, and reports.
#[derive(Parser)]
#[command(name = "minirlhf", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the single run described by an experiment file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the file's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "seed-override")]
        seed_override: Option<u64>,
        #[arg(long = "mode-override", value_parser = parse_mode)]
        mode_override: Option<RunMode>,
    },
    /// Execute every cell of a sweep grid or preset.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "seed-override")]
        seed_override: Option<u64>,
        #[arg(long = "mode-override", value_parser = parse_mode)]
        mode_override: Option<RunMode>,
    },
    /// Build tables and plot-ready series from a directory of run logs.
    Report {
        #[arg(long = "log-dir")]
        log_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    match s {
        "sync" => Ok(RunMode::Sync),
        "async" => Ok(RunMode::Async),
        "async_lockstep" => Ok(RunMode::AsyncLockstep),
        other => Err(format!("unknown mode {other} (sync | async | async_lockstep)")),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::InvalidPlan(_)
        | Error::InvalidVocab(_)
        | Error::InvalidSequence(_)
        | Error::InvalidBatch(_)
        | Error::Json(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = match args.command {
        Command::Train { config, out, seed_override, mode_override } => {
            let overrides = Overrides { out, seed: seed_override, mode: mode_override };
            match cmd_train(&config, &overrides) {
                Ok(summary) => {
                    println!(
                        "run {} finished: steps={} episodes={} winrate={:.4} kl_ppl={:.4} wallclock={:.2}s",
                        summary.label,
                        summary.steps,
                        summary.episodes_seen,
                        summary.final_winrate,
                        summary.final_kl_ppl,
                        summary.total_wallclock_s
                    );
                    if let Some(reason) = &summary.aborted {
                        eprintln!("run aborted: {reason}");
                        return ExitCode::from(2);
                    }
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
        Command::Sweep { config, out, seed_override, mode_override } => {
            let overrides = Overrides { out, seed: seed_override, mode: mode_override };
            match cmd_sweep(&config, &overrides) {
                Ok(outcome) => {
                    println!(
                        "sweep finished: {} runs ok, {} failed, tables under {}",
                        outcome.rows.len(),
                        outcome.failures.len(),
                        outcome.out_dir.display()
                    );
                    for (label, err) in &outcome.failures {
                        eprintln!("cell {label} failed: {err}");
                    }
                    if outcome.rows.is_empty() && !outcome.failures.is_empty() {
                        return ExitCode::from(2);
                    }
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
        Command::Report { log_dir, out } => match cmd_report(&log_dir, out.as_deref()) {
            Ok(report) => {
                println!(
                    "report over {} runs ({} corrupt lines skipped, {} throughput pairs) written to {}",
                    report.runs,
                    report.corrupt_lines,
                    report.throughput_pairs,
                    report.out_dir.display()
                );
                Ok(())
            }
            Err(e) => Err(e),
        },
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
