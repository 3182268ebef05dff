use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fbm_euler::runner::{self, ExperimentConfig};
use fbm_euler::Error;

#[derive(Parser)]
#[command(name = "fbm-euler", version, about = "Modified Euler scheme for fBm-driven SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-run a manifest and compare output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tree utilities.
    Tree {
        #[command(subcommand)]
        action: TreeAction,
    },
    /// Same as `tree dump`.
    TreeDump {
        #[arg(long)]
        depth: usize,
    },
}

#[derive(Subcommand)]
enum TreeAction {
    /// Print every branch of the given depth as a JSON line.
    Dump {
        #[arg(long)]
        depth: usize,
    },
}

fn load(config: &Path, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.run.out = o;
    }
    if threads.is_some() {
        cfg.run.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(runner::exit_code(&err) as u8)
}

fn dump(depth: usize) -> ExitCode {
    match runner::tree_dump(depth) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out, threads } => {
            let cfg = match load(&config, seed, out, threads) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match runner::run(&cfg) {
                Ok(_) => {
                    println!("wrote {}", cfg.run.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Replay { manifest, out } => match runner::replay(&manifest, out.as_deref()) {
            Ok(r) if r.mismatched.is_empty() => {
                println!("replay matches ({})", r.out.display());
                ExitCode::SUCCESS
            }
            Ok(r) => {
                eprintln!("replay mismatch: {}", r.mismatched.join(", "));
                ExitCode::from(runner::REPLAY_MISMATCH as u8)
            }
            Err(e) => fail(e),
        },
        Command::Tree { action: TreeAction::Dump { depth } } | Command::TreeDump { depth } => dump(depth),
    }
}
