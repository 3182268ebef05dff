//! Configuration, experiment orchestration and persistence behind the CLI.

pub mod bank;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

pub use bank::vector_field_bank;
pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{tree_dump, Artifacts};
pub use output::Manifest;

use crate::error::{Error, Result};

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Overflow { .. } => 3,
        _ => 1,
    }
}

/// Exit code when a replay disagrees with its manifest.
pub const REPLAY_MISMATCH: i32 = 4;

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config { field: "run.threads".into(), reason: e.to_string() })?
            .install(f),
    }
}

/// Runs the experiment and writes its outputs into `cfg.run.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let art = with_threads(cfg.run.threads, || experiments::run_kind(cfg))?;
    output::write_outputs(&cfg.run.out, cfg, &art)
}

/// Result of re-running a manifest.
#[derive(Debug)]
pub struct ReplayReport {
    pub out: PathBuf,
    /// Files whose hash differs from the manifest (or that are missing).
    pub mismatched: Vec<String>,
}

/// Re-runs the configuration stored in a manifest into `out` and compares hashes.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<ReplayReport> {
    let manifest = output::read_manifest(manifest_path)?;
    let mut cfg = manifest.config.clone();
    cfg.run.out = match out {
        Some(p) => p.to_path_buf(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    let fresh = run(&cfg)?;
    let mismatched = manifest
        .outputs
        .iter()
        .filter(|(name, hash)| fresh.outputs.get(*name) != Some(hash))
        .map(|(name, _)| name.clone())
        .collect();
    Ok(ReplayReport { out: cfg.run.out, mismatched })
}
