//! Subcommand implementations. Each takes a validated `PipelineConfig`,
//! does its work through the library crate, writes a JSON-lines result
//! log under the output directory, and prints a short human summary.
//! Every command returns `Err` unless it fully succeeded.

mod ablate;
mod diarize;
mod score;
mod segment;
mod synth;
mod train;

pub use ablate::cmd_ablate;
pub use diarize::cmd_diarize;
pub use score::cmd_score;
pub use segment::cmd_segment;
pub use synth::cmd_synth;
pub use train::cmd_train;

use crate::config::PipelineConfig;
use crate::output::parallel_map;
use anyhow::Context;
use msdiar_core::pipeline::{load_session, read_manifest, Manifest, SessionData};
use msdiar_core::segmenter::ScaleConfig;
use std::path::PathBuf;

/// Read the manifest named by the config.
fn manifest_for(cfg: &PipelineConfig) -> anyhow::Result<Manifest> {
    read_manifest(&cfg.manifest)
        .with_context(|| format!("cannot read manifest {}", cfg.manifest.display()))
}

/// Load every session in the manifest, in manifest order. Any failure
/// aborts the whole run with one error naming every offending session,
/// so a partial corpus never slips through.
fn load_corpus(cfg: &PipelineConfig, scales: &[ScaleConfig]) -> anyhow::Result<Vec<SessionData>> {
    let manifest = manifest_for(cfg)?;
    let results = parallel_map(&manifest.entries, cfg.worker_count(), |_, entry| {
        load_session(entry, scales)
    });
    let mut sessions = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(s) => sessions.push(s),
            Err(e) => failures.push(format!("{}: {e}", entry.session_id)),
        }
    }
    if !failures.is_empty() {
        anyhow::bail!(
            "failed to load {} of {} sessions:\n  {}",
            failures.len(),
            failures.len() + sessions.len(),
            failures.join("\n  ")
        );
    }
    Ok(sessions)
}

/// Where a command's JSON-lines log goes.
fn log_path(cfg: &PipelineConfig, command: &str) -> PathBuf {
    cfg.output_dir.join(format!("{command}.jsonl"))
}
