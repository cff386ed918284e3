//! `diarize` — run the full per-session pipeline over a corpus and write
//! one hypothesis RTTM per session under `<output_dir>/hyp/`. Sessions
//! fail independently: every failure is logged and the run continues,
//! but the command exits non-zero if any session failed.

use super::{log_path, manifest_for};
use crate::config::PipelineConfig;
use crate::output::{parallel_map, JsonlWriter};
use anyhow::Context;
use msdiar_core::affinity::write_matrix_to;
use msdiar_core::nasf::{load_checkpoint, InferenceMode, NasfParams};
use msdiar_core::pipeline::{diarize_session, load_session, DiarizeConfig, ManifestEntry};
use msdiar_core::rttm::emit_rttm;
use msdiar_core::segmenter::ScaleConfig;
use serde_json::json;
use std::path::Path;

/// Load the checkpoint a non-uniform mode needs and check it against the
/// configured scales.
pub(super) fn load_model(
    cfg: &PipelineConfig,
    mode: InferenceMode,
    scales: &[ScaleConfig],
) -> anyhow::Result<Option<NasfParams>> {
    if mode == InferenceMode::EqualWeight {
        return Ok(None);
    }
    let path = cfg.model_path.as_ref().ok_or_else(|| {
        anyhow::anyhow!("mode {} needs a trained checkpoint; set model_path", cfg.mode)
    })?;
    let (params, _seed) = load_checkpoint(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    anyhow::ensure!(
        params.dims.scales == scales.len(),
        "checkpoint {} was trained for {} scales, config has {}",
        path.display(),
        params.dims.scales,
        scales.len()
    );
    Ok(Some(params))
}

fn run_one(
    entry: &ManifestEntry,
    scales: &[ScaleConfig],
    params: Option<&NasfParams>,
    diar_cfg: &DiarizeConfig,
    hyp_dir: &Path,
    affinity_dir: Option<&Path>,
) -> anyhow::Result<serde_json::Value> {
    let data = load_session(entry, scales)?;
    let outcome = diarize_session(&data, params, diar_cfg)?;

    let rttm_path = hyp_dir.join(format!("{}.rttm", entry.session_id));
    let file = std::fs::File::create(&rttm_path)
        .with_context(|| format!("cannot create {}", rttm_path.display()))?;
    emit_rttm(
        &outcome.hypothesis.to_rttm(&entry.session_id),
        std::io::BufWriter::new(file),
    )?;

    if let Some(dir) = affinity_dir {
        let path = dir.join(format!("{}.affinity", entry.session_id));
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&path)
                .with_context(|| format!("cannot create {}", path.display()))?,
        );
        write_matrix_to(&outcome.fused, &mut out)?;
    }

    let weights: Vec<Vec<f64>> = outcome
        .weights
        .iter()
        .map(|w| w.as_slice().to_vec())
        .collect();
    Ok(json!({
        "event": "session",
        "session_id": entry.session_id,
        "status": "ok",
        "clusters": outcome.cluster.k,
        "base_segments": data.segments.num_base(),
        "weights": weights,
        "degenerate_affinity": outcome.degenerate_affinity,
        "rttm": rttm_path.display().to_string(),
    }))
}

pub fn cmd_diarize(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let mode = cfg.parse_mode()?;
    let scales = cfg.scales()?;
    let params = load_model(cfg, mode, &scales)?;
    let manifest = manifest_for(cfg)?;

    let hyp_dir = cfg.output_dir.join("hyp");
    std::fs::create_dir_all(&hyp_dir)
        .with_context(|| format!("cannot create {}", hyp_dir.display()))?;
    let affinity_dir = if cfg.dump_affinity {
        let dir = cfg.output_dir.join("affinity");
        std::fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let results = parallel_map(&manifest.entries, cfg.worker_count(), |i, entry| {
        let diar_cfg = DiarizeConfig {
            mode,
            n_pairs: cfg.n_pairs,
            nmesc: cfg.nmesc(),
            seed: cfg.seed + i as u64,
        };
        run_one(
            entry,
            &scales,
            params.as_ref(),
            &diar_cfg,
            &hyp_dir,
            affinity_dir.as_deref(),
        )
    });

    let mut log = JsonlWriter::create(&log_path(cfg, "diarize"))?;
    let mut failed = 0usize;
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(line) => log.write(&line)?,
            Err(e) => {
                failed += 1;
                eprintln!("session {} failed: {e:#}", entry.session_id);
                log.write(&json!({
                    "event": "session",
                    "session_id": entry.session_id,
                    "status": "error",
                    "error": format!("{e:#}"),
                }))?;
            }
        }
    }
    log.write(&json!({
        "event": "summary",
        "mode": cfg.mode,
        "sessions": manifest.entries.len(),
        "failed": failed,
    }))?;
    log.finish()?;

    println!(
        "diarized {} of {} sessions (mode {}) into {}",
        manifest.entries.len() - failed,
        manifest.entries.len(),
        cfg.mode,
        hyp_dir.display()
    );
    if failed > 0 {
        anyhow::bail!("{failed} session(s) failed");
    }
    Ok(())
}
