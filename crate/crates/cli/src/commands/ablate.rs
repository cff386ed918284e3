//! `ablate` — run every system variant over one corpus and print a
//! comparison table: each scale alone, uniform fusion, and the learned
//! fusion in session-level and block-resolved modes. Single-scale rows
//! reuse the full pipeline with a one-scale configuration. The relative
//! ordering of the two learned modes is reported, never asserted.

use super::diarize::load_model;
use super::{load_corpus, log_path, manifest_for};
use crate::config::PipelineConfig;
use crate::output::{parallel_map, render_table, JsonlWriter};
use msdiar_core::nasf::{InferenceMode, NasfParams};
use msdiar_core::pipeline::{
    diarize_session, load_session, score_session, DiarizeConfig, ManifestEntry, SessionData,
};
use msdiar_core::scorer::{aggregate_der, DerReport};
use msdiar_core::segmenter::ScaleConfig;
use serde_json::json;

/// "1.5" for 1500 ms — trailing zeros trimmed, one decimal kept.
fn window_label(window_ms: i64) -> String {
    let mut s = format!("{:.3}", window_ms as f64 / 1000.0);
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

struct ModeRun {
    name: String,
    reports: Vec<DerReport>,
    aggregate: DerReport,
}

fn run_sessions(
    name: &str,
    sessions: &[SessionData],
    params: Option<&NasfParams>,
    mode: InferenceMode,
    cfg: &PipelineConfig,
) -> anyhow::Result<ModeRun> {
    let results = parallel_map(sessions, cfg.worker_count(), |i, data| {
        let diar_cfg = DiarizeConfig {
            mode,
            n_pairs: cfg.n_pairs,
            nmesc: cfg.nmesc(),
            seed: cfg.seed + i as u64,
        };
        let outcome = diarize_session(data, params, &diar_cfg)?;
        score_session(data, &outcome.hypothesis, cfg.collar, cfg.score_overlap)
    });
    let mut reports = Vec::with_capacity(sessions.len());
    let mut failures = Vec::new();
    for (data, res) in sessions.iter().zip(results) {
        match res {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!("{}: {e}", data.session_id)),
        }
    }
    if !failures.is_empty() {
        anyhow::bail!(
            "variant {name}: {} session(s) failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        );
    }
    let aggregate = aggregate_der(&reports);
    Ok(ModeRun {
        name: name.to_string(),
        reports,
        aggregate,
    })
}

pub fn cmd_ablate(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let scales = cfg.scales()?;
    anyhow::ensure!(
        scales.len() >= 2,
        "ablation compares scales; configure at least two"
    );
    let manifest = manifest_for(cfg)?;
    anyhow::ensure!(
        !manifest.entries.is_empty(),
        "manifest {} lists no sessions",
        cfg.manifest.display()
    );
    // Both learned rows need the checkpoint; fail before any work.
    let params = load_model(cfg, InferenceMode::NasfS, &scales)?;

    let mut runs: Vec<ModeRun> = Vec::new();

    // One row per scale: a single-scale config over the same pipeline.
    for (s, scale) in scales.iter().enumerate() {
        let name = format!("single-{}s", window_label(scale.window_ms));
        let sub_scales: Vec<ScaleConfig> = vec![*scale];
        let entries: Vec<ManifestEntry> = manifest
            .entries
            .iter()
            .map(|e| ManifestEntry {
                session_id: e.session_id.clone(),
                rttm: e.rttm.clone(),
                embeddings: vec![e.embeddings[s].clone()],
            })
            .collect();
        let loaded = parallel_map(&entries, cfg.worker_count(), |_, entry| {
            load_session(entry, &sub_scales)
        });
        let mut sessions = Vec::with_capacity(loaded.len());
        for (entry, res) in entries.iter().zip(loaded) {
            sessions.push(res.map_err(|e| {
                anyhow::anyhow!("variant {name}: session {}: {e}", entry.session_id)
            })?);
        }
        runs.push(run_sessions(
            &name,
            &sessions,
            None,
            InferenceMode::EqualWeight,
            cfg,
        )?);
    }

    let full_sessions = load_corpus(cfg, &scales)?;
    runs.push(run_sessions(
        "equal",
        &full_sessions,
        None,
        InferenceMode::EqualWeight,
        cfg,
    )?);
    runs.push(run_sessions(
        "nasf-s",
        &full_sessions,
        params.as_ref(),
        InferenceMode::NasfS,
        cfg,
    )?);
    runs.push(run_sessions(
        "nasf-d",
        &full_sessions,
        params.as_ref(),
        InferenceMode::NasfD,
        cfg,
    )?);

    let mut log = JsonlWriter::create(&log_path(cfg, "ablate"))?;
    let mut rows = Vec::with_capacity(runs.len());
    for run in &runs {
        for (entry, r) in manifest.entries.iter().zip(&run.reports) {
            log.write(&json!({
                "event": "session",
                "system": run.name,
                "session_id": entry.session_id,
                "der": r.der,
            }))?;
        }
        let a = &run.aggregate;
        log.write(&json!({
            "event": "system",
            "system": run.name,
            "miss_sec": a.miss,
            "false_alarm_sec": a.false_alarm,
            "confusion_sec": a.confusion,
            "scored_speech_sec": a.total_speech,
            "der": a.der,
        }))?;
        rows.push(vec![
            run.name.clone(),
            format!("{:.2}", a.miss),
            format!("{:.2}", a.false_alarm),
            format!("{:.2}", a.confusion),
            format!("{:.2}", a.der * 100.0),
        ]);
    }

    let nasf_s = runs.iter().find(|r| r.name == "nasf-s").unwrap().aggregate.der;
    let nasf_d = runs.iter().find(|r| r.name == "nasf-d").unwrap().aggregate.der;
    let ordering = if nasf_s < nasf_d {
        "session-level lower"
    } else if nasf_d < nasf_s {
        "block-resolved lower"
    } else {
        "tied"
    };
    log.write(&json!({
        "event": "comparison",
        "nasf_s_der": nasf_s,
        "nasf_d_der": nasf_d,
        "ordering": ordering,
    }))?;
    log.write(&json!({
        "event": "summary",
        "sessions": manifest.entries.len(),
        "systems": runs.len(),
        "collar": cfg.collar,
        "score_overlap": cfg.score_overlap,
    }))?;
    log.finish()?;

    print!(
        "{}",
        render_table(&["system", "miss", "fa", "conf", "der %"], &rows)
    );
    println!(
        "learned-weight comparison: nasf-s {:.2}% vs nasf-d {:.2}% ({ordering}; informational, corpus-dependent)",
        nasf_s * 100.0,
        nasf_d * 100.0
    );
    Ok(())
}
