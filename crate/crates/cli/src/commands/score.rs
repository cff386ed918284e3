//! `score` — compare hypothesis RTTMs under `<output_dir>/hyp/` against
//! the corpus references and report per-session error rates plus the
//! time-weighted corpus aggregate. A missing hypothesis is an error.

use super::{log_path, manifest_for};
use crate::config::PipelineConfig;
use crate::output::{parallel_map, render_table, JsonlWriter};
use anyhow::Context;
use msdiar_core::pipeline::ManifestEntry;
use msdiar_core::rttm::parse_rttm;
use msdiar_core::scorer::{aggregate_der, der, hypothesis_from_turns, DerReport};
use serde_json::json;
use std::io::BufReader;
use std::path::Path;

fn score_one(entry: &ManifestEntry, hyp_dir: &Path, cfg: &PipelineConfig) -> anyhow::Result<DerReport> {
    let ref_file = std::fs::File::open(&entry.rttm)
        .with_context(|| format!("cannot open reference {}", entry.rttm.display()))?;
    let reference = parse_rttm(BufReader::new(ref_file))
        .with_context(|| format!("parsing {}", entry.rttm.display()))?;

    let hyp_path = hyp_dir.join(format!("{}.rttm", entry.session_id));
    let hyp_file = std::fs::File::open(&hyp_path)
        .with_context(|| format!("missing hypothesis {}", hyp_path.display()))?;
    let hyp_turns = parse_rttm(BufReader::new(hyp_file))
        .with_context(|| format!("parsing {}", hyp_path.display()))?;
    let hypothesis = hypothesis_from_turns(&hyp_turns);

    Ok(der(&reference, &hypothesis, cfg.collar, cfg.score_overlap)?)
}

fn report_json(session_id: &str, r: &DerReport) -> serde_json::Value {
    json!({
        "event": "session",
        "session_id": session_id,
        "miss_sec": r.miss,
        "false_alarm_sec": r.false_alarm,
        "confusion_sec": r.confusion,
        "scored_speech_sec": r.total_speech,
        "der": r.der,
    })
}

fn report_row(name: &str, r: &DerReport) -> Vec<String> {
    vec![
        name.to_string(),
        format!("{:.2}", r.miss),
        format!("{:.2}", r.false_alarm),
        format!("{:.2}", r.confusion),
        format!("{:.2}", r.total_speech),
        format!("{:.2}", r.der * 100.0),
    ]
}

pub fn cmd_score(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let manifest = manifest_for(cfg)?;
    anyhow::ensure!(
        !manifest.entries.is_empty(),
        "manifest {} lists no sessions",
        cfg.manifest.display()
    );
    let hyp_dir = cfg.output_dir.join("hyp");

    let results = parallel_map(&manifest.entries, cfg.worker_count(), |_, entry| {
        score_one(entry, &hyp_dir, cfg)
    });
    let mut reports: Vec<DerReport> = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!("{}: {e:#}", entry.session_id)),
        }
    }
    if !failures.is_empty() {
        anyhow::bail!(
            "failed to score {} session(s):\n  {}",
            failures.len(),
            failures.join("\n  ")
        );
    }

    let aggregate = aggregate_der(&reports);
    let mut log = JsonlWriter::create(&log_path(cfg, "score"))?;
    let mut rows = Vec::with_capacity(reports.len() + 1);
    for (entry, r) in manifest.entries.iter().zip(&reports) {
        log.write(&report_json(&entry.session_id, r))?;
        rows.push(report_row(&entry.session_id, r));
    }
    rows.push(report_row("ALL", &aggregate));
    log.write(&json!({
        "event": "summary",
        "sessions": reports.len(),
        "collar": cfg.collar,
        "score_overlap": cfg.score_overlap,
        "miss_sec": aggregate.miss,
        "false_alarm_sec": aggregate.false_alarm,
        "confusion_sec": aggregate.confusion,
        "scored_speech_sec": aggregate.total_speech,
        "der": aggregate.der,
    }))?;
    log.finish()?;

    print!(
        "{}",
        render_table(
            &["session", "miss", "fa", "conf", "scored", "der %"],
            &rows
        )
    );
    println!(
        "corpus DER {:.2}% over {} sessions (collar {}, overlap {})",
        aggregate.der * 100.0,
        reports.len(),
        cfg.collar,
        if cfg.score_overlap { "scored" } else { "excluded" }
    );
    Ok(())
}
