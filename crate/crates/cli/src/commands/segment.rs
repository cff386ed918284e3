//! `segment` — dump the multi-scale segmentation each session's reference
//! induces: per scale a text file of `scale_id start_ms end_ms` lines,
//! plus a base→coarse mapping table, all under `<output_dir>/segments/`.

use super::{load_corpus, log_path};
use crate::config::PipelineConfig;
use crate::output::{parallel_map, JsonlWriter};
use anyhow::Context;
use msdiar_core::pipeline::SessionData;
use serde_json::json;
use std::io::Write;
use std::path::Path;

fn dump_session(data: &SessionData, dir: &Path) -> anyhow::Result<serde_json::Value> {
    let set = &data.segments;
    let mut counts = Vec::with_capacity(set.scale_count());
    for s in 0..set.scale_count() {
        let path = dir.join(format!("{}.scale{s}.segments", data.session_id));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for seg in set.segments_at(s) {
            writeln!(out, "{} {} {}", s, seg.start_ms, seg.end_ms)?;
        }
        out.flush()?;
        counts.push(set.segments_at(s).len());
    }
    let map_path = dir.join(format!("{}.mapping", data.session_id));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&map_path)?);
    for b in 0..set.num_base() {
        write!(out, "{b}")?;
        for s in 0..set.scale_count() {
            write!(out, " {}", set.mapped_index(b, s))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(json!({
        "event": "session",
        "session_id": data.session_id,
        "segments_per_scale": counts,
        "base_segments": set.num_base(),
    }))
}

pub fn cmd_segment(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let scales = cfg.scales()?;
    let sessions = load_corpus(cfg, &scales)?;
    let seg_dir = cfg.output_dir.join("segments");
    std::fs::create_dir_all(&seg_dir)
        .with_context(|| format!("cannot create {}", seg_dir.display()))?;

    let results = parallel_map(&sessions, cfg.worker_count(), |_, data| {
        dump_session(data, &seg_dir)
    });
    let mut log = JsonlWriter::create(&log_path(cfg, "segment"))?;
    let mut total_base = 0usize;
    for (data, res) in sessions.iter().zip(results) {
        let line = res.with_context(|| format!("dumping session {}", data.session_id))?;
        total_base += data.segments.num_base();
        log.write(&line)?;
    }
    log.write(&json!({
        "event": "summary",
        "sessions": sessions.len(),
        "base_segments": total_base,
    }))?;
    log.finish()?;

    println!(
        "segmented {} sessions ({} base segments) into {}",
        sessions.len(),
        total_base,
        seg_dir.display()
    );
    Ok(())
}
