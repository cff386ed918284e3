//! Session-level orchestration: on-disk corpus layout, session loading,
//! training-batch assembly, and the full diarization path (affinity
//! tensor → fusion weights → fused matrix → clustering → timeline).
//!
//! A corpus is a manifest file of tab-separated lines
//! `session_id<TAB>rttm<TAB>emb0<TAB>emb1…`, with paths resolved relative
//! to the manifest's directory. Each session stores one reference RTTM
//! and one embedding archive per scale, aligned with the segmentation
//! that the session's speech regions induce under the configured scales.

use crate::affinity::{build_affinity_tensor, fuse, fuse_blockwise, split_into_blocks, WeightVector};
use crate::embedding::{read_embeddings, write_embeddings, EmbeddingMatrix};
use crate::labels::{label_vectors, pair_labels, sample_pairs, speaker_list};
use crate::matrix::SquareMatrix;
use crate::nasf::{build_pair_batch, infer_weights, InferenceMode, NasfParams, PairBatch};
use crate::nmesc::{cluster, ClusterResult, NmescConfig};
use crate::rttm::{emit_rttm, oracle_sad, parse_rttm, RttmTurn, SpeechRegionList};
use crate::scorer::{der, labels_to_timeline, DerReport, DiarizationHypothesis};
use crate::segmenter::{build_multiscale, MultiScaleSegmentSet, ScaleConfig};
use crate::synth::SynthSession;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// One corpus entry: where a session's reference and archives live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub session_id: String,
    pub rttm: PathBuf,
    pub embeddings: Vec<PathBuf>,
}

/// Parsed manifest with paths resolved against the manifest location.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "manifest line {}: expected id, rttm and ≥ 1 embedding path, got {line:?}",
                ln + 1
            )));
        }
        entries.push(ManifestEntry {
            session_id: fields[0].to_string(),
            rttm: base.join(fields[1]),
            embeddings: fields[2..].iter().map(|f| base.join(f)).collect(),
        });
    }
    Ok(Manifest { entries })
}

/// Write a manifest; entry paths are emitted relative to `dir` when they
/// live under it, verbatim otherwise.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.session_id);
        out.push('\t');
        out.push_str(&rel(&e.rttm));
        for emb in &e.embeddings {
            out.push('\t');
            out.push_str(&rel(emb));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A fully loaded session ready for diarization or training.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub session_id: String,
    pub turns: Vec<RttmTurn>,
    pub regions: SpeechRegionList,
    pub segments: MultiScaleSegmentSet,
    pub embeddings: Vec<EmbeddingMatrix>,
}

/// Load one manifest entry and check the archives against the
/// segmentation the reference induces under `scales`.
pub fn load_session(entry: &ManifestEntry, scales: &[ScaleConfig]) -> Result<SessionData> {
    if entry.embeddings.len() != scales.len() {
        return Err(Error::InvalidInput(format!(
            "session {}: {} embedding archives for {} scales",
            entry.session_id,
            entry.embeddings.len(),
            scales.len()
        )));
    }
    let rttm_file = std::fs::File::open(&entry.rttm).map_err(|e| {
        Error::InvalidInput(format!(
            "session {}: cannot open reference {}: {e}",
            entry.session_id,
            entry.rttm.display()
        ))
    })?;
    let turns = parse_rttm(std::io::BufReader::new(rttm_file))?;
    if turns.is_empty() {
        return Err(Error::DegenerateSession(format!(
            "session {}: reference {} has no turns",
            entry.session_id,
            entry.rttm.display()
        )));
    }
    let regions = oracle_sad(&turns);
    let segments = build_multiscale(&regions, scales)?;
    let mut embeddings: Vec<EmbeddingMatrix> = Vec::with_capacity(scales.len());
    for (s, path) in entry.embeddings.iter().enumerate() {
        let m = read_embeddings(path).map_err(|e| {
            Error::InvalidInput(format!(
                "session {}: cannot read archive {}: {e}",
                entry.session_id,
                path.display()
            ))
        })?;
        let want = segments.segments_at(s).len();
        if m.rows() != want {
            return Err(Error::DimMismatch(format!(
                "session {}: scale {s} archive {} has {} rows, segmentation has {want}",
                entry.session_id,
                path.display(),
                m.rows()
            )));
        }
        if s > 0 && m.dim() != embeddings[0].dim() {
            return Err(Error::DimMismatch(format!(
                "session {}: scale {s} dim {} differs from scale 0 dim {}",
                entry.session_id,
                m.dim(),
                embeddings[0].dim()
            )));
        }
        embeddings.push(m);
    }
    Ok(SessionData {
        session_id: entry.session_id.clone(),
        turns,
        regions,
        segments,
        embeddings,
    })
}

/// Write a generated session into `dir` as `id.rttm` + `id.scaleN.emb`,
/// returning the manifest entry pointing at the files.
pub fn save_session(session: &SynthSession, dir: &Path) -> Result<ManifestEntry> {
    std::fs::create_dir_all(dir)?;
    let rttm = dir.join(format!("{}.rttm", session.recording_id));
    emit_rttm(
        &session.turns,
        std::io::BufWriter::new(std::fs::File::create(&rttm)?),
    )?;
    let mut embeddings = Vec::with_capacity(session.embeddings.len());
    for (s, m) in session.embeddings.iter().enumerate() {
        let p = dir.join(format!("{}.scale{s}.emb", session.recording_id));
        write_embeddings(m, &p)?;
        embeddings.push(p);
    }
    Ok(ManifestEntry {
        session_id: session.recording_id.clone(),
        rttm,
        embeddings,
    })
}

/// Labeled pair batch for training: up to `n_pairs` sampled base pairs
/// with mapped embeddings, normalized cosine triples, and ground-truth
/// cosine labels. Pairs whose label vectors are all-zero are dropped.
pub fn build_training_batch(data: &SessionData, n_pairs: usize, seed: u64) -> Result<PairBatch> {
    let l = data.segments.num_base();
    let speakers = speaker_list(&data.turns);
    let vectors = label_vectors(data.segments.base_segments(), &data.turns, &speakers)?;
    let pairs = sample_pairs(l, n_pairs, seed)?;
    let labeled = pair_labels(&vectors, &pairs)?;
    let tensor = build_affinity_tensor(&data.segments, &data.embeddings)?;
    build_pair_batch(&data.segments, &data.embeddings, &tensor, &labeled.labels)
}

/// Everything a diarization run produces for one session.
#[derive(Debug, Clone)]
pub struct DiarizeOutcome {
    pub hypothesis: DiarizationHypothesis,
    /// The weight vectors actually used (1, or 6 in block-resolved mode).
    pub weights: Vec<WeightVector>,
    pub cluster: ClusterResult,
    /// The fused affinity matrix the clustering ran on.
    pub fused: SquareMatrix,
    /// True when some scale's affinity was constant and fell back to 0.5.
    pub degenerate_affinity: bool,
}

/// Diarization knobs shared by every mode.
#[derive(Debug, Clone)]
pub struct DiarizeConfig {
    pub mode: InferenceMode,
    /// Pair sample size for weight inference.
    pub n_pairs: usize,
    pub nmesc: NmescConfig,
    pub seed: u64,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        Self {
            mode: InferenceMode::EqualWeight,
            n_pairs: 500_000,
            nmesc: NmescConfig::default(),
            seed: 0,
        }
    }
}

/// Run the full per-session pipeline: affinity tensor, weight inference,
/// fusion (block-resolved in the six-vector mode), clustering, timeline.
pub fn diarize_session(
    data: &SessionData,
    params: Option<&NasfParams>,
    cfg: &DiarizeConfig,
) -> Result<DiarizeOutcome> {
    let tensor = build_affinity_tensor(&data.segments, &data.embeddings)?;
    let weights = infer_weights(
        params,
        &data.segments,
        &data.embeddings,
        cfg.mode,
        cfg.n_pairs,
        cfg.seed,
    )?;
    let fused = match cfg.mode {
        InferenceMode::NasfD => {
            let split = split_into_blocks(data.segments.num_base(), 3);
            fuse_blockwise(&tensor, &weights, &split)?
        }
        _ => fuse(&tensor, &weights[0])?,
    };
    let cluster = cluster(&fused, &cfg.nmesc)?;
    let hypothesis = labels_to_timeline(
        &data.regions,
        data.segments.base_segments(),
        &cluster.labels,
    )?;
    Ok(DiarizeOutcome {
        hypothesis,
        weights,
        cluster,
        fused,
        degenerate_affinity: tensor.any_constant_fallback(),
    })
}

/// Score one session's hypothesis against its reference.
pub fn score_session(
    data: &SessionData,
    hypothesis: &DiarizationHypothesis,
    collar: f64,
    score_overlap: bool,
) -> Result<DerReport> {
    der(&data.turns, hypothesis, collar, score_overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::default_scales;
    use crate::synth::{gen_session, SynthConfig};

    fn make_session(seed: u64, noise: f64) -> SynthSession {
        let cfg = SynthConfig {
            speakers: 2,
            session_len: 40.0,
            dim: 16,
            noise_base: noise,
            seed,
            ..SynthConfig::default()
        };
        gen_session(&cfg, &default_scales(), &format!("s{seed:04}")).unwrap()
    }

    #[test]
    fn test_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let session = make_session(1, 0.1);
        let entry = save_session(&session, dir.path()).unwrap();
        let loaded = load_session(&entry, &default_scales()).unwrap();
        assert_eq!(loaded.turns, session.turns);
        assert_eq!(
            loaded.segments.base_segments(),
            session.segments.base_segments()
        );
        for (a, b) in loaded.embeddings.iter().zip(&session.embeddings) {
            assert_eq!(a.rows(), b.rows());
            for r in 0..a.rows() {
                for (x, y) in a.row(r).iter().zip(b.row(r)) {
                    let rel = (x - y).abs() / y.abs().max(1e-300);
                    assert!(rel < 5e-9, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn test_manifest_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let sessions: Vec<ManifestEntry> = (0..3)
            .map(|i| save_session(&make_session(i, 0.1), &dir.path().join("sessions")).unwrap())
            .collect();
        let manifest_path = dir.path().join("manifest.tsv");
        write_manifest(&sessions, &manifest_path).unwrap();
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        // Paths under the manifest dir are stored relative.
        assert!(!text.contains(dir.path().to_str().unwrap()));
        let manifest = read_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), 3);
        for (a, b) in manifest.entries.iter().zip(&sessions) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn test_load_session_missing_archive_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let session = make_session(2, 0.1);
        let mut entry = save_session(&session, dir.path()).unwrap();
        std::fs::remove_file(&entry.embeddings[1]).unwrap();
        let err = load_session(&entry, &default_scales()).unwrap_err();
        let msg = err.to_string();
        let _ = msg;
        // Wrong archive count is also rejected.
        entry.embeddings.pop();
        assert!(load_session(&entry, &default_scales()).is_err());
    }

    #[test]
    fn test_training_batch_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let session = make_session(3, 0.1);
        let entry = save_session(&session, dir.path()).unwrap();
        let data = load_session(&entry, &default_scales()).unwrap();
        let l = data.segments.num_base();
        let batch = build_training_batch(&data, 50, 9).unwrap();
        assert_eq!(batch.len(), 50.min(l * (l - 1) / 2));
        assert_eq!(batch.scales, 3);
        assert_eq!(batch.dim, 16);
        for &c in &batch.c {
            assert!((0.0..=1.0).contains(&c));
        }
        for &d in &batch.d {
            assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn test_diarize_easy_session_scores_well() {
        let session = make_session(4, 0.05);
        let dir = tempfile::tempdir().unwrap();
        let entry = save_session(&session, dir.path()).unwrap();
        let data = load_session(&entry, &default_scales()).unwrap();
        let outcome = diarize_session(&data, None, &DiarizeConfig::default()).unwrap();
        assert_eq!(outcome.weights.len(), 1);
        assert_eq!(outcome.cluster.k, 2, "expected both speakers found");
        let report = score_session(&data, &outcome.hypothesis, 0.25, false).unwrap();
        assert!(report.der < 0.15, "DER {}", report.der);
    }

    #[test]
    fn test_diarize_is_deterministic() {
        let session = make_session(5, 0.15);
        let dir = tempfile::tempdir().unwrap();
        let entry = save_session(&session, dir.path()).unwrap();
        let data = load_session(&entry, &default_scales()).unwrap();
        let a = diarize_session(&data, None, &DiarizeConfig::default()).unwrap();
        let b = diarize_session(&data, None, &DiarizeConfig::default()).unwrap();
        assert_eq!(a.hypothesis.spans, b.hypothesis.spans);
        let ra = crate::rttm::emit_rttm_string(&a.hypothesis.to_rttm("x"));
        let rb = crate::rttm::emit_rttm_string(&b.hypothesis.to_rttm("x"));
        assert_eq!(ra, rb);
    }

    #[test]
    fn test_single_scale_pipeline_works() {
        // One-scale config: the same pipeline serves as the single-scale
        // baseline (weights collapse to [1.0]).
        let scales = vec![ScaleConfig::from_seconds(1.0, 0.5, 0.25).unwrap()];
        let cfg = SynthConfig {
            speakers: 2,
            session_len: 40.0,
            dim: 16,
            noise_base: 0.05,
            seed: 6,
            ..SynthConfig::default()
        };
        let session = gen_session(&cfg, &scales, "mono").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let entry = save_session(&session, dir.path()).unwrap();
        let data = load_session(&entry, &scales).unwrap();
        let outcome = diarize_session(&data, None, &DiarizeConfig::default()).unwrap();
        assert_eq!(outcome.weights[0].as_slice(), &[1.0]);
        let report = score_session(&data, &outcome.hypothesis, 0.25, false).unwrap();
        assert!(report.der < 0.2, "DER {}", report.der);
    }
}
