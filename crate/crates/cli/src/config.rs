//! Flat, typed pipeline configuration.
//!
//! All knobs live in one key/value TOML document; every key has a
//! default, so an empty (or absent) file is a valid configuration.
//! Command-line flags override file values, and four environment
//! variables override paths only: `MSDIAR_MANIFEST`, `MSDIAR_CORPUS_DIR`,
//! `MSDIAR_OUTPUT_DIR`, `MSDIAR_MODEL_PATH`.

use anyhow::{bail, Context};
use msdiar_core::nasf::InferenceMode;
use msdiar_core::nmesc::NmescConfig;
use msdiar_core::segmenter::ScaleConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    // Segmentation scales, ordered coarse → fine; the last is the base.
    pub scale_windows: Vec<f64>,
    pub scale_hops: Vec<f64>,
    pub scale_min_lens: Vec<f64>,

    // Weight inference.
    /// One of: equal, nasf-s, nasf-d.
    pub mode: String,
    /// Pair sample size for weight estimation.
    pub n_pairs: usize,
    pub model_path: Option<PathBuf>,

    // Clustering.
    /// Cap on the number of binarization candidates searched.
    pub p_grid_cap: usize,
    pub k_max: usize,
    pub kmeans_restarts: usize,

    // Scoring.
    pub collar: f64,
    pub score_overlap: bool,

    // I/O.
    pub manifest: PathBuf,
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,

    // Synthetic-corpus generation.
    pub sessions: usize,
    pub speakers: usize,
    pub session_len: f64,
    pub mean_turn: f64,
    pub dim: usize,
    pub noise_base: f64,
    pub silence_frac: f64,

    // Training.
    pub hidden: usize,
    pub head_bias: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Labeled pairs sampled per training session.
    pub train_pairs_per_session: usize,

    pub seed: u64,
    /// Worker threads for per-session work; 0 = use all available.
    pub workers: usize,

    // Diarize extras.
    /// Also write each session's fused affinity matrix next to its RTTM.
    pub dump_affinity: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scale_windows: vec![1.5, 1.0, 0.5],
            scale_hops: vec![0.75, 0.5, 0.25],
            scale_min_lens: vec![0.5, 0.25, 0.17],
            mode: "equal".to_string(),
            n_pairs: 500_000,
            model_path: None,
            p_grid_cap: 100,
            k_max: 8,
            kmeans_restarts: 10,
            collar: 0.25,
            score_overlap: false,
            manifest: PathBuf::from("corpus/manifest.tsv"),
            corpus_dir: PathBuf::from("corpus"),
            output_dir: PathBuf::from("out"),
            sessions: 50,
            speakers: 3,
            session_len: 60.0,
            mean_turn: 2.17,
            dim: 16,
            noise_base: 0.1,
            silence_frac: 0.1,
            hidden: 128,
            head_bias: true,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 20,
            train_pairs_per_session: 1_000,
            seed: 0,
            workers: 0,
            dump_affinity: false,
        }
    }
}

impl PipelineConfig {
    /// Read a TOML file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    /// Path-only environment overrides.
    fn apply_env(&mut self) {
        if let Ok(v) = std::env::var("MSDIAR_MANIFEST") {
            self.manifest = PathBuf::from(v);
        }
        if let Ok(v) = std::env::var("MSDIAR_CORPUS_DIR") {
            self.corpus_dir = PathBuf::from(v);
        }
        if let Ok(v) = std::env::var("MSDIAR_OUTPUT_DIR") {
            self.output_dir = PathBuf::from(v);
        }
        if let Ok(v) = std::env::var("MSDIAR_MODEL_PATH") {
            self.model_path = Some(PathBuf::from(v));
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let n = self.scale_windows.len();
        if n == 0 || self.scale_hops.len() != n || self.scale_min_lens.len() != n {
            bail!(
                "scale_windows/scale_hops/scale_min_lens must have equal nonzero lengths \
                 (got {}/{}/{})",
                n,
                self.scale_hops.len(),
                self.scale_min_lens.len()
            );
        }
        for w in self.scale_windows.windows(2) {
            if w[1] >= w[0] {
                bail!("scales must be ordered coarse → fine (windows strictly decreasing)");
            }
        }
        self.parse_mode()?;
        self.scales()?;
        if self.collar < 0.0 {
            bail!("collar must be ≥ 0");
        }
        Ok(())
    }

    pub fn parse_mode(&self) -> anyhow::Result<InferenceMode> {
        self.mode
            .parse()
            .map_err(|e| anyhow::anyhow!("invalid mode: {e}"))
    }

    /// The configured scales as validated segmenter configs.
    pub fn scales(&self) -> anyhow::Result<Vec<ScaleConfig>> {
        let mut out = Vec::with_capacity(self.scale_windows.len());
        for i in 0..self.scale_windows.len() {
            out.push(
                ScaleConfig::from_seconds(
                    self.scale_windows[i],
                    self.scale_hops[i],
                    self.scale_min_lens[i],
                )
                .with_context(|| format!("scale {i}"))?,
            );
        }
        Ok(out)
    }

    pub fn nmesc(&self) -> NmescConfig {
        NmescConfig {
            p_grid: None,
            max_p_candidates: self.p_grid_cap,
            k_max: self.k_max,
            kmeans_restarts: self.kmeans_restarts,
            seed: self.seed,
        }
    }

    /// Worker count for session-level parallelism.
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }
}
