//! `msdiar` — multi-scale speaker diarization driver.
//!
//! Configuration comes from (lowest to highest precedence) built-in
//! defaults, an optional TOML file, path environment variables, and
//! command-line flags. Every subcommand exits non-zero unless it fully
//! succeeded.

use clap::{Parser, Subcommand};
use msdiar_cli::commands;
use msdiar_cli::config::PipelineConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "msdiar", version, about = "Multi-scale speaker diarization with learned affinity fusion")]
struct Cli {
    /// TOML configuration file; flags below override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Segment windows in seconds, coarse to fine (comma-separated).
    #[arg(long, global = true, value_delimiter = ',', value_name = "SECS")]
    scale_windows: Option<Vec<f64>>,
    /// Segment hops in seconds, one per window.
    #[arg(long, global = true, value_delimiter = ',', value_name = "SECS")]
    scale_hops: Option<Vec<f64>>,
    /// Minimum segment lengths in seconds, one per window.
    #[arg(long, global = true, value_delimiter = ',', value_name = "SECS")]
    scale_min_lens: Option<Vec<f64>>,

    /// Weight inference mode: equal, nasf-s, or nasf-d.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Segment pairs sampled per session when inferring weights.
    #[arg(long, global = true)]
    n_pairs: Option<usize>,
    /// Trained checkpoint path (required by nasf-s / nasf-d).
    #[arg(long, global = true, value_name = "FILE")]
    model_path: Option<PathBuf>,

    /// Cap on neighbor-count candidates searched by the clusterer.
    #[arg(long, global = true)]
    p_grid_cap: Option<usize>,
    /// Largest speaker count the clusterer may report.
    #[arg(long, global = true)]
    k_max: Option<usize>,
    /// k-means restarts per clustering.
    #[arg(long, global = true)]
    kmeans_restarts: Option<usize>,

    /// No-score collar around reference turn boundaries, seconds.
    #[arg(long, global = true)]
    collar: Option<f64>,
    /// Score regions where reference speakers overlap.
    #[arg(long, global = true)]
    score_overlap: Option<bool>,

    /// Corpus manifest (tab-separated: id, rttm, one archive per scale).
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Directory `synth` writes the generated corpus into.
    #[arg(long, global = true, value_name = "DIR")]
    corpus_dir: Option<PathBuf>,
    /// Directory for hypotheses, logs, and dumps.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Sessions to generate.
    #[arg(long, global = true)]
    sessions: Option<usize>,
    /// Speakers per generated session.
    #[arg(long, global = true)]
    speakers: Option<usize>,
    /// Generated session length, seconds.
    #[arg(long, global = true)]
    session_len: Option<f64>,
    /// Mean speaker-turn duration, seconds.
    #[arg(long, global = true)]
    mean_turn: Option<f64>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Noise scale at one second of speech (grows as 1/sqrt(T)).
    #[arg(long, global = true)]
    noise_base: Option<f64>,
    /// Fraction of each generated session left silent.
    #[arg(long, global = true)]
    silence_frac: Option<f64>,

    /// Hidden width of the fusion network towers.
    #[arg(long, global = true)]
    hidden: Option<usize>,
    /// Give the fusion head a bias term.
    #[arg(long, global = true)]
    head_bias: Option<bool>,
    /// Adam step size.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Training minibatch size.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Labeled pairs sampled per session for training.
    #[arg(long, global = true)]
    train_pairs_per_session: Option<usize>,

    /// Master seed; per-session seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-session work (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write each session's fused affinity matrix.
    #[arg(long, global = true)]
    dump_affinity: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth,
    /// Dump each session's multi-scale segmentation and scale mapping.
    Segment,
    /// Train the affinity-fusion network and write a checkpoint.
    Train,
    /// Produce hypothesis RTTMs for every session in the manifest.
    Diarize,
    /// Score hypotheses against the references.
    Score,
    /// Compare single-scale, uniform, and learned fusion on one corpus.
    Ablate,
}

impl Cli {
    fn apply_to(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
        }
        set!(scale_windows);
        set!(scale_hops);
        set!(scale_min_lens);
        set!(mode);
        if let Some(v) = self.n_pairs {
            cfg.n_pairs = v;
        }
        if self.model_path.is_some() {
            cfg.model_path = self.model_path.clone();
        }
        if let Some(v) = self.p_grid_cap {
            cfg.p_grid_cap = v;
        }
        if let Some(v) = self.k_max {
            cfg.k_max = v;
        }
        if let Some(v) = self.kmeans_restarts {
            cfg.kmeans_restarts = v;
        }
        if let Some(v) = self.collar {
            cfg.collar = v;
        }
        if let Some(v) = self.score_overlap {
            cfg.score_overlap = v;
        }
        set!(manifest);
        set!(corpus_dir);
        set!(output_dir);
        if let Some(v) = self.sessions {
            cfg.sessions = v;
        }
        if let Some(v) = self.speakers {
            cfg.speakers = v;
        }
        if let Some(v) = self.session_len {
            cfg.session_len = v;
        }
        if let Some(v) = self.mean_turn {
            cfg.mean_turn = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.noise_base {
            cfg.noise_base = v;
        }
        if let Some(v) = self.silence_frac {
            cfg.silence_frac = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.head_bias {
            cfg.head_bias = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.train_pairs_per_session {
            cfg.train_pairs_per_session = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.dump_affinity {
            cfg.dump_affinity = v;
        }
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cli.apply_to(&mut cfg);
    cfg.validate()?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Segment => commands::cmd_segment(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Diarize => commands::cmd_diarize(&cfg),
        Command::Score => commands::cmd_score(&cfg),
        Command::Ablate => commands::cmd_ablate(&cfg),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
