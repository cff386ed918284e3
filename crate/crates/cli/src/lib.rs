//! Command-line driver for the multi-scale diarization library:
//! configuration loading, subcommand implementations, and result logging.
//!
//! - `config` — flat TOML configuration with CLI/env overrides.
//! - `commands` — one function per subcommand (synth, segment, train,
//!   diarize, score, ablate), all driven by a `PipelineConfig`.
//! - `output` — JSON-lines result logs, text tables, and a bounded
//!   worker pool for session-level parallelism.

pub mod commands;
pub mod config;
pub mod output;
