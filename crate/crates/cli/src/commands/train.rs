//! `train` — fit the affinity-fusion network on a corpus. Every session
//! is loaded and turned into a labeled pair batch before any training
//! starts, so a broken corpus fails cleanly with no partial checkpoint.
//! The checkpoint is written to a temporary file and renamed into place.

use super::{load_corpus, log_path};
use crate::config::PipelineConfig;
use crate::output::{parallel_map, JsonlWriter};
use anyhow::Context;
use msdiar_core::nasf::{save_checkpoint, train, NasfDims, NasfParams, PairBatch, TrainConfig};
use msdiar_core::pipeline::build_training_batch;
use serde_json::json;
use std::time::Instant;

/// MSE of the uniform-weight predictor over a pair pool; the baseline a
/// trained network has to beat.
fn equal_weight_mse(batches: &[PairBatch]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for b in batches {
        let s = b.scales;
        for i in 0..b.len() {
            let y: f64 = b.c[i * s..(i + 1) * s].iter().sum::<f64>() / s as f64;
            let r = y - b.d[i];
            acc += r * r;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

pub fn cmd_train(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let started = Instant::now();
    let scales = cfg.scales()?;
    let sessions = load_corpus(cfg, &scales)?;
    anyhow::ensure!(
        !sessions.is_empty(),
        "manifest {} lists no sessions",
        cfg.manifest.display()
    );

    let results = parallel_map(&sessions, cfg.worker_count(), |i, data| {
        build_training_batch(data, cfg.train_pairs_per_session, cfg.seed + i as u64)
    });
    let mut batches = Vec::with_capacity(sessions.len());
    for (data, res) in sessions.iter().zip(results) {
        batches.push(res.with_context(|| format!("building pairs for {}", data.session_id))?);
    }

    let dims = NasfDims {
        scales: scales.len(),
        input_dim: sessions[0].embeddings[0].dim(),
        hidden: cfg.hidden,
        head_bias: cfg.head_bias,
    };
    let init = NasfParams::init(dims, cfg.seed)?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
    };
    let (params, epochs) = train(init, &batches, &train_cfg)?;

    let model_path = cfg
        .model_path
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("nasf.ckpt"));
    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = model_path.with_extension("ckpt.tmp");
    save_checkpoint(&params, cfg.seed, &tmp)
        .with_context(|| format!("cannot write checkpoint {}", tmp.display()))?;
    std::fs::rename(&tmp, &model_path)
        .with_context(|| format!("cannot move checkpoint into {}", model_path.display()))?;

    let mut log = JsonlWriter::create(&log_path(cfg, "train"))?;
    for e in &epochs {
        log.write(&json!({
            "event": "epoch",
            "epoch": e.epoch,
            "train_mse": e.train_mse,
            "val_mse": e.val_mse,
        }))?;
    }
    let best_val = epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
    let equal_mse = equal_weight_mse(&batches);
    log.write(&json!({
        "event": "summary",
        "sessions": sessions.len(),
        "pairs": batches.iter().map(|b| b.len()).sum::<usize>(),
        "best_val_mse": best_val,
        "equal_weight_mse": equal_mse,
        "checkpoint": model_path.display().to_string(),
        "elapsed_sec": started.elapsed().as_secs_f64(),
    }))?;
    log.finish()?;

    println!(
        "trained on {} sessions for {} epochs: best val MSE {:.6} (uniform weights {:.6}), checkpoint {}",
        sessions.len(),
        epochs.len(),
        best_val,
        equal_mse,
        model_path.display()
    );
    Ok(())
}
