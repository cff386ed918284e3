//! Synthetic session generator.
//!
//! Produces reference turns plus per-scale embeddings from a planted
//! geometric model: each speaker owns a fixed unit-norm centroid
//! (mutually orthogonal), a segment's clean embedding mixes the centroids
//! of whoever spoke inside it weighted by duration fraction, and isotropic
//! noise with per-component deviation σ₀/√(speech seconds) is added before
//! re-normalizing. Longer segments therefore carry cleaner speaker
//! evidence while shorter segments carry sharper time resolution — the
//! fidelity/resolution trade-off the fusion network is meant to exploit.

use crate::embedding::EmbeddingMatrix;
use crate::labels::label_vector;
use crate::rttm::{oracle_sad, RttmTurn};
use crate::segmenter::{build_multiscale, MultiScaleSegmentSet, ScaleConfig, Segment};
use crate::{sec_to_ms, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Knobs for one generated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of speakers (each gets an orthonormal centroid).
    pub speakers: usize,
    /// Target session length in seconds (speech + silence).
    pub session_len: f64,
    /// Mean speaker-turn duration in seconds.
    pub mean_turn: f64,
    /// Embedding dimension.
    pub dim: usize,
    /// Noise base σ₀; a segment with T seconds of speech gets isotropic
    /// noise of per-component deviation σ₀/√T.
    pub noise_base: f64,
    /// Expected fraction of the session spent in inter-turn silence.
    pub silence_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            speakers: 3,
            session_len: 60.0,
            mean_turn: 2.17,
            dim: 16,
            noise_base: 0.1,
            silence_frac: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers < 1 {
            return Err(Error::InvalidConfig("speakers must be ≥ 1".into()));
        }
        if !(self.mean_turn > 0.0) {
            return Err(Error::InvalidConfig("mean_turn must be > 0".into()));
        }
        if !(self.session_len > 0.0) {
            return Err(Error::InvalidConfig("session_len must be > 0".into()));
        }
        if self.noise_base < 0.0 || !self.noise_base.is_finite() {
            return Err(Error::InvalidConfig("noise_base must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.silence_frac) {
            return Err(Error::InvalidConfig("silence_frac must be in [0, 1)".into()));
        }
        if self.dim < self.speakers {
            return Err(Error::InvalidConfig(format!(
                "cannot orthogonalize {} centroids in dimension {}",
                self.speakers, self.dim
            )));
        }
        Ok(())
    }
}

/// One generated session: reference turns, the segmentation they induce,
/// and per-scale embedding matrices aligned with it.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub recording_id: String,
    pub turns: Vec<RttmTurn>,
    pub segments: MultiScaleSegmentSet,
    pub embeddings: Vec<EmbeddingMatrix>,
}

fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Mutually orthonormal unit centroids via Gram-Schmidt on Gaussian draws.
fn orthonormal_centroids(n: usize, dim: usize, rng: &mut ChaCha20Rng) -> Result<Vec<Vec<f64>>> {
    if dim < n {
        return Err(Error::InvalidConfig(format!(
            "cannot orthogonalize {n} centroids in dimension {dim}"
        )));
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
            for prev in &out {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in &mut v {
                    *x /= norm;
                }
                out.push(v);
                break;
            }
        }
    }
    Ok(out)
}

/// Clean centroid mix for one segment plus 1/√T noise, re-normalized.
fn noisy_embedding(
    mix: &[f64],
    speech_sec: f64,
    noise_base: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>> {
    let sigma = if noise_base > 0.0 {
        noise_base / speech_sec.sqrt()
    } else {
        0.0
    };
    let mut v: Vec<f64> = mix.to_vec();
    if sigma > 0.0 {
        for x in &mut v {
            *x += sigma * gauss(rng);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Shifted-exponential turn duration: minimum `shift`, mean exactly `mean`.
fn draw_turn_sec(mean: f64, rng: &mut ChaCha20Rng) -> f64 {
    let shift = 0.5_f64.min(mean * 0.5);
    let scale = mean - shift;
    let u: f64 = 1.0 - rng.random::<f64>();
    shift + scale * (-u.ln())
}

/// Next speaker: round-robin by default, occasional jump, never the same
/// speaker twice in a row (unless there is only one).
fn next_speaker(prev: usize, n: usize, rng: &mut ChaCha20Rng) -> usize {
    if n == 1 {
        return 0;
    }
    if rng.random::<f64>() < 0.3 {
        let mut s = rng.random_range(0..n - 1);
        if s >= prev {
            s += 1;
        }
        s
    } else {
        (prev + 1) % n
    }
}

/// Generate one session under `cfg`, segmented with `scales`.
pub fn gen_session(
    cfg: &SynthConfig,
    scales: &[ScaleConfig],
    recording_id: &str,
) -> Result<SynthSession> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Mean silence gap sized so silence ≈ silence_frac of the session.
    let mean_gap = if cfg.silence_frac > 0.0 {
        cfg.mean_turn * cfg.silence_frac / (1.0 - cfg.silence_frac)
    } else {
        0.0
    };

    let session_ms = sec_to_ms(cfg.session_len);
    let mut turns: Vec<RttmTurn> = Vec::new();
    let mut t = 0i64;
    let mut speaker = if cfg.speakers == 1 {
        0
    } else {
        rng.random_range(0..cfg.speakers)
    };
    while t < session_ms {
        let dur = sec_to_ms(draw_turn_sec(cfg.mean_turn, &mut rng)).min(session_ms - t);
        if dur >= 50 {
            turns.push(RttmTurn::new(recording_id, t, dur, &format!("spk{speaker}")));
        }
        t += dur;
        if mean_gap > 0.0 {
            let u: f64 = 1.0 - rng.random::<f64>();
            t += sec_to_ms(mean_gap * (-u.ln()));
        }
        speaker = next_speaker(speaker, cfg.speakers, &mut rng);
    }
    if turns.is_empty() {
        return Err(Error::DegenerateSession(format!(
            "no turns generated for {recording_id}"
        )));
    }

    let centroids = orthonormal_centroids(cfg.speakers, cfg.dim, &mut rng)?;
    let speaker_ids: Vec<String> = (0..cfg.speakers).map(|k| format!("spk{k}")).collect();

    let regions = oracle_sad(&turns);
    let segments = build_multiscale(&regions, scales)?;

    let mut embeddings = Vec::with_capacity(scales.len());
    for s in 0..scales.len() {
        let mut mat = EmbeddingMatrix::new(s, cfg.dim, 0);
        for seg in segments.segments_at(s) {
            mat.push_row(&segment_embedding(
                seg,
                &turns,
                &speaker_ids,
                &centroids,
                cfg.noise_base,
                &mut rng,
            )?)?;
        }
        embeddings.push(mat);
    }

    Ok(SynthSession {
        recording_id: recording_id.to_string(),
        turns,
        segments,
        embeddings,
    })
}

fn segment_embedding(
    seg: &Segment,
    turns: &[RttmTurn],
    speaker_ids: &[String],
    centroids: &[Vec<f64>],
    noise_base: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>> {
    let v = label_vector(seg, turns, speaker_ids)?;
    let speech: f64 = v.v.iter().sum();
    if speech <= 0.0 {
        return Err(Error::DegenerateSession(format!(
            "segment [{}, {}) contains no speech",
            seg.start_ms, seg.end_ms
        )));
    }
    let dim = centroids[0].len();
    let mut mix = vec![0.0f64; dim];
    for (k, &dur) in v.v.iter().enumerate() {
        let frac = dur / speech;
        if frac > 0.0 {
            for (m, c) in mix.iter_mut().zip(&centroids[k]) {
                *m += frac * c;
            }
        }
    }
    noisy_embedding(&mix, speech, noise_base, rng)
}
