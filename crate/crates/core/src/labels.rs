//! Ground-truth affinity labels from reference annotations.
//!
//! Each base segment gets a *speaker label vector*: one component per
//! session speaker holding the seconds that speaker is active inside the
//! segment. The training target for a segment pair is the cosine of the
//! two vectors — 1 for same-speaker pairs, 0 for disjoint speakers, and a
//! graded value when a segment straddles a turn change or overlap.

use crate::affinity::cosine;
use crate::rttm::RttmTurn;
use crate::segmenter::Segment;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::HashSet;
use std::io::Write;

/// Per-speaker speech duration (seconds) inside one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLabelVector {
    pub v: Vec<f64>,
}

impl SpeakerLabelVector {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// True when the segment contains no reference speech at all.
    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|&x| x == 0.0)
    }
}

/// One labeled base-segment pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub d: f64,
}

/// Labels plus the count of pairs dropped for having a silent endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabelSet {
    pub labels: Vec<PairLabel>,
    pub dropped_zero: usize,
}

/// Sorted unique speaker ids — the component order of every label vector.
pub fn speaker_list(turns: &[RttmTurn]) -> Vec<String> {
    let mut ids: Vec<String> = turns.iter().map(|t| t.speaker_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Seconds each speaker is active inside `seg`. A speaker's own turns are
/// unioned first, so self-overlapping turns never double-count; distinct
/// speakers overlapping in time each accumulate their full share.
pub fn label_vector(
    seg: &Segment,
    turns: &[RttmTurn],
    speakers: &[String],
) -> Result<SpeakerLabelVector> {
    let mut v = vec![0.0f64; speakers.len()];
    for (k, spk) in speakers.iter().enumerate() {
        // Clip this speaker's turns to the segment, then merge.
        let mut clipped: Vec<(i64, i64)> = turns
            .iter()
            .filter(|t| &t.speaker_id == spk)
            .map(|t| (t.onset_ms.max(seg.start_ms), t.end_ms().min(seg.end_ms)))
            .filter(|(s, e)| e > s)
            .collect();
        clipped.sort();
        let mut total = 0i64;
        let mut cur: Option<(i64, i64)> = None;
        for (s, e) in clipped {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    cur = Some((s, e));
                    let _ = cs;
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            total += ce - cs;
        }
        v[k] = total as f64 / 1000.0;
    }
    for t in turns {
        if !speakers.contains(&t.speaker_id) {
            return Err(Error::InvalidInput(format!(
                "turn speaker {:?} missing from speaker list",
                t.speaker_id
            )));
        }
    }
    Ok(SpeakerLabelVector { v })
}

/// Label vectors for every segment in order.
pub fn label_vectors(
    segments: &[Segment],
    turns: &[RttmTurn],
    speakers: &[String],
) -> Result<Vec<SpeakerLabelVector>> {
    segments
        .iter()
        .map(|s| label_vector(s, turns, speakers))
        .collect()
}

/// Cosine labels for the requested pairs. Pairs where either endpoint has
/// an all-zero vector are dropped and counted — cosine is undefined there
/// and the segment carries no speaker evidence.
pub fn pair_labels(vectors: &[SpeakerLabelVector], pairs: &[(usize, usize)]) -> Result<PairLabelSet> {
    let mut labels = Vec::with_capacity(pairs.len());
    let mut dropped = 0usize;
    for &(i, j) in pairs {
        if i == j {
            return Err(Error::InvalidInput(format!("pair ({i},{j}) is degenerate")));
        }
        if i >= vectors.len() || j >= vectors.len() {
            return Err(Error::InvalidInput(format!(
                "pair ({i},{j}) out of range for {} vectors",
                vectors.len()
            )));
        }
        if vectors[i].is_zero() || vectors[j].is_zero() {
            dropped += 1;
            continue;
        }
        let d = cosine(&vectors[i].v, &vectors[j].v)?;
        labels.push(PairLabel { i, j, d });
    }
    Ok(PairLabelSet {
        labels,
        dropped_zero: dropped,
    })
}

fn pairs_before_row(l: u64, i: u64) -> u64 {
    i * (2 * l - i - 1) / 2
}

/// Invert the canonical (i<j, lexicographic) pair enumeration.
fn pair_from_index(l: u64, idx: u64) -> (usize, usize) {
    let disc = ((2 * l - 1) * (2 * l - 1)) as f64 - 8.0 * idx as f64;
    let mut i = (((2 * l - 1) as f64 - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
    i = i.min(l - 2);
    // Float estimate can be off by one either way; correct exactly.
    while i + 1 <= l - 2 && pairs_before_row(l, i + 1) <= idx {
        i += 1;
    }
    while pairs_before_row(l, i) > idx {
        i -= 1;
    }
    let j = i + 1 + (idx - pairs_before_row(l, i));
    (i as usize, j as usize)
}

/// Draw `n` distinct unordered index pairs from `0..l` uniformly without
/// replacement, deterministically for a given seed. Asking for at least
/// C(l, 2) pairs returns all of them. The full pair set is never
/// materialized, so large l with small n stays cheap.
pub fn sample_pairs(l: usize, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if l < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 segments to form pairs, got {l}"
        )));
    }
    let lu = l as u64;
    let total = lu * (lu - 1) / 2;
    if n as u64 >= total {
        let mut all = Vec::with_capacity(total as usize);
        for i in 0..l {
            for j in i + 1..l {
                all.push((i, j));
            }
        }
        return Ok(all);
    }
    // Floyd's algorithm: n distinct values from 0..total without a full shuffle.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut chosen: HashSet<u64> = HashSet::with_capacity(n);
    for t in (total - n as u64)..total {
        let r = rng.random_range(0..=t);
        if !chosen.insert(r) {
            chosen.insert(t);
        }
    }
    let mut indices: Vec<u64> = chosen.into_iter().collect();
    indices.sort_unstable();
    Ok(indices.into_iter().map(|idx| pair_from_index(lu, idx)).collect())
}

/// Dump labels as "i j d" lines, d at 6 decimals.
pub fn write_pair_labels_to<W: Write>(set: &PairLabelSet, writer: &mut W) -> Result<()> {
    for p in &set.labels {
        writeln!(writer, "{} {} {:.6}", p.i, p.j, p.d)?;
    }
    Ok(())
}
