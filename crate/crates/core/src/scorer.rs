//! Hypothesis timelines and diarization error rate.
//!
//! Base-segment cluster labels become a speaker-attributed timeline by
//! giving every millisecond of speech to the base segment with the
//! nearest center (ties toward the earlier segment). Scoring follows the
//! standard rich-transcription recipe: a no-score collar around every
//! reference turn boundary, optional exclusion of overlapped reference
//! speech, an optimal one-to-one speaker↔cluster mapping, and
//! DER = (miss + false alarm + confusion) / scored reference speech.

use crate::hungarian::max_weight_assignment;
use crate::rttm::{RttmTurn, SpeechRegionList};
use crate::segmenter::Segment;
use crate::{sec_to_ms, Error, Result};
use std::collections::BTreeSet;

/// Merged spans of (start_ms, end_ms, cluster), disjoint and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiarizationHypothesis {
    pub spans: Vec<(i64, i64, usize)>,
}

impl DiarizationHypothesis {
    /// Hypothesis as reference-format turns, clusters named spk00, spk01…
    pub fn to_rttm(&self, recording_id: &str) -> Vec<RttmTurn> {
        self.spans
            .iter()
            .map(|&(s, e, c)| RttmTurn::new(recording_id, s, e - s, &format!("spk{c:02}")))
            .collect()
    }

    pub fn cluster_count(&self) -> usize {
        self.spans.iter().map(|&(_, _, c)| c + 1).max().unwrap_or(0)
    }
}

/// Rebuild a hypothesis from reference-format turns (the inverse of
/// `to_rttm` up to span merging). Speaker names become cluster indices
/// in order of first appearance, so round-tripping through a file keeps
/// scoring invariant under the arbitrary cluster numbering.
pub fn hypothesis_from_turns(turns: &[RttmTurn]) -> DiarizationHypothesis {
    let mut names: Vec<&str> = Vec::new();
    let mut spans: Vec<(i64, i64, usize)> = Vec::with_capacity(turns.len());
    for t in turns {
        let c = match names.iter().position(|n| *n == t.speaker_id) {
            Some(i) => i,
            None => {
                names.push(&t.speaker_id);
                names.len() - 1
            }
        };
        spans.push((t.onset_ms, t.end_ms(), c));
    }
    spans.sort();
    DiarizationHypothesis { spans }
}

/// First frame owned by the *right* of two segments with center-sums
/// (start+end, in ms) `cx2_left` < `cx2_right`: frame c (covering
/// [c, c+1) ms, judged at its midpoint) goes left iff
/// 4c + 2 ≤ cx2_left + cx2_right, with the boundary tie going left.
fn ownership_boundary(cx2_left: i64, cx2_right: i64) -> i64 {
    (cx2_left + cx2_right - 2).div_euclid(4) + 1
}

/// Convert per-base-segment labels into a merged timeline. Every frame in
/// a speech region belongs to the nearest base-segment center within that
/// region; a region that has no base segments (too short for the base
/// minimum length) borrows the nearest center session-wide.
pub fn labels_to_timeline(
    regions: &SpeechRegionList,
    base: &[Segment],
    labels: &[usize],
) -> Result<DiarizationHypothesis> {
    if base.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} base segments",
            labels.len(),
            base.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::InvalidInput("no base segments".into()));
    }
    let mut spans: Vec<(i64, i64, usize)> = Vec::new();
    for (r, &(rs, re)) in regions.regions().iter().enumerate() {
        // Segment indices tiling this region, in center order.
        let mut owners: Vec<usize> =
            (0..base.len()).filter(|&i| base[i].region_idx == r).collect();
        if owners.is_empty() {
            // Degenerate region: a single owner, the globally nearest center.
            let target = rs + re; // region center ×2
            let mut best = 0usize;
            let mut best_d = i64::MAX;
            for (i, seg) in base.iter().enumerate() {
                let d = (seg.center_x2() - target).abs();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            owners.push(best);
        }

        let mut cursor = rs;
        for w in 0..owners.len() {
            let end = if w + 1 < owners.len() {
                ownership_boundary(base[owners[w]].center_x2(), base[owners[w + 1]].center_x2())
                    .clamp(rs, re)
            } else {
                re
            };
            if end > cursor {
                let label = labels[owners[w]];
                match spans.last_mut() {
                    Some((_, last_end, last_label))
                        if *last_end == cursor && *last_label == label =>
                    {
                        *last_end = end;
                    }
                    _ => spans.push((cursor, end, label)),
                }
                cursor = end;
            }
        }
    }
    Ok(DiarizationHypothesis { spans })
}

/// One scored session's error breakdown, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerReport {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    /// Scored reference speaker-time (the DER denominator).
    pub total_speech: f64,
    pub der: f64,
    pub collar: f64,
}

impl DerReport {
    fn from_ms(miss: i64, fa: i64, conf: i64, total: i64, collar: f64) -> Self {
        let sec = |v: i64| v as f64 / 1000.0;
        let errors = miss + fa + conf;
        let der = if total > 0 {
            errors as f64 / total as f64
        } else if errors == 0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            miss: sec(miss),
            false_alarm: sec(fa),
            confusion: sec(conf),
            total_speech: sec(total),
            der,
            collar,
        }
    }

    /// "MISS FA CONF TOTAL DER" summary line.
    pub fn summary_line(&self) -> String {
        format!(
            "{:.3} {:.3} {:.3} {:.3} {:.4}",
            self.miss, self.false_alarm, self.confusion, self.total_speech, self.der
        )
    }
}

/// Time-weighted corpus aggregate: summed errors over summed speech.
pub fn aggregate_der(reports: &[DerReport]) -> DerReport {
    let mut miss = 0.0;
    let mut fa = 0.0;
    let mut conf = 0.0;
    let mut total = 0.0;
    let mut collar = 0.0;
    for r in reports {
        miss += r.miss;
        fa += r.false_alarm;
        conf += r.confusion;
        total += r.total_speech;
        collar = r.collar;
    }
    let errors = miss + fa + conf;
    DerReport {
        miss,
        false_alarm: fa,
        confusion: conf,
        total_speech: total,
        der: if total > 0.0 {
            errors / total
        } else if errors == 0.0 {
            0.0
        } else {
            f64::INFINITY
        },
        collar,
    }
}

/// Score a hypothesis against reference turns for one recording.
///
/// `collar` seconds on each side of every reference turn boundary are
/// excluded from scoring; with `score_overlap` false, frames where two or
/// more reference speakers talk simultaneously are excluded too. The
/// speaker↔cluster mapping maximizes total overlap across scored frames.
pub fn der(
    reference: &[RttmTurn],
    hypothesis: &DiarizationHypothesis,
    collar: f64,
    score_overlap: bool,
) -> Result<DerReport> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty reference".into()));
    }
    if collar < 0.0 || !collar.is_finite() {
        return Err(Error::InvalidInput(format!("bad collar {collar}")));
    }
    let collar_ms = sec_to_ms(collar);

    let mut speakers: Vec<&str> = reference.iter().map(|t| t.speaker_id.as_str()).collect();
    speakers.sort();
    speakers.dedup();
    let spk_idx = |id: &str| speakers.iter().position(|s| *s == id).expect("known speaker");
    let n_spk = speakers.len();
    let n_clu = hypothesis.cluster_count();

    // Elementary intervals: between consecutive breakpoints nothing changes.
    let mut points: BTreeSet<i64> = BTreeSet::new();
    let mut noscore: Vec<(i64, i64)> = Vec::new();
    for t in reference {
        points.insert(t.onset_ms);
        points.insert(t.end_ms());
        for b in [t.onset_ms, t.end_ms()] {
            points.insert((b - collar_ms).max(0));
            points.insert(b + collar_ms);
            if collar_ms > 0 {
                noscore.push(((b - collar_ms).max(0), b + collar_ms));
            }
        }
    }
    for &(s, e, _) in &hypothesis.spans {
        points.insert(s);
        points.insert(e);
    }
    let points: Vec<i64> = points.into_iter().collect();

    let ref_active = |a: i64, b: i64, k: usize| {
        reference
            .iter()
            .any(|t| spk_idx(&t.speaker_id) == k && t.onset_ms <= a && t.end_ms() >= b)
    };
    let hyp_active = |a: i64, b: i64| {
        hypothesis
            .spans
            .iter()
            .find(|&&(s, e, _)| s <= a && e >= b)
            .map(|&(_, _, c)| c)
    };
    let in_noscore = |a: i64, b: i64| noscore.iter().any(|&(s, e)| s <= a && e >= b);

    // Pass 1: speaker↔cluster co-occurrence over scored frames.
    let mut overlap = vec![vec![0.0f64; n_clu.max(1)]; n_spk];
    let mut scored: Vec<(i64, i64, Vec<usize>, Option<usize>)> = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let active: Vec<usize> = (0..n_spk).filter(|&k| ref_active(a, b, k)).collect();
        let hyp = hyp_active(a, b);
        if in_noscore(a, b) {
            continue;
        }
        if !score_overlap && active.len() >= 2 {
            continue;
        }
        if active.is_empty() && hyp.is_none() {
            continue;
        }
        if let Some(c) = hyp {
            for &k in &active {
                overlap[k][c] += (b - a) as f64;
            }
        }
        scored.push((a, b, active, hyp));
    }

    let mapping = max_weight_assignment(&overlap);

    // Pass 2: error accumulation.
    let mut miss = 0i64;
    let mut fa = 0i64;
    let mut conf = 0i64;
    let mut total = 0i64;
    for (a, b, active, hyp) in scored {
        let dur = b - a;
        let r = active.len() as i64;
        let h = i64::from(hyp.is_some());
        total += r * dur;
        miss += (r - h).max(0) * dur;
        fa += (h - r).max(0) * dur;
        if let Some(c) = hyp {
            if r >= 1 {
                let matched = active.iter().any(|&k| mapping[k] == Some(c));
                if !matched {
                    conf += dur;
                }
            }
        }
    }

    Ok(DerReport::from_ms(miss, fa, conf, total, collar))
}
