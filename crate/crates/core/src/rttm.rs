//! RTTM reference parsing/emission and oracle speech-activity regions.
//!
//! Time fields are stored as integer milliseconds so interval arithmetic
//! (merging, overlap, scoring) stays exact; second-valued fields round to
//! the nearest millisecond on parse.

use crate::{ms_to_sec, sec_to_ms, Error, Result};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// One reference speaker turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RttmTurn {
    pub recording_id: String,
    pub onset_ms: i64,
    pub duration_ms: i64,
    pub speaker_id: String,
}

impl RttmTurn {
    pub fn new(recording_id: &str, onset_ms: i64, duration_ms: i64, speaker_id: &str) -> Self {
        Self {
            recording_id: recording_id.to_string(),
            onset_ms,
            duration_ms,
            speaker_id: speaker_id.to_string(),
        }
    }

    pub fn onset_sec(&self) -> f64 {
        ms_to_sec(self.onset_ms)
    }

    pub fn duration_sec(&self) -> f64 {
        ms_to_sec(self.duration_ms)
    }

    pub fn end_ms(&self) -> i64 {
        self.onset_ms + self.duration_ms
    }
}

/// Parse RTTM text. Lines must carry at least 8 whitespace-delimited
/// fields starting with `SPEAKER`; fields 3, 6, 7, 9, 10 are accepted and
/// ignored. Returns turns sorted by `(recording_id, onset)`; overlapping
/// turns are retained unmerged.
pub fn parse_rttm<R: BufRead>(reader: R) -> Result<Vec<RttmTurn>> {
    let mut turns = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 8 {
            return Err(Error::RttmParse {
                line: line_no,
                msg: format!("expected at least 8 fields, got {}", fields.len()),
            });
        }
        if fields[0] != "SPEAKER" {
            return Err(Error::RttmParse {
                line: line_no,
                msg: format!("expected record type SPEAKER, got {:?}", fields[0]),
            });
        }
        let onset: f64 = fields[3].parse().map_err(|_| Error::RttmParse {
            line: line_no,
            msg: format!("bad onset field {:?}", fields[3]),
        })?;
        let duration: f64 = fields[4].parse().map_err(|_| Error::RttmParse {
            line: line_no,
            msg: format!("bad duration field {:?}", fields[4]),
        })?;
        if !onset.is_finite() || onset < 0.0 {
            return Err(Error::RttmInvalid {
                line: line_no,
                msg: format!("onset must be finite and >= 0, got {onset}"),
            });
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::RttmInvalid {
                line: line_no,
                msg: format!("duration must be finite and > 0, got {duration}"),
            });
        }
        let duration_ms = sec_to_ms(duration);
        if duration_ms == 0 {
            return Err(Error::RttmInvalid {
                line: line_no,
                msg: format!("duration {duration} rounds to zero at 1 ms precision"),
            });
        }
        turns.push(RttmTurn {
            recording_id: fields[1].to_string(),
            onset_ms: sec_to_ms(onset),
            duration_ms,
            speaker_id: fields[7].to_string(),
        });
    }
    turns.sort_by(|a, b| {
        a.recording_id
            .cmp(&b.recording_id)
            .then(a.onset_ms.cmp(&b.onset_ms))
    });
    Ok(turns)
}

pub fn parse_rttm_str(text: &str) -> Result<Vec<RttmTurn>> {
    parse_rttm(text.as_bytes())
}

/// Emit turns in standard RTTM form. Ignored fields are written as `1`
/// (channel) and `<NA>`.
pub fn emit_rttm<W: Write>(turns: &[RttmTurn], mut writer: W) -> Result<()> {
    for t in turns {
        writeln!(
            writer,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            t.recording_id,
            t.onset_sec(),
            t.duration_sec(),
            t.speaker_id
        )?;
    }
    Ok(())
}

pub fn emit_rttm_string(turns: &[RttmTurn]) -> String {
    let mut buf = Vec::new();
    emit_rttm(turns, &mut buf).expect("write to Vec cannot fail");
    String::from_utf8(buf).expect("rttm output is ascii")
}

/// Group turns by recording id, preserving onset order within each group.
pub fn group_by_recording(turns: &[RttmTurn]) -> BTreeMap<String, Vec<RttmTurn>> {
    let mut map: BTreeMap<String, Vec<RttmTurn>> = BTreeMap::new();
    for t in turns {
        map.entry(t.recording_id.clone()).or_default().push(t.clone());
    }
    map
}

/// Ordered, disjoint `[start, end)` speech intervals in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpeechRegionList {
    regions: Vec<(i64, i64)>,
}

impl SpeechRegionList {
    /// Build from arbitrary intervals, merging overlapping or touching ones.
    pub fn from_intervals(mut intervals: Vec<(i64, i64)>) -> Self {
        intervals.retain(|(s, e)| e > s);
        intervals.sort();
        let mut regions: Vec<(i64, i64)> = Vec::new();
        for (s, e) in intervals {
            match regions.last_mut() {
                Some((_, last_end)) if s <= *last_end => {
                    *last_end = (*last_end).max(e);
                }
                _ => regions.push((s, e)),
            }
        }
        Self { regions }
    }

    pub fn regions(&self) -> &[(i64, i64)] {
        &self.regions
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    /// Total speech duration in milliseconds.
    pub fn total_ms(&self) -> i64 {
        self.regions.iter().map(|(s, e)| e - s).sum()
    }

    pub fn contains(&self, t_ms: i64) -> bool {
        self.regions.iter().any(|&(s, e)| t_ms >= s && t_ms < e)
    }
}

/// Oracle speech activity: the union of all reference turn intervals,
/// merged into disjoint sorted regions. Empty input gives an empty list.
pub fn oracle_sad(turns: &[RttmTurn]) -> SpeechRegionList {
    SpeechRegionList::from_intervals(
        turns
            .iter()
            .map(|t| (t.onset_ms, t.onset_ms + t.duration_ms))
            .collect(),
    )
}
