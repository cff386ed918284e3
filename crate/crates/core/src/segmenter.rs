//! Uniform multi-scale segmentation of speech regions.
//!
//! Each scale tiles every speech region with fixed-length windows advanced
//! by a hop (half the window by default). The finest scale is the *base*
//! scale: its segments are the units of clustering and labeling. Every
//! base segment is mapped to the segment with the closest center at each
//! coarser scale, searching the base segment's own speech region first.

use crate::rttm::SpeechRegionList;
use crate::{sec_to_ms, Error, Result};

/// Window geometry for one temporal scale, in integer milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleConfig {
    pub window_ms: i64,
    pub hop_ms: i64,
    pub min_len_ms: i64,
}

impl ScaleConfig {
    pub fn from_seconds(window: f64, hop: f64, min_len: f64) -> Result<Self> {
        let cfg = Self {
            window_ms: sec_to_ms(window),
            hop_ms: sec_to_ms(hop),
            min_len_ms: sec_to_ms(min_len),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_ms <= 0 || self.hop_ms <= 0 {
            return Err(Error::InvalidConfig(format!(
                "window and hop must be positive, got window={} ms hop={} ms",
                self.window_ms, self.hop_ms
            )));
        }
        if self.min_len_ms <= 0 || self.min_len_ms > self.window_ms {
            return Err(Error::InvalidConfig(format!(
                "min length must satisfy 0 < min_len <= window, got min_len={} ms window={} ms",
                self.min_len_ms, self.window_ms
            )));
        }
        Ok(())
    }
}

/// The standard three-scale stack, ordered coarse→fine; the last entry is
/// the base scale. Hops are half the window; minimum lengths follow the
/// per-scale settings 0.5 / 0.25 / 0.17 s.
pub fn default_scales() -> Vec<ScaleConfig> {
    vec![
        ScaleConfig::from_seconds(1.5, 0.75, 0.5).expect("valid constant"),
        ScaleConfig::from_seconds(1.0, 0.5, 0.25).expect("valid constant"),
        ScaleConfig::from_seconds(0.5, 0.25, 0.17).expect("valid constant"),
    ]
}

/// One segment at one scale. `region_idx` records which speech region the
/// segment tiles, so the center mapping can stay within that region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub scale_id: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub region_idx: usize,
}

impl Segment {
    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }

    /// Twice the center, in milliseconds — keeps center comparisons exact
    /// when the true center falls on a half-millisecond.
    pub fn center_x2(&self) -> i64 {
        self.start_ms + self.end_ms
    }

    pub fn center_sec(&self) -> f64 {
        (self.start_ms + self.end_ms) as f64 / 2000.0
    }
}

/// Tile one `[start, end)` region (milliseconds) with segments of `cfg`.
/// Starts advance by the hop; the last window is truncated at the region
/// end and dropped entirely if shorter than the scale's minimum length.
pub fn segment_region(
    region: (i64, i64),
    cfg: &ScaleConfig,
    scale_id: usize,
    region_idx: usize,
) -> Vec<Segment> {
    let (rs, re) = region;
    let mut out = Vec::new();
    let mut start = rs;
    while start < re {
        let end = (start + cfg.window_ms).min(re);
        if end - start >= cfg.min_len_ms {
            out.push(Segment {
                scale_id,
                start_ms: start,
                end_ms: end,
                region_idx,
            });
        }
        start += cfg.hop_ms;
    }
    out
}

/// Segments at every scale plus the base→coarse center mapping.
#[derive(Debug, Clone)]
pub struct MultiScaleSegmentSet {
    scales: Vec<ScaleConfig>,
    /// segments[s] is sorted by start; s indexes `scales`.
    segments: Vec<Vec<Segment>>,
    /// map[b][s] = index into segments[s] for base segment b; the base
    /// column is the identity.
    map: Vec<Vec<usize>>,
}

impl MultiScaleSegmentSet {
    pub fn scales(&self) -> &[ScaleConfig] {
        &self.scales
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn base_scale_idx(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn segments_at(&self, scale: usize) -> &[Segment] {
        &self.segments[scale]
    }

    pub fn base_segments(&self) -> &[Segment] {
        &self.segments[self.base_scale_idx()]
    }

    pub fn num_base(&self) -> usize {
        self.base_segments().len()
    }

    /// Index of the coarse segment mapped from base segment `b` at `scale`.
    pub fn mapped_index(&self, b: usize, scale: usize) -> usize {
        self.map[b][scale]
    }
}

/// Index of the segment in `segs[lo..hi]` whose center is closest to
/// `target_x2`, ties toward the earlier segment. Centers within the range
/// are strictly increasing, so a partition point plus one neighbor
/// comparison suffices.
fn nearest_center(segs: &[Segment], lo: usize, hi: usize, target_x2: i64) -> usize {
    debug_assert!(lo < hi);
    let slice = &segs[lo..hi];
    let p = slice.partition_point(|s| s.center_x2() < target_x2);
    if p == 0 {
        return lo;
    }
    if p == slice.len() {
        return lo + p - 1;
    }
    let before = target_x2 - slice[p - 1].center_x2();
    let after = slice[p].center_x2() - target_x2;
    // Equidistant centers resolve to the earlier segment.
    if after < before {
        lo + p
    } else {
        lo + p - 1
    }
}

/// Segment every region at every scale and build the base→coarse mapping.
///
/// The mapping searches the base segment's own speech region; a region
/// that produced no segments at some coarser scale (too short for that
/// scale's minimum length) falls back to the nearest center session-wide,
/// keeping the mapping total. A scale with zero segments anywhere makes
/// the session degenerate.
pub fn build_multiscale(
    regions: &SpeechRegionList,
    scales: &[ScaleConfig],
) -> Result<MultiScaleSegmentSet> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig("at least one scale required".into()));
    }
    for cfg in scales {
        cfg.validate()?;
    }
    for pair in scales.windows(2) {
        if pair[1].window_ms >= pair[0].window_ms {
            return Err(Error::InvalidConfig(format!(
                "scales must be ordered coarse to fine, got windows {} ms then {} ms",
                pair[0].window_ms, pair[1].window_ms
            )));
        }
    }

    let num_scales = scales.len();
    let mut segments: Vec<Vec<Segment>> = vec![Vec::new(); num_scales];
    // Per-scale, per-region index ranges into the concatenated segment list.
    let mut region_ranges: Vec<Vec<(usize, usize)>> =
        vec![Vec::with_capacity(regions.len()); num_scales];
    for (s, cfg) in scales.iter().enumerate() {
        for (r, &region) in regions.regions().iter().enumerate() {
            let lo = segments[s].len();
            segments[s].extend(segment_region(region, cfg, s, r));
            region_ranges[s].push((lo, segments[s].len()));
        }
    }

    let base = num_scales - 1;
    if segments[base].is_empty() {
        return Err(Error::DegenerateSession(
            "no base-scale segments in any speech region".into(),
        ));
    }
    for (s, segs) in segments.iter().enumerate() {
        if segs.is_empty() {
            return Err(Error::DegenerateSession(format!(
                "scale {s} produced no segments while the base scale has {}",
                segments[base].len()
            )));
        }
    }

    let mut map = Vec::with_capacity(segments[base].len());
    for b in 0..segments[base].len() {
        let bseg = segments[base][b];
        let target = bseg.center_x2();
        let mut row = Vec::with_capacity(num_scales);
        for s in 0..num_scales {
            if s == base {
                row.push(b);
                continue;
            }
            let (lo, hi) = region_ranges[s][bseg.region_idx];
            let idx = if lo < hi {
                nearest_center(&segments[s], lo, hi, target)
            } else {
                nearest_center(&segments[s], 0, segments[s].len(), target)
            };
            row.push(idx);
        }
        map.push(row);
    }

    Ok(MultiScaleSegmentSet {
        scales: scales.to_vec(),
        segments,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn ms_region(start: f64, end: f64) -> (i64, i64) {
        (sec_to_ms(start), sec_to_ms(end))
    }

    #[test]
    fn test_default_scales_are_coarse_to_fine() {
        let scales = default_scales();
        assert_eq!(scales.len(), 3);
        assert_eq!(scales[0].window_ms, 1500);
        assert_eq!(scales[2].window_ms, 500);
        // Base temporal resolution beats the coarsest scale's.
        assert!(scales[2].hop_ms < scales[0].hop_ms);
    }

    #[test]
    fn test_golden_region_fine_scale() {
        let cfg = ScaleConfig::from_seconds(0.5, 0.25, 0.17).unwrap();
        let segs = segment_region(ms_region(0.0, 3.0), &cfg, 0, 0);
        assert_eq!(segs.len(), 12);
        for (k, s) in segs.iter().take(11).enumerate() {
            assert_eq!(s.start_ms, 250 * k as i64);
            assert_eq!(s.duration_ms(), 500);
        }
        assert_eq!((segs[11].start_ms, segs[11].end_ms), (2750, 3000));
    }

    #[test]
    fn test_golden_region_mid_scale() {
        let cfg = ScaleConfig::from_seconds(1.0, 0.5, 0.25).unwrap();
        let segs = segment_region(ms_region(0.0, 3.0), &cfg, 0, 0);
        assert_eq!(segs.len(), 6);
        assert_eq!((segs[5].start_ms, segs[5].end_ms), (2500, 3000));
    }

    #[test]
    fn test_golden_region_coarse_scale() {
        let cfg = ScaleConfig::from_seconds(1.5, 0.75, 0.5).unwrap();
        let segs = segment_region(ms_region(0.0, 3.0), &cfg, 0, 0);
        let bounds: Vec<(i64, i64)> = segs.iter().map(|s| (s.start_ms, s.end_ms)).collect();
        assert_eq!(bounds, vec![(0, 1500), (750, 2250), (1500, 3000), (2250, 3000)]);
    }

    #[test]
    fn test_region_below_min_len_is_empty() {
        let cfg = ScaleConfig::from_seconds(0.5, 0.25, 0.17).unwrap();
        assert!(segment_region(ms_region(0.0, 0.1), &cfg, 0, 0).is_empty());
    }

    #[test]
    fn test_starts_form_arithmetic_sequence() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cfg = ScaleConfig::from_seconds(1.0, 0.5, 0.25).unwrap();
        for _ in 0..50 {
            let start = rng.random_range(0..10_000);
            let len = rng.random_range(250..8_000);
            let segs = segment_region((start, start + len), &cfg, 0, 0);
            for (k, s) in segs.iter().enumerate() {
                assert_eq!(s.start_ms, start + cfg.hop_ms * k as i64);
                assert!(s.end_ms <= start + len);
                assert!(s.duration_ms() >= cfg.min_len_ms);
                assert!(s.duration_ms() <= cfg.window_ms);
            }
        }
    }

    fn random_regions(rng: &mut ChaCha20Rng, n: usize) -> SpeechRegionList {
        let mut t = 0i64;
        let mut intervals = Vec::new();
        for _ in 0..n {
            t += rng.random_range(100..2_000); // silence gap
            let len = rng.random_range(600..6_000);
            intervals.push((t, t + len));
            t += len;
        }
        SpeechRegionList::from_intervals(intervals)
    }

    #[test]
    fn test_golden_mapping_first_base_segment() {
        let set = build_multiscale(
            &SpeechRegionList::from_intervals(vec![(0, 3000)]),
            &default_scales(),
        )
        .unwrap();
        let coarse_centers: Vec<i64> = set.segments_at(0).iter().map(|s| s.center_x2()).collect();
        assert_eq!(coarse_centers, vec![1500, 3000, 4500, 5250]); // 0.75, 1.5, 2.25, 2.625 s
        // First base segment [0, 0.5) has center 0.25 s → nearest coarse center 0.75 s.
        assert_eq!(set.base_segments()[0].center_x2(), 500);
        assert_eq!(set.mapped_index(0, 0), 0);
    }

    #[test]
    fn test_single_window_region_maps_to_zero() {
        let set = build_multiscale(
            &SpeechRegionList::from_intervals(vec![(0, 500)]),
            &default_scales(),
        )
        .unwrap();
        assert_eq!(set.segments_at(0).len(), 1);
        assert_eq!(set.segments_at(1).len(), 1);
        for b in 0..set.num_base() {
            assert_eq!(set.mapped_index(b, 0), 0);
            assert_eq!(set.mapped_index(b, 1), 0);
            assert_eq!(set.mapped_index(b, 2), b);
        }
    }

    #[test]
    fn test_equidistant_centers_break_toward_earlier() {
        // Region [0, 1.75) at the 1.0 s scale gives centers 0.5, 1.0, 1.375 s;
        // the base segment [0.5, 1.0) has center 0.75 s, equidistant to the
        // first two.
        let scales = vec![
            ScaleConfig::from_seconds(1.0, 0.5, 0.25).unwrap(),
            ScaleConfig::from_seconds(0.5, 0.25, 0.17).unwrap(),
        ];
        let set = build_multiscale(
            &SpeechRegionList::from_intervals(vec![(0, 1750)]),
            &scales,
        )
        .unwrap();
        let b = set
            .base_segments()
            .iter()
            .position(|s| s.start_ms == 500 && s.end_ms == 1000)
            .unwrap();
        assert_eq!(set.mapped_index(b, 0), 0);
    }

    #[test]
    fn test_short_region_falls_back_to_session_wide_nearest() {
        // Second region is long enough for the base and mid scales but not
        // the coarse one, so its base segments borrow the nearest coarse
        // segment from the first region.
        let regions = SpeechRegionList::from_intervals(vec![(0, 3000), (10_000, 10_300)]);
        let set = build_multiscale(&regions, &default_scales()).unwrap();
        let b = set
            .base_segments()
            .iter()
            .position(|s| s.region_idx == 1)
            .unwrap();
        // Nearest coarse center to 10.15 s is the last one (2.625 s).
        assert_eq!(set.mapped_index(b, 0), 3);
        // The mid scale has a segment in region 1 itself.
        assert_eq!(set.segments_at(1)[set.mapped_index(b, 1)].region_idx, 1);
    }

    #[test]
    fn test_scale_with_no_segments_is_degenerate() {
        let regions = SpeechRegionList::from_intervals(vec![(0, 300)]);
        let err = build_multiscale(&regions, &default_scales()).unwrap_err();
        assert!(matches!(err, Error::DegenerateSession(_)), "{err}");
    }

    #[test]
    fn test_no_base_segments_is_degenerate() {
        let regions = SpeechRegionList::from_intervals(vec![(0, 100)]);
        assert!(build_multiscale(&regions, &default_scales()).is_err());
    }

    #[test]
    fn test_misordered_scales_rejected() {
        let scales = vec![
            ScaleConfig::from_seconds(0.5, 0.25, 0.17).unwrap(),
            ScaleConfig::from_seconds(1.0, 0.5, 0.25).unwrap(),
        ];
        let regions = SpeechRegionList::from_intervals(vec![(0, 3000)]);
        assert!(matches!(
            build_multiscale(&regions, &scales),
            Err(Error::InvalidConfig(_))
        ));
    }

    /// Exhaustive-scan oracle for the mapping rule: same-region candidates
    /// when any exist, otherwise all candidates; ties to the earlier index.
    fn brute_force_map(set: &MultiScaleSegmentSet, b: usize, scale: usize) -> usize {
        let bseg = set.base_segments()[b];
        let candidates: Vec<usize> = (0..set.segments_at(scale).len())
            .filter(|&i| set.segments_at(scale)[i].region_idx == bseg.region_idx)
            .collect();
        let pool: Vec<usize> = if candidates.is_empty() {
            (0..set.segments_at(scale).len()).collect()
        } else {
            candidates
        };
        let mut best = pool[0];
        let mut best_d = i64::MAX;
        for &i in &pool {
            let d = (set.segments_at(scale)[i].center_x2() - bseg.center_x2()).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    #[test]
    fn test_mapping_matches_brute_force_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let scales = default_scales();
        for _ in 0..30 {
            let regions = random_regions(&mut rng, 6);
            let set = match build_multiscale(&regions, &scales) {
                Ok(s) => s,
                Err(_) => continue, // a draw can be degenerate; skip it
            };
            for b in 0..set.num_base() {
                for s in 0..set.scale_count() - 1 {
                    assert_eq!(
                        set.mapped_index(b, s),
                        brute_force_map(&set, b, s),
                        "base {b} scale {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn test_segments_never_cross_region_boundaries() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let scales = default_scales();
        for _ in 0..20 {
            let regions = random_regions(&mut rng, 5);
            if let Ok(set) = build_multiscale(&regions, &scales) {
                for s in 0..set.scale_count() {
                    for seg in set.segments_at(s) {
                        let (rs, re) = regions.regions()[seg.region_idx];
                        assert!(seg.start_ms >= rs && seg.end_ms <= re);
                    }
                }
            }
        }
    }

    #[test]
    fn test_scale_config_validation() {
        assert!(ScaleConfig::from_seconds(0.5, 0.25, 0.0).is_err());
        assert!(ScaleConfig::from_seconds(0.5, 0.25, 0.6).is_err());
        assert!(ScaleConfig::from_seconds(0.0, 0.25, 0.17).is_err());
    }
}
