use serde::{Deserialize, Serialize};

use super::pitch::{aperiodicity, Lags};
use super::{frame_count, rms, AudioClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Activity,
    Noise,
}

/// Half-open sample span `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
    pub clip_len: usize,
}

impl SegmentList {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn total_samples(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Sorted, disjoint, non-empty and inside `[0, clip_len]`.
    pub fn is_well_formed(&self) -> bool {
        self.segments.iter().all(|s| s.start < s.end && s.end <= self.clip_len)
            && self.segments.windows(2).all(|w| w[0].end <= w[1].start)
    }

    /// Gaps between segments, tagged with `kind`.
    pub fn complement(&self, kind: SegmentKind) -> SegmentList {
        let mut out = Vec::new();
        let mut cursor = 0;
        for s in &self.segments {
            if s.start > cursor {
                out.push(Segment { start: cursor, end: s.start, kind });
            }
            cursor = s.end;
        }
        if cursor < self.clip_len {
            out.push(Segment { start: cursor, end: self.clip_len, kind });
        }
        SegmentList { segments: out, clip_len: self.clip_len }
    }
}

/// Energy detector with a periodicity side channel.
///
/// A frame is active when its level clears the clip noise floor by `margin_db`,
/// or when it is clearly periodic in the cry band and above digital silence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivityConfig {
    pub frame: usize,
    pub hop: usize,
    pub margin_db: f64,
    /// Percentile of frame levels taken as the noise floor.
    pub floor_percentile: f64,
    pub silence_db: f64,
    pub periodicity_threshold: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub merge_gap_s: f64,
    pub min_activity_s: f64,
    pub min_noise_s: f64,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        ActivityConfig {
            frame: 400,
            hop: 160,
            margin_db: 6.0,
            floor_percentile: 10.0,
            silence_db: -90.0,
            periodicity_threshold: 0.15,
            fmin: 250.0,
            fmax: 1000.0,
            merge_gap_s: 0.05,
            min_activity_s: 0.1,
            min_noise_s: 0.2,
        }
    }
}

fn level_db(x: &[f32]) -> f64 {
    20.0 * rms(x).max(1e-12).log10()
}

fn percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * (s.len() - 1) as f64).round() as usize;
    s[idx.min(s.len() - 1)]
}

/// Active spans of `clip`. Each frame owns the `hop` samples around its centre.
pub fn detect_activity(clip: &AudioClip, cfg: &ActivityConfig) -> SegmentList {
    let n = clip.len();
    let empty = SegmentList { segments: Vec::new(), clip_len: n };
    let frames = frame_count(n, cfg.frame, cfg.hop);
    if frames == 0 || cfg.hop == 0 {
        return empty;
    }
    let x = &clip.samples;
    let levels: Vec<f64> = (0..frames)
        .map(|t| level_db(&x[t * cfg.hop..t * cfg.hop + cfg.frame]))
        .collect();
    let floor = percentile(&levels, cfg.floor_percentile).max(cfg.silence_db);
    let lags = Lags::new(clip.sample_rate, cfg.fmin, cfg.fmax);
    let can_check_period = cfg.frame > 2 * (lags.max + 1);
    let active: Vec<bool> = (0..frames)
        .map(|t| {
            let l = levels[t];
            if l > floor + cfg.margin_db {
                return true;
            }
            l > cfg.silence_db + cfg.margin_db
                && can_check_period
                && aperiodicity(&x[t * cfg.hop..t * cfg.hop + cfg.frame], &lags)
                    < cfg.periodicity_threshold
        })
        .collect();

    let owner = |t: usize| -> (usize, usize) {
        let centre = t * cfg.hop + cfg.frame / 2;
        let start = if t == 0 { 0 } else { centre - cfg.hop / 2 };
        let end = if t + 1 == frames { n } else { centre + cfg.hop - cfg.hop / 2 };
        (start, end.min(n))
    };
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for t in (0..frames).filter(|&t| active[t]) {
        let (s, e) = owner(t);
        match spans.last_mut() {
            Some(last) if last.1 >= s => last.1 = e,
            _ => spans.push((s, e)),
        }
    }
    let sr = clip.sample_rate as f64;
    let merge_gap = (cfg.merge_gap_s * sr).round() as usize;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s - last.1 < merge_gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    let min_len = (cfg.min_activity_s * sr).round() as usize;
    SegmentList {
        segments: merged
            .into_iter()
            .filter(|(s, e)| e - s >= min_len)
            .map(|(start, end)| Segment { start, end, kind: SegmentKind::Activity })
            .collect(),
        clip_len: n,
    }
}

/// Gaps between active spans that last at least `min_noise_s`.
pub fn noise_segments(clip: &AudioClip, cfg: &ActivityConfig) -> SegmentList {
    let min_len = (cfg.min_noise_s * clip.sample_rate as f64).round() as usize;
    let mut gaps = detect_activity(clip, cfg).complement(SegmentKind::Noise);
    gaps.segments.retain(|s| s.len() >= min_len);
    gaps
}

/// Noise-only sub-clips, tagged `kind=noise`.
pub fn extract_noise(clip: &AudioClip, cfg: &ActivityConfig) -> Vec<AudioClip> {
    noise_segments(clip, cfg)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            clip.slice(s.start, s.end, format!("{}#noise{i}", clip.id))
                .with_meta("kind", "noise")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new("c", samples, 16_000)
    }

    #[test]
    fn silence_has_no_activity() {
        let c = clip(vec![0.0; 32_000]);
        assert!(detect_activity(&c, &ActivityConfig::default()).is_empty());
    }

    #[test]
    fn complement_partitions() {
        let l = SegmentList {
            segments: vec![Segment { start: 10, end: 20, kind: SegmentKind::Activity }],
            clip_len: 30,
        };
        let c = l.complement(SegmentKind::Noise);
        assert_eq!(c.segments.len(), 2);
        assert_eq!(l.total_samples() + c.total_samples(), 30);
    }
}
