use serde::{Deserialize, Serialize};

use super::{frame_count, AudioClip, BiquadSpec, FilterKind};
use crate::error::{Error, Result};

/// YIN settings. The default band targets infant cries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    pub frame: usize,
    pub hop: usize,
    pub threshold: f64,
    /// Cutoff of a 4th-order low-pass applied before YIN, which keeps
    /// jittered upper harmonics from masking periodicity. `None` disables it.
    pub lowpass_hz: Option<f64>,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            fmin: 250.0,
            fmax: 1000.0,
            frame: 1024,
            hop: 160,
            threshold: 0.15,
            lowpass_hz: Some(1200.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchFrame {
    /// `None` when the frame is unvoiced.
    pub f0: Option<f32>,
    /// `1 - d'(τ)` at the chosen lag, clamped to [0, 1].
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub frames: Vec<PitchFrame>,
    pub hop: usize,
    pub frame: usize,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn voiced(&self) -> impl Iterator<Item = f32> + '_ {
        self.frames.iter().filter_map(|f| f.f0)
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.voiced().count() as f64 / self.frames.len() as f64
    }

    pub fn median_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced().map(f64::from).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    pub fn mean_f0(&self) -> Option<f64> {
        let n = self.voiced().count();
        (n > 0).then(|| self.voiced().map(f64::from).sum::<f64>() / n as f64)
    }
}

pub(crate) struct Lags {
    pub min: usize,
    pub max: usize,
}

impl Lags {
    pub fn new(sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let sr = sample_rate as f64;
        Lags {
            min: ((sr / fmax).floor() as usize).max(2),
            max: (sr / fmin).ceil() as usize,
        }
    }
}

/// Cumulative-mean-normalized difference d'(τ) for τ in `0..=lags.max + 1`.
/// Returns `None` for frames with no energy.
pub(crate) fn cmnd(x: &[f32], lags: &Lags) -> Option<Vec<f64>> {
    let top = lags.max + 1;
    let n = x.len() - top;
    let mut d = vec![0.0f64; top + 1];
    for (tau, slot) in d.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0f64;
        for j in 0..n {
            let e = (x[j] - x[j + tau]) as f64;
            acc += e * e;
        }
        *slot = acc;
    }
    let energy: f64 = x[..n].iter().map(|&v| (v as f64).powi(2)).sum();
    if energy <= 1e-12 * n as f64 {
        return None;
    }
    let mut out = vec![1.0; top + 1];
    let mut running = 0.0;
    for tau in 1..=top {
        running += d[tau];
        out[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    Some(out)
}

/// Lowest d'(τ) in the lag band; a periodicity score for the activity detector.
pub(crate) fn aperiodicity(x: &[f32], lags: &Lags) -> f64 {
    match cmnd(x, lags) {
        Some(c) => c[lags.min..=lags.max].iter().copied().fold(f64::INFINITY, f64::min),
        None => 1.0,
    }
}

fn yin_frame(x: &[f32], sr: f64, lags: &Lags, cfg: &PitchConfig) -> PitchFrame {
    let unvoiced = |c: f64| PitchFrame {
        f0: None,
        confidence: (1.0 - c).clamp(0.0, 1.0) as f32,
    };
    let Some(c) = cmnd(x, lags) else {
        return unvoiced(1.0);
    };
    let Some(mut tau) = (lags.min..=lags.max).find(|&t| c[t] < cfg.threshold) else {
        let best = c[lags.min..=lags.max].iter().copied().fold(f64::INFINITY, f64::min);
        return unvoiced(best);
    };
    while tau < lags.max && c[tau + 1] < c[tau] {
        tau += 1;
    }
    let (a, b, e) = (c[tau - 1], c[tau], c[tau + 1]);
    let denom = a - 2.0 * b + e;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - e) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let f0 = sr / (tau as f64 + shift);
    if f0 < cfg.fmin || f0 > cfg.fmax {
        return unvoiced(b);
    }
    PitchFrame {
        f0: Some(f0 as f32),
        confidence: (1.0 - b).clamp(0.0, 1.0) as f32,
    }
}

/// YIN pitch track. Frames whose normalized difference never drops below the
/// threshold are unvoiced.
pub fn estimate_pitch(clip: &AudioClip, cfg: &PitchConfig) -> Result<PitchTrack> {
    let sr = clip.sample_rate as f64;
    if cfg.fmin < 50.0 || cfg.fmax > sr / 2.0 || cfg.fmax < 2.0 * cfg.fmin {
        return Err(Error::Parameter(format!(
            "pitch band [{}, {}] Hz needs fmin >= 50, fmax <= sr/2, fmax/fmin >= 2",
            cfg.fmin, cfg.fmax
        )));
    }
    if (cfg.frame as f64) < 2.0 * sr / cfg.fmin || cfg.hop == 0 {
        return Err(Error::Parameter(format!(
            "pitch frame of {} samples is shorter than two periods of {} Hz (or hop is zero)",
            cfg.frame, cfg.fmin
        )));
    }
    let filtered;
    let samples: &[f32] = match cfg.lowpass_hz {
        Some(fc) => {
            let section = BiquadSpec::new(FilterKind::LowPass, fc, std::f64::consts::FRAC_1_SQRT_2, 0.0);
            section.validate(sr)?;
            let mut x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
            section.apply(&mut x, sr);
            section.apply(&mut x, sr);
            filtered = x.iter().map(|&v| v as f32).collect::<Vec<f32>>();
            &filtered
        }
        None => &clip.samples,
    };
    let lags = Lags::new(clip.sample_rate, cfg.fmin, cfg.fmax);
    let frames = (0..frame_count(clip.len(), cfg.frame, cfg.hop))
        .map(|t| {
            let x = &samples[t * cfg.hop..t * cfg.hop + cfg.frame];
            yin_frame(x, sr, &lags, cfg)
        })
        .collect();
    Ok(PitchTrack {
        frames,
        hop: cfg.hop,
        frame: cfg.frame,
        sample_rate: clip.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, secs: f64) -> AudioClip {
        let n = (secs * 16_000.0) as usize;
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        AudioClip::new("t", s, 16_000)
    }

    #[test]
    fn pure_tone_440() {
        let tr = estimate_pitch(&tone(440.0, 1.0), &PitchConfig::default()).unwrap();
        let m = tr.median_f0().unwrap();
        assert!((m - 440.0).abs() < 4.4, "{m}");
        assert!(tr.voiced_fraction() > 0.95);
    }

    #[test]
    fn short_frame_rejected() {
        let cfg = PitchConfig {
            frame: 100,
            ..Default::default()
        };
        assert!(matches!(estimate_pitch(&tone(440.0, 0.5), &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn bad_band_rejected() {
        for (fmin, fmax) in [(40.0, 1000.0), (250.0, 9000.0), (400.0, 700.0)] {
            let cfg = PitchConfig {
                fmin,
                fmax,
                frame: 2048,
                ..Default::default()
            };
            assert!(estimate_pitch(&tone(440.0, 0.5), &cfg).is_err());
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let clip = AudioClip::new("z", vec![0.0; 8000], 16_000);
        let tr = estimate_pitch(&clip, &PitchConfig::default()).unwrap();
        assert!(tr.frames.iter().all(|f| f.f0.is_none()));
    }
}
