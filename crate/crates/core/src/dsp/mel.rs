use serde::{Deserialize, Serialize};

use super::{stft, AudioClip};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Log-mel front-end settings. Defaults follow common PANN-style front-ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            n_fft: 512,
            win_length: 400,
            hop: 160,
            n_mels: 64,
            fmin: 50.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

/// Log-mel energies of one clip: `frames` is `[T, n_mels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramFeatures {
    pub frames: Tensor<f32>,
    pub frame_rate: f64,
    pub source_id: String,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn check_band(n_mels: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<()> {
    if n_mels == 0 || !(0.0..fmax).contains(&fmin) || fmax > sample_rate as f64 / 2.0 {
        return Err(Error::Parameter(format!(
            "mel band needs 0 <= fmin < fmax <= sr/2 and n_mels > 0 (fmin {fmin}, fmax {fmax}, sr {sample_rate}, n_mels {n_mels})"
        )));
    }
    Ok(())
}

/// Peak frequencies of `n_mels` triangles spaced evenly on the mel scale.
pub fn mel_center_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    edges(n_mels, fmin, fmax)[1..=n_mels].to_vec()
}

fn edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with unit peaks, row-major `[n_mels, n_fft/2 + 1]`.
pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Tensor<f32>> {
    check_band(n_mels, sample_rate, fmin, fmax)?;
    let bins = n_fft / 2 + 1;
    let pts = edges(n_mels, fmin, fmax);
    let mut w = vec![0.0f32; n_mels * bins];
    for m in 0..n_mels {
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let v = ((f - l) / (c - l)).min((r - f) / (r - c));
            if v > 0.0 {
                w[m * bins + k] = v as f32;
            }
        }
    }
    Tensor::new(vec![n_mels, bins], w)
}

/// `ln(mel power + floor)` per frame.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<SpectrogramFeatures> {
    let fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)?;
    log_mel_with(clip, cfg, &fb)
}

/// [`log_mel`] with a precomputed filterbank.
pub fn log_mel_with(
    clip: &AudioClip,
    cfg: &FeatureConfig,
    filterbank: &Tensor<f32>,
) -> Result<SpectrogramFeatures> {
    let spec = stft(&clip.samples, cfg.n_fft, cfg.win_length, cfg.hop)?;
    let bins = spec.bins;
    let fb = filterbank.data();
    let mut out = Vec::with_capacity(spec.frames * cfg.n_mels);
    let mut power = vec![0.0f32; bins];
    for t in 0..spec.frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let row = &fb[m * bins..(m + 1) * bins];
            let e: f64 = row
                .iter()
                .zip(&power)
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, &p)| w as f64 * p as f64)
                .sum();
            out.push((e + cfg.log_floor).ln() as f32);
        }
    }
    Ok(SpectrogramFeatures {
        frames: Tensor::new(vec![spec.frames, cfg.n_mels], out)?,
        frame_rate: cfg.sample_rate as f64 / cfg.hop as f64,
        source_id: clip.id.clone(),
    })
}
