use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, GroundTruth};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contour {
    /// Rise then fall over the expiration.
    Arc,
    Flat,
    Falling,
}

/// Relative depth of the arc and falling contours.
pub const CONTOUR_DEPTH: f64 = 0.15;
/// Raised-cosine onset/offset of each expiration, in seconds.
pub const RAMP_S: f64 = 0.04;
pub const PEAK: f32 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CryParams {
    pub f0_mean: f64,
    pub f0_contour: Contour,
    pub jitter: f64,
    pub n_harmonics: usize,
    pub expiration_dur: f64,
    pub n_expirations: usize,
    /// Silence between expirations.
    pub gap_dur: f64,
    /// Silence before the first expiration.
    pub lead_dur: f64,
    /// Total clip length; trailing silence fills the remainder.
    pub duration: f64,
    pub sample_rate: u32,
}

impl Default for CryParams {
    fn default() -> Self {
        CryParams {
            f0_mean: 450.0,
            f0_contour: Contour::Arc,
            jitter: 0.01,
            n_harmonics: 8,
            expiration_dur: 1.0,
            n_expirations: 2,
            gap_dur: 0.4,
            lead_dur: 0.3,
            duration: 3.0,
            sample_rate: crate::dsp::DEFAULT_SAMPLE_RATE,
        }
    }
}

impl CryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(250.0..=800.0).contains(&self.f0_mean) {
            return bad(format!("f0_mean {} outside [250, 800] Hz", self.f0_mean));
        }
        if !(0.0..=0.1).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.1]", self.jitter));
        }
        if self.n_harmonics == 0 || self.n_expirations == 0 || self.sample_rate == 0 {
            return bad("n_harmonics, n_expirations and sample_rate must be positive".into());
        }
        if self.expiration_dur < 2.0 * RAMP_S || self.gap_dur < 0.0 || self.lead_dur < 0.0 {
            return bad(format!(
                "expiration_dur must be >= {} s and gaps non-negative",
                2.0 * RAMP_S
            ));
        }
        if self.voiced_end() > self.duration + 1e-9 {
            return bad(format!(
                "layout needs {:.3} s but duration is {} s",
                self.voiced_end(),
                self.duration
            ));
        }
        Ok(())
    }

    fn voiced_end(&self) -> f64 {
        let n = self.n_expirations as f64;
        self.lead_dur + n * self.expiration_dur + (n - 1.0) * self.gap_dur
    }

    /// Sample spans `[start, end)` of each expiration.
    pub fn expiration_spans(&self) -> Vec<(usize, usize)> {
        let sr = self.sample_rate as f64;
        (0..self.n_expirations)
            .map(|i| {
                let t0 = self.lead_dur + i as f64 * (self.expiration_dur + self.gap_dur);
                let s = (t0 * sr).round() as usize;
                (s, s + (self.expiration_dur * sr).round() as usize)
            })
            .collect()
    }

    /// Contour value at relative position `u` in [0, 1] of an expiration.
    pub fn contour_at(&self, u: f64) -> f64 {
        let shape = match self.f0_contour {
            Contour::Flat => 0.0,
            Contour::Arc => (PI * u).sin() - 2.0 / PI,
            Contour::Falling => 0.5 - u,
        };
        self.f0_mean * (1.0 + CONTOUR_DEPTH * shape)
    }
}

fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
    }
}

/// Harmonic cry with per-cycle jitter. `truth.f0` holds the exact
/// instantaneous frequency driving the phase at every sample.
pub fn synth_cry(params: &CryParams, seed: u64) -> Result<AudioClip> {
    params.validate()?;
    let sr = params.sample_rate as f64;
    let n = (params.duration * sr).round() as usize;
    let mut rng = rng::stream(seed, &[0x637279]);
    let mut x = vec![0.0f64; n];
    let mut f0 = vec![0.0f32; n];
    let ramp = (RAMP_S * sr).round() as usize;
    let nyquist = 0.5 * sr;
    for (start, end) in params.expiration_spans() {
        let end = end.min(n);
        let len = end - start;
        let mut phase = 0.0f64;
        let mut jit = 1.0f64;
        for i in 0..len {
            let u = i as f64 / (len - 1).max(1) as f64;
            let f = params.contour_at(u) * jit;
            f0[start + i] = f as f32;
            let (s1, c1) = phase.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut v = 0.0;
            for k in 1..=params.n_harmonics {
                if k as f64 * f >= 0.9 * nyquist {
                    break;
                }
                v += cur / k as f64;
                (prev, cur) = (cur, 2.0 * c1 * cur - prev);
            }
            x[start + i] = v * envelope(i, len, ramp);
            phase += 2.0 * PI * f / sr;
            if phase >= 2.0 * PI {
                phase -= 2.0 * PI;
                let z: f64 = StandardNormal.sample(&mut rng);
                jit = (1.0 + params.jitter * z).clamp(0.7, 1.3);
            }
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK as f64 / peak } else { 0.0 };
    let samples = x.iter().map(|v| (v * scale) as f32).collect();
    let mut clip = AudioClip::new(format!("cry-{seed}"), samples, params.sample_rate);
    clip.truth = Some(GroundTruth { f0 });
    Ok(clip)
}
