use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{detect_activity, ActivityConfig, AudioClip, BiquadSpec, FilterKind};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Pink broadband noise plus 50 Hz mains hum.
    PinkHum50,
    /// Modulated speech-band babble plus 60 Hz mains hum.
    BabbleHum60,
}

/// Acoustic signature of one recording site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub id: String,
    pub noise_kind: NoiseKind,
    pub channel: Vec<BiquadSpec>,
    pub snr_db_range: [f64; 2],
    /// Hum RMS relative to the broadband noise RMS.
    #[serde(default = "default_hum")]
    pub hum_ratio: f64,
}

fn default_hum() -> f64 {
    0.5
}

impl DomainProfile {
    /// Site A: pink noise and 50 Hz hum through a bright, high-passed channel.
    pub fn hospital_a() -> Self {
        DomainProfile {
            id: "hospital-a".into(),
            noise_kind: NoiseKind::PinkHum50,
            channel: vec![
                BiquadSpec::new(FilterKind::HighPass, 150.0, 0.707, 0.0),
                BiquadSpec::new(FilterKind::Peaking, 2000.0, 1.0, 6.0),
            ],
            snr_db_range: [5.0, 20.0],
            hum_ratio: 0.5,
        }
    }

    /// Site B: babble and 60 Hz hum through a dull, band-limited channel.
    pub fn hospital_b() -> Self {
        DomainProfile {
            id: "hospital-b".into(),
            noise_kind: NoiseKind::BabbleHum60,
            channel: vec![
                BiquadSpec::new(FilterKind::LowPass, 3000.0, 0.707, 0.0),
                BiquadSpec::new(FilterKind::Peaking, 1000.0, 0.8, -6.0),
            ],
            snr_db_range: [5.0, 20.0],
            hum_ratio: 0.5,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let [lo, hi] = self.snr_db_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Parameter(format!("snr range [{lo}, {hi}] is not ordered")));
        }
        if self.hum_ratio < 0.0 {
            return Err(Error::Parameter("hum_ratio must be non-negative".into()));
        }
        self.channel
            .iter()
            .try_for_each(|b| b.validate(sample_rate as f64))
    }

    pub fn filter(&self, x: &mut [f64], sample_rate: u32) {
        for b in &self.channel {
            b.apply(x, sample_rate as f64);
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn pink(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Paul Kellet's economy filter
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w = gauss(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

fn babble(n: usize, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    const TALKERS: usize = 6;
    let mut out = vec![0.0; n];
    for _ in 0..TALKERS {
        let mut v: Vec<f64> = (0..n).map(|_| gauss(rng)).collect();
        let centre = rng.random_range(400.0..2000.0);
        BiquadSpec::new(FilterKind::Peaking, centre, 1.2, 18.0).apply(&mut v, sr);
        let rate = rng.random_range(3.0..6.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        // rotating phasor for sin(2π·rate·t + φ)
        let (ds, dc) = (2.0 * PI * rate / sr).sin_cos();
        let (mut ps, mut pc) = phi.sin_cos();
        for (o, s) in out.iter_mut().zip(&v) {
            let m = 0.5 + 0.5 * ps;
            *o += s * (0.6 + 0.4 * m);
            (ps, pc) = (ps * dc + pc * ds, pc * dc - ps * ds);
        }
    }
    BiquadSpec::new(FilterKind::LowPass, 3500.0, 0.707, 0.0).apply(&mut out, sr);
    BiquadSpec::new(FilterKind::HighPass, 200.0, 0.707, 0.0).apply(&mut out, sr);
    out
}

fn hum(n: usize, sr: f64, mains: f64, rng: &mut impl Rng) -> Vec<f64> {
    let phi = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            [1.0, 0.5, 0.3]
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * PI * mains * (k + 1) as f64 * t + phi).sin())
                .sum()
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Background noise of a site with unit RMS.
pub fn render_noise(profile: &DomainProfile, n: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[0x6e6f697365]);
    let sr = sample_rate as f64;
    let (mut bed, mains) = match profile.noise_kind {
        NoiseKind::PinkHum50 => (pink(n, &mut rng), 50.0),
        NoiseKind::BabbleHum60 => (babble(n, sr, &mut rng), 60.0),
    };
    let r = rms(&bed);
    if r > 0.0 {
        bed.iter_mut().for_each(|v| *v /= r);
    }
    let h = hum(n, sr, mains, &mut rng);
    let hr = rms(&h);
    for (b, v) in bed.iter_mut().zip(&h) {
        *b += profile.hum_ratio * v / hr;
    }
    let r = rms(&bed);
    if r > 0.0 {
        bed.iter_mut().for_each(|v| *v /= r);
    }
    bed
}

/// Sample mask over which SNR is measured: ground-truth voicing when known,
/// otherwise the activity detector.
pub fn active_mask(clip: &AudioClip) -> Vec<bool> {
    match &clip.truth {
        Some(t) if t.voiced_count() > 0 => (0..clip.len()).map(|i| t.voiced(i)).collect(),
        _ => {
            let mut m = vec![false; clip.len()];
            for s in detect_activity(clip, &ActivityConfig::default()).iter() {
                m[s.start..s.end].iter_mut().for_each(|v| *v = true);
            }
            if !m.iter().any(|&v| v) {
                m.iter_mut().for_each(|v| *v = true);
            }
            m
        }
    }
}

fn masked_power(x: &[f64], mask: &[bool]) -> f64 {
    let (s, n) = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// SNR in dB of `mix - clean` against `clean` over `mask`.
pub fn measured_snr_db(clean: &[f64], mix: &[f64], mask: &[bool]) -> f64 {
    let noise: Vec<f64> = mix.iter().zip(clean).map(|(m, c)| m - c).collect();
    10.0 * (masked_power(clean, mask) / masked_power(&noise, mask)).log10()
}

/// The clip as recorded at `profile`'s site: channel first, then noise at
/// `snr_db` over the active samples. If the mix would clip, both parts are
/// scaled together so the SNR is preserved.
pub fn apply_domain(
    clip: &AudioClip,
    profile: &DomainProfile,
    snr_db: f64,
    seed: u64,
) -> Result<AudioClip> {
    profile.validate(clip.sample_rate)?;
    let mut x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
    profile.filter(&mut x, clip.sample_rate);
    let mask = active_mask(clip);
    let noise = render_noise(profile, x.len(), clip.sample_rate, seed);
    let p_sig = masked_power(&x, &mask);
    let p_noise = masked_power(&noise, &mask);
    let gain = if p_noise > 0.0 {
        (p_sig / p_noise / 10f64.powf(snr_db / 10.0)).sqrt()
    } else {
        0.0
    };
    let mut mix: Vec<f64> = x.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let k = 0.99 / peak;
        mix.iter_mut().for_each(|v| *v *= k);
        x.iter_mut().for_each(|v| *v *= k);
    }
    let realized = measured_snr_db(&x, &mix, &mask);
    let mut out = clip.clone();
    out.samples = mix.iter().map(|&v| v as f32).collect();
    out.metadata.insert("domain".into(), profile.id.clone());
    out.metadata.insert("snr_db".into(), format!("{realized:.4}"));
    Ok(out)
}

/// Channel response only, for comparisons against a noiseless reference.
pub fn channel_only(clip: &AudioClip, profile: &DomainProfile) -> Vec<f64> {
    let mut x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
    profile.filter(&mut x, clip.sample_rate);
    x
}
