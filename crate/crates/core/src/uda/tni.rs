use rand::Rng;

use crate::dsp::{extract_noise, ActivityConfig, AudioClip};
use crate::error::{Error, Result};

/// Noise-only segments from the first `⌈fraction·N⌉` recordings, so smaller
/// fractions give nested subsets of larger ones.
pub fn build_noise_pool(recordings: &[AudioClip], fraction: f64, cfg: &ActivityConfig) -> Vec<AudioClip> {
    let take = (fraction * recordings.len() as f64).ceil() as usize;
    recordings[..take.min(recordings.len())]
        .iter()
        .flat_map(|r| extract_noise(r, cfg))
        .collect()
}

/// `s + α·n` for a noise segment `n` drawn uniformly from `pool` and cropped
/// or cyclically extended to the clip length. Soft-clips with `tanh` only if
/// the mixture leaves `[-1, 1]`.
pub fn tni_augment<R: Rng + ?Sized>(clip: &AudioClip, pool: &[AudioClip], alpha: f64, rng: &mut R) -> Result<AudioClip> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if pool.is_empty() {
        return Err(Error::Data("TNI noise pool is empty".into()));
    }
    let noise = &pool[rng.random_range(0..pool.len())];
    if noise.is_empty() {
        return Err(Error::Data(format!("noise segment {} is empty", noise.id)));
    }
    let n = clip.len();
    let offset = if noise.len() > n { rng.random_range(0..=noise.len() - n) } else { 0 };
    let a = alpha as f32;
    let mut samples: Vec<f32> = clip
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| s + a * noise.samples[(offset + i) % noise.len()])
        .collect();
    if samples.iter().any(|v| v.abs() > 1.0) {
        samples.iter_mut().for_each(|v| *v = v.tanh());
    }
    let mut out = clip.clone();
    out.samples = samples;
    Ok(out.with_meta("tni_noise", &noise.id))
}
