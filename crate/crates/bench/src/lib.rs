//! Fixed inputs for the benchmarks.

use cryda_core::dsp::AudioClip;
use cryda_core::synth::{synth_cry, CryParams};
use cryda_core::Tensor;

/// A three-second synthetic cry at the default sample rate.
pub fn cry_clip() -> AudioClip {
    synth_cry(&CryParams::default(), 7).expect("default cry parameters are valid")
}

/// Scores on a coarse grid with alternating labels, so ties are frequent.
pub fn score_set(n: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n).map(|i| ((i as u64 * 2_654_435_761) % 997) as f64 / 997.0).collect();
    let labels = (0..n).map(|i| i % 3 == 0).collect();
    (scores, labels)
}

/// Deterministic tensor with values in `[-1, 1)`.
pub fn tensor(shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|i| ((i as u64 * 40_503) % 2_000) as f32 / 1_000.0 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
