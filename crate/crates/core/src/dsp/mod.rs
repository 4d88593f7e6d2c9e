//! Signal front-end: framing, STFT, log-mel features, YIN pitch tracking,
//! cry-activity detection and noise-segment extraction.

mod activity;
mod clip;
mod filter;
mod mel;
mod pitch;
mod stft;
pub mod wav;

pub use activity::{
    detect_activity, extract_noise, noise_segments, ActivityConfig, Segment, SegmentKind,
    SegmentList,
};
pub use filter::{BiquadSpec, FilterKind};
pub use clip::{AudioClip, GroundTruth, DEFAULT_SAMPLE_RATE};
pub use mel::{hz_to_mel, log_mel, log_mel_with, mel_center_frequencies, mel_filterbank, mel_to_hz, FeatureConfig, SpectrogramFeatures};
pub use pitch::{estimate_pitch, PitchConfig, PitchFrame, PitchTrack};
pub use stft::{hann_window, stft, Spectrogram};

/// Frames of length `win` every `hop` samples that fit entirely inside `len`.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win || hop == 0 {
        0
    } else {
        (len - win) / hop + 1
    }
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / samples.len() as f64).sqrt()
}
