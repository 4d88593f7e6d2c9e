//! 16-bit mono RIFF PCM.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

fn spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

pub fn to_pcm16(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

pub fn from_pcm16(v: i16) -> f32 {
    v as f32 / i16::MAX as f32
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let mut w = hound::WavWriter::create(path, spec(clip.sample_rate))?;
    for &s in &clip.samples {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut r = hound::WavReader::open(path)?;
    let s = r.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::Data(format!(
            "{}: expected 16-bit mono PCM, got {} ch / {} bit",
            path.display(),
            s.channels,
            s.bits_per_sample
        )));
    }
    let samples = r
        .samples::<i16>()
        .map(|v| v.map(from_pcm16))
        .collect::<Result<Vec<_>, _>>()?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip::new(id, samples, s.sample_rate))
}
