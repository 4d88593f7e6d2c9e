use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::frame_count;
use crate::error::{Error, Result};

/// One-sided short-time spectrum, frame-major: `data[t * bins + k]`.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<f32>>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex<f32>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn power(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| {
            let x = std::f64::consts::PI * n as f64 / len as f64;
            (x.sin() * x.sin()) as f32
        })
        .collect()
}

/// Hann-windowed frames of `win_length` samples every `hop`, zero-padded to `n_fft`.
pub fn stft(samples: &[f32], n_fft: usize, win_length: usize, hop: usize) -> Result<Spectrogram> {
    if win_length == 0 || win_length > n_fft || hop == 0 {
        return Err(Error::Parameter(format!(
            "stft needs 0 < win_length <= n_fft and hop > 0 (win {win_length}, n_fft {n_fft}, hop {hop})"
        )));
    }
    let frames = frame_count(samples.len(), win_length, hop);
    if frames == 0 {
        return Err(Error::EmptyOutput(format!(
            "clip of {} samples is shorter than the {win_length}-sample window",
            samples.len()
        )));
    }
    let bins = n_fft / 2 + 1;
    let window = hann_window(win_length);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let chunk = &samples[t * hop..t * hop + win_length];
        for (b, (&s, &w)) in buf.iter_mut().zip(chunk.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        buf[win_length..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, sr: f64) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin() as f32)
            .collect()
    }

    #[test]
    fn dc_energy_lands_in_bin_zero() {
        let spec = stft(&vec![0.5; 2000], 512, 400, 160).unwrap();
        for t in 0..spec.frames {
            let p: Vec<f32> = spec.frame(t).iter().map(|c| c.norm_sqr()).collect();
            let total: f32 = p.iter().sum();
            assert!(p[0] / total > 0.6);
            assert!(p[4..].iter().sum::<f32>() / total < 1e-4);
        }
    }

    #[test]
    fn one_khz_peaks_at_bin_32() {
        let spec = stft(&sine(1000.0, 4000, 16000.0), 512, 512, 256).unwrap();
        for t in 0..spec.frames {
            let p: Vec<f32> = spec.frame(t).iter().map(|c| c.norm_sqr()).collect();
            let peak = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 32);
        }
    }

    #[test]
    fn frame_count_matches_formula() {
        let spec = stft(&vec![0.1; 48_000], 512, 400, 160).unwrap();
        assert_eq!(spec.frames, (48_000 - 400) / 160 + 1);
        assert_eq!(spec.bins, 257);
    }

    #[test]
    fn short_clip_is_an_empty_output_error() {
        assert!(matches!(stft(&[0.0; 100], 512, 400, 160), Err(Error::EmptyOutput(_))));
    }
}
