use std::path::Path;

use crate::autodiff::Tensor;
use crate::dsp::wav::read_wav;
use crate::dsp::{log_mel_with, mel_filterbank, AudioClip, FeatureConfig};
use crate::error::{Error, Result};
use crate::synth::{read_noise_manifest, Corpus, CorpusManifest, Split, SOURCE, TARGET};

/// One clip with its cached log-mel features.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub clip: AudioClip,
    /// `[T, n_mels]`
    pub features: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, Default)]
pub struct DomainSplits {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DomainSplits {
    pub fn get(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn push(&mut self, split: Split, s: Sample) {
        match split {
            Split::Train => self.train.push(s),
            Split::Valid => self.valid.push(s),
            Split::Test => self.test.push(s),
        }
    }
}

/// Everything a training run may see. Target labels are only read by evaluation.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub source: DomainSplits,
    pub target: DomainSplits,
    /// Raw target-site noise recordings (no cry source).
    pub target_noise: Vec<AudioClip>,
    pub features: FeatureConfig,
}

pub struct Featurizer {
    cfg: FeatureConfig,
    filterbank: Tensor<f32>,
}

impl Featurizer {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        Ok(Featurizer {
            filterbank: mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.fmin, cfg.fmax)?,
            cfg: cfg.clone(),
        })
    }

    pub fn features(&self, clip: &AudioClip) -> Result<Tensor<f32>> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(Error::Data(format!(
                "{} is sampled at {} Hz, features expect {} Hz",
                clip.id, clip.sample_rate, self.cfg.sample_rate
            )));
        }
        Ok(log_mel_with(clip, &self.cfg, &self.filterbank)?.frames)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }
}

impl TrainData {
    pub fn from_corpus(corpus: &Corpus, features: &FeatureConfig) -> Result<Self> {
        let fz = Featurizer::new(features)?;
        let mut source = DomainSplits::default();
        let mut target = DomainSplits::default();
        for c in &corpus.clips {
            let s = Sample {
                id: c.row.path.clone(),
                features: fz.features(&c.clip)?,
                clip: c.clip.clone(),
                label: c.row.label.index(),
            };
            match c.row.domain.as_str() {
                SOURCE => source.push(c.row.split, s),
                TARGET => target.push(c.row.split, s),
                other => return Err(Error::Data(format!("unknown domain {other:?}"))),
            }
        }
        let target_noise = corpus
            .noise
            .iter()
            .filter(|n| n.row.domain == TARGET)
            .map(|n| n.clip.clone())
            .collect();
        Ok(TrainData { source, target, target_noise, features: features.clone() })
    }

    /// Reads `manifest.csv`, `noise_manifest.csv` and the WAVs under `dir`.
    pub fn load(dir: &Path, features: &FeatureConfig) -> Result<Self> {
        let manifest = CorpusManifest::read(&dir.join("manifest.csv"))?;
        let fz = Featurizer::new(features)?;
        let mut source = DomainSplits::default();
        let mut target = DomainSplits::default();
        for row in &manifest.rows {
            let clip = read_wav(&dir.join(&row.path))?;
            let s = Sample {
                id: row.path.clone(),
                features: fz.features(&clip)?,
                clip,
                label: row.label.index(),
            };
            match row.domain.as_str() {
                SOURCE => source.push(row.split, s),
                TARGET => target.push(row.split, s),
                other => return Err(Error::Data(format!("unknown domain {other:?}"))),
            }
        }
        let noise_path = dir.join("noise_manifest.csv");
        let mut target_noise = Vec::new();
        if noise_path.exists() {
            for row in read_noise_manifest(&noise_path)?.into_iter().filter(|r| r.domain == TARGET) {
                target_noise.push(read_wav(&dir.join(&row.path))?);
            }
        }
        Ok(TrainData { source, target, target_noise, features: features.clone() })
    }
}

/// Copies rows `[start, start + len)` of a `[T, M]` map.
pub fn crop_frames(f: &Tensor<f32>, start: usize, len: usize) -> Result<Tensor<f32>> {
    let (t, m) = (f.shape()[0], f.shape()[1]);
    if start + len > t {
        return Err(Error::dim("crop", f.shape(), &[start + len, m]));
    }
    Tensor::new(vec![len, m], f.data()[start * m..(start + len) * m].to_vec())
}

/// Stacks `[T, M]` maps into `[B, 1, T, M]`.
pub fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let s = Tensor::stack(items)?;
    let sh = s.shape().to_vec();
    s.reshape(vec![sh[0], 1, sh[1], sh[2]])
}

/// Concatenates two `[B, 1, T, M]` batches along the batch axis.
pub fn concat_batches(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    if a.shape()[1..] != b.shape()[1..] {
        return Err(Error::dim("concat_batches", a.shape(), b.shape()));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(shape, data)
}
