use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Synthesis-side truth carried alongside generated clips. Never written to WAV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Instantaneous f0 per sample in Hz; 0 where the source is silent.
    pub f0: Vec<f32>,
}

impl GroundTruth {
    pub fn voiced(&self, i: usize) -> bool {
        self.f0.get(i).is_some_and(|&f| f > 0.0)
    }

    pub fn voiced_count(&self) -> usize {
        self.f0.iter().filter(|&&f| f > 0.0).count()
    }
}

/// Mono PCM clip with provenance metadata (patient, domain, label, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub id: String,
    pub metadata: BTreeMap<String, String>,
    pub truth: Option<GroundTruth>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
            id: id.into(),
            metadata: BTreeMap::new(),
            truth: None,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn seconds_to_samples(&self, s: f64) -> usize {
        (s * self.sample_rate as f64).round() as usize
    }

    /// Copy of `start..end` with the same sample rate and metadata.
    pub fn slice(&self, start: usize, end: usize, id: impl Into<String>) -> AudioClip {
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            id: id.into(),
            metadata: self.metadata.clone(),
            truth: self.truth.as_ref().map(|t| GroundTruth {
                f0: t.f0[start.min(t.f0.len())..end.min(t.f0.len())].to_vec(),
            }),
        }
    }
}
