use serde::{Deserialize, Serialize};

use crate::dsp::{detect_activity, estimate_pitch, ActivityConfig, AudioClip, PitchConfig};
use crate::error::{Error, Result};
use crate::evaldiag::Histogram;
use crate::model::EncoderConfig;
use crate::uda::{evaluate, train, window_frames, DomainSplits, Method, Sample, TrainData, TrainRunConfig};

/// Held-out accuracy of a hospital classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainIdReport {
    pub accuracy: f64,
    /// Row-normalized: `confusion[true][predicted]`.
    pub confusion: Vec<Vec<f64>>,
    pub domains: Vec<String>,
    pub n_test: usize,
}

fn relabel(samples: &[Sample], label: usize) -> Vec<Sample> {
    samples.iter().map(|s| Sample { label, ..s.clone() }).collect()
}

/// Trains the model CNN to predict the hospital (source 0, target 1) on the
/// union of both training splits. Splits are patient-disjoint already.
pub fn domain_id_experiment(data: &TrainData, encoder: &EncoderConfig, cfg: &TrainRunConfig) -> Result<DomainIdReport> {
    if data.source.train.is_empty() || data.target.train.is_empty() {
        return Err(Error::Config("domain identification needs clips from two domains".into()));
    }
    let merge = |a: &[Sample], b: &[Sample]| {
        let mut v = relabel(a, 0);
        v.extend(relabel(b, 1));
        v
    };
    let mixed = DomainSplits {
        train: merge(&data.source.train, &data.target.train),
        valid: merge(&data.source.valid, &data.target.valid),
        test: merge(&data.source.test, &data.target.test),
    };
    let joint = TrainData {
        source: mixed,
        target: DomainSplits::default(),
        target_noise: Vec::new(),
        features: data.features.clone(),
    };
    let run_cfg = TrainRunConfig { method: Method::Baseline, ..cfg.clone() };
    let mut out = train(&joint, encoder, &run_cfg)?;
    let window = window_frames(&run_cfg, &joint);
    let eval = evaluate(&mut out.model, &joint.source.test, cfg.eval_batch, window)?;
    let mut counts = [[0usize; 2]; 2];
    for (p, &y) in eval.probs.iter().zip(&eval.labels) {
        let pred = usize::from(p[1] > p[0]);
        counts[y][pred] += 1;
    }
    let n = eval.labels.len();
    let correct = counts[0][0] + counts[1][1];
    let confusion = counts
        .iter()
        .map(|row| {
            let t: usize = row.iter().sum();
            row.iter().map(|&c| if t == 0 { 0.0 } else { c as f64 / t as f64 }).collect()
        })
        .collect();
    Ok(DomainIdReport {
        accuracy: correct as f64 / n.max(1) as f64,
        confusion,
        domains: vec![crate::synth::SOURCE.into(), crate::synth::TARGET.into()],
        n_test: n,
    })
}

/// Cross-hospital generalization of the unadapted classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XgenReport {
    pub source_to_source: f64,
    pub source_to_target: f64,
    pub target_to_target: f64,
    /// `source_to_source − source_to_target`
    pub source_gap: f64,
    /// `target_to_target − source_to_target`
    pub target_gap: f64,
}

impl XgenReport {
    pub fn aucs(&self) -> [f64; 3] {
        [self.source_to_source, self.source_to_target, self.target_to_target]
    }
}

fn swapped(data: &TrainData) -> TrainData {
    TrainData {
        source: data.target.clone(),
        target: data.source.clone(),
        target_noise: Vec::new(),
        features: data.features.clone(),
    }
}

/// Trains one baseline per hospital and tests across.
pub fn xgen_experiment(data: &TrainData, encoder: &EncoderConfig, cfg: &TrainRunConfig) -> Result<XgenReport> {
    let run_cfg = TrainRunConfig { method: Method::Baseline, ..cfg.clone() };
    let auc = |x: Option<f64>, what: &str| x.ok_or_else(|| Error::UndefinedMetric(format!("{what} AUC")));
    let s = train(data, encoder, &run_cfg)?.metrics;
    let t = train(&swapped(data), encoder, &run_cfg)?.metrics;
    let ss = auc(s.source_test_auc, "source-to-source")?;
    let st = auc(s.target_test_auc, "source-to-target")?;
    let tt = auc(t.source_test_auc, "target-to-target")?;
    Ok(XgenReport {
        source_to_source: ss,
        source_to_target: st,
        target_to_target: tt,
        source_gap: ss - st,
        target_gap: tt - st,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchDistribution {
    pub histogram: Histogram,
    pub clips: usize,
    /// Set when no frame was voiced.
    pub warning: Option<String>,
}

pub const PITCH_BIN_HZ: f64 = 10.0;
pub const PITCH_RANGE_HZ: (f64, f64) = (250.0, 1000.0);

/// Voiced f0 frames inside detected cry activity, pooled into 10 Hz bins
/// over [250, 1000] Hz.
pub fn pitch_distribution(clips: &[&AudioClip], pitch: &PitchConfig, activity: &ActivityConfig) -> Result<PitchDistribution> {
    if clips.is_empty() {
        return Err(Error::Data("pitch distribution of an empty clip set".into()));
    }
    let mut histogram = Histogram::new(PITCH_RANGE_HZ.0, PITCH_RANGE_HZ.1, PITCH_BIN_HZ)?;
    for clip in clips {
        let segments = detect_activity(clip, activity);
        let track = estimate_pitch(clip, pitch)?;
        for (t, frame) in track.frames.iter().enumerate() {
            let centre = t * track.hop + track.frame / 2;
            let active = segments.iter().any(|s| s.start <= centre && centre < s.end);
            if let (true, Some(f0)) = (active, frame.f0) {
                histogram.add(f0 as f64);
            }
        }
    }
    let warning = histogram.is_empty().then(|| format!("no voiced frames in {} clips", clips.len()));
    Ok(PitchDistribution { histogram, clips: clips.len(), warning })
}
