use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cry::{synth_cry, Contour, CryParams};
use super::domain::{apply_domain, render_noise, DomainProfile};
use super::manifest::{write_noise_manifest, CorpusManifest, Label, ManifestRow, NoiseRow, Split};
use crate::dsp::wav::{from_pcm16, to_pcm16, write_wav};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::rng;

pub const SOURCE: &str = "source";
pub const TARGET: &str = "target";

/// Class-conditional cry acoustics, shared by both domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassAcoustics {
    pub f0_mean: f64,
    pub f0_sd: f64,
    pub contour: Contour,
    pub jitter: f64,
}

impl ClassAcoustics {
    pub fn healthy() -> Self {
        ClassAcoustics { f0_mean: 450.0, f0_sd: 50.0, contour: Contour::Arc, jitter: 0.01 }
    }

    pub fn injury() -> Self {
        ClassAcoustics { f0_mean: 600.0, f0_sd: 60.0, contour: Contour::Flat, jitter: 0.04 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, valid: 0.2, test: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub patients_per_domain: usize,
    pub clips_per_patient: usize,
    pub clip_seconds: f64,
    /// Fraction of patients with the injury label.
    pub injury_prior: f64,
    pub splits: SplitFractions,
    pub n_harmonics: usize,
    pub n_expirations: usize,
    /// Within-patient spread of clip f0 means, Hz.
    pub clip_f0_sd: f64,
    pub noise_clips_per_domain: usize,
    pub noise_seconds: f64,
    pub noise_rms: f64,
    pub sample_rate: u32,
    pub healthy: ClassAcoustics,
    pub injury: ClassAcoustics,
    pub source: DomainProfile,
    pub target: DomainProfile,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            patients_per_domain: 60,
            clips_per_patient: 5,
            clip_seconds: 3.0,
            injury_prior: 0.5,
            splits: SplitFractions::default(),
            n_harmonics: 8,
            n_expirations: 2,
            clip_f0_sd: 15.0,
            noise_clips_per_domain: 20,
            noise_seconds: 3.0,
            noise_rms: 0.1,
            sample_rate: crate::dsp::DEFAULT_SAMPLE_RATE,
            healthy: ClassAcoustics::healthy(),
            injury: ClassAcoustics::injury(),
            source: DomainProfile::hospital_a(),
            target: DomainProfile::hospital_b(),
        }
    }
}

impl CorpusConfig {
    pub fn domains(&self) -> [(&'static str, &DomainProfile); 2] {
        [(SOURCE, &self.source), (TARGET, &self.target)]
    }

    pub fn acoustics(&self, label: Label) -> &ClassAcoustics {
        match label {
            Label::Healthy => &self.healthy,
            Label::Injury => &self.injury,
        }
    }

    /// Patients per (label, split) in each domain.
    fn allocation(&self) -> Result<[[usize; 3]; 2]> {
        let f = &self.splits;
        let fr = [f.train, f.valid, f.test];
        if fr.iter().any(|&v| !(v > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.injury_prior) {
            return Err(Error::Config("injury_prior must lie in [0, 1]".into()));
        }
        if self.clips_per_patient == 0 {
            return Err(Error::Config("clips_per_patient must be positive".into()));
        }
        let n_inj = (self.patients_per_domain as f64 * self.injury_prior).round() as usize;
        let per_label = [self.patients_per_domain - n_inj, n_inj];
        let mut out = [[0; 3]; 2];
        for (l, &n) in per_label.iter().enumerate() {
            let train = (n as f64 * f.train).round() as usize;
            let valid = (n as f64 * f.valid).round() as usize;
            if train + valid > n {
                return Err(Error::Config(format!(
                    "cannot split {n} patients as {fr:?}"
                )));
            }
            out[l] = [train, valid, n - train - valid];
            if out[l].contains(&0) {
                return Err(Error::Config(format!(
                    "split fractions {fr:?} leave an empty split for {n} patients of one class"
                )));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.allocation()?;
        if !(self.clip_seconds > 0.0 && self.noise_seconds > 0.0) {
            return Err(Error::Config("clip and noise durations must be positive".into()));
        }
        self.source.validate(self.sample_rate)?;
        self.target.validate(self.sample_rate)
    }
}

#[derive(Clone, Debug)]
pub struct CorpusClip {
    pub row: ManifestRow,
    pub params: CryParams,
    pub clip: AudioClip,
}

#[derive(Clone, Debug)]
pub struct NoiseClip {
    pub row: NoiseRow,
    pub clip: AudioClip,
}

/// In-memory corpus. Samples are already quantized to 16-bit so that
/// reading the written WAVs back gives identical values.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub clips: Vec<CorpusClip>,
    pub noise: Vec<NoiseClip>,
}

#[derive(Serialize)]
struct CorpusSummary<'a> {
    seed: u64,
    n_clips: usize,
    n_noise_clips: usize,
    config: &'a CorpusConfig,
}

impl Corpus {
    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            rows: self.clips.iter().map(|c| c.row.clone()).collect(),
        }
    }

    pub fn noise_rows(&self) -> Vec<NoiseRow> {
        self.noise.iter().map(|n| n.row.clone()).collect()
    }

    /// Writes WAVs, `manifest.csv`, `noise_manifest.csv` and `corpus.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let paths = self.clips.iter().map(|c| &c.row.path).chain(self.noise.iter().map(|n| &n.row.path));
        let parents: std::collections::BTreeSet<_> =
            paths.filter_map(|p| dir.join(p).parent().map(Path::to_path_buf)).collect();
        for p in parents {
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for c in &self.clips {
            write_wav(&dir.join(&c.row.path), &c.clip)?;
        }
        for n in &self.noise {
            write_wav(&dir.join(&n.row.path), &n.clip)?;
        }
        self.manifest().write(&dir.join("manifest.csv"))?;
        write_noise_manifest(&self.noise_rows(), &dir.join("noise_manifest.csv"))?;
        let summary = CorpusSummary {
            seed: self.seed,
            n_clips: self.clips.len(),
            n_noise_clips: self.noise.len(),
            config: &self.config,
        };
        let json = serde_json::to_string_pretty(&summary)?;
        let p = dir.join("corpus.json");
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }
}

fn quantize(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| from_pcm16(to_pcm16(v))).collect()
}

fn clip_params(cfg: &CorpusConfig, f0_mean: f64, ac: &ClassAcoustics, rng: &mut impl Rng) -> CryParams {
    let d = cfg.clip_seconds;
    let n = cfg.n_expirations as f64;
    let dur = rng.random_range(0.27..0.37) * d * 2.0 / n;
    let gap = rng.random_range(0.08..0.15) * d;
    let slack = d - n * dur - (n - 1.0) * gap;
    let lead = rng.random_range(0.3..0.7) * slack;
    CryParams {
        f0_mean: f0_mean.clamp(250.0, 800.0),
        f0_contour: ac.contour,
        jitter: ac.jitter,
        n_harmonics: cfg.n_harmonics,
        expiration_dur: dur,
        n_expirations: cfg.n_expirations,
        gap_dur: gap,
        lead_dur: lead,
        duration: d,
        sample_rate: cfg.sample_rate,
    }
}

/// Deterministic two-domain corpus; a pure function of `(cfg, seed)`.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let alloc = cfg.allocation()?;
    let mut clips = Vec::new();
    let mut noise = Vec::new();
    for (d, (domain, profile)) in cfg.domains().into_iter().enumerate() {
        let d = d as u64;
        // patient order: labels first, then splits within each label
        let mut patients: Vec<(Label, Split)> = Vec::new();
        for (l, label) in [Label::Healthy, Label::Injury].into_iter().enumerate() {
            for (s, split) in Split::ALL.into_iter().enumerate() {
                patients.extend(std::iter::repeat_n((label, split), alloc[l][s]));
            }
        }
        patients.shuffle(&mut rng::stream(seed, &[d, 0x70]));
        let mut rank = [0u64; 2];
        for (p, &(label, split)) in patients.iter().enumerate() {
            let patient_id = format!("{domain}-p{p:03}");
            let ac = cfg.acoustics(label);
            // The k-th patient of a class draws the same base f0 at both sites,
            // so sampling noise cannot open a pitch gap between domains.
            let mut prng = rng::stream(seed, &[0x71, label.index() as u64, rank[label.index()]]);
            rank[label.index()] += 1;
            let between = (ac.f0_sd.powi(2) - cfg.clip_f0_sd.powi(2)).max(0.0).sqrt();
            let base = Normal::new(ac.f0_mean, between)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(&mut prng);
            let within = Normal::new(0.0, cfg.clip_f0_sd).map_err(|e| Error::Config(e.to_string()))?;
            for k in 0..cfg.clips_per_patient {
                let key = [d, 0x72, p as u64, k as u64];
                let mut crng = rng::stream(seed, &key);
                let f0 = base + within.sample(&mut crng);
                let params = clip_params(cfg, f0, ac, &mut crng);
                let [lo, hi] = profile.snr_db_range;
                let snr = if hi > lo { crng.random_range(lo..=hi) } else { lo };
                let clean = synth_cry(&params, rng::derive_seed(seed, &[d, 0x73, p as u64, k as u64]))?;
                let mut clip = apply_domain(
                    &clean,
                    profile,
                    snr,
                    rng::derive_seed(seed, &[d, 0x74, p as u64, k as u64]),
                )?;
                clip.samples = quantize(&clip.samples);
                let path = format!("audio/{domain}/{patient_id}_{k:02}.wav");
                clip.id = path.clone();
                clip.metadata.insert("domain".into(), domain.into());
                clip.metadata.insert("profile".into(), profile.id.clone());
                clip.metadata.insert("patient_id".into(), patient_id.clone());
                clip.metadata.insert("label".into(), format!("{label:?}").to_lowercase());
                let row = ManifestRow {
                    path,
                    patient_id: patient_id.clone(),
                    label,
                    domain: domain.into(),
                    split,
                };
                clips.push(CorpusClip { row, params, clip });
            }
        }
        let n = (cfg.noise_seconds * cfg.sample_rate as f64).round() as usize;
        for i in 0..cfg.noise_clips_per_domain {
            let bed = render_noise(profile, n, cfg.sample_rate, rng::derive_seed(seed, &[d, 0x75, i as u64]));
            let samples: Vec<f32> = bed.iter().map(|v| (v * cfg.noise_rms) as f32).collect();
            let path = format!("noise/{domain}/noise_{i:03}.wav");
            let clip = AudioClip::new(path.clone(), quantize(&samples), cfg.sample_rate)
                .with_meta("domain", domain)
                .with_meta("kind", "noise");
            noise.push(NoiseClip { row: NoiseRow { path, domain: domain.into() }, clip });
        }
    }
    Ok(Corpus { config: cfg.clone(), seed, clips, noise })
}
