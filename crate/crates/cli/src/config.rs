use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cryda_core::dsp::FeatureConfig;
use cryda_core::model::EncoderConfig;
use cryda_core::synth::CorpusConfig;
use cryda_core::uda::{Method, TrainRunConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a command needs, read from one TOML file. Missing keys take
/// the defaults shown by `cryda --print-config`; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub features: FeatureConfig,
    pub model: EncoderConfig,
    /// Shared training settings; `methods.<name>` tables override them.
    pub train: TrainRunConfig,
    pub methods: BTreeMap<Method, toml::Table>,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

/// `[corpus]` holds the corpus seed next to the generator settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSection {
    pub seed: u64,
    #[serde(flatten)]
    pub config: CorpusConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_seeds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub work_dir: PathBuf,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { seed: 0, config: CorpusConfig::default() }
    }
}

// Flattening would bypass the unknown-key check of the inner config, so
// `seed` is split off by hand.
impl<'de> Deserialize<'de> for CorpusSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut t = toml::Table::deserialize(d)?;
        let seed = match t.remove("seed") {
            Some(v) => v.try_into().map_err(D::Error::custom)?,
            None => 0,
        };
        Ok(CorpusSection { seed, config: t.try_into().map_err(D::Error::custom)? })
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_seeds: 5 }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { work_dir: PathBuf::from("runs") }
    }
}

fn table(pairs: &[(&str, f64)]) -> toml::Table {
    pairs.iter().map(|&(k, v)| (k.to_string(), toml::Value::Float(v))).collect()
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: a narrow encoder, 1.5 s training windows and
    /// per-method backbone learning rates picked on target validation AUC.
    /// TNI keeps the shared rate so that its α = 0 point is the baseline.
    fn default() -> Self {
        let model = EncoderConfig { channels: vec![8, 16, 32, 64], embedding_dim: 64, ..Default::default() };
        let train = TrainRunConfig { epochs: 15, window_seconds: Some(1.5), lr_backbone: 0.03, ..Default::default() };
        let methods = BTreeMap::from([
            (Method::Hafn, table(&[("lr_backbone", 0.05)])),
            (Method::Safn, table(&[("lr_backbone", 0.05)])),
        ]);
        ExperimentConfig {
            corpus: CorpusSection::default(),
            features: FeatureConfig::default(),
            model,
            train,
            methods,
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.corpus.config.validate()?;
        self.model.validate()?;
        if self.eval.n_seeds == 0 {
            return Err(CliError::Config("eval.n_seeds must be positive".into()));
        }
        for m in Method::ALL {
            self.run_config(m, 0)?;
        }
        Ok(())
    }

    /// Resolved training settings for one `(method, seed)` job.
    pub fn run_config(&self, method: Method, seed: u64) -> CliResult<TrainRunConfig> {
        let mut merged = toml::Table::try_from(&self.train).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(over) = self.methods.get(&method) {
            for (k, v) in over {
                match (merged.get_mut(k), v) {
                    (Some(toml::Value::Table(base)), toml::Value::Table(sub)) => {
                        base.extend(sub.iter().map(|(a, b)| (a.clone(), b.clone())));
                    }
                    _ => {
                        merged.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        let mut cfg: TrainRunConfig = merged
            .try_into()
            .map_err(|e| CliError::Config(format!("methods.{method}: {e}")))?;
        cfg.method = method;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.work_dir.join("corpus")
    }
}
