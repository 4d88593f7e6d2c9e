use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::error::{Error, Result};

/// Eval-mode measurements on the validation splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub source_valid_auc: Option<f64>,
    pub target_valid_auc: Option<f64>,
    /// Mean posterior entropy on target validation clips (nats).
    pub target_entropy: f64,
    pub source_embedding_norm: f64,
    pub target_embedding_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's steps.
    pub total: f64,
    /// Mean weighted contribution of each term; they sum to `total`.
    pub terms: BTreeMap<String, f64>,
    /// Mean embedding norm over the epoch's training batches (batch statistics,
    /// source and target rows together), measured before each update.
    pub train_embedding_norm: f64,
    #[serde(flatten)]
    pub eval: EvalRecord,
    pub param_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub method: Method,
    /// Measurements before the first update.
    pub initial: EvalRecord,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (best source-validation AUC).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn final_eval(&self) -> &EvalRecord {
        self.epochs.last().map(|e| &e.eval).unwrap_or(&self.initial)
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io { path: path.to_path_buf(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n").map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse { line: i as u64 + 1, message: e.to_string() })
            })
            .collect()
    }
}
