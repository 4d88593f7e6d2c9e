use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Bn,
    Em,
    Hafn,
    Safn,
    Symnet,
    Tni,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Baseline,
        Method::Bn,
        Method::Em,
        Method::Hafn,
        Method::Safn,
        Method::Symnet,
        Method::Tni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Bn => "bn",
            Method::Em => "em",
            Method::Hafn => "hafn",
            Method::Safn => "safn",
            Method::Symnet => "symnet",
            Method::Tni => "tni",
        }
    }

    /// Row label in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Baseline => "No DA",
            Method::Bn => "Unsupervised BN",
            Method::Em => "EM",
            Method::Hafn => "HAFN",
            Method::Safn => "SAFN",
            Method::Symnet => "SymNets",
            Method::Tni => "TNI",
        }
    }

    pub fn heads(self) -> usize {
        if self == Method::Symnet {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; valid: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub method: Method,
    pub lr_backbone: f64,
    pub lr_classifier: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_em: f64,
    pub lambda_afn: f64,
    /// HAFN target radius R.
    pub radius: f64,
    /// SAFN step Δr.
    pub delta_r: f64,
    pub lambda_confusion: f64,
    /// TNI mixing weight α.
    pub alpha: f64,
    /// Share of target noise recordings in the TNI pool.
    pub noise_pool_fraction: f64,
    /// Unsupervised BN: passes over unlabeled target training data.
    pub bn_adapt_passes: usize,
    /// Training crop length; `None` uses whole clips.
    pub window_seconds: Option<f64>,
    pub eval_batch: usize,
    pub adam: AdamConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            method: Method::Baseline,
            lr_backbone: 1e-2,
            lr_classifier: 1e-2,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            lambda_em: 0.1,
            lambda_afn: 0.05,
            radius: 30.0,
            delta_r: 0.2,
            lambda_confusion: 0.1,
            alpha: 0.5,
            noise_pool_fraction: 1.0,
            bn_adapt_passes: 5,
            window_seconds: None,
            eval_batch: 64,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn for_method(method: Method) -> Self {
        TrainRunConfig { method, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.noise_pool_fraction) {
            return bad(format!(
                "noise_pool_fraction must lie in [0, 1], got {}",
                self.noise_pool_fraction
            ));
        }
        for (name, v) in [
            ("lambda_em", self.lambda_em),
            ("lambda_afn", self.lambda_afn),
            ("lambda_confusion", self.lambda_confusion),
            ("lr_backbone", self.lr_backbone),
            ("lr_classifier", self.lr_classifier),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.radius <= 0.0 || self.delta_r <= 0.0 {
            return bad("radius and delta_r must be positive".into());
        }
        if self.eval_batch == 0 {
            return bad("eval_batch must be positive".into());
        }
        if self.window_seconds.is_some_and(|w| w <= 0.0) {
            return bad("window_seconds must be positive".into());
        }
        Ok(())
    }

    /// Whether the run needs target batches at all. Zero weights fall back
    /// to source-only batches so that the trace matches the baseline.
    pub fn uses_target_batches(&self) -> bool {
        match self.method {
            Method::Em => self.lambda_em > 0.0,
            Method::Hafn | Method::Safn => self.lambda_afn > 0.0,
            Method::Symnet => true,
            Method::Baseline | Method::Bn | Method::Tni => false,
        }
    }
}
