use serde::{Deserialize, Serialize};

use super::{ModelState, ParamGroup};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Separate step sizes for the encoder and the heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub backbone: f64,
    pub classifier: f64,
}

impl ModelState {
    /// Bias-corrected Adam over trainable parameters. Frozen parameters are
    /// skipped whatever their gradient.
    pub fn adam_step(
        &mut self,
        grads: &[Option<Vec<f32>>],
        lr: LearningRates,
        cfg: AdamConfig,
    ) -> Result<()> {
        self.adam_step_group(grads, lr, cfg, None)
    }

    /// [`Self::adam_step`] restricted to one parameter group when `only` is set.
    pub fn adam_step_group(
        &mut self,
        grads: &[Option<Vec<f32>>],
        lr: LearningRates,
        cfg: AdamConfig,
        only: Option<ParamGroup>,
    ) -> Result<()> {
        let selected = |p: &super::Param| p.trainable && only.is_none_or(|g| g == p.group);
        if grads.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter().zip(grads) {
            if !selected(p) {
                continue;
            }
            match g {
                Some(g) if g.len() == p.value.numel() => {}
                Some(g) => {
                    return Err(Error::dim("adam_step", p.value.shape(), &[g.len()]));
                }
                None => {
                    return Err(Error::Contract(format!(
                        "missing gradient for trainable parameter {}",
                        p.name
                    )));
                }
            }
        }
        self.step += 1;
        for (p, g) in self.params.iter_mut().zip(grads) {
            let (true, Some(g)) = (selected(p), g) else { continue };
            p.t += 1;
            let c1 = 1.0 - cfg.beta1.powi(p.t as i32);
            let c2 = 1.0 - cfg.beta2.powi(p.t as i32);
            let rate = match p.group {
                ParamGroup::Encoder => lr.backbone,
                ParamGroup::Classifier => lr.classifier,
            };
            for (((w, m), v), &gi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.m.iter_mut())
                .zip(p.v.iter_mut())
                .zip(g)
            {
                let gi = gi as f64;
                let mn = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * gi;
                let vn = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * gi * gi;
                *m = mn as f32;
                *v = vn as f32;
                let update = rate * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
