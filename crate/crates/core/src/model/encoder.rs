use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{BnMode, BnState, Graph, Real, Tensor, Var};
use crate::dsp::SpectrogramFeatures;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Mel bands of the input; the time axis may vary.
    pub n_mels: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Embedding size; equals the last block's channel count.
    pub embedding_dim: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
    pub freeze: FreezePolicy,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_mels: 64,
            channels: vec![16, 32, 64, 128],
            kernel: 3,
            pool: 2,
            embedding_dim: 128,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            freeze: FreezePolicy::BnOnly,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("encoder needs at least one block with positive channels".into());
        }
        if self.kernel % 2 == 0 || self.pool == 0 {
            return bad("kernel must be odd and pool positive".into());
        }
        if self.embedding_dim < 8 || self.channels.last() != Some(&self.embedding_dim) {
            return bad(format!(
                "embedding_dim {} must be >= 8 and equal the last channel count",
                self.embedding_dim
            ));
        }
        let shrink = self.pool.pow(self.channels.len() as u32);
        if self.n_mels < shrink {
            return bad(format!("{} mel bands cannot survive {shrink}x pooling", self.n_mels));
        }
        Ok(())
    }

    /// Shortest input (in frames) that survives every pooling stage.
    pub fn min_frames(&self) -> usize {
        self.pool.pow(self.channels.len() as u32)
    }
}

/// Which parameters the optimizer may touch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    /// Conv kernels frozen; BN affine parameters and heads trainable.
    #[default]
    BnOnly,
    /// Everything trainable.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<f32>,
    pub trainable: bool,
    /// Adam moments, zero until the first step.
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Adam updates applied to this parameter.
    pub t: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnPolicy {
    #[default]
    TrainStats,
    EvalStats,
    StatsOnlyAdapt,
}

impl BnPolicy {
    fn mode(self) -> BnMode {
        match self {
            BnPolicy::TrainStats => BnMode::Train,
            BnPolicy::EvalStats => BnMode::Eval,
            BnPolicy::StatsOnlyAdapt => BnMode::StatsOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub n_classes: usize,
    pub n_heads: usize,
    pub params: Vec<Param>,
    pub bn: Vec<BnState>,
    pub bn_policy: BnPolicy,
    /// Optimizer calls so far.
    pub step: u64,
}

/// Graph handles for every parameter of a [`ModelState`], in `params` order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Outputs {
    pub embedding: Var,
    /// One `[B, K]` logit block per head.
    pub logits: Vec<Var>,
}

fn he_normal(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut impl rand::Rng) -> Tensor<f32> {
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn param(name: String, group: ParamGroup, value: Tensor<f32>, trainable: bool) -> Param {
    let n = value.numel();
    Param {
        name,
        group,
        value,
        trainable,
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    }
}

/// Seeded initialization. Extra heads start as copies of head 0.
pub fn init_model(cfg: &EncoderConfig, n_classes: usize, n_heads: usize, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    if n_classes < 2 || n_heads == 0 {
        return Err(Error::Config("need at least two classes and one head".into()));
    }
    let mut rng = rng::stream(seed, &[0x6d6f64656c]);
    let conv_trainable = cfg.freeze == FreezePolicy::None;
    let mut params = Vec::new();
    let mut bn = Vec::new();
    let mut c_in = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let fan_in = c_in * cfg.kernel * cfg.kernel;
        params.push(param(
            format!("block{i}.conv.weight"),
            ParamGroup::Encoder,
            he_normal(vec![c, c_in, cfg.kernel, cfg.kernel], fan_in, 2.0, &mut rng),
            conv_trainable,
        ));
        params.push(param(
            format!("block{i}.bn.gamma"),
            ParamGroup::Encoder,
            Tensor::new(vec![c], vec![1.0; c])?,
            true,
        ));
        params.push(param(
            format!("block{i}.bn.beta"),
            ParamGroup::Encoder,
            Tensor::zeros(vec![c]),
            true,
        ));
        bn.push(BnState::new(c, cfg.bn_momentum, cfg.bn_eps));
        c_in = c;
    }
    let d = cfg.embedding_dim;
    let w = he_normal(vec![d, n_classes], d, 1.0, &mut rng);
    for h in 0..n_heads {
        params.push(param(format!("head{h}.weight"), ParamGroup::Classifier, w.clone(), true));
        params.push(param(
            format!("head{h}.bias"),
            ParamGroup::Classifier,
            Tensor::zeros(vec![n_classes]),
            true,
        ));
    }
    Ok(ModelState {
        config: cfg.clone(),
        n_classes,
        n_heads,
        params,
        bn,
        bn_policy: BnPolicy::TrainStats,
        step: 0,
    })
}

/// Stacks `[T, M]` feature maps into `[B, 1, T, M]`.
pub fn features_to_batch(items: &[&SpectrogramFeatures]) -> Result<Tensor<f32>> {
    let frames: Vec<Tensor<f32>> = items.iter().map(|f| f.frames.clone()).collect();
    let stacked = Tensor::stack(&frames)?;
    let s = stacked.shape().to_vec();
    stacked.reshape(vec![s[0], 1, s[1], s[2]])
}

impl ModelState {
    pub fn set_bn_policy(&mut self, policy: BnPolicy) {
        self.bn_policy = policy;
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Index of the first parameter of head `h`.
    fn head_offset(&self, h: usize) -> usize {
        3 * self.config.channels.len() + 2 * h
    }

    /// Adds every parameter to `g`; frozen ones become constants.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.cast(), p.trainable))
            .collect();
        Bound { vars }
    }

    /// Encoder then every head. `input` is `[B, 1, T, n_mels]`. BN layers run
    /// according to the current policy.
    pub fn forward<T: Real>(&mut self, g: &mut Graph<T>, bound: &Bound, input: Var) -> Result<Outputs> {
        let embedding = self.encode(g, bound, input)?;
        let logits = (0..self.n_heads)
            .map(|h| self.head(g, bound, embedding, h))
            .collect::<Result<_>>()?;
        Ok(Outputs { embedding, logits })
    }

    pub fn encode<T: Real>(&mut self, g: &mut Graph<T>, bound: &Bound, input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let min = self.config.min_frames();
        if shape.len() != 4 || shape[1] != 1 || shape[3] != self.config.n_mels || shape[2] < min {
            return Err(Error::dim("encoder input", &shape, &[0, 1, min, self.config.n_mels]));
        }
        let mode = self.bn_policy.mode();
        let pad = self.config.kernel / 2;
        let mut x = input;
        for (i, st) in self.bn.iter_mut().enumerate() {
            let v = &bound.vars[3 * i..3 * i + 3];
            x = g.conv2d(x, v[0], 1, pad)?;
            x = g.batchnorm(x, v[1], v[2], st, mode)?;
            x = g.relu(x);
            x = g.max_pool2d(x, self.config.pool)?;
        }
        g.global_mean_pool(x)
    }

    pub fn head<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, embedding: Var, h: usize) -> Result<Var> {
        let o = self.head_offset(h);
        g.linear(embedding, bound.vars[o], bound.vars[o + 1])
    }

    /// Gradients for every parameter; `None` for frozen ones.
    pub fn collect_grads<T: Real>(&self, g: &Graph<T>, bound: &Bound) -> Vec<Option<Vec<f32>>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                if p.trainable {
                    g.grad(v).map(|gr| gr.iter().map(|x| x.as_f32()).collect())
                } else {
                    None
                }
            })
            .collect()
    }

    /// Eval-mode class posteriors `[B, K]` with heads averaged, plus embeddings `[B, D]`.
    pub fn predict(&mut self, input: Tensor<f32>) -> Result<(Vec<Vec<f32>>, Tensor<f32>)> {
        let saved = self.bn_policy;
        self.bn_policy = BnPolicy::EvalStats;
        let mut g = Graph::<f32>::new();
        let bound = self.frozen_bind(&mut g);
        let x = g.constant(input);
        let out = self.forward(&mut g, &bound, x);
        self.bn_policy = saved;
        let out = out?;
        let k = self.n_classes;
        let b = g.shape(out.embedding)[0];
        let mut probs = vec![vec![0.0f32; k]; b];
        for &l in &out.logits {
            let p = g.softmax(l)?;
            for (row, src) in probs.iter_mut().zip(g.value(p).data().chunks(k)) {
                row.iter_mut().zip(src).for_each(|(a, s)| *a += s / self.n_heads as f32);
            }
        }
        Ok((probs, g.value(out.embedding).clone()))
    }

    fn frozen_bind(&self, g: &mut Graph<f32>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.value.clone())).collect(),
        }
    }

    /// SHA-256 over names, shapes and values of every parameter.
    pub fn param_hash(&self) -> String {
        self.hash_where(|_| true)
    }

    /// Hash restricted to parameters the optimizer may not touch.
    pub fn frozen_hash(&self) -> String {
        self.hash_where(|p| !p.trainable)
    }

    fn hash_where(&self, keep: impl Fn(&Param) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| keep(p)) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn bn_hash(&self) -> String {
        let mut h = Sha256::new();
        for st in &self.bn {
            for &v in st.running_mean.iter().chain(&st.running_var) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
