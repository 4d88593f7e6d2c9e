use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{concat_batches, crop_frames, stack_batch, Featurizer, Sample, TrainData};
use super::history::{EpochRecord, EvalRecord, TrainHistory};
use super::losses::{self, HeadPair, Objective};
use super::tni::{build_noise_pool, tni_augment};
use super::{Method, TrainRunConfig};
use crate::autodiff::{Graph, NormPenalty, Tensor};
use crate::dsp::{frame_count, ActivityConfig, AudioClip};
use crate::error::{Error, Result};
use crate::evaldiag::auc;
use crate::model::{init_model, BnPolicy, EncoderConfig, LearningRates, ModelState, ParamGroup};
use crate::rng::stream;

const SOURCE_ORDER: u64 = 1;
const TARGET_ORDER: u64 = 2;
const SOURCE_CROP: u64 = 3;
const TARGET_CROP: u64 = 4;
const TNI_DRAW: u64 = 5;
const INIT: u64 = 6;

/// Eval-mode posteriors and embedding norms over one split.
#[derive(Clone, Debug)]
pub struct SplitEval {
    pub probs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub norms: Vec<f64>,
}

impl SplitEval {
    /// Probability of the positive (last) class.
    pub fn scores(&self) -> Vec<f64> {
        self.probs.iter().map(|p| *p.last().unwrap_or(&0.0) as f64).collect()
    }

    pub fn auc(&self) -> Result<f64> {
        let k = self.probs.first().map_or(2, |p| p.len());
        let labels: Vec<bool> = self.labels.iter().map(|&l| l == k - 1).collect();
        auc(&self.scores(), &labels)
    }

    pub fn mean_entropy(&self) -> f64 {
        mean(self.probs.iter().map(|p| {
            p.iter().filter(|&&v| v > 0.0).map(|&v| -(v as f64) * (v as f64).ln()).sum()
        }))
    }

    pub fn mean_norm(&self) -> f64 {
        mean(self.norms.iter().copied())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Test-time metrics of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub source_test_auc: Option<f64>,
    pub target_test_auc: Option<f64>,
    pub target_valid_auc: Option<f64>,
    pub trainable_params: usize,
    pub total_params: usize,
    pub param_hash: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub model: ModelState,
    pub history: TrainHistory,
    pub metrics: RunMetrics,
}

/// Frames kept per training crop, or `None` for whole clips.
pub fn window_frames(cfg: &TrainRunConfig, data: &TrainData) -> Option<usize> {
    let f = &data.features;
    cfg.window_seconds.map(|w| {
        let n = (w * f.sample_rate as f64).round() as usize;
        frame_count(n, f.win_length, f.hop).max(1)
    })
}

fn center_crop(f: &Tensor<f32>, window: Option<usize>) -> Result<Tensor<f32>> {
    match window {
        Some(w) if f.shape()[0] > w => crop_frames(f, (f.shape()[0] - w) / 2, w),
        _ => Ok(f.clone()),
    }
}

/// Posteriors and embedding norms for `samples`, eval-mode BN, centre crops.
pub fn evaluate(model: &mut ModelState, samples: &[Sample], batch: usize, window: Option<usize>) -> Result<SplitEval> {
    let mut out = SplitEval { probs: Vec::new(), labels: Vec::new(), norms: Vec::new() };
    for chunk in samples.chunks(batch.max(1)) {
        let feats = chunk.iter().map(|s| center_crop(&s.features, window)).collect::<Result<Vec<_>>>()?;
        let (probs, emb) = model.predict(stack_batch(&feats)?)?;
        let d = emb.shape()[1];
        out.norms.extend(emb.data().chunks(d).map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()));
        out.probs.extend(probs);
        out.labels.extend(chunk.iter().map(|s| s.label));
    }
    Ok(out)
}

fn eval_record(model: &mut ModelState, data: &TrainData, cfg: &TrainRunConfig, window: Option<usize>) -> Result<EvalRecord> {
    let src = evaluate(model, &data.source.valid, cfg.eval_batch, window)?;
    let tgt = evaluate(model, &data.target.valid, cfg.eval_batch, window)?;
    Ok(EvalRecord {
        source_valid_auc: src.auc().ok(),
        target_valid_auc: tgt.auc().ok(),
        target_entropy: tgt.mean_entropy(),
        source_embedding_norm: src.mean_norm(),
        target_embedding_norm: tgt.mean_norm(),
    })
}

/// Re-estimates BN running statistics on unlabeled target clips. Weights are
/// untouched. `momentum` overrides the layers' own momentum during the passes.
pub fn adapt_bn(
    model: &mut ModelState,
    target: &[Sample],
    passes: usize,
    batch: usize,
    window: Option<usize>,
    momentum: Option<f32>,
) -> Result<()> {
    if target.len() < 2 {
        return Err(Error::BatchSize { op: "adapt_bn", got: target.len(), need: 2 });
    }
    let saved: Vec<f32> = model.bn.iter().map(|s| s.momentum).collect();
    if let Some(m) = momentum {
        model.bn.iter_mut().for_each(|s| s.momentum = m);
    }
    model.set_bn_policy(BnPolicy::StatsOnlyAdapt);
    let result = (|| {
        for _ in 0..passes {
            for chunk in target.chunks(batch.max(2)) {
                if chunk.len() < 2 {
                    continue;
                }
                let feats = chunk.iter().map(|s| center_crop(&s.features, window)).collect::<Result<Vec<_>>>()?;
                let mut g = Graph::<f32>::new();
                let bound = model.bind(&mut g);
                let x = g.constant(stack_batch(&feats)?);
                model.encode(&mut g, &bound, x)?;
            }
        }
        Ok(())
    })();
    for (s, m) in model.bn.iter_mut().zip(saved) {
        s.momentum = m;
    }
    model.set_bn_policy(BnPolicy::EvalStats);
    result
}

struct Trainer<'a> {
    cfg: &'a TrainRunConfig,
    data: &'a TrainData,
    window: Option<usize>,
    featurizer: Featurizer,
    pool: Vec<AudioClip>,
    lr: LearningRates,
}

impl Trainer<'_> {
    fn source_batch(&self, idx: &[usize], crop: &mut ChaCha8Rng, tni: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut feats = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.data.source.train[i];
            let f = if self.cfg.method == Method::Tni && self.cfg.alpha > 0.0 {
                let noisy = tni_augment(&s.clip, &self.pool, self.cfg.alpha, tni)?;
                self.featurizer.features(&noisy)?
            } else {
                s.features.clone()
            };
            feats.push(random_crop(f, self.window, crop)?);
        }
        Ok((stack_batch(&feats)?, idx.iter().map(|&i| self.data.source.train[i].label).collect()))
    }

    fn target_batch(&self, idx: &[usize], crop: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        let feats = idx
            .iter()
            .map(|&i| random_crop(self.data.target.train[i].features.clone(), self.window, crop))
            .collect::<Result<Vec<_>>>()?;
        stack_batch(&feats)
    }

    /// One optimizer update; returns the term values and the batch's mean
    /// embedding norm before the update.
    fn step(&self, model: &mut ModelState, src: Tensor<f32>, labels: &[usize], tgt: Option<Tensor<f32>>) -> Result<(Vec<(&'static str, f64)>, f64)> {
        let b = labels.len();
        let input = match &tgt {
            Some(t) => concat_batches(&src, t)?,
            None => src,
        };
        let mut g = Graph::<f32>::new();
        let bound = model.bind(&mut g);
        let x = g.constant(input);
        let emb = model.encode(&mut g, &bound, x)?;
        let n = g.shape(emb)[0];
        let norm = mean_row_norm(g.value(emb));
        let cfg = self.cfg;
        if cfg.method == Method::Symnet {
            return Ok((self.symnet_step(model, &mut g, &bound, emb, b, labels)?, norm));
        }
        let logits = model.head(&mut g, &bound, emb, 0)?;
        let obj: Objective = match (cfg.method, tgt.is_some()) {
            (Method::Em, true) => {
                let ls = g.slice_rows(logits, 0, b)?;
                let lt = g.slice_rows(logits, b, n)?;
                losses::entropy_min(&mut g, ls, labels, lt, cfg.lambda_em)?
            }
            (Method::Hafn | Method::Safn, true) => {
                let ls = g.slice_rows(logits, 0, b)?;
                let es = g.slice_rows(emb, 0, b)?;
                let et = g.slice_rows(emb, b, n)?;
                let penalty = if cfg.method == Method::Hafn {
                    NormPenalty::Hard { radius: cfg.radius }
                } else {
                    NormPenalty::Stepwise { step: cfg.delta_r }
                };
                losses::feature_norm(&mut g, ls, labels, es, et, penalty, cfg.lambda_afn)?
            }
            _ => losses::supervised(&mut g, logits, labels)?,
        };
        g.backward(obj.total)?;
        let grads = model.collect_grads(&g, &bound);
        model.adam_step(&grads, self.lr, cfg.adam)?;
        Ok((obj.values(&g), norm))
    }

    /// Heads are updated on a detached embedding first; the encoder is then
    /// updated against the new heads.
    fn symnet_step(
        &self,
        model: &mut ModelState,
        g: &mut Graph<f32>,
        bound: &crate::model::Bound,
        emb: crate::Var,
        b: usize,
        labels: &[usize],
    ) -> Result<Vec<(&'static str, f64)>> {
        let n = g.shape(emb)[0];
        let pairs = |g: &mut Graph<f32>, model: &ModelState, bound: &crate::model::Bound, e| -> Result<(HeadPair, HeadPair)> {
            let h0 = model.head(g, bound, e, 0)?;
            let h1 = model.head(g, bound, e, 1)?;
            let split = |g: &mut Graph<f32>, lo, hi| -> Result<HeadPair> {
                Ok(HeadPair { source_head: g.slice_rows(h0, lo, hi)?, target_head: g.slice_rows(h1, lo, hi)? })
            };
            Ok((split(g, 0, b)?, split(g, b, n)?))
        };
        let detached = g.detach(emb);
        let (s, t) = pairs(g, model, bound, detached)?;
        let cls = losses::symnet_classifier(g, s, t, labels)?;
        g.backward(cls.total)?;
        let grads = model.collect_grads(g, bound);
        model.adam_step_group(&grads, self.lr, self.cfg.adam, Some(ParamGroup::Classifier))?;
        let mut values = cls.values(g);

        let updated = crate::model::Bound {
            vars: model
                .params
                .iter()
                .zip(&bound.vars)
                .map(|(p, &v)| if p.group == ParamGroup::Classifier { g.constant(p.value.clone()) } else { v })
                .collect(),
        };
        let (s, t) = pairs(g, model, &updated, emb)?;
        let enc = losses::symnet_encoder(g, s, t, labels, self.cfg.lambda_confusion)?;
        g.zero_grad();
        g.backward(enc.total)?;
        let grads = model.collect_grads(g, bound);
        model.adam_step_group(&grads, self.lr, self.cfg.adam, Some(ParamGroup::Encoder))?;
        values.extend(enc.values(g));
        Ok(values)
    }
}

fn mean_row_norm(emb: &Tensor<f32>) -> f64 {
    let d = emb.shape()[1];
    mean(emb.data().chunks(d).map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()))
}

fn random_crop(f: Tensor<f32>, window: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    match window {
        Some(w) if f.shape()[0] > w => {
            let start = rng.random_range(0..=f.shape()[0] - w);
            crop_frames(&f, start, w)
        }
        _ => Ok(f),
    }
}

/// Trains `cfg.method` from a fresh initialisation. Unsupervised BN trains the
/// source model first and adapts it afterwards.
pub fn train(data: &TrainData, encoder: &EncoderConfig, cfg: &TrainRunConfig) -> Result<RunOutput> {
    let model = init_model(encoder, 2, cfg.method.heads(), crate::rng::derive_seed(cfg.seed, &[INIT]))?;
    train_from(data, model, cfg)
}

/// Like [`train`] but starting from `model`. For Unsupervised BN with zero
/// epochs this only adapts the given source model.
pub fn train_from(data: &TrainData, mut model: ModelState, cfg: &TrainRunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if model.n_heads != cfg.method.heads() {
        return Err(Error::Config(format!(
            "{} needs {} classifier head(s), model has {}",
            cfg.method,
            cfg.method.heads(),
            model.n_heads
        )));
    }
    let n_src = data.source.train.len();
    if n_src == 0 {
        return Err(Error::Data("source training split is empty".into()));
    }
    if n_src < 2 {
        return Err(Error::BatchSize { op: "train", got: n_src, need: 2 });
    }
    let use_target = cfg.uses_target_batches();
    if use_target && data.target.train.len() < 2 {
        return Err(Error::BatchSize { op: "train (target)", got: data.target.train.len(), need: 2 });
    }
    let window = window_frames(cfg, data);
    let pool = if cfg.method == Method::Tni && cfg.alpha > 0.0 {
        let p = build_noise_pool(&data.target_noise, cfg.noise_pool_fraction, &ActivityConfig::default());
        if p.is_empty() {
            return Err(Error::Data("TNI needs at least one target noise segment".into()));
        }
        p
    } else {
        Vec::new()
    };
    let trainer = Trainer {
        cfg,
        data,
        window,
        featurizer: Featurizer::new(&data.features)?,
        pool,
        lr: LearningRates { backbone: cfg.lr_backbone, classifier: cfg.lr_classifier },
    };

    let initial = eval_record(&mut model, data, cfg, window)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;
    let bs = cfg.batch_size;
    let mut tgt_order: Vec<usize> = (0..data.target.train.len()).collect();
    let mut tgt_cursor = tgt_order.len();
    let mut tgt_round = 0u64;
    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..n_src).collect();
        order.shuffle(&mut stream(cfg.seed, &[SOURCE_ORDER, e]));
        let mut src_crop = stream(cfg.seed, &[SOURCE_CROP, e]);
        let mut tgt_crop = stream(cfg.seed, &[TARGET_CROP, e]);
        let mut tni_rng = stream(cfg.seed, &[TNI_DRAW, e]);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut steps = 0usize;
        let mut norm_sum = 0.0;
        model.set_bn_policy(BnPolicy::TrainStats);
        for idx in order.chunks(bs).filter(|c| c.len() >= 2) {
            let (src, labels) = trainer.source_batch(idx, &mut src_crop, &mut tni_rng)?;
            let tgt = if use_target {
                let mut t_idx = Vec::with_capacity(idx.len());
                while t_idx.len() < idx.len() {
                    if tgt_cursor == tgt_order.len() {
                        tgt_order.shuffle(&mut stream(cfg.seed, &[TARGET_ORDER, tgt_round]));
                        tgt_round += 1;
                        tgt_cursor = 0;
                    }
                    t_idx.push(tgt_order[tgt_cursor]);
                    tgt_cursor += 1;
                }
                Some(trainer.target_batch(&t_idx, &mut tgt_crop)?)
            } else {
                None
            };
            let (values, norm) = trainer.step(&mut model, src, &labels, tgt)?;
            norm_sum += norm;
            for (name, v) in values {
                if !v.is_finite() {
                    return Err(Error::Contract(format!("non-finite {name} loss at epoch {epoch}")));
                }
                *sums.entry(name.to_string()).or_default() += v;
            }
            steps += 1;
        }
        let terms: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, v / steps as f64)).collect();
        let eval = eval_record(&mut model, data, cfg, window)?;
        // Ties go to the later epoch: the source task often saturates early.
        let score = eval.source_valid_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
            best = Some((score, epoch, model.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            total: terms.values().sum(),
            terms,
            train_embedding_norm: norm_sum / steps as f64,
            eval,
            param_hash: model.param_hash(),
        });
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, m)) = best {
        model = m;
    }
    if cfg.method == Method::Bn {
        adapt_bn(&mut model, &data.target.train, cfg.bn_adapt_passes, bs, window, None)?;
    }
    model.set_bn_policy(BnPolicy::EvalStats);
    let history = TrainHistory { method: cfg.method, initial, epochs, best_epoch };
    let metrics = test_metrics(&mut model, data, cfg, window, best_epoch)?;
    Ok(RunOutput { model, history, metrics })
}

pub fn test_metrics(
    model: &mut ModelState,
    data: &TrainData,
    cfg: &TrainRunConfig,
    window: Option<usize>,
    best_epoch: Option<usize>,
) -> Result<RunMetrics> {
    let st = evaluate(model, &data.source.test, cfg.eval_batch, window)?;
    let tt = evaluate(model, &data.target.test, cfg.eval_batch, window)?;
    let tv = evaluate(model, &data.target.valid, cfg.eval_batch, window)?;
    Ok(RunMetrics {
        method: cfg.method,
        seed: cfg.seed,
        best_epoch,
        source_test_auc: st.auc().ok(),
        target_test_auc: tt.auc().ok(),
        target_valid_auc: tv.auc().ok(),
        trainable_params: model.trainable_count(),
        total_params: model.total_count(),
        param_hash: model.param_hash(),
    })
}
