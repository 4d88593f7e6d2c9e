//! Linear domain probe on frozen eval-mode embeddings.

use cryda_core::model::ModelState;
use cryda_core::uda::{crop_frames, stack_batch, Sample, TrainData};
use cryda_core::Tensor;

/// Logistic-regression domain probe on frozen eval-mode embeddings:
/// fit on the train splits, score on the test splits.
pub fn domain_probe_accuracy(model: &mut ModelState, d: &TrainData, window: Option<usize>) -> f64 {
    let model_dim = model.config.embedding_dim;
    let feats = |m: &mut ModelState, s: &[Sample]| -> Vec<Vec<f64>> {
        let e = evaluate_embeddings(m, s, window);
        e.chunks(model_dim).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    };
    let (xs, xt) = (feats(model, &d.source.train), feats(model, &d.target.train));
    let (ys, yt) = (feats(model, &d.source.test), feats(model, &d.target.test));
    let train: Vec<(Vec<f64>, f64)> = xs.into_iter().map(|x| (x, 0.0)).chain(xt.into_iter().map(|x| (x, 1.0))).collect();
    let dim = train[0].0.len();
    let mu: Vec<f64> = (0..dim).map(|j| train.iter().map(|(x, _)| x[j]).sum::<f64>() / train.len() as f64).collect();
    let sd: Vec<f64> = (0..dim)
        .map(|j| (train.iter().map(|(x, _)| (x[j] - mu[j]).powi(2)).sum::<f64>() / train.len() as f64).sqrt().max(1e-8))
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mu[j]) / sd[j]).collect() };
    let train: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (z(x), *y)).collect();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    for _ in 0..500 {
        let (mut gw, mut gb) = (vec![0.0; dim], 0.0);
        for (x, y) in &train {
            let p = 1.0 / (1.0 + (-(b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())).exp());
            for j in 0..dim {
                gw[j] += (p - y) * x[j];
            }
            gb += p - y;
        }
        let n = train.len() as f64;
        for j in 0..dim {
            w[j] -= 0.5 * (gw[j] / n + 1e-3 * w[j]);
        }
        b -= 0.5 * gb / n;
    }
    let test: Vec<(Vec<f64>, f64)> = ys.into_iter().map(|x| (x, 0.0)).chain(yt.into_iter().map(|x| (x, 1.0))).collect();
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let s = b + z(x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (s > 0.0) == (*y > 0.5)
        })
        .count();
    correct as f64 / test.len() as f64
}

pub fn evaluate_embeddings(model: &mut ModelState, samples: &[Sample], window: Option<usize>) -> Vec<f32> {
    let mut out = Vec::new();
    for chunk in samples.chunks(64) {
        let feats: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|s| {
                let t = s.features.shape()[0];
                let w = window.unwrap_or(t).min(t);
                crop_frames(&s.features, (t - w) / 2, w).unwrap()
            })
            .collect();
        let (_, e) = model.predict(stack_batch(&feats).unwrap()).unwrap();
        out.extend_from_slice(e.data());
    }
    out
}

