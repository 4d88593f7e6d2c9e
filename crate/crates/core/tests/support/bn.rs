//! Replay oracle for batch-norm statistics adaptation.

use cryda_core::autodiff::BnMode;
use cryda_core::model::ModelState;
use cryda_core::{Graph, Tensor};

/// Per-channel mean and biased variance of a `[b, c, h, w]` tensor.
pub fn channel_moments(y: &Tensor<f32>) -> Vec<(f64, f64)> {
    let (b, c, hw) = (y.shape()[0], y.shape()[1], y.shape()[2] * y.shape()[3]);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..b)
                .flat_map(|i| y.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|&v| v as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (mean, vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Worst relative gap between the running statistics of `after` and the
/// batch moments of `batch`, layer by layer. Each layer's input is produced
/// with the statistics of `before`, which is what a single statistics-only
/// pass normalizes with.
pub fn momentum_one_deviation(before: &ModelState, after: &ModelState, batch: &Tensor<f32>) -> f64 {
    let (pad, pool) = (before.config.kernel / 2, before.config.pool);
    let mut g = Graph::<f32>::new();
    let mut x = g.constant(batch.clone());
    let mut worst = 0.0f64;
    for (i, old) in before.bn.iter().enumerate() {
        let p = |n: &str| before.param(&format!("block{i}.{n}")).unwrap().value.clone();
        let (w, gamma, beta) = (g.constant(p("conv.weight")), g.constant(p("bn.gamma")), g.constant(p("bn.beta")));
        let y = g.conv2d(x, w, 1, pad).unwrap();
        for (ch, (mean, var)) in channel_moments(g.value(y)).into_iter().enumerate() {
            let (rm, rv) = (after.bn[i].running_mean[ch] as f64, after.bn[i].running_var[ch] as f64);
            worst = worst.max((rm - mean).abs() / mean.abs().max(1.0)).max((rv - var).abs() / var.max(1.0));
        }
        let mut state = old.clone();
        let y = g.batchnorm(y, gamma, beta, &mut state, BnMode::Eval).unwrap();
        let y = g.relu(y);
        x = g.max_pool2d(y, pool).unwrap();
    }
    worst
}
