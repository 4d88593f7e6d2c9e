//! Gradient checks shared by the unit suite and the acceptance harness. Each
//! check returns the worst relative error it saw.

use cryda_core::autodiff::{BnMode, BnState, NormPenalty};
use cryda_core::model::{init_model, Bound, EncoderConfig, FreezePolicy, ModelState};
use cryda_core::uda::losses::{self, HeadPair};
use cryda_core::uda::Method;
use cryda_core::{Graph, Tensor, Var};

use super::fd::{max_rel_err, max_rel_err_against, project, rel_err, separated, tensor, uniform};

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-4;

pub fn linear() -> f64 {
    (0..3)
        .map(|seed| {
            let inputs = [tensor(&[4, 3], seed), tensor(&[3, 2], seed + 10), tensor(&[2], seed + 20)];
            max_rel_err(&inputs, EPS, |g, v| {
                let y = g.linear(v[0], v[1], v[2]).unwrap();
                project(g, y, 99)
            })
        })
        .fold(0.0, f64::max)
}

pub fn conv2d() -> f64 {
    [(0, 1, 0), (1, 1, 1), (2, 2, 1)]
        .into_iter()
        .map(|(seed, stride, pad)| {
            let inputs = [tensor(&[2, 2, 5, 4], seed), tensor(&[3, 2, 3, 3], seed + 7)];
            max_rel_err(&inputs, EPS, |g, v| {
                let y = g.conv2d(v[0], v[1], stride, pad).unwrap();
                project(g, y, 5)
            })
        })
        .fold(0.0, f64::max)
}

pub fn batchnorm() -> f64 {
    [(vec![4, 3], BnMode::Train), (vec![3, 2, 2, 3], BnMode::Train), (vec![4, 3], BnMode::Eval)]
        .into_iter()
        .map(|(shape, mode)| {
            let c = shape[1];
            let mut x = tensor(&shape, 3);
            x.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            let inputs = [x, tensor(&[c], 4), tensor(&[c], 5)];
            max_rel_err(&inputs, EPS, |g, v| {
                let mut st = BnState::new(c, 0.1, 1e-5);
                st.running_mean = vec![0.2; c];
                st.running_var = vec![1.5; c];
                let y = g.batchnorm(v[0], v[1], v[2], &mut st, mode).unwrap();
                project(g, y, 8)
            })
        })
        .fold(0.0, f64::max)
}

pub fn relu_and_pooling() -> f64 {
    let x = Tensor::new(vec![2, 2, 4, 4], separated(64, 1, 2.0 * EPS)).unwrap();
    max_rel_err(&[x], EPS, |g, v| {
        let r = g.relu(v[0]);
        let p = g.max_pool2d(r, 2).unwrap();
        let m = g.global_mean_pool(p).unwrap();
        project(g, m, 2)
    })
}

pub fn softmax_cross_entropy() -> f64 {
    (0..3)
        .map(|seed| {
            let mut z = tensor(&[5, 3], seed);
            z.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            max_rel_err(&[z], EPS, |g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 1, 0]).unwrap())
        })
        .fold(0.0, f64::max)
}

pub fn entropy_of_softmax() -> f64 {
    max_rel_err(&[tensor(&[4, 3], 11)], EPS, |g, v| {
        let p = g.softmax(v[0]).unwrap();
        g.entropy(p).unwrap()
    })
}

pub fn log_softmax_family() -> f64 {
    max_rel_err(&[tensor(&[3, 4], 12)], EPS, |g, v| {
        let ls = g.log_softmax(v[0]).unwrap();
        let picked = g.gather(ls, &[0, 3, 1]).unwrap();
        let half = g.slice_cols(v[0], 0, 2).unwrap();
        let lse = g.logsumexp_rows(half).unwrap();
        let both = g.concat_rows(picked, lse).unwrap();
        project(g, both, 4)
    })
}

pub fn hard_norm_penalty() -> f64 {
    max_rel_err(&[tensor(&[4, 5], 21)], EPS, |g, v| {
        g.feature_norm_penalty(v[0], NormPenalty::Hard { radius: 3.0 }).unwrap()
    })
}

/// The stepwise target is a stop-gradient copy of the current norm, so the
/// oracle differentiates `mean_i (‖f_i‖ − c_i)²` with `c_i = ‖f_i‖ + Δr`
/// frozen at the input.
pub fn stepwise_norm_penalty() -> f64 {
    let f = tensor(&[4, 5], 21);
    let (step, b, d) = (0.2, 4, 5);
    let norm = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let targets: Vec<f64> = f.data().chunks(d).map(|r| norm(r) + step).collect();
    let frozen =
        |data: &[f64]| data.chunks(d).zip(&targets).map(|(r, t)| (norm(r) - t).powi(2)).sum::<f64>() / b as f64;
    let mut g = Graph::<f64>::new();
    let fv = g.param(f.clone());
    let loss = g.feature_norm_penalty(fv, NormPenalty::Stepwise { step }).unwrap();
    assert!((g.value(loss).item().unwrap() - step * step).abs() < 1e-12);
    g.backward(loss).unwrap();
    let analytic = g.grad(fv).unwrap().to_vec();
    let mut worst = 0.0f64;
    for j in 0..f.numel() {
        let mut plus = f.data().to_vec();
        plus[j] += EPS;
        let mut minus = f.data().to_vec();
        minus[j] -= EPS;
        let numeric = (frozen(&plus) - frozen(&minus)) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic[j], numeric));
    }
    worst
}

pub fn structural() -> f64 {
    let inputs = [tensor(&[3, 2], 31), tensor(&[3, 2], 32)];
    max_rel_err(&inputs, EPS, |g, v| {
        let m = g.mul(v[0], v[1]).unwrap();
        let s = g.scale(m, -1.5);
        let a = g.add(s, v[1]).unwrap();
        let c = g.concat_cols(a, v[1]).unwrap();
        let rows = g.slice_rows(c, 1, 3).unwrap();
        let p = project(g, rows, 6);
        let mean = g.mean(v[0]);
        let both = g.add(p, mean).unwrap();
        g.sum(both)
    })
}

/// Gradient reversal is checked against the negated, scaled forward gradient.
pub fn grad_reverse() -> f64 {
    let x = tensor(&[2, 3], 41);
    let w = uniform(6, 42, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let xv = g.param(x);
    let r = g.grad_reverse(xv, 0.25).unwrap();
    let wv = g.constant(Tensor::new(vec![2, 3], w.clone()).unwrap());
    let m = g.mul(r, wv).unwrap();
    let l = g.sum(m);
    g.backward(l).unwrap();
    g.grad(xv).unwrap().iter().zip(&w).map(|(gv, wv)| rel_err(*gv, -0.25 * wv)).fold(0.0, f64::max)
}

pub const PRIMITIVES: &[(&str, fn() -> f64)] = &[
    ("linear", linear),
    ("conv2d", conv2d),
    ("batchnorm", batchnorm),
    ("relu/max_pool/mean_pool", relu_and_pooling),
    ("softmax_cross_entropy", softmax_cross_entropy),
    ("entropy∘softmax", entropy_of_softmax),
    ("log_softmax/gather/logsumexp", log_softmax_family),
    ("feature_norm_penalty(hard)", hard_norm_penalty),
    ("feature_norm_penalty(stepwise)", stepwise_norm_penalty),
    ("mul/scale/add/concat/slice/mean/sum", structural),
    ("grad_reverse", grad_reverse),
];

/// Full-model objectives are checked on a two-block encoder with every
/// parameter free, in batch-statistics mode, on a joint source+target batch
/// exactly as the trainer builds it.
const SRC: usize = 3;
const TGT: usize = 3;
const LABELS: [usize; SRC] = [0, 1, 1];

fn tiny_model(heads: usize) -> ModelState {
    let cfg = EncoderConfig {
        n_mels: 8,
        channels: vec![3, 8],
        embedding_dim: 8,
        freeze: FreezePolicy::None,
        ..Default::default()
    };
    init_model(&cfg, 2, heads, 5).unwrap()
}

/// `mean_i ‖f_i‖` from two hard penalties: `(H(1) − H(2) + 3) / 2`.
fn mean_norm(g: &mut Graph<f64>, f: Var) -> Var {
    let h1 = g.feature_norm_penalty(f, NormPenalty::Hard { radius: 1.0 }).unwrap();
    let h2 = g.feature_norm_penalty(f, NormPenalty::Hard { radius: 2.0 }).unwrap();
    let neg = g.scale(h2, -1.0);
    let d = g.add(h1, neg).unwrap();
    let three = g.constant(Tensor::new(vec![], vec![3.0]).unwrap());
    let s = g.add(d, three).unwrap();
    g.scale(s, 0.5)
}

#[derive(Clone, Copy)]
enum Objective {
    Supervised,
    Em,
    Hafn,
    Safn,
    /// Stepwise penalty replaced by a function with the same gradient.
    SafnOracle,
    SymnetClassifier,
    SymnetEncoder,
}

fn objective(model: &ModelState, obj: Objective, g: &mut Graph<f64>, v: &[Var]) -> Var {
    let mut m = model.clone();
    let (params, input) = v.split_at(v.len() - 1);
    let bound = Bound { vars: params.to_vec() };
    let emb = m.encode(g, &bound, input[0]).unwrap();
    let n = SRC + TGT;
    let (lam, radius, step) = (0.3, 2.0, 0.5);
    if let Objective::SymnetClassifier | Objective::SymnetEncoder = obj {
        let h0 = m.head(g, &bound, emb, 0).unwrap();
        let h1 = m.head(g, &bound, emb, 1).unwrap();
        let mut pair = |lo, hi| HeadPair {
            source_head: g.slice_rows(h0, lo, hi).unwrap(),
            target_head: g.slice_rows(h1, lo, hi).unwrap(),
        };
        let (s, t) = (pair(0, SRC), pair(SRC, n));
        let o = match obj {
            Objective::SymnetClassifier => losses::symnet_classifier(g, s, t, &LABELS),
            _ => losses::symnet_encoder(g, s, t, &LABELS, lam),
        };
        return o.unwrap().total;
    }
    let logits = m.head(g, &bound, emb, 0).unwrap();
    let ls = g.slice_rows(logits, 0, SRC).unwrap();
    let lt = g.slice_rows(logits, SRC, n).unwrap();
    let es = g.slice_rows(emb, 0, SRC).unwrap();
    let et = g.slice_rows(emb, SRC, n).unwrap();
    let o = match obj {
        Objective::Supervised => losses::supervised(g, ls, &LABELS),
        Objective::Em => losses::entropy_min(g, ls, &LABELS, lt, lam),
        Objective::Hafn => losses::feature_norm(g, ls, &LABELS, es, et, NormPenalty::Hard { radius }, lam),
        Objective::Safn => losses::feature_norm(g, ls, &LABELS, es, et, NormPenalty::Stepwise { step }, lam),
        Objective::SafnOracle => {
            // d/dθ mean (‖f‖ − sg(‖f‖) − Δr)² = −2Δr · d/dθ mean ‖f‖
            let ce = g.softmax_cross_entropy(ls, &LABELS).unwrap();
            let ns = mean_norm(g, es);
            let nt = mean_norm(g, et);
            let both = g.add(ns, nt).unwrap();
            let pen = g.scale(both, -2.0 * step * lam);
            return g.add(ce, pen).unwrap();
        }
        _ => unreachable!(),
    };
    o.unwrap().total
}

/// Worst relative error over every parameter and the input for one method's
/// training objective. Unsupervised BN has no objective and TNI trains on
/// plain cross-entropy of augmented inputs, so both reduce to the supervised
/// check.
pub fn method_objective(method: Method) -> f64 {
    let heads = if method == Method::Symnet { 2 } else { 1 };
    let model = tiny_model(heads);
    let mut inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.cast()).collect();
    inputs.push(tensor(&[SRC + TGT, 1, 8, 8], 77));
    let check = |build: Objective, oracle: Objective| {
        max_rel_err_against(&inputs, 1e-5, |g, v| objective(&model, build, g, v), |g, v| objective(&model, oracle, g, v))
    };
    match method {
        Method::Baseline | Method::Bn | Method::Tni => check(Objective::Supervised, Objective::Supervised),
        Method::Em => check(Objective::Em, Objective::Em),
        Method::Hafn => check(Objective::Hafn, Objective::Hafn),
        Method::Safn => check(Objective::Safn, Objective::SafnOracle),
        Method::Symnet => check(Objective::SymnetClassifier, Objective::SymnetClassifier)
            .max(check(Objective::SymnetEncoder, Objective::SymnetEncoder)),
    }
}
