//! Central finite-difference gradient oracle.
//!
//! The checked function is rebuilt from scratch for every perturbation, so the
//! oracle only relies on forward evaluation.

use cryda_core::{Graph, Tensor, Var};

/// Relative error with a small floor so that exact zeros compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `backward` and central differences over every
/// element of every input.
pub fn max_rel_err<F>(inputs: &[Tensor<f64>], eps: f64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    max_rel_err_against(inputs, eps, &build, &build)
}

/// As [`max_rel_err`], but the differences are taken of `oracle`, a function
/// whose true gradient equals the one `build` back-propagates. Needed where
/// `build` contains stop-gradients.
pub fn max_rel_err_against<F, O>(inputs: &[Tensor<f64>], eps: f64, build: F, oracle: O) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    O: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let loss = oracle(&mut g, &vars);
        g.value(loss).item().unwrap()
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Reduces any output to a scalar through a fixed random projection.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let n = g.value(y).numel();
    let shape = g.shape(y).to_vec();
    let weights = Tensor::new(shape, uniform(n, seed, -1.0, 1.0)).unwrap();
    let w = g.constant(weights);
    let prod = g.mul(y, w).unwrap();
    g.sum(prod)
}

/// Deterministic uniform values from a 64-bit LCG; independent of the crate's RNG plumbing.
pub fn uniform(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            lo + (hi - lo) * u
        })
        .collect()
}

/// Values in `[lo, hi]` whose pairwise gaps and distance from zero all exceed `gap`,
/// so that ReLU and max-pool kinks are never crossed by a perturbation.
pub fn separated(n: usize, seed: u64, gap: f64) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * gap * 3.0).collect();
    let signs = uniform(n, seed, 0.0, 1.0);
    for (v, s) in vals.iter_mut().zip(&signs) {
        if *s < 0.5 {
            *v = -*v;
        }
    }
    // shuffle deterministically
    let keys = uniform(n, seed ^ 0x9e37_79b9, 0.0, 1.0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap());
    idx.into_iter().map(|i| vals[i]).collect()
}

pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(n, seed, -1.0, 1.0)).unwrap()
}
