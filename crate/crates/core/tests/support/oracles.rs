//! Independent oracles for the evaluation metrics.

use cryda_core::evaldiag::{auc, mean_stderr, wasserstein1d, Histogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

pub fn random_set(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(2..60);
    // coarse grid so ties are common
    let levels = r.random_range(2..12);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

pub fn random_hist(r: &mut ChaCha8Rng) -> Histogram {
    let mut h = Histogram::new(250.0, 1000.0, 10.0).unwrap();
    let centre = r.random_range(300.0..900.0);
    for _ in 0..r.random_range(1..300) {
        h.add(centre + r.random_range(-120.0..120.0));
    }
    h
}

/// W1 between the empirical distributions that put each count at its bin
/// centre, computed by transporting sorted samples between equal quantiles.
pub fn quantile_w1(a: &Histogram, b: &Histogram) -> f64 {
    let expand = |h: &Histogram| -> Vec<f64> {
        h.rows().flat_map(|(c, n)| std::iter::repeat_n(c, n as usize)).collect()
    };
    let (xa, xb) = (expand(a), expand(b));
    // integrate |F_a^{-1}(u) − F_b^{-1}(u)| over u on the merged quantile grid
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut cuts: Vec<f64> = (1..xa.len()).map(|i| i as f64 / na).chain((1..xb.len()).map(|j| j as f64 / nb)).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut w = 0.0;
    for win in cuts.windows(2) {
        let (u0, u1) = (win[0], win[1]);
        if u1 <= u0 {
            continue;
        }
        let mid = 0.5 * (u0 + u1);
        let ia = ((mid * na) as usize).min(xa.len() - 1);
        let ib = ((mid * nb) as usize).min(xb.len() - 1);
        w += (xa[ia] - xb[ib]).abs() * (u1 - u0);
    }
    w
}

pub fn two_pass(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt() / n.sqrt())
}

/// Random score sets on which `auc` disagrees with pair counting.
pub fn auc_mismatches(seed: u64, sets: usize) -> usize {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..sets)
        .filter(|_| {
            let (s, l) = random_set(&mut r);
            auc(&s, &l).unwrap() != brute_auc(&s, &l)
        })
        .count()
}

/// Worst relative gap between `wasserstein1d` and the quantile oracle.
pub fn w1_max_rel_err(seed: u64, pairs: usize) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let (a, b) = (random_hist(&mut r), random_hist(&mut r));
            let (w, o) = (wasserstein1d(&a, &b).unwrap(), quantile_w1(&a, &b));
            (w - o).abs() / o.max(1e-12)
        })
        .fold(0.0, f64::max)
}

/// Worst absolute gap between `mean_stderr` and the two-pass oracle.
pub fn stderr_max_abs_err(seed: u64, sets: usize) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..sets)
        .map(|_| {
            let v: Vec<f64> = (0..r.random_range(2..40)).map(|_| r.random_range(-5.0..5.0) + 1e3).collect();
            let ((m, se), (om, ose)) = (mean_stderr(&v).unwrap(), two_pass(&v));
            (m - om).abs().max((se - ose).abs())
        })
        .fold(0.0, f64::max)
}
