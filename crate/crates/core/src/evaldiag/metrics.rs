use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney statistic, ties counting ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc", &[scores.len()], &[labels.len()]));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("auc scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic keeps everything integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut p, mut n) = (0u128, 0u128);
        for &k in &order[i..j] {
            if labels[k] {
                p += 1;
            } else {
                n += 1;
            }
        }
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean and standard error (sample sd with n − 1, over √n).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "standard error needs at least 2 values, got {n}"
        )));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let var = (m2 / (n - 1) as f64).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// Fixed-width histogram over `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(hi > lo && width > 0.0) {
            return Err(Error::Parameter(format!(
                "histogram needs hi > lo and width > 0 (lo {lo}, hi {hi}, width {width})"
            )));
        }
        let n = ((hi - lo) / width).round() as usize;
        let edges = (0..=n).map(|i| lo + i as f64 * width).collect();
        Ok(Histogram { edges, counts: vec![0; n], total: 0 })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Adds `v` if it falls in range; the top edge belongs to the last bin.
    pub fn add(&mut self, v: f64) -> bool {
        let (lo, hi) = (self.edges[0], self.edges[self.bins()]);
        if !(v >= lo && v <= hi) {
            return false;
        }
        let i = (((v - lo) / self.width()) as usize).min(self.bins() - 1);
        self.counts[i] += 1;
        self.total += 1;
        true
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(bin centre, count)` pairs.
    pub fn rows(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.edges.windows(2).zip(&self.counts).map(|(e, &c)| (0.5 * (e[0] + e[1]), c))
    }
}

/// Earth mover's distance between two normalized histograms on equal edges.
pub fn wasserstein1d(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges.len() != b.edges.len()
        || a.edges.iter().zip(&b.edges).any(|(x, y)| (x - y).abs() > 1e-9)
    {
        return Err(Error::MismatchedEdges);
    }
    if a.total == 0 || b.total == 0 {
        return Err(Error::EmptyOutput("wasserstein1d of an empty histogram".into()));
    }
    let (ta, tb) = (a.total as f64, b.total as f64);
    let (mut ca, mut cb, mut w) = (0.0, 0.0, 0.0);
    for (i, (&x, &y)) in a.counts.iter().zip(&b.counts).enumerate() {
        ca += x as f64 / ta;
        cb += y as f64 / tb;
        w += (ca - cb).abs() * (a.edges[i + 1] - a.edges[i]);
    }
    Ok(w)
}
