//! Objectives of the adaptation methods, generic over the tape precision so
//! that the same code can be checked in f64.

use crate::autodiff::{Graph, NormPenalty, Real, Var};
use crate::error::Result;

/// A scalar objective and the weighted contributions that sum to it.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub terms: Vec<(&'static str, Var)>,
}

impl Objective {
    fn from_terms<T: Real>(g: &mut Graph<T>, terms: Vec<(&'static str, Var)>) -> Result<Self> {
        let mut total = terms[0].1;
        for &(_, v) in &terms[1..] {
            total = g.add(total, v)?;
        }
        Ok(Objective { total, terms })
    }

    /// Term values as f64.
    pub fn values<T: Real>(&self, g: &Graph<T>) -> Vec<(&'static str, f64)> {
        self.terms
            .iter()
            .map(|&(n, v)| (n, g.value(v).data()[0].as_f64()))
            .collect()
    }
}

pub fn supervised<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Objective> {
    let ce = g.softmax_cross_entropy(logits, labels)?;
    Objective::from_terms(g, vec![("ce", ce)])
}

/// Source cross-entropy plus `λ·H(softmax(target logits))`.
pub fn entropy_min<T: Real>(
    g: &mut Graph<T>,
    src_logits: Var,
    labels: &[usize],
    tgt_logits: Var,
    lambda: f64,
) -> Result<Objective> {
    let ce = g.softmax_cross_entropy(src_logits, labels)?;
    let p = g.softmax(tgt_logits)?;
    let h = g.entropy(p)?;
    let wh = g.scale(h, lambda);
    Objective::from_terms(g, vec![("ce", ce), ("entropy", wh)])
}

/// Source cross-entropy plus `λ·(penalty(source) + penalty(target))` on embeddings.
pub fn feature_norm<T: Real>(
    g: &mut Graph<T>,
    src_logits: Var,
    labels: &[usize],
    src_emb: Var,
    tgt_emb: Var,
    penalty: NormPenalty,
    lambda: f64,
) -> Result<Objective> {
    let ce = g.softmax_cross_entropy(src_logits, labels)?;
    let ps = g.feature_norm_penalty(src_emb, penalty)?;
    let pt = g.feature_norm_penalty(tgt_emb, penalty)?;
    let ps = g.scale(ps, lambda);
    let pt = g.scale(pt, lambda);
    Objective::from_terms(g, vec![("ce", ce), ("norm_source", ps), ("norm_target", pt)])
}

/// Logits of the source head and the target head for one batch.
#[derive(Clone, Copy, Debug)]
pub struct HeadPair {
    pub source_head: Var,
    pub target_head: Var,
}

fn joint<T: Real>(g: &mut Graph<T>, h: HeadPair) -> Result<(Var, usize)> {
    let k = g.shape(h.source_head)[1];
    Ok((g.concat_cols(h.source_head, h.target_head)?, k))
}

/// Mean over rows of `log Σ_{j∈half} softmax(z)_j`.
fn log_half_mass<T: Real>(g: &mut Graph<T>, z: Var, k: usize, second: bool) -> Result<Var> {
    let half = if second { g.slice_cols(z, k, 2 * k)? } else { g.slice_cols(z, 0, k)? };
    let part = g.logsumexp_rows(half)?;
    let all = g.logsumexp_rows(z)?;
    let neg = g.scale(all, -1.0);
    let diff = g.add(part, neg)?;
    Ok(g.mean(diff))
}

/// Loss of the two heads: each head is supervised on source labels, and the
/// joint `2K`-way softmax is trained to tell source samples (first half) from
/// target samples (second half).
pub fn symnet_classifier<T: Real>(
    g: &mut Graph<T>,
    src: HeadPair,
    tgt: HeadPair,
    labels: &[usize],
) -> Result<Objective> {
    let ce_s = g.softmax_cross_entropy(src.source_head, labels)?;
    let ce_t = g.softmax_cross_entropy(src.target_head, labels)?;
    let (zs, k) = joint(g, src)?;
    let (zt, _) = joint(g, tgt)?;
    let ls = log_half_mass(g, zs, k, false)?;
    let lt = log_half_mass(g, zt, k, true)?;
    let dd_s = g.scale(ls, -1.0);
    let dd_t = g.scale(lt, -1.0);
    Objective::from_terms(
        g,
        vec![("ce_source_head", ce_s), ("ce_target_head", ce_t), ("domain_source", dd_s), ("domain_target", dd_t)],
    )
}

/// Encoder loss: category-level confusion on labelled source samples, plus
/// `λ·(domain confusion + entropy of the summed halves)` on target samples.
pub fn symnet_encoder<T: Real>(
    g: &mut Graph<T>,
    src: HeadPair,
    tgt: HeadPair,
    labels: &[usize],
    lambda: f64,
) -> Result<Objective> {
    let (zs, k) = joint(g, src)?;
    let ls = g.log_softmax(zs)?;
    let shifted: Vec<usize> = labels.iter().map(|&y| y + k).collect();
    let a = g.gather(ls, labels)?;
    let b = g.gather(ls, &shifted)?;
    let ab = g.add(a, b)?;
    let m = g.mean(ab);
    let category = g.scale(m, -0.5);

    let (zt, _) = joint(g, tgt)?;
    let first = log_half_mass(g, zt, k, false)?;
    let second = log_half_mass(g, zt, k, true)?;
    let both = g.add(first, second)?;
    let domain = g.scale(both, -0.5 * lambda);

    let p = g.softmax(zt)?;
    let p1 = g.slice_cols(p, 0, k)?;
    let p2 = g.slice_cols(p, k, 2 * k)?;
    let q = g.add(p1, p2)?;
    let h = g.entropy(q)?;
    let ent = g.scale(h, lambda);
    Objective::from_terms(g, vec![("category_confusion", category), ("domain_confusion", domain), ("entropy", ent)])
}
