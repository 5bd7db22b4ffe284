use ndarray::ArrayView1;

use super::{SharedUserIndex, TrainConfig, TripleBatch};
use crate::model::EmbeddingSet;

/// Component losses of one joint evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub in_domain: Vec<f64>,
    pub cross: f64,
    pub reg: f64,
    pub total: f64,
}

/// `-ln σ(x)`, evaluated without overflow.
#[inline]
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

/// BPR loss summed over the batch.
pub fn in_domain_loss(emb: &EmbeddingSet, batch: &TripleBatch) -> f64 {
    batch
        .triples
        .iter()
        .map(|&(r, j, jn)| {
            let u = emb.v_user.row(r);
            let gap = dot(u, emb.v_item.row(j)) - dot(u, emb.v_item.row(jn));
            neg_log_sigmoid(gap)
        })
        .sum()
}

/// Distance between invariant representations of every shared user, summed
/// over all unordered domain pairs.
pub fn cross_domain_loss(embs: &[EmbeddingSet], shared: &SharedUserIndex, squared: bool) -> f64 {
    let mut total = 0.0;
    for (m, n, rows) in shared.unordered() {
        for &(a, b) in rows {
            let ua = embs[m].u_invariant.row(a);
            let ub = embs[n].u_invariant.row(b);
            let sq: f64 = ua.iter().zip(ub.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            total += if squared { sq } else { sq.sqrt() };
        }
    }
    total
}

/// `ε · Σ ‖V^u‖²_F` over all domains, optionally including item matrices.
pub fn regularization(embs: &[EmbeddingSet], epsilon: f64, include_items: bool) -> f64 {
    if epsilon == 0.0 {
        return 0.0;
    }
    let sum: f64 = embs
        .iter()
        .map(|e| {
            let users: f64 = e.v_user.iter().map(|x| x * x).sum();
            let items: f64 = if include_items {
                e.v_item.iter().map(|x| x * x).sum()
            } else {
                0.0
            };
            users + items
        })
        .sum();
    epsilon * sum
}

/// Total objective `Σ L_in + μ·L_c + Reg` with its components.
pub fn total_loss(
    embs: &[EmbeddingSet],
    batches: &[TripleBatch],
    shared: &SharedUserIndex,
    cfg: &TrainConfig,
) -> LossBreakdown {
    let in_domain: Vec<f64> = embs.iter().zip(batches).map(|(e, b)| in_domain_loss(e, b)).collect();
    let cross = cross_domain_loss(embs, shared, cfg.squared_cross);
    let reg = regularization(embs, cfg.reg_epsilon, cfg.reg_items);
    combine(in_domain, cross, reg, cfg.cross_weight)
}

pub(crate) fn combine(in_domain: Vec<f64>, cross: f64, reg: f64, mu: f64) -> LossBreakdown {
    let total = in_domain.iter().sum::<f64>() + mu * cross + reg;
    LossBreakdown {
        in_domain,
        cross,
        reg,
        total,
    }
}
