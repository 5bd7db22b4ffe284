//! Full-ranking evaluation with Recall@K and MAP@K.
//!
//! Candidates for a user are all items minus that user's training items.
//! Ranking is by descending dot-product score, ties broken by ascending
//! item index.

use std::collections::BTreeMap;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{JscnError, Result};
use crate::model::{predict_scores, EmbeddingSet};

pub const DEFAULT_KS: [usize; 5] = [20, 40, 60, 80, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall_at: BTreeMap<usize, f64>,
    pub map_at: BTreeMap<usize, f64>,
    pub n_users_evaluated: usize,
}

impl EvalReport {
    /// Aligned plain-text table, one row per K.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6}  {:>10}  {:>10}\n", "K", "Recall@K", "MAP@K");
        for k in &self.ks {
            out.push_str(&format!(
                "{:>6}  {:>10.6}  {:>10.6}\n",
                k, self.recall_at[k], self.map_at[k]
            ));
        }
        out.push_str(&format!("users evaluated: {}\n", self.n_users_evaluated));
        out
    }
}

/// Metrics of one user, aligned with the report's `ks`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ap: Vec<f64>,
}

/// Orders the items not in `train_items` by descending score.
pub fn rank_by_scores(scores: ArrayView1<f64>, train_items: &[usize]) -> Vec<usize> {
    let mut excluded = vec![false; scores.len()];
    for &i in train_items {
        if i < excluded.len() {
            excluded[i] = true;
        }
    }
    let mut ranked: Vec<usize> = (0..scores.len()).filter(|&i| !excluded[i]).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked
}

pub fn rank_items_for_user(emb: &EmbeddingSet, user: usize, train_items: &[usize]) -> Vec<usize> {
    let scores = predict_scores(emb.v_user.row(user), emb.v_item.view());
    rank_by_scores(scores.view(), train_items)
}

/// `|top-K ∩ relevant| / |relevant|`. `relevant` must be sorted.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(JscnError::EmptyRelevant);
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Average precision truncated at K, normalized by `min(K, |relevant|)`.
/// `relevant` must be sorted.
pub fn map_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(JscnError::EmptyRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / k.min(relevant.len()) as f64)
}

/// Macro-averaged metrics over users with at least one held-out item.
///
/// `train_by_user[u]` and `test_by_user[u]` are sorted item lists.
pub fn evaluate(
    emb: &EmbeddingSet,
    train_by_user: &[Vec<usize>],
    test_by_user: &[Vec<usize>],
    ks: &[usize],
) -> Result<(EvalReport, Vec<UserMetrics>)> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(JscnError::Config("ks must be a nonempty list of positive integers".into()));
    }
    let n_users = emb.v_user.nrows();
    if train_by_user.len() != n_users || test_by_user.len() != n_users {
        return Err(crate::error::shape_err(
            "evaluate user count",
            n_users,
            format!("{} train, {} test lists", train_by_user.len(), test_by_user.len()),
        ));
    }
    let mut per_user = Vec::new();
    for u in 0..n_users {
        let relevant = &test_by_user[u];
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_items_for_user(emb, u, &train_by_user[u]);
        let recall = ks
            .iter()
            .map(|&k| recall_at_k(&ranked, relevant, k))
            .collect::<Result<Vec<_>>>()?;
        let ap = ks
            .iter()
            .map(|&k| map_at_k(&ranked, relevant, k))
            .collect::<Result<Vec<_>>>()?;
        per_user.push(UserMetrics { user: u, recall, ap });
    }
    if per_user.is_empty() {
        return Err(JscnError::NoEvaluableUsers);
    }
    let n = per_user.len() as f64;
    let mut recall_at = BTreeMap::new();
    let mut map_at = BTreeMap::new();
    for (j, &k) in ks.iter().enumerate() {
        let r: f64 = per_user.iter().map(|m| m.recall[j]).sum();
        let a: f64 = per_user.iter().map(|m| m.ap[j]).sum();
        recall_at.insert(k, r / n);
        map_at.insert(k, a / n);
    }
    Ok((
        EvalReport {
            ks: ks.to_vec(),
            recall_at,
            map_at,
            n_users_evaluated: per_user.len(),
        },
        per_user,
    ))
}
