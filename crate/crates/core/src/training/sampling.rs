use rand::Rng;

use crate::error::{JscnError, Result};

/// BPR triples `(user, observed item, unobserved item)` from one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleBatch {
    pub triples: Vec<(usize, usize, usize)>,
    pub domain_id: usize,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

pub(crate) fn check_negatives(items_by_user: &[Vec<usize>], n_items: usize) -> Result<()> {
    match items_by_user.iter().position(|items| items.len() >= n_items) {
        Some(u) => Err(JscnError::NoNegativeItems(u)),
        None => Ok(()),
    }
}

/// Draws `batch_size` triples: an observed edge uniformly at random, then a
/// negative item uniformly among the user's unobserved items (by rejection).
///
/// `items_by_user[u]` must be sorted.
pub fn sample_triples<R: Rng + ?Sized>(
    edges: &[(usize, usize)],
    items_by_user: &[Vec<usize>],
    n_items: usize,
    batch_size: usize,
    rng: &mut R,
    domain_id: usize,
) -> Result<TripleBatch> {
    if edges.is_empty() {
        return Err(JscnError::InvalidDomain("no training edges to sample".into()));
    }
    check_negatives(items_by_user, n_items)?;
    let mut triples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (u, pos) = edges[rng.random_range(0..edges.len())];
        let observed = &items_by_user[u];
        let neg = loop {
            let j = rng.random_range(0..n_items);
            if observed.binary_search(&j).is_err() {
                break j;
            }
        };
        triples.push((u, pos, neg));
    }
    Ok(TripleBatch { triples, domain_id })
}
