#![allow(dead_code)]

use jscn::graph::BipartiteDomain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected-enough bipartite graph: every user and item has at least
/// one edge, plus extra edges with probability `density`.
pub fn random_domain(seed: u64, n_users: usize, n_items: usize, density: f64) -> BipartiteDomain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![vec![false; n_items]; n_users];
    for row in adj.iter_mut() {
        let i = rng.random_range(0..n_items);
        row[i] = true;
    }
    for i in 0..n_items {
        if !adj.iter().any(|row| row[i]) {
            let u = rng.random_range(0..n_users);
            adj[u][i] = true;
        }
    }
    for row in adj.iter_mut() {
        for x in row.iter_mut() {
            if rng.random::<f64>() < density {
                *x = true;
            }
        }
    }
    let edges = (0..n_users)
        .flat_map(|u| (0..n_items).filter(|&i| adj[u][i]).map(move |i| (u, i)).collect::<Vec<_>>())
        .collect();
    BipartiteDomain::new(
        (0..n_users).map(|u| format!("u{u}")).collect(),
        (0..n_items).map(|i| format!("i{i}")).collect(),
        edges,
        "random",
    )
    .unwrap()
}

pub fn max_abs_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use jscn::data::{generate_synthetic, DatasetBundle, SynthSpec};
use jscn::model::EmbeddingSet;
use ndarray::Array2;
use rand_distr::StandardNormal;

/// Gaussian user and item embeddings of width `d`.
pub fn random_embeddings(seed: u64, n_users: usize, n_items: usize, d: usize) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r, c| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
    let v_user = draw(n_users, d);
    let v_item = draw(n_items, d);
    EmbeddingSet { u_invariant: v_user.clone(), v_user, v_item }
}

/// A small synthetic bundle with at most 20 target users.
pub fn tiny_bundle(seed: u64) -> DatasetBundle {
    let spec = SynthSpec {
        users_per_domain: 20,
        items_per_domain: 30,
        edge_bias: -0.5,
        target_density: 1.0,
        min_degree: 3,
        ..Default::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

/// Brute-force metrics for one K: scores by explicit loops, rank of an item
/// by counting the eligible items placed before it.
pub fn brute_force_metrics(
    emb: &EmbeddingSet,
    train: &[Vec<usize>],
    test: &[Vec<usize>],
    k: usize,
) -> (f64, f64, usize) {
    let n_items = emb.v_item.nrows();
    let mut recall_sum = 0.0;
    let mut ap_sum = 0.0;
    let mut n = 0;
    for u in 0..emb.v_user.nrows() {
        if test[u].is_empty() {
            continue;
        }
        let score = |i: usize| {
            let mut s = 0.0;
            for c in 0..emb.v_user.ncols() {
                s += emb.v_user[[u, c]] * emb.v_item[[i, c]];
            }
            s
        };
        let eligible: Vec<usize> = (0..n_items).filter(|i| !train[u].contains(i)).collect();
        let rank = |i: usize| {
            1 + eligible
                .iter()
                .filter(|&&j| score(j) > score(i) || (score(j) == score(i) && j < i))
                .count()
        };
        let mut ranks: Vec<usize> = test[u].iter().map(|&i| rank(i)).collect();
        ranks.sort_unstable();
        let hits = ranks.iter().filter(|&&r| r <= k).count();
        recall_sum += hits as f64 / test[u].len() as f64;
        let mut ap = 0.0;
        for (h, &r) in ranks.iter().enumerate().filter(|(_, &r)| r <= k) {
            ap += (h + 1) as f64 / r as f64;
        }
        ap_sum += ap / k.min(test[u].len()) as f64;
        n += 1;
    }
    (recall_sum / n as f64, ap_sum / n as f64, n)
}
