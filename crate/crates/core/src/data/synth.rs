//! Synthetic multi-domain datasets with planted cross-domain structure.
//!
//! Every user has one latent preference vector. Each source domain draws a
//! fraction of its users from the target's users, independently per source,
//! and those users keep their vector, so their behaviour in one domain
//! carries information about the others. Each domain can also give
//! every user a private component that no other domain sees, which makes
//! the domains only partly compatible.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bundle::default_category;
use super::{filter_min_interactions, split_train_test, DatasetBundle, EdgeSet};
use crate::error::{JscnError, Result};
use crate::model::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Domain 0 is the target, the rest are sources.
    pub n_domains: usize,
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    /// Fraction of each source domain's users that are target users, drawn
    /// independently for every source.
    pub shared_fraction: f64,
    /// Rank of the preference vector common to all domains.
    pub latent_rank: usize,
    /// Extra per-domain dimensions drawn independently for every
    /// (domain, user) pair.
    pub private_rank: usize,
    /// Edge probability is `σ(scale · ⟨user, item⟩ + bias)`.
    pub edge_probability_scale: f64,
    pub edge_bias: f64,
    /// Multiplies the target domain's edge odds; below 1 makes the target
    /// sparser than the sources.
    pub target_density: f64,
    pub test_fraction: f64,
    pub min_degree: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_domains: 2,
            users_per_domain: 300,
            items_per_domain: 200,
            shared_fraction: 0.3,
            latent_rank: 8,
            private_rank: 4,
            edge_probability_scale: 3.0,
            edge_bias: -3.0,
            target_density: 0.3,
            test_fraction: 0.2,
            min_degree: 5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 || self.users_per_domain == 0 || self.items_per_domain == 0 || self.latent_rank == 0 {
            return Err(JscnError::Config("synthetic sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(JscnError::Config("shared_fraction must lie in [0, 1]".into()));
        }
        if !(self.target_density > 0.0) {
            return Err(JscnError::Config("target_density must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, rank: usize, scale: f64) -> Vec<f64> {
    (0..rank)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect()
}

/// Draws a bundle; deterministic in `seed`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = spec.latent_rank;
    let full_rank = rank + spec.private_rank;
    // user and item entries scaled so that ⟨user, item⟩ has unit variance
    let item_scale = 1.0 / (full_rank as f64).sqrt();
    let n_shared = (spec.shared_fraction * spec.users_per_domain as f64).round() as usize;
    let target_users: Vec<(String, Vec<f64>)> = (0..spec.users_per_domain)
        .map(|k| (format!("u{k:04}"), gaussian_vec(&mut rng, rank, 1.0)))
        .collect();

    let mut domain_edges: Vec<EdgeSet> = Vec::with_capacity(spec.n_domains);
    for m in 0..spec.n_domains {
        let mut users: Vec<(String, Vec<f64>)> = if m == 0 {
            target_users.clone()
        } else {
            let mut picked = sample(&mut rng, target_users.len(), n_shared).into_vec();
            picked.sort_unstable();
            let mut users: Vec<_> = picked.into_iter().map(|k| target_users[k].clone()).collect();
            for k in n_shared..spec.users_per_domain {
                users.push((format!("d{m}u{k:04}"), gaussian_vec(&mut rng, rank, 1.0)));
            }
            users
        };
        for (_, v) in users.iter_mut() {
            v.extend(gaussian_vec(&mut rng, spec.private_rank, 1.0));
        }
        let items: Vec<Vec<f64>> = (0..spec.items_per_domain)
            .map(|_| gaussian_vec(&mut rng, full_rank, item_scale))
            .collect();
        let bias = spec.edge_bias + if m == 0 { spec.target_density.ln() } else { 0.0 };
        let mut edges = EdgeSet::new();
        for (uid, u) in &users {
            for (i, item) in items.iter().enumerate() {
                let score: f64 = u.iter().zip(item).map(|(a, b)| a * b).sum();
                let p = sigmoid(spec.edge_probability_scale * score + bias);
                if rng.random::<f64>() < p {
                    edges.insert((uid.clone(), format!("d{m}i{i:04}")));
                }
            }
        }
        let filtered = filter_min_interactions(&edges, spec.min_degree).map_err(|e| match e {
            JscnError::EliminatedByFiltering => JscnError::SyntheticEliminated(m),
            other => other,
        })?;
        domain_edges.push(filtered);
    }

    let (train, test) = split_train_test(&domain_edges[0], spec.test_fraction, rng.random())?;
    let categories: Vec<String> = (0..spec.n_domains).map(default_category).collect();
    let provenance = format!(
        "synthetic seed={seed} spec={}",
        serde_json::to_string(&serde_json::to_value(spec)?)?
    );
    let bundle = DatasetBundle::from_edges(&train, &test, &domain_edges[1..], &categories, provenance)?;
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            users_per_domain: 60,
            items_per_domain: 40,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small(), 4).unwrap();
        let b = generate_synthetic(&small(), 4).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.target_test, b.target_test);
        assert_eq!(a.sources, b.sources);
        let c = generate_synthetic(&small(), 5).unwrap();
        assert_ne!(a.target, c.target);
    }

    #[test]
    fn shared_fraction_extremes() {
        let none = generate_synthetic(
            &SynthSpec {
                shared_fraction: 0.0,
                ..small()
            },
            1,
        )
        .unwrap();
        assert!(none.shared.is_empty());
        let all = generate_synthetic(
            &SynthSpec {
                shared_fraction: 1.0,
                ..small()
            },
            1,
        )
        .unwrap();
        // every user that survived filtering in both domains is paired
        let target: std::collections::BTreeSet<_> = all.target.users().iter().collect();
        let source: std::collections::BTreeSet<_> = all.sources[0].users().iter().collect();
        assert_eq!(all.shared.get(0, 1).len(), target.intersection(&source).count());
        assert!(source.iter().all(|u| u.starts_with('u')));
    }

    #[test]
    fn elimination_is_reported() {
        let spec = SynthSpec {
            edge_bias: -30.0,
            ..small()
        };
        assert!(matches!(generate_synthetic(&spec, 1), Err(JscnError::SyntheticEliminated(0))));
    }
}
