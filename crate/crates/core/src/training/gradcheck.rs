//! Central finite-difference check of the analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{compute_gradients, sample_triples, total_loss, SharedUserIndex, TrainConfig, TrainDomain};
use crate::data::align_shared_users;
use crate::error::Result;
use crate::graph::{domain_spectrum, BipartiteDomain};
use crate::model::{forward_with_filter, init_parameters, DomainParameters, MappingKind, ModelHyperparams};

/// Coordinates whose numeric derivative is at most this are compared
/// absolutely instead of relatively.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub mapping_kind: MappingKind,
    pub step: f64,
    pub tolerance: f64,
    /// Fault injection: added to the first analytic coordinate.
    pub perturb: Option<f64>,
    pub hp: ModelHyperparams,
    pub cfg: TrainConfig,
    pub triples_per_domain: usize,
    pub n_domains: usize,
}

impl GradCheckOptions {
    /// The small two-domain instance: C = F = 4, K = 2.
    pub fn small(seed: u64, mapping_kind: MappingKind) -> Self {
        Self {
            seed,
            mapping_kind,
            step: 1e-5,
            tolerance: 1e-4,
            perturb: None,
            hp: ModelHyperparams {
                input_dim: 4,
                filter_dim: 4,
                num_layers: 2,
                mapping_kind,
                ..Default::default()
            },
            cfg: TrainConfig {
                reg_epsilon: 0.01,
                cross_weight: 1.0,
                ..Default::default()
            },
            triples_per_domain: 12,
            n_domains: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateCheck {
    pub domain: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Relative error, or absolute error when `relative` is false.
    pub error: f64,
    pub relative: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub mapping_kind: MappingKind,
    pub seed: u64,
    pub n_coordinates: usize,
    pub n_failed: usize,
    pub max_rel_error: f64,
    pub max_abs_error_small: f64,
    /// Coordinate with the largest error relative to its threshold.
    pub worst: CoordinateCheck,
    pub passed: bool,
}

/// Random instance: 6 users and 5 items per domain, 30% of users shared by
/// all domains.
pub fn random_instance(seed: u64, n_domains: usize) -> Result<(Vec<TrainDomain>, SharedUserIndex)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = 6;
    let n_items = 5;
    let n_shared = (0.3 * n_users as f64).round() as usize;
    let mut domains = Vec::new();
    for m in 0..n_domains {
        let users: Vec<String> = (0..n_users)
            .map(|u| if u < n_shared { format!("s{u}") } else { format!("d{m}u{u}") })
            .collect();
        let items: Vec<String> = (0..n_items).map(|i| format!("d{m}i{i}")).collect();
        let mut adj = vec![vec![false; n_items]; n_users];
        for row in adj.iter_mut() {
            let deg = rng.random_range(1..=3);
            let mut order: Vec<usize> = (0..n_items).collect();
            order.shuffle(&mut rng);
            for &i in &order[..deg] {
                row[i] = true;
            }
        }
        for i in 0..n_items {
            if !adj.iter().any(|r| r[i]) {
                // attach to a user that still has a free item afterwards
                let candidates: Vec<usize> = (0..n_users)
                    .filter(|&u| adj[u].iter().filter(|&&x| x).count() < n_items - 1)
                    .collect();
                let u = candidates[rng.random_range(0..candidates.len())];
                adj[u][i] = true;
            }
        }
        let pairs: Vec<(&str, &str)> = (0..n_users)
            .flat_map(|u| (0..n_items).filter(|&i| adj[u][i]).map(move |i| (u, i)).collect::<Vec<_>>())
            .map(|(u, i)| (users[u].as_str(), items[i].as_str()))
            .collect();
        let domain = BipartiteDomain::from_id_pairs(pairs, format!("domain{m}"))?;
        let spectrum = domain_spectrum(&domain)?;
        domains.push((domain, spectrum));
    }
    let graphs: Vec<BipartiteDomain> = domains.iter().map(|(d, _)| d.clone()).collect();
    let shared = align_shared_users(&graphs);
    let train = domains
        .iter()
        .enumerate()
        .map(|(m, (d, s))| TrainDomain::new(format!("domain{m}"), d, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, shared))
}

/// Compares analytic gradients against central differences on every
/// coordinate of every tensor.
pub fn gradient_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (domains, shared) = random_instance(opts.seed, opts.n_domains)?;
    let mut hp = opts.hp.clone();
    hp.mapping_kind = opts.mapping_kind;
    let cfg = &opts.cfg;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB00C);
    let params: Vec<DomainParameters> = domains
        .iter()
        .enumerate()
        .map(|(k, d)| init_parameters(&hp, d.n_users, d.n_items, opts.seed.wrapping_add(k as u64 * 7919)))
        .collect::<Result<_>>()?;
    let batches = domains
        .iter()
        .enumerate()
        .map(|(k, d)| sample_triples(&d.edges, &d.items_by_user, d.n_items, opts.triples_per_domain, &mut rng, k))
        .collect::<Result<Vec<_>>>()?;
    let filters: Vec<_> = domains.iter().map(|d| d.filter.view()).collect();

    let analytic = compute_gradients(&params, &filters, &batches, &shared, &hp, cfg, false)?;
    let objective = |p: &[DomainParameters]| -> Result<f64> {
        let embs = p
            .iter()
            .zip(&filters)
            .map(|(p, f)| forward_with_filter(p, *f, &hp).map(|(e, _)| e))
            .collect::<Result<Vec<_>>>()?;
        Ok(total_loss(&embs, &batches, &shared, cfg).total)
    };

    let mut checks = Vec::new();
    let mut first = true;
    for (k, grad) in analytic.grads.iter().enumerate() {
        let named = grad.named_tensors();
        for (t_idx, (name, g)) in named.iter().enumerate() {
            for idx in 0..g.len() {
                let mut a = g[idx];
                if first {
                    if let Some(delta) = opts.perturb {
                        a += delta;
                    }
                    first = false;
                }
                let mut plus = params.clone();
                plus[k].named_tensors_mut()[t_idx].1[idx] += opts.step;
                let mut minus = params.clone();
                minus[k].named_tensors_mut()[t_idx].1[idx] -= opts.step;
                let numeric = (objective(&plus)? - objective(&minus)?) / (2.0 * opts.step);
                checks.push(score(k, name, idx, a, numeric, opts.tolerance));
            }
        }
    }

    let n_failed = checks.iter().filter(|c| !c.passed).count();
    let max_rel_error = checks.iter().filter(|c| c.relative).map(|c| c.error).fold(0.0, f64::max);
    let max_abs_error_small = checks.iter().filter(|c| !c.relative).map(|c| c.error).fold(0.0, f64::max);
    let severity = |c: &CoordinateCheck| {
        if c.relative {
            c.error / opts.tolerance
        } else {
            c.error / ABSOLUTE_FLOOR
        }
    };
    let worst = checks
        .iter()
        .max_by(|a, b| severity(a).total_cmp(&severity(b)))
        .cloned()
        .expect("instance has parameters");
    Ok(GradCheckReport {
        mapping_kind: opts.mapping_kind,
        seed: opts.seed,
        n_coordinates: checks.len(),
        n_failed,
        max_rel_error,
        max_abs_error_small,
        worst,
        passed: n_failed == 0,
    })
}

fn score(domain: usize, tensor: &str, index: usize, analytic: f64, numeric: f64, tol: f64) -> CoordinateCheck {
    let (error, relative, passed) = if numeric.abs() > ABSOLUTE_FLOOR {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        (rel, true, rel < tol)
    } else {
        let abs = (analytic - numeric).abs();
        (abs, false, abs <= ABSOLUTE_FLOOR)
    };
    CoordinateCheck {
        domain,
        tensor: tensor.to_string(),
        index,
        analytic,
        numeric,
        error,
        relative,
        passed,
    }
}
