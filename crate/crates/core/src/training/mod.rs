//! Joint training of all domains: triple sampling, losses, exact gradients,
//! and the RMSprop loop.

mod backprop;
pub mod gradcheck;
mod loss;
mod rmsprop;
mod sampling;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JscnError, Result};
use crate::graph::{BipartiteDomain, DomainSpectrum};
use crate::model::{init_parameters, DomainParameters, MappingKind, ModelHyperparams};

pub use backprop::{compute_gradients, GradientOutput};
pub use loss::{cross_domain_loss, in_domain_loss, regularization, total_loss, LossBreakdown};
pub use rmsprop::{rmsprop_update, RmsProp};
pub use sampling::{sample_triples, TripleBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Regularization weight ε.
    pub reg_epsilon: f64,
    /// Weight μ on the cross-domain loss.
    pub cross_weight: f64,
    pub epochs: usize,
    /// Triples per domain per step.
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    /// Squared (default) or plain euclidean distance in the cross-domain loss.
    pub squared_cross: bool,
    /// Also regularize item latent vectors.
    pub reg_items: bool,
    /// Keep the input features `x0` at their initial values.
    pub freeze_x0: bool,
    /// Replace every mapping by a frozen identity matrix.
    pub identity_mapping: bool,
    /// Worker threads for per-domain passes; 1 keeps runs single-threaded.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            reg_epsilon: 0.001,
            cross_weight: 1.0,
            epochs: 200,
            batch_size: 1024,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            seed: 0,
            squared_cross: true,
            reg_items: false,
            freeze_x0: false,
            identity_mapping: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(JscnError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(JscnError::Config("rmsprop_decay must lie in [0, 1)".into()));
        }
        if !(self.cross_weight >= 0.0) || !(self.reg_epsilon >= 0.0) {
            return Err(JscnError::Config("cross_weight and reg_epsilon must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(JscnError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Row correspondences of users present in two domains.
///
/// Stored for ordered pairs; `(m, n)` and `(n, m)` hold transposed lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SharedUserIndex {
    pairs: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

impl SharedUserIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the correspondences for `(m, n)` and their transpose for `(n, m)`.
    pub fn insert(&mut self, m: usize, n: usize, mut rows: Vec<(usize, usize)>) {
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() || m == n {
            return;
        }
        let mut transposed: Vec<_> = rows.iter().map(|&(a, b)| (b, a)).collect();
        transposed.sort_unstable();
        self.pairs.insert((m, n), rows);
        self.pairs.insert((n, m), transposed);
    }

    pub fn get(&self, m: usize, n: usize) -> &[(usize, usize)] {
        self.pairs.get(&(m, n)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Unordered domain pairs `m < n` with their correspondences.
    pub fn unordered(&self) -> impl Iterator<Item = (usize, usize, &[(usize, usize)])> {
        self.pairs
            .iter()
            .filter(|((m, n), _)| m < n)
            .map(|(&(m, n), rows)| (m, n, rows.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Total number of shared-user correspondences over unordered pairs.
    pub fn len(&self) -> usize {
        self.unordered().map(|(_, _, r)| r.len()).sum()
    }

    /// Keeps only pairs whose domains both pass `keep`, renumbering them by
    /// `remap`.
    pub fn restrict(&self, remap: &BTreeMap<usize, usize>) -> Self {
        let mut out = Self::new();
        for (m, n, rows) in self.unordered() {
            if let (Some(&a), Some(&b)) = (remap.get(&m), remap.get(&n)) {
                out.insert(a, b, rows.to_vec());
            }
        }
        out
    }
}

/// What the training loop needs from one domain.
#[derive(Debug, Clone)]
pub struct TrainDomain {
    pub name: String,
    pub filter: Array2<f64>,
    pub n_users: usize,
    pub n_items: usize,
    pub edges: Vec<(usize, usize)>,
    pub items_by_user: Vec<Vec<usize>>,
}

impl TrainDomain {
    pub fn new(name: impl Into<String>, domain: &BipartiteDomain, spectrum: &DomainSpectrum) -> Result<Self> {
        if spectrum.n() != domain.n_nodes() {
            return Err(crate::error::shape_err(
                "TrainDomain spectrum size",
                domain.n_nodes(),
                spectrum.n(),
            ));
        }
        Ok(Self {
            name: name.into(),
            filter: spectrum.filter.clone(),
            n_users: domain.n_users(),
            n_items: domain.n_items(),
            edges: domain.edges().to_vec(),
            items_by_user: domain.items_by_user(),
        })
    }
}

/// Per-epoch loss record, one JSON line in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_in_domain: Vec<f64>,
    pub loss_cross: f64,
    pub reg: f64,
    /// Triples per domain in the epoch's batch.
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: Vec<DomainParameters>,
    pub history: Vec<EpochLog>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of domain `k` derived from the run seed.
pub fn domain_seed(seed: u64, k: usize) -> u64 {
    splitmix(seed ^ splitmix(k as u64 + 1))
}

/// Trains all domains jointly. Domain 0 is the target by convention.
pub fn train(
    domains: &[TrainDomain],
    shared: &SharedUserIndex,
    hp: &ModelHyperparams,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let seeds: Vec<u64> = (0..domains.len()).map(|k| domain_seed(cfg.seed, k)).collect();
    train_seeded(domains, &seeds, shared, hp, cfg, |_| {})
}

/// Training with explicit per-domain seeds and an epoch callback.
///
/// Domain `k` draws its initial parameters and its triples from streams
/// derived only from `seeds[k]`.
pub fn train_seeded(
    domains: &[TrainDomain],
    seeds: &[u64],
    shared: &SharedUserIndex,
    hp: &ModelHyperparams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    hp.validate()?;
    cfg.validate()?;
    if domains.is_empty() {
        return Err(JscnError::Config("at least one domain is required".into()));
    }
    if seeds.len() != domains.len() {
        return Err(JscnError::Config("one seed per domain is required".into()));
    }
    if cfg.identity_mapping && hp.mapping_kind != MappingKind::Linear {
        return Err(JscnError::Config("identity mapping requires the linear mapping kind".into()));
    }
    for d in domains {
        sampling::check_negatives(&d.items_by_user, d.n_items)?;
    }

    let mut params = Vec::with_capacity(domains.len());
    for (d, &seed) in domains.iter().zip(seeds) {
        let mut p = init_parameters(hp, d.n_users, d.n_items, splitmix(seed))?;
        if cfg.identity_mapping {
            p.set_identity_mapping(hp.latent_dim());
        }
        params.push(p);
    }
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(splitmix(s ^ 0x5EED)))
        .collect();
    let mut optimizer = RmsProp::new(cfg, &params);
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| JscnError::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = domains
            .iter()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(k, (d, rng))| sample_triples(&d.edges, &d.items_by_user, d.n_items, cfg.batch_size, rng, k))
            .collect::<Result<Vec<_>>>()?;
        let filters: Vec<_> = domains.iter().map(|d| d.filter.view()).collect();
        let out = match &pool {
            Some(pool) => pool.install(|| compute_gradients(&params, &filters, &batches, shared, hp, cfg, true)),
            None => compute_gradients(&params, &filters, &batches, shared, hp, cfg, false),
        };
        let out = match out {
            Err(JscnError::NanGradient(name)) => {
                log::error!("NaN gradient in {name} at epoch {epoch}");
                return Err(JscnError::NanGradient(format!("{name} (epoch {epoch})")));
            }
            other => other?,
        };
        let l = &out.loss;
        if !l.total.is_finite() {
            return Err(JscnError::NanLoss {
                epoch,
                in_domain: l.in_domain.clone(),
                cross: l.cross,
                reg: l.reg,
            });
        }
        let entry = EpochLog {
            epoch,
            loss_total: l.total,
            loss_in_domain: l.in_domain.clone(),
            loss_cross: l.cross,
            reg: l.reg,
            batch_size: cfg.batch_size,
        };
        log::debug!(
            "epoch {epoch}: total {:.6} in-domain {:?} cross {:.6} reg {:.6}",
            l.total,
            l.in_domain,
            l.cross,
            l.reg
        );
        on_epoch(&entry);
        history.push(entry);
        optimizer.step(&mut params, &out.grads);
    }
    if let Some(k) = params.iter().position(|p| !p.is_finite()) {
        return Err(JscnError::NanGradient(format!("parameters of domain {k} after training")));
    }
    Ok(TrainOutput { params, history })
}

/// Maps `f` over the domains, in parallel when asked. Output order follows
/// input order either way.
pub(crate) fn map_domains<T, R, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    if parallel {
        items.par_iter().enumerate().map(|(k, t)| f(k, t)).collect()
    } else {
        items.iter().enumerate().map(|(k, t)| f(k, t)).collect()
    }
}
