//! Reverse-mode gradients of the joint objective.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::loss::{combine, cross_domain_loss, in_domain_loss, regularization, LossBreakdown};
use super::{map_domains, SharedUserIndex, TrainConfig, TripleBatch};
use crate::error::{shape_err, JscnError, Result};
use crate::model::{
    forward_with_filter, sigmoid, ConcatMode, DomainParameters, EmbeddingSet, ForwardCache, Mapping,
    ModelHyperparams,
};

#[derive(Debug, Clone)]
pub struct GradientOutput {
    pub loss: LossBreakdown,
    /// One gradient per domain, shaped like the parameters.
    pub grads: Vec<DomainParameters>,
    pub embeddings: Vec<EmbeddingSet>,
}

/// Loss and exact gradients with respect to every trainable tensor of every
/// domain. `parallel` spreads per-domain work over the current rayon pool.
pub fn compute_gradients(
    params: &[DomainParameters],
    filters: &[ArrayView2<f64>],
    batches: &[TripleBatch],
    shared: &SharedUserIndex,
    hp: &ModelHyperparams,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<GradientOutput> {
    if filters.len() != params.len() || batches.len() != params.len() {
        return Err(shape_err(
            "compute_gradients domain count",
            params.len(),
            format!("{} filters, {} batches", filters.len(), batches.len()),
        ));
    }
    let forwards = map_domains(params, parallel, |k, p| forward_with_filter(p, filters[k], hp))?;
    let embs: Vec<EmbeddingSet> = forwards.iter().map(|(e, _)| e.clone()).collect();

    let in_domain: Vec<f64> = embs.iter().zip(batches).map(|(e, b)| in_domain_loss(e, b)).collect();
    let cross = cross_domain_loss(&embs, shared, cfg.squared_cross);
    let reg = regularization(&embs, cfg.reg_epsilon, cfg.reg_items);
    let loss = combine(in_domain, cross, reg, cfg.cross_weight);

    let mut d_invariant: Vec<Array2<f64>> = embs
        .iter()
        .map(|e| Array2::zeros(e.u_invariant.raw_dim()))
        .collect();
    let mu = cfg.cross_weight;
    if mu != 0.0 {
        for (m, n, rows) in shared.unordered() {
            for &(a, b) in rows {
                let diff = &embs[m].u_invariant.row(a) - &embs[n].u_invariant.row(b);
                let scale = if cfg.squared_cross {
                    2.0 * mu
                } else {
                    let norm = diff.dot(&diff).sqrt();
                    if norm > 0.0 {
                        mu / norm
                    } else {
                        0.0
                    }
                };
                d_invariant[m].row_mut(a).scaled_add(scale, &diff);
                d_invariant[n].row_mut(b).scaled_add(-scale, &diff);
            }
        }
    }

    let work: Vec<usize> = (0..params.len()).collect();
    let grads = map_domains(&work, parallel, |_, &k| {
        let (emb, cache) = &forwards[k];
        backward_domain(&params[k], filters[k], hp, cfg, emb, cache, &batches[k], &d_invariant[k])
    })?;

    for (k, g) in grads.iter().enumerate() {
        for (name, t) in g.named_tensors() {
            if t.iter().any(|x| x.is_nan()) {
                return Err(JscnError::NanGradient(format!("domain {k} {name}")));
            }
        }
    }
    Ok(GradientOutput {
        loss,
        grads,
        embeddings: embs,
    })
}

#[allow(clippy::too_many_arguments)]
fn backward_domain(
    params: &DomainParameters,
    filter: ArrayView2<f64>,
    hp: &ModelHyperparams,
    cfg: &TrainConfig,
    emb: &EmbeddingSet,
    cache: &ForwardCache,
    batch: &TripleBatch,
    d_invariant: &Array2<f64>,
) -> Result<DomainParameters> {
    let mut grad = params.zeros_like();
    let mut d_user = Array2::<f64>::zeros(emb.v_user.raw_dim());
    let mut d_item = Array2::<f64>::zeros(emb.v_item.raw_dim());

    // BPR: dL/dgap = σ(gap) − 1
    for &(r, j, jn) in &batch.triples {
        let u = emb.v_user.row(r);
        let pos = emb.v_item.row(j);
        let neg = emb.v_item.row(jn);
        let gap = u.dot(&pos) - u.dot(&neg);
        let coef = sigmoid(gap) - 1.0;
        d_user.row_mut(r).scaled_add(coef, &(&pos - &neg));
        d_item.row_mut(j).scaled_add(coef, &u);
        d_item.row_mut(jn).scaled_add(-coef, &u);
    }

    if cfg.reg_epsilon != 0.0 {
        d_user.scaled_add(2.0 * cfg.reg_epsilon, &emb.v_user);
        if cfg.reg_items {
            d_item.scaled_add(2.0 * cfg.reg_epsilon, &emb.v_item);
        }
    }

    match (&params.mapping, &mut grad.mapping) {
        (Mapping::Linear { w_b }, Mapping::Linear { w_b: g_w }) => {
            *g_w = emb.v_user.t().dot(d_invariant);
            d_user += &d_invariant.dot(&w_b.t());
        }
        (
            Mapping::Mlp { w1, w2, .. },
            Mapping::Mlp {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
        ) => {
            let hidden = cache
                .hidden
                .as_ref()
                .ok_or_else(|| JscnError::Config("forward cache lacks MLP activations".into()))?;
            *g_w2 = hidden.t().dot(d_invariant);
            *g_b2 = d_invariant.sum_axis(Axis(0));
            let d_hidden = d_invariant.dot(&w2.t());
            let d_pre = d_hidden * hidden.mapv(|h| 1.0 - h * h);
            *g_w1 = emb.v_user.t().dot(&d_pre);
            *g_b1 = d_pre.sum_axis(Axis(0));
            d_user += &d_pre.dot(&w1.t());
        }
        _ => unreachable!("gradient mirrors parameter layout"),
    }

    let n_users = params.n_users;
    let width = hp.input_dim;
    let k_layers = params.theta.len();
    let mut d_v = Array2::<f64>::zeros((params.n_nodes(), emb.v_user.ncols()));
    d_v.slice_mut(s![..n_users, ..]).assign(&d_user);
    d_v.slice_mut(s![n_users.., ..]).assign(&d_item);

    // gradient w.r.t. each H_k coming directly from the latent vectors
    let mut d_layers: Vec<Array2<f64>> = cache.layers.iter().map(|l| Array2::zeros(l.raw_dim())).collect();
    match hp.concat_mode {
        ConcatMode::All => {
            for (k, d) in d_layers.iter_mut().enumerate() {
                d.assign(&d_v.slice(s![.., k * width..(k + 1) * width]));
            }
        }
        ConcatMode::Last => d_layers[k_layers].assign(&d_v),
    }

    for k in (0..k_layers).rev() {
        let out = &cache.layers[k + 1];
        let d_z = &d_layers[k + 1] * &out.mapv(|h| h * (1.0 - h));
        grad.theta[k] = cache.filtered[k].t().dot(&d_z);
        let back = filter.t().dot(&d_z.dot(&params.theta[k].t()));
        d_layers[k] += &back;
    }
    grad.x0 = d_layers.swap_remove(0);
    Ok(grad)
}
