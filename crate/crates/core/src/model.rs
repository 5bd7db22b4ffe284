//! Per-domain parameters and the stacked spectral convolution forward pass.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, JscnError, Result};
use crate::graph::DomainSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    Linear,
    Mlp,
}

/// Which layer outputs make up the latent vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// `[x0 | layer 1 | … | layer K]`
    All,
    /// Layer K only.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyperparams {
    pub input_dim: usize,
    pub filter_dim: usize,
    pub num_layers: usize,
    pub mapping_kind: MappingKind,
    pub mlp_hidden: usize,
    pub concat_mode: ConcatMode,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        Self {
            input_dim: 32,
            filter_dim: 32,
            num_layers: 5,
            mapping_kind: MappingKind::Linear,
            mlp_hidden: 64,
            concat_mode: ConcatMode::All,
        }
    }
}

impl ModelHyperparams {
    /// Width `d` of user and item latent vectors.
    pub fn latent_dim(&self) -> usize {
        match self.concat_mode {
            ConcatMode::All => (self.num_layers + 1) * self.input_dim,
            ConcatMode::Last => self.filter_dim,
        }
    }

    /// Width `d′` of the domain-invariant user space; always equal to `d`.
    pub fn invariant_dim(&self) -> usize {
        self.latent_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_layers == 0 || self.mlp_hidden == 0 {
            return Err(JscnError::Config("dimensions must be positive".into()));
        }
        if self.filter_dim != self.input_dim {
            return Err(JscnError::Config(format!(
                "filter_dim ({}) must equal input_dim ({})",
                self.filter_dim, self.input_dim
            )));
        }
        Ok(())
    }
}

/// Adaptive user mapping from latent space to the invariant space.
#[derive(Debug, Clone, PartialEq)]
pub enum Mapping {
    Linear {
        w_b: Array2<f64>,
    },
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

impl Mapping {
    pub fn kind(&self) -> MappingKind {
        match self {
            Mapping::Linear { .. } => MappingKind::Linear,
            Mapping::Mlp { .. } => MappingKind::Mlp,
        }
    }
}

/// Trainable tensors of one domain. Rows of `x0` are users then items.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParameters {
    pub n_users: usize,
    pub x0: Array2<f64>,
    pub theta: Vec<Array2<f64>>,
    pub mapping: Mapping,
}

impl DomainParameters {
    pub fn n_nodes(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.x0.nrows() - self.n_users
    }

    /// Sets a linear mapping to the identity (the frozen-mapping variant).
    pub fn set_identity_mapping(&mut self, dim: usize) {
        self.mapping = Mapping::Linear {
            w_b: Array2::eye(dim),
        };
    }

    /// Every trainable tensor, flattened row-major, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("x0".to_string(), flat(self.x0.as_slice()))];
        for (k, t) in self.theta.iter().enumerate() {
            out.push((format!("theta{k}"), flat(t.as_slice())));
        }
        match &self.mapping {
            Mapping::Linear { w_b } => out.push(("w_b".into(), flat(w_b.as_slice()))),
            Mapping::Mlp { w1, b1, w2, b2 } => {
                out.push(("w1".into(), flat(w1.as_slice())));
                out.push(("b1".into(), flat(b1.as_slice())));
                out.push(("w2".into(), flat(w2.as_slice())));
                out.push(("b2".into(), flat(b2.as_slice())));
            }
        }
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors).
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("x0".to_string(), flat_mut(self.x0.as_slice_mut()))];
        for (k, t) in self.theta.iter_mut().enumerate() {
            out.push((format!("theta{k}"), flat_mut(t.as_slice_mut())));
        }
        match &mut self.mapping {
            Mapping::Linear { w_b } => out.push(("w_b".into(), flat_mut(w_b.as_slice_mut()))),
            Mapping::Mlp { w1, b1, w2, b2 } => {
                out.push(("w1".into(), flat_mut(w1.as_slice_mut())));
                out.push(("b1".into(), flat_mut(b1.as_slice_mut())));
                out.push(("w2".into(), flat_mut(w2.as_slice_mut())));
                out.push(("b2".into(), flat_mut(b2.as_slice_mut())));
            }
        }
        out
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mapping = match &self.mapping {
            Mapping::Linear { w_b } => Mapping::Linear {
                w_b: Array2::zeros(w_b.raw_dim()),
            },
            Mapping::Mlp { w1, b1, w2, b2 } => Mapping::Mlp {
                w1: Array2::zeros(w1.raw_dim()),
                b1: Array1::zeros(b1.raw_dim()),
                w2: Array2::zeros(w2.raw_dim()),
                b2: Array1::zeros(b2.raw_dim()),
            },
        };
        Self {
            n_users: self.n_users,
            x0: Array2::zeros(self.x0.raw_dim()),
            theta: self.theta.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            mapping,
        }
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = self.x0.iter().all(|x| x.is_finite())
            && self.theta.iter().all(|t| t.iter().all(|x| x.is_finite()));
        match &self.mapping {
            Mapping::Linear { w_b } => ok &= w_b.iter().all(|x| x.is_finite()),
            Mapping::Mlp { w1, b1, w2, b2 } => {
                ok &= w1.iter().chain(b1.iter()).chain(w2.iter()).chain(b2.iter()).all(|x| x.is_finite())
            }
        }
        ok
    }
}

// parameter arrays are always built in standard layout
fn flat(s: Option<&[f64]>) -> &[f64] {
    s.expect("parameter tensor in standard layout")
}

fn flat_mut(s: Option<&mut [f64]>) -> &mut [f64] {
    s.expect("parameter tensor in standard layout")
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let b = glorot_bound(rows, cols);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-b..=b))
}

/// Random initialization, deterministic in `seed`. Biases start at zero.
pub fn init_parameters(
    hp: &ModelHyperparams,
    n_users: usize,
    n_items: usize,
    seed: u64,
) -> Result<DomainParameters> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_users + n_items;
    let x0 = glorot(&mut rng, n, hp.input_dim);
    let theta = (0..hp.num_layers)
        .map(|k| {
            let rows = if k == 0 { hp.input_dim } else { hp.filter_dim };
            glorot(&mut rng, rows, hp.filter_dim)
        })
        .collect();
    let d = hp.latent_dim();
    let mapping = match hp.mapping_kind {
        MappingKind::Linear => Mapping::Linear {
            w_b: glorot(&mut rng, d, hp.invariant_dim()),
        },
        MappingKind::Mlp => Mapping::Mlp {
            w1: glorot(&mut rng, d, hp.mlp_hidden),
            b1: Array1::zeros(hp.mlp_hidden),
            w2: glorot(&mut rng, hp.mlp_hidden, hp.invariant_dim()),
            b2: Array1::zeros(hp.invariant_dim()),
        },
    };
    Ok(DomainParameters {
        n_users,
        x0,
        theta,
        mapping,
    })
}

/// Logistic sigmoid, inputs clamped to `[-500, 500]`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-500.0, 500.0);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `σ(filter · x · theta)`.
pub fn spectral_conv_layer(
    x: ArrayView2<f64>,
    filter: ArrayView2<f64>,
    theta: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let (filtered, out) = conv_with_intermediate(x, filter, theta)?;
    drop(filtered);
    Ok(out)
}

fn conv_with_intermediate(
    x: ArrayView2<f64>,
    filter: ArrayView2<f64>,
    theta: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = x.nrows();
    if filter.dim() != (n, n) {
        return Err(shape_err(
            "spectral_conv_layer filter",
            format!("{n}x{n}"),
            format!("{}x{}", filter.nrows(), filter.ncols()),
        ));
    }
    if theta.nrows() != x.ncols() {
        return Err(shape_err(
            "spectral_conv_layer theta rows",
            x.ncols(),
            theta.nrows(),
        ));
    }
    let filtered = filter.dot(&x);
    let out = filtered.dot(&theta).mapv_into(sigmoid);
    Ok((filtered, out))
}

/// Latent vectors and invariant user representations of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub v_user: Array2<f64>,
    pub v_item: Array2<f64>,
    pub u_invariant: Array2<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `H_0 = x0, H_1, …, H_K`.
    pub layers: Vec<Array2<f64>>,
    /// `filter · H_k` for `k < K`.
    pub filtered: Vec<Array2<f64>>,
    /// `tanh(v_user · w1 + b1)` for the MLP mapping.
    pub hidden: Option<Array2<f64>>,
}

pub fn forward(
    params: &DomainParameters,
    spectrum: &DomainSpectrum,
    hp: &ModelHyperparams,
) -> Result<EmbeddingSet> {
    forward_with_filter(params, spectrum.filter.view(), hp).map(|(emb, _)| emb)
}

/// Forward pass against an explicit filter matrix.
pub fn forward_with_filter(
    params: &DomainParameters,
    filter: ArrayView2<f64>,
    hp: &ModelHyperparams,
) -> Result<(EmbeddingSet, ForwardCache)> {
    let n = params.n_nodes();
    if filter.dim() != (n, n) {
        return Err(shape_err(
            "forward filter",
            format!("{n}x{n}"),
            format!("{}x{}", filter.nrows(), filter.ncols()),
        ));
    }
    if params.theta.len() != hp.num_layers {
        return Err(shape_err("forward theta count", hp.num_layers, params.theta.len()));
    }
    let mut layers = Vec::with_capacity(hp.num_layers + 1);
    let mut filtered = Vec::with_capacity(hp.num_layers);
    layers.push(params.x0.clone());
    for theta in &params.theta {
        let (f, out) = conv_with_intermediate(layers.last().unwrap().view(), filter, theta.view())?;
        filtered.push(f);
        layers.push(out);
    }
    let v = match hp.concat_mode {
        ConcatMode::All => {
            let views: Vec<_> = layers.iter().map(|l| l.view()).collect();
            concatenate(Axis(1), &views).map_err(|e| shape_err("forward concat", "equal row counts", e))?
        }
        ConcatMode::Last => layers.last().unwrap().clone(),
    };
    let v_user = v.slice(s![..params.n_users, ..]).to_owned();
    let v_item = v.slice(s![params.n_users.., ..]).to_owned();
    let (u_invariant, hidden) = apply_mapping(v_user.view(), &params.mapping)?;
    Ok((
        EmbeddingSet {
            v_user,
            v_item,
            u_invariant,
        },
        ForwardCache {
            layers,
            filtered,
            hidden,
        },
    ))
}

pub fn map_to_invariant(
    v_user: ArrayView2<f64>,
    params: &DomainParameters,
    hp: &ModelHyperparams,
) -> Result<Array2<f64>> {
    if params.mapping.kind() != hp.mapping_kind {
        return Err(JscnError::Config(format!(
            "parameters carry a {:?} mapping but hyperparameters ask for {:?}",
            params.mapping.kind(),
            hp.mapping_kind
        )));
    }
    apply_mapping(v_user, &params.mapping).map(|(u, _)| u)
}

fn apply_mapping(
    v_user: ArrayView2<f64>,
    mapping: &Mapping,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    match mapping {
        Mapping::Linear { w_b } => {
            if w_b.nrows() != v_user.ncols() {
                return Err(shape_err("map_to_invariant w_b rows", v_user.ncols(), w_b.nrows()));
            }
            Ok((v_user.dot(w_b), None))
        }
        Mapping::Mlp { w1, b1, w2, b2 } => {
            if w1.nrows() != v_user.ncols() {
                return Err(shape_err("map_to_invariant w1 rows", v_user.ncols(), w1.nrows()));
            }
            if w2.nrows() != w1.ncols() || b1.len() != w1.ncols() || b2.len() != w2.ncols() {
                return Err(shape_err(
                    "map_to_invariant mlp",
                    format!("hidden {}", w1.ncols()),
                    format!("w2 rows {}, b1 {}, b2 {}", w2.nrows(), b1.len(), b2.len()),
                ));
            }
            let hidden = (v_user.dot(w1) + b1).mapv_into(f64::tanh);
            let u = hidden.dot(w2) + b2;
            Ok((u, Some(hidden)))
        }
    }
}

/// Dot-product preference of one user for every item.
pub fn predict_scores(v_user_row: ArrayView1<f64>, v_item: ArrayView2<f64>) -> Array1<f64> {
    v_item.dot(&v_user_row)
}
