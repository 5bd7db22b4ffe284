//! Run configuration, variant resolution, end-to-end training on a bundle,
//! and the model checkpoint.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::container::{Container, CHECKPOINT_MAGIC};
use crate::data::DatasetBundle;
use crate::error::{JscnError, Result};
use crate::eval::{evaluate, EvalReport, UserMetrics, DEFAULT_KS};
use crate::graph::{eigendecompose_with_cap, build_feedback_matrix, build_laplacian, DEFAULT_SPECTRUM_CAP};
use crate::model::{forward, DomainParameters, EmbeddingSet, Mapping, MappingKind, ModelHyperparams};
use crate::training::{domain_seed, map_domains, train_seeded, EpochLog, TrainConfig, TrainDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Identity mapping, frozen: latent vectors of shared users are pulled
    /// together directly.
    Alpha,
    /// Trainable linear mapping.
    #[default]
    Beta,
    /// Trainable one-hidden-layer tanh mapping.
    BetaMlp,
    /// Target domain alone, no cross-domain term.
    SingleDomain,
}

impl std::str::FromStr for Variant {
    type Err = JscnError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| JscnError::Config(format!("unknown variant {s:?} (alpha, beta, beta_mlp, single_domain)")))
    }
}

/// Everything a training run needs besides the data. Serialized flat: model
/// and training fields sit at the top level next to the run fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelHyperparams,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub variant: Variant,
    pub ks: Vec<usize>,
    /// Minimum user degree applied to raw CSV inputs.
    pub min_degree: usize,
    /// Fraction of each target user's edges held out when training from
    /// raw CSV files.
    pub test_fraction: f64,
    pub target: Option<PathBuf>,
    pub sources: Vec<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub spectrum_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelHyperparams::default(),
            train: TrainConfig::default(),
            variant: Variant::default(),
            ks: DEFAULT_KS.to_vec(),
            min_degree: 5,
            test_fraction: 0.2,
            target: None,
            sources: Vec::new(),
            bundle: None,
            spectrum_cap: DEFAULT_SPECTRUM_CAP,
        }
    }
}

impl RunConfig {
    /// Parses a JSON document. Unknown keys are rejected; `mu` is accepted
    /// as a synonym of `cross_weight`. The seed must be present unless
    /// `seed_given_elsewhere` is set.
    pub fn from_json(text: &str, seed_given_elsewhere: bool) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| JscnError::Config(format!("config: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| JscnError::Config("config must be a JSON object".into()))?;
        if let Some(mu) = obj.remove("mu") {
            if obj.contains_key("cross_weight") {
                return Err(JscnError::Config("give either mu or cross_weight, not both".into()));
            }
            obj.insert("cross_weight".into(), mu);
        }
        let known = Self::known_keys();
        if let Some(k) = obj.keys().find(|k| !known.contains(*k)) {
            return Err(JscnError::Config(format!("unknown config key {k:?}")));
        }
        if !seed_given_elsewhere && !obj.contains_key("seed") {
            return Err(JscnError::Config("config must set \"seed\"".into()));
        }
        serde_json::from_value(v).map_err(|e| JscnError::Config(format!("config: {e}")))
    }

    fn known_keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies the variant's forced settings and returns the model and
    /// training configuration actually used.
    pub fn resolved(&self) -> Result<(ModelHyperparams, TrainConfig)> {
        let mut hp = self.model.clone();
        let mut cfg = self.train.clone();
        match self.variant {
            Variant::Alpha => {
                hp.mapping_kind = MappingKind::Linear;
                cfg.identity_mapping = true;
            }
            Variant::Beta => {
                hp.mapping_kind = MappingKind::Linear;
                cfg.identity_mapping = false;
            }
            Variant::BetaMlp => {
                hp.mapping_kind = MappingKind::Mlp;
                cfg.identity_mapping = false;
            }
            Variant::SingleDomain => {
                cfg.cross_weight = 0.0;
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(JscnError::Config("ks must be a nonempty list of positive integers".into()));
        }
        hp.validate()?;
        cfg.validate()?;
        Ok((hp, cfg))
    }
}

/// A trained model: every domain's parameters plus the target embeddings
/// used for ranking.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: RunConfig,
    pub hp: ModelHyperparams,
    pub domain_names: Vec<String>,
    pub categories: Vec<String>,
    pub user_ids: Vec<Vec<String>>,
    pub item_ids: Vec<Vec<String>>,
    pub params: Vec<DomainParameters>,
    pub target: EmbeddingSet,
}

/// Trains on a bundle according to `rc`, writing one JSON line per epoch to
/// `log` when given.
pub fn run_training(
    bundle: &DatasetBundle,
    rc: &RunConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let (hp, cfg) = rc.resolved()?;
    let bundle = if rc.variant == Variant::SingleDomain {
        bundle.with_sources(&[])?
    } else {
        bundle.clone()
    };
    let graphs = bundle.domains();
    let names = bundle.domain_names();
    let parallel = cfg.threads > 1;
    log::info!("computing spectra of {} domain(s)", graphs.len());
    let spectra = with_threads(cfg.threads, || {
        map_domains(&graphs, parallel, |_, g| {
            let lap = build_laplacian(&build_feedback_matrix(g))?;
            eigendecompose_with_cap(&lap, rc.spectrum_cap)
        })
    })??;
    let domains = graphs
        .iter()
        .zip(&spectra)
        .zip(&names)
        .map(|((g, s), n)| TrainDomain::new(n.clone(), g, s))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..domains.len()).map(|k| domain_seed(cfg.seed, k)).collect();
    let mut io_error = None;
    let out = train_seeded(&domains, &seeds, &bundle.shared, &hp, &cfg, |entry| {
        if let (Some(w), None) = (log.as_deref_mut(), io_error.as_ref()) {
            if let Err(e) = write_log_line(w, entry) {
                io_error = Some(e);
            }
        }
        if entry.epoch % 10 == 0 {
            log::info!("epoch {} loss {:.6}", entry.epoch, entry.loss_total);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let target = forward(&out.params[0], &spectra[0], &hp)?;
    let mut config = rc.clone();
    config.train.seed = cfg.seed;
    let model = TrainedModel {
        config,
        hp,
        domain_names: names,
        categories: graphs.iter().map(|g| g.category().to_string()).collect(),
        user_ids: graphs.iter().map(|g| g.users().to_vec()).collect(),
        item_ids: graphs.iter().map(|g| g.items().to_vec()).collect(),
        params: out.params,
        target,
    };
    Ok((model, out.history))
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| JscnError::Config(e.to_string()))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

/// One epoch record as a single JSON line with sorted keys.
pub fn write_log_line(w: &mut dyn Write, entry: &EpochLog) -> Result<()> {
    let v = serde_json::to_value(entry)?;
    writeln!(w, "{}", serde_json::to_string(&v)?)?;
    Ok(())
}

impl TrainedModel {
    pub fn to_container(&self) -> Container {
        let domains: Vec<Value> = (0..self.params.len())
            .map(|k| {
                json!({
                    "name": self.domain_names[k],
                    "category": self.categories[k],
                    "n_users": self.params[k].n_users,
                    "n_items": self.params[k].n_items(),
                    "user_ids": self.user_ids[k],
                    "item_ids": self.item_ids[k],
                })
            })
            .collect();
        let mut c = Container::new(json!({
            "format": "jscn-checkpoint",
            "version": 1,
            "config": self.config.to_value(),
            "hyperparams": serde_json::to_value(&self.hp).expect("hyperparams serialize"),
            "seed": self.config.train.seed,
            "domains": domains,
        }));
        for (k, p) in self.params.iter().enumerate() {
            let name = &self.domain_names[k];
            for (t, data) in p.named_tensors() {
                let shape = tensor_shape(p, &t);
                let arr = ndarray::ArrayD::from_shape_vec(shape, data.to_vec()).expect("tensor shape");
                c.push(format!("{name}/{t}"), arr);
            }
        }
        c.push_matrix("target/v_user", &self.target.v_user);
        c.push_matrix("target/v_item", &self.target.v_item);
        c.push_matrix("target/u_invariant", &self.target.u_invariant);
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path, CHECKPOINT_MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, CHECKPOINT_MAGIC)?;
        let bad = |msg: String| JscnError::Container {
            path: path.to_path_buf(),
            msg,
        };
        let meta = &c.meta;
        let config: RunConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(e.to_string()))?;
        let hp: ModelHyperparams = serde_json::from_value(meta["hyperparams"].clone()).map_err(|e| bad(e.to_string()))?;
        let doms = meta["domains"]
            .as_array()
            .ok_or_else(|| bad("manifest has no domain list".into()))?;
        let strings = |v: &Value| -> Result<Vec<String>> {
            serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))
        };
        let mut model = TrainedModel {
            config,
            hp: hp.clone(),
            domain_names: Vec::new(),
            categories: Vec::new(),
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            params: Vec::new(),
            target: EmbeddingSet {
                v_user: c.matrix("target/v_user")?,
                v_item: c.matrix("target/v_item")?,
                u_invariant: c.matrix("target/u_invariant")?,
            },
        };
        for d in doms {
            let name = d["name"].as_str().ok_or_else(|| bad("domain without name".into()))?.to_string();
            let users = strings(&d["user_ids"])?;
            let items = strings(&d["item_ids"])?;
            let theta = (0..hp.num_layers)
                .map(|k| c.matrix(&format!("{name}/theta{k}")))
                .collect::<Result<Vec<_>>>()?;
            let mapping = if c.get(&format!("{name}/w_b")).is_some() {
                Mapping::Linear {
                    w_b: c.matrix(&format!("{name}/w_b"))?,
                }
            } else {
                Mapping::Mlp {
                    w1: c.matrix(&format!("{name}/w1"))?,
                    b1: c.vector(&format!("{name}/b1"))?,
                    w2: c.matrix(&format!("{name}/w2"))?,
                    b2: c.vector(&format!("{name}/b2"))?,
                }
            };
            let x0 = c.matrix(&format!("{name}/x0"))?;
            if x0.nrows() != users.len() + items.len() {
                return Err(bad(format!("{name}/x0 rows do not match the id lists")));
            }
            model.params.push(DomainParameters {
                n_users: users.len(),
                x0,
                theta,
                mapping,
            });
            model.categories.push(d["category"].as_str().unwrap_or_default().to_string());
            model.domain_names.push(name);
            model.user_ids.push(users);
            model.item_ids.push(items);
        }
        if model.params.is_empty() {
            return Err(bad("checkpoint holds no domains".into()));
        }
        let (nu, ni) = (model.user_ids[0].len(), model.item_ids[0].len());
        if model.target.v_user.nrows() != nu || model.target.v_item.nrows() != ni {
            return Err(bad("target embeddings do not match the target id lists".into()));
        }
        Ok(model)
    }

    /// Scores the bundle's held-out target edges. Users and items are
    /// matched to the checkpoint by identifier.
    pub fn evaluate_bundle(&self, bundle: &DatasetBundle, ks: &[usize]) -> Result<(EvalReport, Vec<UserMetrics>)> {
        let t = &bundle.target;
        let user_pos: BTreeMap<&str, usize> =
            self.user_ids[0].iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let item_pos: BTreeMap<&str, usize> =
            self.item_ids[0].iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let lookup = |m: &BTreeMap<&str, usize>, id: &str, what: &str| {
            m.get(id).copied().ok_or_else(|| {
                JscnError::Config(format!("{what} {id:?} of the bundle's target domain is not in the checkpoint"))
            })
        };
        let mut train = vec![Vec::new(); self.user_ids[0].len()];
        let mut test = vec![Vec::new(); self.user_ids[0].len()];
        for &(u, i) in t.edges() {
            let uu = lookup(&user_pos, &t.users()[u], "user")?;
            train[uu].push(lookup(&item_pos, &t.items()[i], "item")?);
        }
        for &(u, i) in &bundle.target_test {
            let uu = lookup(&user_pos, &t.users()[u], "user")?;
            test[uu].push(lookup(&item_pos, &t.items()[i], "item")?);
        }
        for v in train.iter_mut().chain(test.iter_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        evaluate(&self.target, &train, &test, ks)
    }
}

fn tensor_shape(p: &DomainParameters, name: &str) -> Vec<usize> {
    let m = |a: &Array2<f64>| vec![a.nrows(), a.ncols()];
    match (name, &p.mapping) {
        ("x0", _) => m(&p.x0),
        ("w_b", Mapping::Linear { w_b }) => m(w_b),
        ("w1", Mapping::Mlp { w1, .. }) => m(w1),
        ("w2", Mapping::Mlp { w2, .. }) => m(w2),
        ("b1", Mapping::Mlp { b1, .. }) => vec![b1.len()],
        ("b2", Mapping::Mlp { b2, .. }) => vec![b2.len()],
        (t, _) => {
            let k: usize = t.trim_start_matches("theta").parse().expect("theta index");
            m(&p.theta[k])
        }
    }
}
