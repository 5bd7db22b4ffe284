use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::json;

use super::{
    align_shared_users, domain_from_edges, filter_min_interactions, load_ratings, split_train_test, to_implicit, write_edges,
    EdgeSet,
};
use crate::error::{JscnError, Result};
use crate::graph::BipartiteDomain;
use crate::training::SharedUserIndex;

/// Target domain with its train/test partition, plus source domains.
///
/// `target` holds the training graph only; `target_test` indexes into its
/// users and items. Domain 0 in `shared` is the target, domain `k + 1` is
/// `sources[k]`.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub target: BipartiteDomain,
    pub target_test: Vec<(usize, usize)>,
    pub sources: Vec<BipartiteDomain>,
    pub shared: SharedUserIndex,
    pub provenance: String,
}

impl DatasetBundle {
    /// Assembles a bundle from split target edges and source edge sets.
    ///
    /// Test edges whose item has no training edge are moved to train. A
    /// user left without test edges gives one train edge back to test if
    /// its item keeps another train edge, and is removed otherwise. This
    /// repeats until every test item is in the training graph and every
    /// user has edges on both sides.
    pub fn from_edges(
        target_train: &EdgeSet,
        target_test: &EdgeSet,
        sources: &[EdgeSet],
        categories: &[String],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let (train, test) = repair_split(target_train.clone(), target_test.clone())?;
        let category = |k: usize| categories.get(k).cloned().unwrap_or_else(|| default_category(k));
        let target = domain_from_edges(&train, &category(0))?;
        let target_test = test
            .iter()
            .map(|(u, i)| {
                let ui = target.user_index(u).expect("repaired test user in train graph");
                let ii = target.item_index(i).expect("repaired test item in train graph");
                (ui, ii)
            })
            .collect();
        let sources = sources
            .iter()
            .enumerate()
            .map(|(k, e)| domain_from_edges(e, &category(k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let mut all = vec![target.clone()];
        all.extend(sources.iter().cloned());
        let shared = align_shared_users(&all);
        Ok(Self {
            target,
            target_test,
            sources,
            shared,
            provenance: provenance.into(),
        })
    }

    /// Builds a bundle from raw rating files: implicit conversion, the
    /// minimum-degree filter on every file, then a per-user split of the
    /// target. Categories are the file stems.
    pub fn from_csv(
        target: &Path,
        sources: &[std::path::PathBuf],
        min_degree: usize,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let load = |p: &Path| -> Result<EdgeSet> { filter_min_interactions(&to_implicit(&load_ratings(p)?), min_degree) };
        let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (train, test) = split_train_test(&load(target)?, test_fraction, seed)?;
        let source_edges = sources.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
        let categories: Vec<String> = std::iter::once(target).chain(sources.iter().map(|p| p.as_path())).map(stem).collect();
        let provenance = format!(
            "csv target={} sources={:?} min_degree={min_degree} test_fraction={test_fraction} seed={seed}",
            target.display(),
            sources
        );
        let bundle = Self::from_edges(&train, &test, &source_edges, &categories, provenance)?;
        bundle.validate()?;
        Ok(bundle)
    }

    /// Target followed by sources.
    pub fn domains(&self) -> Vec<&BipartiteDomain> {
        std::iter::once(&self.target).chain(self.sources.iter()).collect()
    }

    pub fn domain_names(&self) -> Vec<String> {
        std::iter::once("target".to_string())
            .chain((0..self.sources.len()).map(|k| format!("source_{k}")))
            .collect()
    }

    /// Same target, keeping only the listed sources (in the given order).
    pub fn with_sources(&self, keep: &[usize]) -> Result<Self> {
        let mut remap = BTreeMap::new();
        remap.insert(0, 0);
        let mut sources = Vec::with_capacity(keep.len());
        for (new, &k) in keep.iter().enumerate() {
            let s = self
                .sources
                .get(k)
                .ok_or_else(|| JscnError::Config(format!("no source domain {k}")))?;
            sources.push(s.clone());
            remap.insert(k + 1, new + 1);
        }
        Ok(Self {
            target: self.target.clone(),
            target_test: self.target_test.clone(),
            sources,
            shared: self.shared.restrict(&remap),
            provenance: format!("{} | sources {keep:?}", self.provenance),
        })
    }

    /// Training items and held-out items of every target user.
    pub fn target_items_by_user(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let train = self.target.items_by_user();
        let mut test = vec![Vec::new(); self.target.n_users()];
        for &(u, i) in &self.target_test {
            test[u].push(i);
        }
        for t in &mut test {
            t.sort_unstable();
        }
        (train, test)
    }

    /// Checks the bundle invariants.
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<(usize, usize)> = self.target.edges().iter().copied().collect();
        let mut has_test = vec![false; self.target.n_users()];
        for e in &self.target_test {
            if train.contains(e) {
                return Err(JscnError::InvalidDomain(format!("edge {e:?} in both train and test")));
            }
            has_test[e.0] = true;
        }
        if let Some(u) = has_test.iter().position(|&t| !t) {
            return Err(JscnError::InvalidDomain(format!(
                "target user {} has no test edge",
                self.target.users()[u]
            )));
        }
        let domains = self.domains();
        for (m, n, rows) in self.shared.unordered() {
            for &(a, b) in rows {
                let (dm, dn) = (domains.get(m), domains.get(n));
                match (dm, dn) {
                    (Some(dm), Some(dn)) if a < dm.n_users() && b < dn.n_users() => {
                        if dm.users()[a] != dn.users()[b] {
                            return Err(JscnError::InvalidDomain("shared rows disagree on user id".into()));
                        }
                    }
                    _ => return Err(JscnError::InvalidDomain("shared index out of range".into())),
                }
            }
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::error::file_err(dir))?;
        write_edges(&dir.join("target_train.csv"), &id_edges(&self.target, self.target.edges()))?;
        write_edges(&dir.join("target_test.csv"), &id_edges(&self.target, &self.target_test))?;
        for (k, s) in self.sources.iter().enumerate() {
            write_edges(&dir.join(format!("source_{k}.csv")), &id_edges(s, s.edges()))?;
        }
        let names = self.domain_names();
        let domains = self.domains();
        let pairs: Vec<_> = self
            .shared
            .unordered()
            .map(|(m, n, rows)| {
                let users: Vec<&str> = rows.iter().map(|&(a, _)| domains[m].users()[a].as_str()).collect();
                json!({ "domains": [names[m], names[n]], "users": users })
            })
            .collect();
        write_json(&dir.join("shared.json"), &json!({ "pairs": pairs }))?;
        let categories: Vec<&str> = domains.iter().map(|d| d.category()).collect();
        write_json(
            &dir.join("provenance.json"),
            &json!({ "description": self.provenance, "categories": categories }),
        )?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<EdgeSet> { Ok(to_implicit(&load_ratings(&dir.join(name))?)) };
        let train = read("target_train.csv")?;
        let test = read("target_test.csv")?;
        let mut sources = Vec::new();
        while dir.join(format!("source_{}.csv", sources.len())).exists() {
            sources.push(read(&format!("source_{}.csv", sources.len()))?);
        }
        let (provenance, categories) = match std::fs::read(dir.join("provenance.json")) {
            Ok(bytes) => {
                let v: serde_json::Value = serde_json::from_slice(&bytes)?;
                let desc = v["description"].as_str().unwrap_or_default().to_string();
                let cats = v["categories"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|c| c.as_str().map(String::from)).collect())
                    .unwrap_or_default();
                (desc, cats)
            }
            Err(_) => (String::new(), Vec::new()),
        };
        let bundle = Self::from_edges(&train, &test, &sources, &categories, provenance)?;
        bundle.validate()?;
        Ok(bundle)
    }
}

pub(crate) fn default_category(k: usize) -> String {
    if k == 0 {
        "target".into()
    } else {
        format!("source_{}", k - 1)
    }
}

fn id_edges(d: &BipartiteDomain, edges: &[(usize, usize)]) -> EdgeSet {
    edges
        .iter()
        .map(|&(u, i)| (d.users()[u].clone(), d.items()[i].clone()))
        .collect()
}

pub(crate) fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).map_err(crate::error::file_err(path))?;
    Ok(())
}

fn repair_split(mut train: EdgeSet, mut test: EdgeSet) -> Result<(EdgeSet, EdgeSet)> {
    test.retain(|e| !train.contains(e));
    loop {
        // users without train edges cannot be scored
        let train_users: BTreeSet<String> = train.iter().map(|(u, _)| u.clone()).collect();
        test.retain(|(u, _)| train_users.contains(u));
        let train_items: BTreeSet<String> = train.iter().map(|(_, i)| i.clone()).collect();
        let orphans: Vec<(String, String)> = test
            .iter()
            .filter(|(_, i)| !train_items.contains(i))
            .cloned()
            .collect();
        for e in orphans {
            test.remove(&e);
            train.insert(e);
        }

        let mut item_degree: BTreeMap<String, usize> = BTreeMap::new();
        let mut by_user: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (u, i) in &train {
            *item_degree.entry(i.clone()).or_default() += 1;
            by_user.entry(u.clone()).or_default().push(i.clone());
        }
        let with_test: BTreeSet<String> = test.iter().map(|(u, _)| u.clone()).collect();
        let mut dropped = false;
        for (u, items) in by_user {
            if with_test.contains(&u) {
                continue;
            }
            // hand one train edge to test if its item stays covered
            let spare = if items.len() >= 2 {
                items.iter().find(|i| item_degree[*i] >= 2).cloned()
            } else {
                None
            };
            match spare {
                Some(i) => {
                    *item_degree.get_mut(&i).unwrap() -= 1;
                    let e = (u, i);
                    train.remove(&e);
                    test.insert(e);
                }
                None => {
                    for i in &items {
                        *item_degree.get_mut(i).unwrap() -= 1;
                        train.remove(&(u.clone(), i.clone()));
                    }
                    dropped = true;
                }
            }
        }
        // only dropping a user can orphan a test item again
        if !dropped {
            break;
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(JscnError::EliminatedByFiltering);
    }
    Ok((train, test))
}
