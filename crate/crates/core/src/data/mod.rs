//! Rating ingestion, implicit conversion, filtering, splitting, and
//! cross-domain user alignment.

mod bundle;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{JscnError, Result};
use crate::graph::BipartiteDomain;
use crate::training::SharedUserIndex;

pub use bundle::DatasetBundle;
pub use synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
}

/// Rating log in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRatings {
    pub records: Vec<RatingRecord>,
}

/// Deduplicated `(user_id, item_id)` interactions.
pub type EdgeSet = BTreeSet<(String, String)>;

/// Reads a headerless `user,item,rating,timestamp` CSV.
pub fn load_ratings(path: &Path) -> Result<RawRatings> {
    let file = std::fs::File::open(path).map_err(crate::error::file_err(path))?;
    parse_ratings(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn parse_ratings<R: BufRead>(reader: R, source: &str) -> Result<RawRatings> {
    let mut records = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = |msg: String| JscnError::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad rating {:?}", fields[2])))?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(err(format!("rating {rating} outside [1, 5]")));
        }
        let timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| err(format!("bad timestamp {:?}", fields[3])))?;
        records.push(RatingRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    Ok(RawRatings { records })
}

/// Every rated pair becomes one edge, whatever the rating value.
pub fn to_implicit(raw: &RawRatings) -> EdgeSet {
    raw.records
        .iter()
        .map(|r| (r.user_id.clone(), r.item_id.clone()))
        .collect()
}

/// Repeatedly drops users with fewer than `min_degree` edges. Items are
/// only dropped once they have no edges left.
pub fn filter_min_interactions(edges: &EdgeSet, min_degree: usize) -> Result<EdgeSet> {
    if min_degree == 0 {
        return Err(JscnError::Config("min_degree must be at least 1".into()));
    }
    let mut current = edges.clone();
    loop {
        let mut degree: BTreeMap<&str, usize> = BTreeMap::new();
        for (u, _) in &current {
            *degree.entry(u.as_str()).or_default() += 1;
        }
        let drop: BTreeSet<String> = degree
            .iter()
            .filter(|(_, &d)| d < min_degree)
            .map(|(u, _)| u.to_string())
            .collect();
        if drop.is_empty() {
            break;
        }
        // removing a user's edges only orphans items, never lowers another
        // user's degree, so one more pass reaches the fixed point
        current.retain(|(u, _)| !drop.contains(u));
    }
    if current.is_empty() {
        return Err(JscnError::EliminatedByFiltering);
    }
    Ok(current)
}

/// Per-user random split. Each user keeps at least one train and one test
/// edge; the test count is `round(fraction · degree)` clamped to
/// `[1, degree − 1]`.
pub fn split_train_test(edges: &EdgeSet, test_fraction: f64, seed: u64) -> Result<(EdgeSet, EdgeSet)> {
    let mut by_user: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (u, i) in edges {
        by_user.entry(u).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = EdgeSet::new();
    let mut test = EdgeSet::new();
    for (user, mut items) in by_user {
        if !(test_fraction > 0.0) {
            return Err(JscnError::EmptyTestSet(user.to_string()));
        }
        if items.len() < 2 {
            return Err(JscnError::TooFewEdges(user.to_string()));
        }
        items.shuffle(&mut rng);
        let n_test = ((test_fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
        for (k, item) in items.into_iter().enumerate() {
            let pair = (user.to_string(), item.to_string());
            if k < n_test {
                test.insert(pair);
            } else {
                train.insert(pair);
            }
        }
    }
    Ok((train, test))
}

/// Shared users of every domain pair, matched by user id.
pub fn align_shared_users(domains: &[BipartiteDomain]) -> SharedUserIndex {
    let mut index = SharedUserIndex::new();
    for m in 0..domains.len() {
        let rows_m: BTreeMap<&str, usize> = domains[m]
            .users()
            .iter()
            .enumerate()
            .map(|(k, u)| (u.as_str(), k))
            .collect();
        for n in (m + 1)..domains.len() {
            let rows: Vec<(usize, usize)> = domains[n]
                .users()
                .iter()
                .enumerate()
                .filter_map(|(b, u)| rows_m.get(u.as_str()).map(|&a| (a, b)))
                .collect();
            index.insert(m, n, rows);
        }
    }
    index
}

/// Size and sparsity summary of one edge set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_edges: usize,
    pub sparsity: f64,
}

pub fn edge_stats(edges: &EdgeSet) -> DomainStats {
    let users: BTreeSet<&str> = edges.iter().map(|(u, _)| u.as_str()).collect();
    let items: BTreeSet<&str> = edges.iter().map(|(_, i)| i.as_str()).collect();
    let (nu, ni, ne) = (users.len(), items.len(), edges.len());
    let sparsity = if nu == 0 || ni == 0 {
        1.0
    } else {
        1.0 - ne as f64 / (nu as f64 * ni as f64)
    };
    DomainStats {
        n_users: nu,
        n_items: ni,
        n_edges: ne,
        sparsity,
    }
}

pub fn domain_from_edges(edges: &EdgeSet, category: &str) -> Result<BipartiteDomain> {
    BipartiteDomain::from_id_pairs(edges.iter().map(|(u, i)| (u.as_str(), i.as_str())), category)
}

/// Writes edges as `user,item,1,0` lines, readable by [`load_ratings`].
pub fn write_edges(path: &Path, edges: &EdgeSet) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(crate::error::file_err(path))?);
    for (u, i) in edges {
        writeln!(out, "{u},{i},1,0")?;
    }
    out.flush()?;
    Ok(())
}
