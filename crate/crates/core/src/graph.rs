//! User–item bipartite graphs, their laplacians, and laplacian spectra.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::container::{Container, SPECTRUM_MAGIC};
use crate::eigen::symmetric_eigen;
use crate::error::{JscnError, Result};

/// Default upper bound on `|U| + |I|` for the dense eigendecomposition.
pub const DEFAULT_SPECTRUM_CAP: usize = 20_000;

/// One domain's interaction graph.
///
/// Users and items are indexed by their position in `users`/`items`.
/// Edges are kept sorted and unique, and every vertex has at least one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteDomain {
    users: Vec<String>,
    items: Vec<String>,
    edges: Vec<(usize, usize)>,
    category: String,
}

impl BipartiteDomain {
    pub fn new(
        users: Vec<String>,
        items: Vec<String>,
        edges: Vec<(usize, usize)>,
        category: impl Into<String>,
    ) -> Result<Self> {
        if users.is_empty() || items.is_empty() {
            return Err(JscnError::InvalidDomain(
                "domain needs at least one user and one item".into(),
            ));
        }
        let mut sorted = edges;
        sorted.sort_unstable();
        let before = sorted.len();
        sorted.dedup();
        if sorted.len() != before {
            return Err(JscnError::InvalidDomain("duplicate edge".into()));
        }
        let mut user_deg = vec![0usize; users.len()];
        let mut item_deg = vec![0usize; items.len()];
        for &(u, i) in &sorted {
            if u >= users.len() || i >= items.len() {
                return Err(JscnError::InvalidDomain(format!(
                    "edge ({u}, {i}) out of range for {} users, {} items",
                    users.len(),
                    items.len()
                )));
            }
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        if let Some(u) = user_deg.iter().position(|&d| d == 0) {
            return Err(JscnError::IsolatedVertex(format!("user {:?}", users[u])));
        }
        if let Some(i) = item_deg.iter().position(|&d| d == 0) {
            return Err(JscnError::IsolatedVertex(format!("item {:?}", items[i])));
        }
        Ok(Self {
            users,
            items,
            edges: sorted,
            category: category.into(),
        })
    }

    /// Builds a domain from `(user_id, item_id)` pairs. Ids are ordered
    /// lexicographically; duplicate pairs collapse.
    pub fn from_id_pairs<'a, I>(pairs: I, category: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let pairs: BTreeSet<(&str, &str)> = pairs.into_iter().collect();
        let users: BTreeSet<&str> = pairs.iter().map(|p| p.0).collect();
        let items: BTreeSet<&str> = pairs.iter().map(|p| p.1).collect();
        let user_idx: BTreeMap<&str, usize> = users.iter().enumerate().map(|(k, u)| (*u, k)).collect();
        let item_idx: BTreeMap<&str, usize> = items.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let edges = pairs
            .iter()
            .map(|(u, i)| (user_idx[u], item_idx[i]))
            .collect();
        Self::new(
            users.into_iter().map(String::from).collect(),
            items.into_iter().map(String::from).collect(),
            edges,
            category,
        )
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(id)).ok().or_else(|| {
            // fall back for domains built with unsorted ids
            self.users.iter().position(|u| u == id)
        })
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items
            .binary_search_by(|i| i.as_str().cmp(id))
            .ok()
            .or_else(|| self.items.iter().position(|i| i == id))
    }

    /// Items of each user, ascending.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for &(u, i) in &self.edges {
            out[u].push(i);
        }
        out
    }

    /// `1 − |E| / (|U|·|I|)`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.edges.len() as f64 / (self.users.len() as f64 * self.items.len() as f64)
    }
}

/// Implicit feedback matrix `R`, `|U| × |I|`, entries 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMatrix(pub Array2<f64>);

/// Adjacency, degrees, and symmetric normalized laplacian of a bipartite graph.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub a: Array2<f64>,
    pub degree: Array1<f64>,
    /// `I − D^{-1/2} A D^{-1/2}`
    pub l_sym: Array2<f64>,
    pub n_users: usize,
}

impl Laplacian {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `I + l_sym`, the convolution filter computed without a basis.
    pub fn direct_filter(&self) -> Array2<f64> {
        &self.l_sym + &Array2::<f64>::eye(self.n())
    }
}

/// Laplacian eigenpairs and the spectral filter `℧℧ᵀ + ℧Λ℧ᵀ`.
#[derive(Debug, Clone)]
pub struct DomainSpectrum {
    pub eigenvectors: Array2<f64>,
    /// Ascending.
    pub eigenvalues: Array1<f64>,
    pub filter: Array2<f64>,
}

impl DomainSpectrum {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Writes the spectrum cache file.
    pub fn save(&self, path: &Path, category: &str) -> Result<()> {
        let mut c = Container::new(serde_json::json!({ "category": category, "n": self.n() }));
        c.push_vector("eigenvalues", &self.eigenvalues);
        c.push_matrix("eigenvectors", &self.eigenvectors);
        c.push_matrix("filter", &self.filter);
        c.write(path, SPECTRUM_MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, SPECTRUM_MAGIC)?;
        Ok(Self {
            eigenvalues: c.vector("eigenvalues")?,
            eigenvectors: c.matrix("eigenvectors")?,
            filter: c.matrix("filter")?,
        })
    }
}

pub fn build_feedback_matrix(domain: &BipartiteDomain) -> FeedbackMatrix {
    let mut r = Array2::zeros((domain.n_users(), domain.n_items()));
    for &(u, i) in domain.edges() {
        r[[u, i]] = 1.0;
    }
    FeedbackMatrix(r)
}

pub fn build_laplacian(fm: &FeedbackMatrix) -> Result<Laplacian> {
    let r = &fm.0;
    let (nu, ni) = r.dim();
    let n = nu + ni;
    let mut a = Array2::zeros((n, n));
    for u in 0..nu {
        for i in 0..ni {
            let x = r[[u, i]];
            if x != 0.0 {
                a[[u, nu + i]] = x;
                a[[nu + i, u]] = x;
            }
        }
    }
    let degree = a.sum_axis(ndarray::Axis(1));
    if let Some(k) = degree.iter().position(|&d| d <= 0.0) {
        let name = if k < nu {
            format!("user row {k}")
        } else {
            format!("item column {}", k - nu)
        };
        return Err(JscnError::IsolatedVertex(name));
    }
    let inv_sqrt = degree.mapv(|d| 1.0 / d.sqrt());
    let mut l_sym = Array2::<f64>::eye(n);
    for ((k, t), &x) in a.indexed_iter() {
        if x != 0.0 {
            l_sym[[k, t]] -= inv_sqrt[k] * x * inv_sqrt[t];
        }
    }
    Ok(Laplacian {
        a,
        degree,
        l_sym,
        n_users: nu,
    })
}

pub fn eigendecompose(lap: &Laplacian) -> Result<DomainSpectrum> {
    eigendecompose_with_cap(lap, DEFAULT_SPECTRUM_CAP)
}

pub fn eigendecompose_with_cap(lap: &Laplacian, cap: usize) -> Result<DomainSpectrum> {
    let n = lap.n();
    if n > cap {
        return Err(JscnError::GraphTooLarge { n, cap });
    }
    let eig = symmetric_eigen(&lap.l_sym)?;
    let mut vectors = eig.vectors;
    canonicalize_signs(&mut vectors);
    let scaled = &vectors * &eig.values.view().insert_axis(ndarray::Axis(0));
    let filter = vectors.dot(&vectors.t()) + scaled.dot(&vectors.t());
    Ok(DomainSpectrum {
        eigenvectors: vectors,
        eigenvalues: eig.values,
        filter,
    })
}

/// Flips each column so its largest-magnitude entry is positive
/// (first such entry on ties).
fn canonicalize_signs(v: &mut Array2<f64>) {
    for mut col in v.columns_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// Full pipeline from a domain to its spectrum.
pub fn domain_spectrum(domain: &BipartiteDomain) -> Result<DomainSpectrum> {
    eigendecompose(&build_laplacian(&build_feedback_matrix(domain))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn feedback_identity_pattern() {
        let d = BipartiteDomain::new(s(&["a", "b"]), s(&["x", "y"]), vec![(0, 0), (1, 1)], "t").unwrap();
        assert_eq!(build_feedback_matrix(&d).0, array![[1.0, 0.0], [0.0, 1.0]]);
        let d = BipartiteDomain::new(s(&["a"]), s(&["x"]), vec![(0, 0)], "t").unwrap();
        assert_eq!(build_feedback_matrix(&d).0, array![[1.0]]);
    }

    #[test]
    fn feedback_toy_target_domain() {
        let pairs = [("A", "1"), ("B", "2"), ("B", "3"), ("C", "3"), ("C", "4"), ("D", "4")];
        let d = BipartiteDomain::from_id_pairs(pairs, "Movies").unwrap();
        let r = build_feedback_matrix(&d).0;
        let expected = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 0.0, 1.0]
        ];
        assert_eq!(r, expected);
    }

    #[test]
    fn domain_rejects_isolated_and_duplicates() {
        let err = BipartiteDomain::new(s(&["a", "b"]), s(&["x"]), vec![(0, 0)], "t").unwrap_err();
        assert!(matches!(err, JscnError::IsolatedVertex(_)));
        let err = BipartiteDomain::new(s(&["a"]), s(&["x"]), vec![(0, 0), (0, 0)], "t").unwrap_err();
        assert!(matches!(err, JscnError::InvalidDomain(_)));
        let err = BipartiteDomain::new(s(&["a"]), s(&["x"]), vec![(0, 1)], "t").unwrap_err();
        assert!(matches!(err, JscnError::InvalidDomain(_)));
        assert!(BipartiteDomain::new(vec![], s(&["x"]), vec![], "t").is_err());
    }

    #[test]
    fn laplacian_single_edge() {
        let lap = build_laplacian(&FeedbackMatrix(array![[1.0]])).unwrap();
        assert_eq!(lap.a, array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(lap.degree.to_vec(), vec![1.0, 1.0]);
        assert_eq!(lap.l_sym, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_one_user_two_items() {
        let lap = build_laplacian(&FeedbackMatrix(array![[1.0, 1.0]])).unwrap();
        assert_eq!(lap.degree.to_vec(), vec![2.0, 1.0, 1.0]);
        let h = 1.0 / 2f64.sqrt();
        let expected = array![[1.0, -h, -h], [-h, 1.0, 0.0], [-h, 0.0, 1.0]];
        assert!(max_abs_diff(&lap.l_sym, &expected) < 1e-15);
    }

    #[test]
    fn laplacian_zero_column_is_isolated_vertex() {
        let err = build_laplacian(&FeedbackMatrix(array![[1.0, 0.0]])).unwrap_err();
        match err {
            JscnError::IsolatedVertex(name) => assert_eq!(name, "item column 1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_is_isolated(&array![[0.0, 0.0], [1.0, 1.0]]));
    }

    fn err_is_isolated(r: &Array2<f64>) -> bool {
        matches!(build_laplacian(&FeedbackMatrix(r.clone())), Err(JscnError::IsolatedVertex(_)))
    }

    #[test]
    fn spectrum_single_edge() {
        let lap = build_laplacian(&FeedbackMatrix(array![[1.0]])).unwrap();
        let sp = eigendecompose(&lap).unwrap();
        assert!(sp.eigenvalues[0].abs() < 1e-12);
        assert!((sp.eigenvalues[1] - 2.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // canonical signs: largest-magnitude entry positive, first on ties
        assert!((sp.eigenvectors[[0, 0]] - h).abs() < 1e-12);
        assert!((sp.eigenvectors[[1, 0]] - h).abs() < 1e-12);
        assert!((sp.eigenvectors[[0, 1]] - h).abs() < 1e-12);
        assert!((sp.eigenvectors[[1, 1]] + h).abs() < 1e-12);
        assert!(max_abs_diff(&sp.filter, &array![[2.0, -1.0], [-1.0, 2.0]]) < 1e-12);
    }

    #[test]
    fn spectrum_cap() {
        let lap = build_laplacian(&FeedbackMatrix(array![[1.0, 1.0]])).unwrap();
        let err = eigendecompose_with_cap(&lap, 2).unwrap_err();
        assert!(err.to_string().contains("graph too large for dense spectrum"));
    }

    #[test]
    fn stochastic_similarity() {
        let r = array![[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 0.0]];
        let lap = build_laplacian(&FeedbackMatrix(r)).unwrap();
        let n = lap.n();
        let norm_adj = Array2::<f64>::eye(n) - &lap.l_sym;
        let sqrt_d = lap.degree.mapv(f64::sqrt);
        let out = norm_adj.dot(&sqrt_d);
        for k in 0..n {
            assert!((out[k] - sqrt_d[k]).abs() < 1e-10);
        }
    }
}
