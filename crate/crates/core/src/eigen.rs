//! Dense symmetric eigensolver.
//!
//! Householder reduction to tridiagonal form followed by implicit-shift QL
//! iteration (the classic `tred2`/`tql2` pair). Float64 throughout.

use ndarray::{Array1, Array2};

use crate::error::{JscnError, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<f64>,
}

/// Decomposes a symmetric matrix. Only the lower triangle is read.
///
/// QL iteration is capped at `100 * n` total sweeps; exceeding it returns
/// [`JscnError::NoConvergence`] with the offending off-diagonal magnitude.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(crate::error::shape_err(
            "symmetric_eigen",
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut v = Dense {
        n,
        data: a.iter().copied().collect(),
    };
    // fill the upper triangle from the lower one
    for i in 0..n {
        for j in 0..i {
            let x = v.get(i, j);
            v.set(j, i, x);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&k| d[k]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v.get(row, k);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

struct Dense {
    n: usize,
    data: Vec<f64>,
}

impl Dense {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.n + j] = x;
    }

    #[inline]
    fn sub(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.n + j] -= x;
    }
}

fn tred2(v: &mut Dense, d: &mut [f64], e: &mut [f64]) {
    let n = v.n;
    for j in 0..n {
        d[j] = v.get(n - 1, j);
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
                v.set(j, i, 0.0);
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v.set(j, i, f);
                g = e[j] + v.get(j, j) * f;
                for k in (j + 1)..i {
                    g += v.get(k, j) * d[k];
                    e[k] += v.get(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v.sub(k, j, f * e[k] + g * d[k]);
                }
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n - 1 {
        let x = v.get(i, i);
        v.set(n - 1, i, x);
        v.set(i, i, 1.0);
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.get(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v.get(k, i + 1) * v.get(k, j);
                }
                for k in 0..=i {
                    v.sub(k, j, g * d[k]);
                }
            }
        }
        for k in 0..=i {
            v.set(k, i + 1, 0.0);
        }
    }
    for j in 0..n {
        d[j] = v.get(n - 1, j);
        v.set(n - 1, j, 0.0);
    }
    v.set(n - 1, n - 1, 1.0);
    e[0] = 0.0;
}

fn tql2(v: &mut Dense, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = v.n;
    let max_iter = 100 * n;
    let mut iterations = 0usize;

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        let m = m.min(n - 1);

        if m > l {
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(JscnError::NoConvergence {
                        iterations,
                        residual: e[l].abs(),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    for k in 0..n {
                        let h = v.get(k, i + 1);
                        let vi = v.get(k, i);
                        v.set(k, i + 1, s * vi + c * h);
                        v.set(k, i, c * vi - s * h);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
