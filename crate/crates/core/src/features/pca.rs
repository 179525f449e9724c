//! Principal component analysis for dense or sparse row data.
//!
//! Small problems are solved exactly: the covariance matrix (when there are no
//! more columns than rows) or the Gram matrix of the centered rows is
//! eigendecomposed. When both dimensions exceed
//! [`PcaOptions::exact_limit`] a seeded randomized subspace iteration is used.
//!
//! Explained variances use the `n - 1` denominator, so the total squared
//! reconstruction error of the fitting data divided by `n - 1` equals the sum of
//! the discarded eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SparseVec;

/// Largest centered matrix (rows × columns) the automatic solver densifies.
const EXACT_MAX_CELLS: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSolver {
    #[default]
    Auto,
    Exact,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaOptions {
    pub solver: PcaSolver,
    pub exact_limit: usize,
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions { solver: PcaSolver::Auto, exact_limit: 2000, oversample: 10, power_iters: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcaError {
    #[error("need 1 <= k <= min(rows, columns); got k={k} for {rows}x{cols}")]
    InvalidK { k: usize, rows: usize, cols: usize },
    #[error("input width {got} does not match model width {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows of length `dim`, row-major.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    /// Set when `k` exceeded the numerical rank; the surplus rows are zero.
    pub rank_deficient: bool,
    /// Cached `mean · component` per component for sparse transforms.
    mean_proj: Vec<f64>,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn transform_dense(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        if x.len() != self.dim {
            return Err(PcaError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok((0..self.k)
            .map(|c| {
                self.component(c)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (xi, mi))| w * (xi - mi))
                    .sum()
            })
            .collect())
    }

    pub fn transform_sparse(&self, x: &SparseVec) -> Result<Vec<f64>, PcaError> {
        if x.dim != self.dim {
            return Err(PcaError::DimensionMismatch { expected: self.dim, got: x.dim });
        }
        Ok((0..self.k).map(|c| x.dot_dense(self.component(c)) - self.mean_proj[c]).collect())
    }

    pub fn reconstruct(&self, projected: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in projected.iter().enumerate().take(self.k) {
            for (o, w) in out.iter_mut().zip(self.component(c)) {
                *o += z * w;
            }
        }
        out
    }

    /// Sum of squared reconstruction residuals divided by `rows - 1`.
    pub fn reconstruction_error(&self, data: &DMatrix<f64>) -> Result<f64, PcaError> {
        let mut total = 0.0;
        for r in 0..data.nrows() {
            let row: Vec<f64> = data.row(r).iter().copied().collect();
            let z = self.transform_dense(&row)?;
            let back = self.reconstruct(&z);
            total += row.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / (data.nrows().max(2) - 1) as f64)
    }
}

enum Rows<'a> {
    Dense(&'a DMatrix<f64>),
    Sparse(&'a [SparseVec], usize),
}

impl Rows<'_> {
    fn n(&self) -> usize {
        match self {
            Rows::Dense(m) => m.nrows(),
            Rows::Sparse(r, _) => r.len(),
        }
    }

    fn d(&self) -> usize {
        match self {
            Rows::Dense(m) => m.ncols(),
            Rows::Sparse(_, d) => *d,
        }
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.n() as f64;
        match self {
            Rows::Dense(m) => m.row_mean().iter().copied().collect(),
            Rows::Sparse(rows, d) => {
                let mut mean = vec![0.0; *d];
                for r in *rows {
                    for (i, v) in r.iter() {
                        mean[i] += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                mean
            }
        }
    }

    /// `X_c · M` for `M` of shape d × l.
    fn centered_times(&self, mean: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
        let mu_m = DVector::from_column_slice(mean).transpose() * m;
        let mut out = match self {
            Rows::Dense(x) => *x * m,
            Rows::Sparse(rows, _) => {
                let mut out = DMatrix::zeros(rows.len(), m.ncols());
                for (r, row) in rows.iter().enumerate() {
                    for (i, v) in row.iter() {
                        for c in 0..m.ncols() {
                            out[(r, c)] += v * m[(i, c)];
                        }
                    }
                }
                out
            }
        };
        for mut row in out.row_iter_mut() {
            row -= &mu_m;
        }
        out
    }

    /// `X_cᵀ · Q` for `Q` of shape n × l.
    fn centered_t_times(&self, mean: &[f64], q: &DMatrix<f64>) -> DMatrix<f64> {
        let col_sums = q.row_sum();
        let mut out = match self {
            Rows::Dense(x) => x.transpose() * q,
            Rows::Sparse(rows, d) => {
                let mut out = DMatrix::zeros(*d, q.ncols());
                for (r, row) in rows.iter().enumerate() {
                    for (i, v) in row.iter() {
                        for c in 0..q.ncols() {
                            out[(i, c)] += v * q[(r, c)];
                        }
                    }
                }
                out
            }
        };
        for (i, mu) in mean.iter().enumerate() {
            for c in 0..q.ncols() {
                out[(i, c)] -= mu * col_sums[c];
            }
        }
        out
    }

    fn centered_dense(&self, mean: &[f64]) -> DMatrix<f64> {
        let mut x = match self {
            Rows::Dense(m) => (*m).clone(),
            Rows::Sparse(rows, d) => {
                let mut x = DMatrix::zeros(rows.len(), *d);
                for (r, row) in rows.iter().enumerate() {
                    for (i, v) in row.iter() {
                        x[(r, i)] = v;
                    }
                }
                x
            }
        };
        for mut row in x.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(mean) {
                *v -= m;
            }
        }
        x
    }
}

/// Fits a `k`-component PCA on the rows of `vectors` and returns the model with
/// the projected rows.
pub fn reduce_pca(vectors: &DMatrix<f64>, k: usize) -> Result<(PcaModel, DMatrix<f64>), PcaError> {
    let model = fit(Rows::Dense(vectors), k, &PcaOptions::default())?;
    let mut out = DMatrix::zeros(vectors.nrows(), k);
    for r in 0..vectors.nrows() {
        let row: Vec<f64> = vectors.row(r).iter().copied().collect();
        let z = model.transform_dense(&row)?;
        for c in 0..k {
            out[(r, c)] = z[c];
        }
    }
    Ok((model, out))
}

pub fn fit_pca_dense(vectors: &DMatrix<f64>, k: usize, opts: &PcaOptions) -> Result<PcaModel, PcaError> {
    fit(Rows::Dense(vectors), k, opts)
}

pub fn fit_pca_sparse(rows: &[SparseVec], dim: usize, k: usize, opts: &PcaOptions) -> Result<PcaModel, PcaError> {
    if let Some(bad) = rows.iter().find(|r| r.dim != dim) {
        return Err(PcaError::DimensionMismatch { expected: dim, got: bad.dim });
    }
    fit(Rows::Sparse(rows, dim), k, opts)
}

fn fit(rows: Rows<'_>, k: usize, opts: &PcaOptions) -> Result<PcaModel, PcaError> {
    let (n, d) = (rows.n(), rows.d());
    if k == 0 || k > n || k > d {
        return Err(PcaError::InvalidK { k, rows: n, cols: d });
    }
    let mean = rows.mean();
    let denom = (n.max(2) - 1) as f64;
    let use_exact = match opts.solver {
        PcaSolver::Exact => true,
        PcaSolver::Randomized => false,
        PcaSolver::Auto => n.min(d) <= opts.exact_limit && n.saturating_mul(d) <= EXACT_MAX_CELLS,
    };

    // (eigenvalue of X_cᵀX_c, unnormalized direction in column space)
    let mut pairs: Vec<(f64, DVector<f64>)> = if use_exact {
        let xc = rows.centered_dense(&mean);
        if d <= n {
            let cov = xc.transpose() * &xc;
            let eig = SymmetricEigen::new(cov);
            (0..d).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).collect()
        } else {
            let gram = &xc * xc.transpose();
            let eig = SymmetricEigen::new(gram);
            (0..n)
                .map(|i| {
                    let u = eig.eigenvectors.column(i).into_owned();
                    (eig.eigenvalues[i], xc.transpose() * u)
                })
                .collect()
        }
    } else {
        randomized(&rows, &mean, k, opts)
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let lambda_max = pairs.first().map_or(0.0, |p| p.0.max(0.0));
    let tol = lambda_max * 1e-12 * n.max(d) as f64;
    let mut components = vec![0.0; k * d];
    let mut explained_variance = vec![0.0; k];
    let mut rank_deficient = false;
    for (c, (lambda, dir)) in pairs.into_iter().take(k).enumerate() {
        let norm = dir.norm();
        if lambda <= tol || norm == 0.0 {
            rank_deficient = true;
            continue;
        }
        let mut v: Vec<f64> = dir.iter().map(|x| x / norm).collect();
        // sign: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components[c * d..(c + 1) * d].copy_from_slice(&v);
        explained_variance[c] = lambda / denom;
    }
    if rank_deficient {
        log::warn!("PCA: k={k} exceeds the numerical rank of the data; trailing components are zero");
    }
    let mean_proj = (0..k)
        .map(|c| components[c * d..(c + 1) * d].iter().zip(&mean).map(|(a, b)| a * b).sum())
        .collect();
    Ok(PcaModel { mean, components, explained_variance, k, dim: d, rank_deficient, mean_proj })
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn randomized(rows: &Rows<'_>, mean: &[f64], k: usize, opts: &PcaOptions) -> Vec<(f64, DVector<f64>)> {
    let (n, d) = (rows.n(), rows.d());
    let l = (k + opts.oversample).min(n).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(rows.centered_times(mean, &omega));
    for _ in 0..opts.power_iters {
        let z = orthonormalize(rows.centered_t_times(mean, &q));
        q = orthonormalize(rows.centered_times(mean, &z));
    }
    // B = Qᵀ X_c, so Bᵀ = X_cᵀ Q
    let bt = rows.centered_t_times(mean, &q);
    let small = bt.transpose() * &bt;
    let eig = SymmetricEigen::new(small);
    (0..l)
        .map(|i| {
            let u = eig.eigenvectors.column(i).into_owned();
            (eig.eigenvalues[i], &bt * u)
        })
        .collect()
}
