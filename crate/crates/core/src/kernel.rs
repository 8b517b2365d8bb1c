//! Dense kernel and matrix primitives shared by the estimation modules:
//! Gaussian RKHS kernels with median-heuristic scale, Gram matrices, PSD
//! square roots, regularized solves, and the Epanechnikov smoothing kernel.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian RKHS kernel `k(x, y) = exp(-gamma * ||x - y||^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Inverse squared length-scale; must be positive and finite.
    pub gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(Error::Config(format!("gamma must be positive and finite, got {gamma}")))
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-self.gamma * d2).exp()
    }
}

/// Second-order Epanechnikov smoothing kernel `K(u) = 3/4 (1 - u^2)` on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    /// Second moment of the kernel.
    pub kappa2: f64,
    /// Integral of the squared kernel.
    pub omega2: f64,
}

impl SmoothingKernel {
    pub fn epanechnikov() -> Self {
        Self { kappa2: 0.2, omega2: 0.6 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            0.75 * (1.0 - u * u)
        } else {
            0.0
        }
    }

    /// Scaled weight `(1/h) K(u/h)`; zero outside `|u| <= h`.
    pub fn smoothing_weight(&self, u: f64, h_bw: f64) -> Result<f64> {
        if h_bw <= 0.0 {
            return Err(Error::NonpositiveBandwidth(h_bw));
        }
        Ok(self.eval(u / h_bw) / h_bw)
    }
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        Self::epanechnikov()
    }
}

/// Median heuristic: `gamma = 1 / median{||x_i - x_j||^2}_{i<j}`.
///
/// Pairs are enumerated over a seeded uniform subsample of at most
/// `subset_cap` points when the input is larger.
pub fn median_heuristic(points: &[Vec<f64>], subset_cap: usize, seed: u64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: points.len() });
    }
    let subset: Vec<&Vec<f64>> = if points.len() > subset_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, points.len(), subset_cap)
            .into_iter()
            .map(|i| &points[i])
            .collect()
    } else {
        points.iter().collect()
    };
    let mut d2s = Vec::with_capacity(subset.len() * (subset.len() - 1) / 2);
    for i in 0..subset.len() {
        for j in (i + 1)..subset.len() {
            let d2: f64 = subset[i]
                .iter()
                .zip(subset[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2s.push(d2);
        }
    }
    d2s.sort_by(|a, b| a.total_cmp(b));
    let m = d2s.len();
    let median = if m % 2 == 1 {
        d2s[m / 2]
    } else {
        0.5 * (d2s[m / 2 - 1] + d2s[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::AllPointsEqual);
    }
    Ok(1.0 / median)
}

/// Gram matrix with entry `(i, j) = k(a_i, b_j)`.
pub fn gram_matrix(
    rows_a: &[Vec<f64>],
    rows_b: &[Vec<f64>],
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    let dim = rows_a.first().or_else(|| rows_b.first()).map_or(0, |r| r.len());
    for r in rows_a.iter().chain(rows_b.iter()) {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
    }
    let mut k = DMatrix::zeros(rows_a.len(), rows_b.len());
    for i in 0..rows_a.len() {
        for j in 0..rows_b.len() {
            k[(i, j)] = spec.eval(&rows_a[i], &rows_b[j]);
        }
    }
    Ok(k)
}

fn check_symmetric(k: &DMatrix<f64>) -> Result<()> {
    if !k.is_square() {
        return Err(Error::NotSymmetric);
    }
    let scale = k.amax().max(1.0);
    for i in 0..k.nrows() {
        for j in (i + 1)..k.ncols() {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Default diagonal jitter `1e-8 * trace(K) / n` for nearly rank-deficient
/// Gram matrices.
pub fn default_jitter(k: &DMatrix<f64>) -> f64 {
    if k.nrows() == 0 {
        return 0.0;
    }
    1e-8 * k.trace() / k.nrows() as f64
}

/// Symmetric PSD square root via eigendecomposition. Jitter is added to the
/// diagonal first; eigenvalues are clamped at zero (negatives are round-off
/// for PSD inputs).
pub fn psd_sqrt(k: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    check_symmetric(k)?;
    let mut kj = k.clone();
    for i in 0..kj.nrows() {
        kj[(i, i)] += jitter;
    }
    let eig = kj.symmetric_eigen();
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose())
}

/// Solves `(k + ridge I) x = rhs` through a symmetric-definite factorization.
pub fn regularized_solve(
    k: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    check_symmetric(k)?;
    if ridge <= 0.0 {
        return Err(Error::Config(format!("ridge must be positive, got {ridge}")));
    }
    let mut kr = k.clone();
    for i in 0..kr.nrows() {
        kr[(i, i)] += ridge;
    }
    let chol = kr.cholesky().ok_or(Error::SingularAfterRidge)?;
    Ok(chol.solve(rhs))
}
