//! Policy (generalized propensity) estimation: the conditional density
//! `p(a | w, x)` needed by the treatment-bridge solver.
//!
//! The KDE variant forms the conditional as a joint/marginal ratio of
//! Gaussian product kernels over standardized coordinates with a single
//! shared bandwidth selected by three-fold cross validation. The parametric
//! variant regresses the treatment linearly on `(w, x)` and uses the
//! Gaussian residual density, standing in for flow-based estimators in high
//! dimension.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scenario::{derived_rng, hu1_reference_density};

const LOG_SCORE_FLOOR: f64 = 1e-12;
const MARGINAL_FLOOR: f64 = 1e-300;

/// Per-coordinate affine standardization of the `(a, w, x)` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows[0].len();
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut scales = vec![0.0; d];
        for r in rows {
            for k in 0..d {
                scales[k] += (r[k] - means[k]).powi(2);
            }
        }
        for (k, s) in scales.iter_mut().enumerate() {
            *s = (*s / (n.saturating_sub(1)).max(1) as f64).sqrt();
            if *s <= 0.0 || !s.is_finite() {
                return Err(Error::DegenerateColumn(k));
            }
        }
        Ok(Self { means, scales })
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Cross-validation grid for the shared KDE bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub values: Vec<f64>,
    pub folds: usize,
}

impl Default for BandwidthGrid {
    /// 20 log-spaced values spanning the decade around the standardized
    /// scale, three folds.
    fn default() -> Self {
        let values = (0..20)
            .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 19.0))
            .collect();
        Self { values, folds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdePolicy {
    /// Standardized `(a, w, x)` training rows.
    train: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub standardization: Standardization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricGaussianPolicy {
    /// Weights over `(w, x, 1)`.
    pub weights: Vec<f64>,
    pub residual_sigma: f64,
}

/// Closed-form policy densities available for specific synthetic designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePolicy {
    /// Reference density for the first Hu design, conditional on the
    /// outcome proxy.
    Hu1Reference,
    /// Exact conditional law of the treatment given the outcome proxy in the
    /// first Hu design: A | W = w is Gaussian with mean 4.9 - 1.6 w and
    /// variance 0.84.
    Hu1Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyModel {
    Kde(KdePolicy),
    Parametric(ParametricGaussianPolicy),
    Oracle(OraclePolicy),
}

fn log_mean_exp(terms: impl Iterator<Item = f64>, n: usize) -> f64 {
    let vals: Vec<f64> = terms.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + (vals.iter().map(|v| (v - m).exp()).sum::<f64>() / n as f64).ln()
}

impl KdePolicy {
    /// Log conditional density of `a` (original units) given `(w, x)`.
    fn log_density(&self, query_std: &[f64]) -> f64 {
        let d = query_std.len();
        let b = self.bandwidth;
        let log_norm = |k: usize| -> f64 {
            -(k as f64) * (b.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
        };
        let joint = log_mean_exp(
            self.train.iter().map(|t| {
                let s: f64 = query_std
                    .iter()
                    .zip(t)
                    .map(|(q, v)| ((q - v) / b).powi(2))
                    .sum();
                -0.5 * s
            }),
            self.train.len(),
        ) + log_norm(d);
        let marginal = log_mean_exp(
            self.train.iter().map(|t| {
                let s: f64 = query_std
                    .iter()
                    .zip(t)
                    .skip(1)
                    .map(|(q, v)| ((q - v) / b).powi(2))
                    .sum();
                -0.5 * s
            }),
            self.train.len(),
        ) + log_norm(d - 1);
        // Jacobian of the treatment standardization keeps the density in
        // original treatment units.
        joint - marginal - self.standardization.scales[0].ln()
    }
}

fn query_row(a: f64, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = Vec::with_capacity(1 + w.len() + x.len());
    r.push(a);
    r.extend_from_slice(w);
    r.extend_from_slice(x);
    r
}

/// Fits the KDE policy: standardize `(a, w, x)`, select the bandwidth
/// maximizing mean held-out log conditional density over seeded folds, then
/// refit on all rows.
pub fn fit_kde_policy(data: &Dataset, grid: &BandwidthGrid, seed: u64) -> Result<KdePolicy> {
    if data.n() < 30 {
        return Err(Error::TooFewPoints { needed: 30, got: data.n() });
    }
    if grid.values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let rows = data.rows_awx();
    let standardization = Standardization::fit(&rows)?;
    let std_rows: Vec<Vec<f64>> = rows.iter().map(|r| standardization.apply(r)).collect();

    let mut order: Vec<usize> = (0..std_rows.len()).collect();
    let mut rng = derived_rng(seed, "kde_cv_folds", 0);
    order.shuffle(&mut rng);

    let folds = grid.folds.max(2);
    let mut best = (f64::NEG_INFINITY, grid.values[0]);
    for &b in &grid.values {
        let mut score_sum = 0.0;
        let mut count = 0usize;
        for f in 0..folds {
            let held: Vec<usize> =
                order.iter().cloned().skip(f).step_by(folds).collect();
            let train: Vec<Vec<f64>> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % folds != f)
                .map(|(_, &i)| std_rows[i].clone())
                .collect();
            let model = KdePolicy {
                train,
                bandwidth: b,
                standardization: standardization.clone(),
            };
            for &i in &held {
                let ld = model.log_density(&std_rows[i]);
                score_sum += ld.max(LOG_SCORE_FLOOR.ln());
                count += 1;
            }
        }
        let score = score_sum / count as f64;
        if score > best.0 {
            best = (score, b);
        }
    }
    Ok(KdePolicy { train: std_rows, bandwidth: best.1, standardization })
}

/// Fits the parametric Gaussian policy by least squares of `a` on `(w, x, 1)`.
pub fn fit_parametric_policy(data: &Dataset) -> Result<ParametricGaussianPolicy> {
    use nalgebra::{DMatrix, DVector};
    let n = data.n();
    let wx = data.rows_wx();
    let p = wx[0].len() + 1;
    if n <= p {
        return Err(Error::TooFewPoints { needed: p + 1, got: n });
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j < p - 1 { wx[i][j] } else { 1.0 });
    let target = DVector::from_vec(data.a.clone());
    let svd = design.clone().svd(true, true);
    let weights = svd
        .solve(&target, 1e-12)
        .map_err(|e| Error::SolveFailure(e.to_string()))?;
    let resid = &design * &weights - &target;
    let dof = (n - p).max(1) as f64;
    let sigma = (resid.norm_squared() / dof).sqrt().max(1e-12);
    Ok(ParametricGaussianPolicy {
        weights: weights.iter().cloned().collect(),
        residual_sigma: sigma,
    })
}

impl PolicyModel {
    /// Conditional density `p(a | w, x)`, nonnegative.
    pub fn density_at(&self, a: f64, w: &[f64], x: &[f64]) -> Result<f64> {
        match self {
            PolicyModel::Kde(m) => {
                let expected = m.standardization.means.len();
                let got = 1 + w.len() + x.len();
                if got != expected {
                    return Err(Error::DimensionMismatch { expected, got });
                }
                let q = m.standardization.apply(&query_row(a, w, x));
                let b = m.bandwidth;
                // marginal underflow check in linear space
                let log_marg = log_mean_exp(
                    m.train.iter().map(|t| {
                        let s: f64 =
                            q.iter().zip(t).skip(1).map(|(u, v)| ((u - v) / b).powi(2)).sum();
                        -0.5 * s
                    }),
                    m.train.len(),
                );
                if log_marg.exp() < MARGINAL_FLOOR {
                    return Err(Error::MarginalUnderflow(0));
                }
                Ok(m.log_density(&q).exp())
            }
            PolicyModel::Parametric(m) => {
                let got = w.len() + x.len() + 1;
                if got != m.weights.len() {
                    return Err(Error::DimensionMismatch { expected: m.weights.len(), got });
                }
                let mut mu = 0.0;
                for (c, v) in m.weights.iter().zip(w.iter().chain(x.iter())) {
                    mu += c * v;
                }
                mu += m.weights[m.weights.len() - 1];
                let u = (a - mu) / m.residual_sigma;
                Ok((-0.5 * u * u).exp()
                    / (m.residual_sigma * (2.0 * std::f64::consts::PI).sqrt()))
            }
            PolicyModel::Oracle(oracle) => {
                if w.is_empty() {
                    return Err(Error::DimensionMismatch { expected: 1, got: 0 });
                }
                match oracle {
                    OraclePolicy::Hu1Reference => Ok(hu1_reference_density(a, w[0])),
                    OraclePolicy::Hu1Conditional => {
                        let var = 0.84;
                        let d = a - (4.9 - 1.6 * w[0]);
                        Ok((-d * d / (2.0 * var)).exp()
                            / (2.0 * std::f64::consts::PI * var).sqrt())
                    }
                }
            }
        }
    }

    /// `1 / max(p(a_i | w_i, x_i), clip_floor)` per row.
    pub fn reciprocal_density(&self, rows: &Dataset, clip_floor: f64) -> Result<Vec<f64>> {
        (0..rows.n())
            .map(|i| {
                let p = self.density_at(rows.a[i], &rows.w[i], &rows.x[i])?;
                Ok(1.0 / p.max(clip_floor))
            })
            .collect()
    }
}
