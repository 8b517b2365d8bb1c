//! Causal-effect estimators on a treatment grid: the outcome-bridge plug-in
//! (POR), the kernel-smoothed inverse probability weighted estimator
//! (PKIPW), and the doubly robust combination (PKDR).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeH, BridgeQ};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, KernelSpec, SmoothingKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Por,
    Pkipw,
    Pkdr,
}

impl Method {
    pub fn parse_id(s: &str) -> Result<Self> {
        match s {
            "por" => Ok(Method::Por),
            "pkipw" => Ok(Method::Pkipw),
            "pkdr" => Ok(Method::Pkdr),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Method::Por => "por",
            Method::Pkipw => "pkipw",
            Method::Pkdr => "pkdr",
        }
    }
}

/// Epanechnikov smoothing window derived from `h_bw = c sigma_hat n^{-1/5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub c: f64,
    pub sigma_hat: f64,
    pub n: usize,
    pub h_bw: f64,
    pub kernel: SmoothingKernel,
}

/// Sample-std bandwidth rule over the treatment column.
pub fn bandwidth_rule(c: f64, data: &Dataset) -> Result<SmoothingConfig> {
    if c <= 0.0 {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mean = data.a.iter().sum::<f64>() / n as f64;
    let var = data.a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::ConstantTreatment);
    }
    let sigma_hat = var.sqrt();
    Ok(SmoothingConfig {
        c,
        sigma_hat,
        n,
        h_bw: c * sigma_hat * (n as f64).powf(-0.2),
        kernel: SmoothingKernel::epanechnikov(),
    })
}

/// Uniform treatment grid `(a_min, a_max, count)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a_min: f64,
    pub a_max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.a_min];
        }
        let step = (self.a_max - self.a_min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.a_min + step * i as f64).collect()
    }
}

/// Per-grid-point estimates of the dose-response curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteCurve {
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub method: Method,
}

/// Plug-in outcome-bridge average `(1/n) sum_i h(a, w_i, x_i)`.
pub fn por(h: &BridgeH, data: &Dataset, a: f64) -> Result<f64> {
    let n = data.n();
    let mut acc = 0.0;
    for i in 0..n {
        acc += h.eval(a, &data.w[i], &data.x[i])?;
    }
    Ok(acc / n as f64)
}

/// Kernel-weighted IPW: `(1/n) sum_i K_h(a_i - a) q(a, z_i, x_i) y_i`. The
/// treatment bridge is evaluated at the target treatment, not at `a_i`.
pub fn pkipw(q: &BridgeQ, data: &Dataset, a: f64, smooth: &SmoothingConfig) -> Result<f64> {
    let n = data.n();
    let mut acc = 0.0;
    for i in 0..n {
        let wgt = smooth.kernel.smoothing_weight(data.a[i] - a, smooth.h_bw)?;
        if wgt != 0.0 {
            acc += wgt * q.eval(a, &data.z[i], &data.x[i])? * data.y[i];
        }
    }
    Ok(acc / n as f64)
}

/// Doubly robust estimator:
/// `(1/n) sum_i [K_h(a_i - a) (y_i - h(a, w_i, x_i)) q(a, z_i, x_i) + h(a, w_i, x_i)]`.
pub fn pkdr(
    h: &BridgeH,
    q: &BridgeQ,
    data: &Dataset,
    a: f64,
    smooth: &SmoothingConfig,
) -> Result<f64> {
    let n = data.n();
    let mut acc = 0.0;
    for i in 0..n {
        let h_val = h.eval(a, &data.w[i], &data.x[i])?;
        let wgt = smooth.kernel.smoothing_weight(data.a[i] - a, smooth.h_bw)?;
        let corr = if wgt != 0.0 {
            wgt * (data.y[i] - h_val) * q.eval(a, &data.z[i], &data.x[i])?
        } else {
            0.0
        };
        acc += corr + h_val;
    }
    Ok(acc / n as f64)
}

/// Precomputed bridge evaluations over a grid: the Gaussian kernel factorizes
/// over the treatment coordinate and the rest, so the proxy-covariate cross
/// matrix is built once and each grid point costs one matrix-vector product.
pub struct CurveCache {
    /// `h(a_g, w_i, x_i)` with grid on rows.
    pub h_vals: Option<DMatrix<f64>>,
    /// `q(a_g, z_i, x_i)` with grid on rows.
    pub q_vals: Option<DMatrix<f64>>,
    pub grid: Vec<f64>,
}

fn rest_of(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r[1..].to_vec()).collect()
}

fn treatment_of(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().map(|r| r[0]).collect()
}

fn expansion_over_grid(
    weights: &[f64],
    train: &[Vec<f64>],
    kernel: &KernelSpec,
    eval_rest: &[Vec<f64>],
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    let cross = gram_matrix(eval_rest, &rest_of(train), kernel)?;
    let a_train = treatment_of(train);
    let mut out = DMatrix::zeros(grid.len(), eval_rest.len());
    for (g, &a) in grid.iter().enumerate() {
        let wv = DVector::from_iterator(
            a_train.len(),
            a_train
                .iter()
                .zip(weights)
                .map(|(&aj, &cj)| cj * (-kernel.gamma * (a - aj) * (a - aj)).exp()),
        );
        let vals = &cross * wv;
        out.row_mut(g).copy_from_slice(vals.as_slice());
    }
    Ok(out)
}

impl CurveCache {
    pub fn build(
        h: Option<&BridgeH>,
        q: Option<&BridgeQ>,
        data: &Dataset,
        grid: &[f64],
    ) -> Result<Self> {
        let h_vals = match h {
            Some(h) => Some(expansion_over_grid(
                &h.alpha,
                &h.train_awx,
                &h.kernel_h,
                &data.rows_wx(),
                grid,
            )?),
            None => None,
        };
        let q_vals = match q {
            Some(q) => {
                let zx: Vec<Vec<f64>> = (0..data.n())
                    .map(|i| {
                        let mut r = data.z[i].clone();
                        r.extend_from_slice(&data.x[i]);
                        r
                    })
                    .collect();
                Some(expansion_over_grid(&q.beta, &q.train_azx, &q.kernel_q, &zx, grid)?)
            }
            None => None,
        };
        Ok(Self { h_vals, q_vals, grid: grid.to_vec() })
    }

    pub fn estimate(
        &self,
        method: Method,
        data: &Dataset,
        smooth: Option<&SmoothingConfig>,
    ) -> Result<AteCurve> {
        let n = data.n() as f64;
        let mut estimates = Vec::with_capacity(self.grid.len());
        for (g, &a) in self.grid.iter().enumerate() {
            let value = match method {
                Method::Por => {
                    let h = self.h_vals.as_ref().ok_or_else(|| {
                        Error::Config("POR needs a fitted outcome bridge".into())
                    })?;
                    h.row(g).sum() / n
                }
                Method::Pkipw => {
                    let q = self.q_vals.as_ref().ok_or_else(|| {
                        Error::Config("PKIPW needs a fitted treatment bridge".into())
                    })?;
                    let sm = smooth
                        .ok_or_else(|| Error::Config("PKIPW needs a smoothing config".into()))?;
                    let mut acc = 0.0;
                    for i in 0..data.n() {
                        let wgt = sm.kernel.smoothing_weight(data.a[i] - a, sm.h_bw)?;
                        if wgt != 0.0 {
                            acc += wgt * q[(g, i)] * data.y[i];
                        }
                    }
                    acc / n
                }
                Method::Pkdr => {
                    let h = self.h_vals.as_ref().ok_or_else(|| {
                        Error::Config("PKDR needs a fitted outcome bridge".into())
                    })?;
                    let q = self.q_vals.as_ref().ok_or_else(|| {
                        Error::Config("PKDR needs a fitted treatment bridge".into())
                    })?;
                    let sm = smooth
                        .ok_or_else(|| Error::Config("PKDR needs a smoothing config".into()))?;
                    let mut acc = 0.0;
                    for i in 0..data.n() {
                        let h_val = h[(g, i)];
                        let wgt = sm.kernel.smoothing_weight(data.a[i] - a, sm.h_bw)?;
                        if wgt != 0.0 {
                            acc += wgt * (data.y[i] - h_val) * q[(g, i)];
                        }
                        acc += h_val;
                    }
                    acc / n
                }
            };
            estimates.push(value);
        }
        Ok(AteCurve { grid: self.grid.clone(), estimates, method })
    }
}

/// Applies the chosen point estimator at each grid value.
pub fn estimate_curve(
    method: Method,
    h: Option<&BridgeH>,
    q: Option<&BridgeQ>,
    data: &Dataset,
    grid_spec: &GridSpec,
    smooth: Option<&SmoothingConfig>,
) -> Result<AteCurve> {
    let grid = grid_spec.points();
    CurveCache::build(h, q, data, &grid)?.estimate(method, data, smooth)
}
