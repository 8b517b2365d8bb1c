//! Seeded generators for the synthetic designs, the proxy misspecification
//! transforms, and Monte Carlo ground-truth dose-response curves.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Synthetic design family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScenarioFamily {
    /// Low-dimensional design with two-dimensional proxies. The scenario
    /// index 1..4 selects the default proxy misspecification applied at
    /// estimation time; the generative process is identical for all four.
    LowDim { scenario: u8 },
    HighDim { dim_x: usize, dim_z: usize, dim_w: usize },
    Hu { scenario: u8 },
    TimeSeries { xi: f64, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: ScenarioFamily,
    pub n: usize,
    pub seed: u64,
}

/// Generated sample plus the latent confounder draws. Latents are kept out
/// of the observed [`Dataset`] so no estimator can read them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub observed: Dataset,
    pub latents: Vec<Vec<f64>>,
}

/// Proxy transform `|v|^{1/2} + 1` applied at estimation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisspecTransform {
    #[default]
    None,
    WStar,
    ZStar,
    Both,
}

impl ScenarioFamily {
    pub fn high_dim_default() -> Self {
        ScenarioFamily::HighDim { dim_x: 100, dim_z: 10, dim_w: 10 }
    }

    pub fn time_series_default() -> Self {
        ScenarioFamily::TimeSeries { xi: 0.8, eta: 0.5 }
    }

    /// Parses a CLI scenario id such as `lowdim`, `lowdim3`, `highdim`,
    /// `hu1`, or `timeseries`.
    pub fn parse_id(id: &str) -> Result<Self> {
        match id {
            "lowdim" | "lowdim1" => Ok(ScenarioFamily::LowDim { scenario: 1 }),
            "lowdim2" => Ok(ScenarioFamily::LowDim { scenario: 2 }),
            "lowdim3" => Ok(ScenarioFamily::LowDim { scenario: 3 }),
            "lowdim4" => Ok(ScenarioFamily::LowDim { scenario: 4 }),
            "highdim" => Ok(Self::high_dim_default()),
            "hu1" => Ok(ScenarioFamily::Hu { scenario: 1 }),
            "hu2" => Ok(ScenarioFamily::Hu { scenario: 2 }),
            "hu3" => Ok(ScenarioFamily::Hu { scenario: 3 }),
            "timeseries" => Ok(Self::time_series_default()),
            other => Err(Error::InvalidSpec(format!("unknown scenario id {other:?}"))),
        }
    }

    /// Treatment support used for evaluation grids.
    pub fn default_support(&self) -> (f64, f64) {
        match self {
            ScenarioFamily::LowDim { .. } => (-1.0, 2.0),
            ScenarioFamily::HighDim { .. } => (0.0, 1.0),
            ScenarioFamily::Hu { scenario: 2 } => (4.0, 5.5),
            ScenarioFamily::Hu { .. } => (5.5, 7.0),
            ScenarioFamily::TimeSeries { .. } => (-2.0, 2.0),
        }
    }

    /// Misspecification implied by the low-dim scenario index.
    pub fn default_misspec(&self) -> MisspecTransform {
        match self {
            ScenarioFamily::LowDim { scenario: 2 } => MisspecTransform::WStar,
            ScenarioFamily::LowDim { scenario: 3 } => MisspecTransform::ZStar,
            ScenarioFamily::LowDim { scenario: 4 } => MisspecTransform::Both,
            _ => MisspecTransform::None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ScenarioFamily::LowDim { scenario } | ScenarioFamily::Hu { scenario }
                if !(1..=4).contains(scenario) =>
            {
                Err(Error::InvalidSpec(format!("scenario index {scenario} out of range")))
            }
            ScenarioFamily::Hu { scenario } if *scenario > 3 => {
                Err(Error::InvalidSpec(format!("hu scenario {scenario} out of range")))
            }
            ScenarioFamily::TimeSeries { xi, .. } if xi.abs() >= 1.0 => {
                Err(Error::InvalidSpec(format!("|xi| must be < 1, got {xi}")))
            }
            _ => Ok(()),
        }
    }
}

/// Derives an independent RNG stream from `(seed, label, index)` so that
/// replicate streams do not depend on thread schedule.
pub fn derived_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Variance-parameterized normal draw: `N(mu, var)` has variance `var`.
fn normal(rng: &mut ChaCha8Rng, mu: f64, var: f64) -> f64 {
    Normal::new(mu, var.sqrt()).unwrap().sample(rng)
}

fn quadratic_decay(dim: usize) -> Vec<f64> {
    (1..=dim).map(|j| 1.0 / (j * j) as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn truncated_logistic(t: f64) -> f64 {
    0.8 * (1.0 / (1.0 + (-t).exp())) + 0.1
}

/// Cholesky factor of the tridiagonal covariance with unit diagonal and
/// 1/2 on the first off-diagonals.
fn highdim_cov_chol(dim: usize) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            0.5
        } else {
            0.0
        }
    });
    sigma.cholesky().expect("tridiagonal covariance is SPD").l()
}

pub fn generate(spec: &ScenarioSpec) -> Result<SimDataset> {
    spec.family.validate()?;
    if spec.n == 0 {
        return Err(Error::InvalidSpec("n must be >= 1".into()));
    }
    let mut rng = derived_rng(spec.seed, "generate", 0);
    match spec.family {
        ScenarioFamily::LowDim { .. } => Ok(generate_lowdim(spec.n, &mut rng)),
        ScenarioFamily::HighDim { dim_x, dim_z, dim_w } => {
            Ok(generate_highdim(spec.n, dim_x, dim_z, dim_w, &mut rng))
        }
        ScenarioFamily::Hu { scenario } => Ok(generate_hu(spec.n, scenario, &mut rng)),
        ScenarioFamily::TimeSeries { xi, eta } => {
            if spec.n < 3 {
                return Err(Error::InvalidSpec("time series needs n >= 3".into()));
            }
            Ok(generate_timeseries(spec.n, xi, eta, &mut rng))
        }
    }
}

fn generate_lowdim(n: usize, rng: &mut ChaCha8Rng) -> SimDataset {
    let unit = Uniform::new(0.0f64, 1.0);
    let sym = Uniform::new(-1.0f64, 1.0);
    let u2_law = Uniform::new(-1.0f64, 2.0);
    let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let u2: f64 = u2_law.sample(rng);
        let u1 = unit.sample(rng) - if (0.0..=1.0).contains(&u2) { 1.0 } else { 0.0 };
        let w = vec![u1 + sym.sample(rng), u2 + normal(rng, 0.0, 1.0)];
        let z = vec![u1 + normal(rng, 0.0, 1.0), u2 + sym.sample(rng)];
        let a = u2 + normal(rng, 0.0, 1.0);
        let y = 3.0 * (2.0 * (0.3 * u1 + 0.3 * u2 + 0.2) + 1.5 * a).cos() + normal(rng, 0.0, 1.0);
        d.y.push(y);
        d.a.push(a);
        d.z.push(z);
        d.w.push(w);
        d.x.push(vec![]);
        latents.push(vec![u1, u2]);
    }
    SimDataset { observed: d, latents }
}

fn generate_highdim(
    n: usize,
    dim_x: usize,
    dim_z: usize,
    dim_w: usize,
    rng: &mut ChaCha8Rng,
) -> SimDataset {
    let beta_x = quadratic_decay(dim_x);
    let beta_z = quadratic_decay(dim_z);
    let beta_w = quadratic_decay(dim_w);
    let chol = highdim_cov_chol(dim_x);
    let sym = Uniform::new(-1.0f64, 1.0);
    let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let e1 = normal(rng, 0.0, 1.0);
        let e2 = normal(rng, 0.0, 1.0);
        let e3 = normal(rng, 0.0, 1.0);
        let u_z = e1 + e3;
        let u_w = e2 + e3;
        let z: Vec<f64> = (0..dim_z).map(|_| sym.sample(rng) + 0.25 * u_z).collect();
        let w: Vec<f64> = (0..dim_w).map(|_| sym.sample(rng) + 0.25 * u_w).collect();
        let g: Vec<f64> = (0..dim_x).map(|_| normal(rng, 0.0, 1.0)).collect();
        let x: Vec<f64> = (0..dim_x)
            .map(|i| (0..=i).map(|j| chol[(i, j)] * g[j]).sum())
            .collect();
        let a = truncated_logistic(3.0 * dot(&x, &beta_x) + 3.0 * dot(&z, &beta_z)) + 0.25 * u_w;
        let y = a * a
            + 1.2 * a
            + 1.2 * (dot(&x, &beta_x) + dot(&w, &beta_w))
            + a * x[0]
            + 0.25 * u_z;
        d.y.push(y);
        d.a.push(a);
        d.z.push(z);
        d.w.push(w);
        d.x.push(x);
        latents.push(vec![u_z, u_w]);
    }
    SimDataset { observed: d, latents }
}

fn hu_treatment(scenario: u8, u: f64, rng: &mut ChaCha8Rng) -> f64 {
    match scenario {
        2 => normal(rng, 1.0 + 4.0 * u, 0.2),
        _ => normal(rng, 2.5 + 4.0 * u, 0.2),
    }
}

fn hu_outcome(scenario: u8, a: f64, u: f64, rng: &mut ChaCha8Rng) -> f64 {
    match scenario {
        1 => normal(rng, -10.0 + 2.2 * (a - 6.0) * (a - 6.0) + 4.0 * u, 0.2),
        2 => normal(rng, 1.5 + (a - 5.0).signum() * (a - 5.0).abs().sqrt() + 1.7 * u, 0.05),
        _ => normal(rng, -2.0 * (-1.4 * (a - 6.0)).exp() + 0.8 * u.exp(), 0.2),
    }
}

fn generate_hu(n: usize, scenario: u8, rng: &mut ChaCha8Rng) -> SimDataset {
    let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let u = normal(rng, 1.0, 0.2);
        let w = normal(rng, 1.0 - 2.0 * u, 0.2);
        let z = normal(rng, -1.0 + 1.5 * u, 0.2);
        let a = hu_treatment(scenario, u, rng);
        let y = hu_outcome(scenario, a, u, rng);
        d.y.push(y);
        d.a.push(a);
        d.z.push(vec![z]);
        d.w.push(vec![w]);
        d.x.push(vec![]);
        latents.push(vec![u]);
    }
    SimDataset { observed: d, latents }
}

fn generate_timeseries(n: usize, xi: f64, eta: f64, rng: &mut ChaCha8Rng) -> SimDataset {
    // AR(1) latent started from its stationary N(0, 1) law; proxies are the
    // adjacent outcome and treatment, so the two boundary indices are dropped.
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut y = vec![0.0; n];
    u[0] = normal(rng, 0.0, 1.0);
    for i in 0..n {
        if i > 0 {
            u[i] = xi * u[i - 1] + (1.0 - xi * xi).sqrt() * normal(rng, 0.0, 1.0);
        }
        v[i] = 0.6 * u[i] + normal(rng, 0.0, 1.0);
        a[i] = 0.4 + 1.5 * v[i] + eta * u[i] + normal(rng, 0.0, 1.0);
        y[i] = 0.5 + 0.7 * a[i] + 1.5 * v[i] + 0.9 * u[i] + normal(rng, 0.0, 1.0);
    }
    let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
    let mut latents = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        d.y.push(y[i]);
        d.a.push(a[i]);
        d.z.push(vec![a[i + 1]]);
        d.w.push(vec![y[i - 1]]);
        d.x.push(vec![]);
        latents.push(vec![u[i], v[i]]);
    }
    SimDataset { observed: d, latents }
}

fn misspec_map(v: f64) -> f64 {
    v.abs().sqrt() + 1.0
}

/// Replaces proxy coordinates by `|v|^{1/2} + 1` per the selected transform.
pub fn apply_misspec(data: &Dataset, t: MisspecTransform) -> Dataset {
    let mut out = data.clone();
    if matches!(t, MisspecTransform::WStar | MisspecTransform::Both) {
        for row in &mut out.w {
            for v in row.iter_mut() {
                *v = misspec_map(*v);
            }
        }
    }
    if matches!(t, MisspecTransform::ZStar | MisspecTransform::Both) {
        for row in &mut out.z {
            for v in row.iter_mut() {
                *v = misspec_map(*v);
            }
        }
    }
    out
}

/// Monte Carlo ground truth: for each grid value, redraw the latent and
/// covariate system `reps` times, force the treatment in the outcome
/// equation, and average the outcome.
pub fn ground_truth_mc(spec: &ScenarioSpec, grid: &[f64], reps: usize) -> Result<Vec<f64>> {
    spec.family.validate()?;
    if reps == 0 {
        return Err(Error::InvalidSpec("reps must be >= 1".into()));
    }
    let mut sums = vec![0.0f64; grid.len()];
    let mut rng = derived_rng(spec.seed, "ground_truth", 0);
    match spec.family {
        ScenarioFamily::LowDim { .. } => {
            let unit = Uniform::new(0.0f64, 1.0);
            let u2_law = Uniform::new(-1.0f64, 2.0);
            for _ in 0..reps {
                let u2: f64 = u2_law.sample(&mut rng);
                let u1 = unit.sample(&mut rng) - if (0.0..=1.0).contains(&u2) { 1.0 } else { 0.0 };
                let e4 = normal(&mut rng, 0.0, 1.0);
                for (s, &a) in sums.iter_mut().zip(grid) {
                    *s += 3.0 * (2.0 * (0.3 * u1 + 0.3 * u2 + 0.2) + 1.5 * a).cos() + e4;
                }
            }
        }
        ScenarioFamily::HighDim { dim_x, dim_w, .. } => {
            let beta_x = quadratic_decay(dim_x);
            let beta_w = quadratic_decay(dim_w);
            let chol = highdim_cov_chol(dim_x);
            let sym = Uniform::new(-1.0f64, 1.0);
            for _ in 0..reps {
                let e1 = normal(&mut rng, 0.0, 1.0);
                let e2 = normal(&mut rng, 0.0, 1.0);
                let e3 = normal(&mut rng, 0.0, 1.0);
                let u_z = e1 + e3;
                let u_w = e2 + e3;
                let w: Vec<f64> = (0..dim_w).map(|_| sym.sample(&mut rng) + 0.25 * u_w).collect();
                let g: Vec<f64> = (0..dim_x).map(|_| normal(&mut rng, 0.0, 1.0)).collect();
                let x: Vec<f64> = (0..dim_x)
                    .map(|i| (0..=i).map(|j| chol[(i, j)] * g[j]).sum())
                    .collect();
                let base = 1.2 * (dot(&x, &beta_x) + dot(&w, &beta_w)) + 0.25 * u_z;
                for (s, &a) in sums.iter_mut().zip(grid) {
                    *s += a * a + 1.2 * a + base + a * x[0];
                }
            }
        }
        ScenarioFamily::Hu { scenario } => {
            for _ in 0..reps {
                let u = normal(&mut rng, 1.0, 0.2);
                for (s, &a) in sums.iter_mut().zip(grid) {
                    *s += hu_outcome(scenario, a, u, &mut rng);
                }
            }
        }
        ScenarioFamily::TimeSeries { .. } => {
            for _ in 0..reps {
                let u = normal(&mut rng, 0.0, 1.0);
                let v = 0.6 * u + normal(&mut rng, 0.0, 1.0);
                let e4 = normal(&mut rng, 0.0, 1.0);
                for (s, &a) in sums.iter_mut().zip(grid) {
                    *s += 0.5 + 0.7 * a + 1.5 * v + 0.9 * u + e4;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / reps as f64).collect())
}

/// Oracle conditional treatment density for the first Hu design, as printed
/// in the closed-form reference.
pub fn hu1_reference_density(a: f64, w: f64) -> f64 {
    let d = a - 2.5 + 4.0 * w;
    (1.0 / (0.4 * std::f64::consts::PI).sqrt()) * (-d * d / 0.4).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lowdim_treatment_mean() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::LowDim { scenario: 1 },
            n: 100_000,
            seed: 42,
        };
        let sim = generate(&spec).unwrap();
        let mean: f64 = sim.observed.a.iter().sum::<f64>() / sim.observed.n() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn timeseries_lag1_autocorrelation() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::TimeSeries { xi: 0.8, eta: 0.5 },
            n: 100_000,
            seed: 3,
        };
        let sim = generate(&spec).unwrap();
        let u: Vec<f64> = sim.latents.iter().map(|l| l[0]).collect();
        let m = u.iter().sum::<f64>() / u.len() as f64;
        let var: f64 = u.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / u.len() as f64;
        let cov: f64 = u
            .windows(2)
            .map(|p| (p[0] - m) * (p[1] - m))
            .sum::<f64>()
            / (u.len() - 1) as f64;
        assert!((cov / var - 0.8).abs() < 0.03, "acf {}", cov / var);
    }

    #[test]
    fn highdim_covariance_is_tridiagonal() {
        let sigma_chol = highdim_cov_chol(6);
        let sigma = &sigma_chol * sigma_chol.transpose();
        for i in 0..6usize {
            for j in 0..6usize {
                let want = if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    0.5
                } else {
                    0.0
                };
                assert_relative_eq!(sigma[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn misspec_transforms() {
        let d = Dataset {
            y: vec![0.0],
            a: vec![0.0],
            z: vec![vec![9.0]],
            w: vec![vec![4.0, 0.0]],
            x: vec![vec![]],
        };
        let t = apply_misspec(&d, MisspecTransform::WStar);
        assert_eq!(t.w[0], vec![3.0, 1.0]);
        assert_eq!(t.z[0], vec![9.0]);
        let t = apply_misspec(&d, MisspecTransform::Both);
        assert_eq!(t.z[0], vec![4.0]);
        assert_eq!(apply_misspec(&d, MisspecTransform::None), d);
    }

    #[test]
    fn truth_timeseries_linear() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::TimeSeries { xi: 0.8, eta: 0.5 },
            n: 10,
            seed: 5,
        };
        let grid = vec![-2.0, 0.0, 2.0];
        let truth = ground_truth_mc(&spec, &grid, 10_000).unwrap();
        // Var(1.5 V + 0.9 U + e4) = 1.5^2 (0.36 + 1) + ... ~ 4.8; MC se ~ 0.03
        for (&a, &t) in grid.iter().zip(&truth) {
            assert!((t - (0.5 + 0.7 * a)).abs() < 0.09, "a={a} t={t}");
        }
    }

    #[test]
    fn truth_lowdim_matches_quadrature() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::LowDim { scenario: 1 },
            n: 10,
            seed: 8,
        };
        let grid = vec![-0.5, 0.5, 1.5];
        let truth = ground_truth_mc(&spec, &grid, 400_000).unwrap();
        // 2-D quadrature over (U1, U2): U2 ~ Unif[-1,2]; U1 ~ Unif[0,1]
        // shifted down by one when U2 falls in [0,1].
        let m = 600;
        for (&a, &t) in grid.iter().zip(&truth) {
            let mut acc = 0.0;
            for i in 0..m {
                let u2 = -1.0 + 3.0 * (i as f64 + 0.5) / m as f64;
                let shift = if (0.0..=1.0).contains(&u2) { -1.0 } else { 0.0 };
                for j in 0..m {
                    let u1 = (j as f64 + 0.5) / m as f64 + shift;
                    acc += 3.0 * (2.0 * (0.3 * u1 + 0.3 * u2 + 0.2) + 1.5 * a).cos();
                }
            }
            let quad = acc / (m * m) as f64;
            assert!((t - quad).abs() < 0.01, "a={a} mc={t} quad={quad}");
        }
    }

    #[test]
    fn determinism() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::Hu { scenario: 1 },
            n: 50,
            seed: 9,
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let t1 = ground_truth_mc(&spec, &[6.0], 1).unwrap();
        let t2 = ground_truth_mc(&spec, &[6.0], 1).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = ScenarioSpec {
            family: ScenarioFamily::TimeSeries { xi: 1.0, eta: 0.5 },
            n: 100,
            seed: 0,
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
        let bad = ScenarioSpec {
            family: ScenarioFamily::Hu { scenario: 7 },
            n: 100,
            seed: 0,
        };
        assert!(generate(&bad).is_err());
    }
}
