//! Closed-form dual solvers for the outcome bridge `h` and the treatment
//! bridge `q`.
//!
//! Both bridges minimize a regularized adversarial objective whose inner
//! maximization over an RKHS critic has a closed form. With Gram matrix `K_c`
//! of the critic class and `G = K_c^{1/2} ((ratio/n) K_c + I)^{-1} K_c^{1/2}`,
//! the dual weights solve
//!
//! `(K G K + 4 prod K) alpha = K G t`
//!
//! where `K` is the Gram matrix of the bridge class and `t` the target vector
//! (outcomes for `h`, clipped reciprocal policy densities for `q`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{default_jitter, gram_matrix, median_heuristic, psd_sqrt, regularized_solve, KernelSpec};
use crate::policy::PolicyModel;

/// Cap for the seeded median-heuristic subsample.
pub const MEDIAN_SUBSET_CAP: usize = 1000;

/// Regularization pair identified by the closed-form solver: the stabilizer
/// ratio `lambda/gamma` and the product of the two RKHS penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxHyper {
    pub ratio: f64,
    pub prod: f64,
    pub s: f64,
}

/// Reference sample size the ridge scale `s` is anchored to.
pub const HYPER_REF_N: usize = 1000;

/// Recommended defaults: `ratio = 5 / n^{0.4}` and
/// `prod = (s/2) ratio^4 (n / 1000)^2`.
///
/// The `n^2` factor keeps the ridge in balance with the quadratic data term,
/// which carries an implicit `1/n^2` from the averaged residuals; without it
/// the effective regularization decays like `n^{-1.6}` and the estimator's
/// error grows with the sample size. Anchoring at n = 1000 makes `s`
/// directly comparable to the unscaled recommendation at that size.
pub fn default_hyper(n: usize, s: f64) -> MinimaxHyper {
    let ratio = 5.0 / (n as f64).powf(0.4);
    let anchor = (n as f64 / HYPER_REF_N as f64).powi(2);
    MinimaxHyper { ratio, prod: (s / 2.0) * ratio.powi(4) * anchor, s }
}

/// Fitted outcome bridge as a kernel expansion over `(a, w, x)` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeH {
    pub alpha: Vec<f64>,
    pub train_awx: Vec<Vec<f64>>,
    pub kernel_h: KernelSpec,
}

/// Fitted treatment bridge as a kernel expansion over `(a, z, x)` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeQ {
    pub beta: Vec<f64>,
    pub train_azx: Vec<Vec<f64>>,
    pub kernel_q: KernelSpec,
}

/// `K_c^{1/2} ((ratio/n) K_c + I)^{-1} K_c^{1/2}` for a critic Gram matrix.
fn critic_operator(k_critic: &DMatrix<f64>, ratio: f64) -> Result<DMatrix<f64>> {
    let n = k_critic.nrows();
    let sqrt = psd_sqrt(k_critic, default_jitter(k_critic))?;
    let scaled = k_critic * (ratio / n as f64);
    let solved = regularized_solve(&scaled, &sqrt, 1.0)?;
    Ok(&sqrt * solved)
}

fn solve_dual(
    k_bridge: &DMatrix<f64>,
    critic_op: &DMatrix<f64>,
    target: &DVector<f64>,
    prod: f64,
) -> Result<DVector<f64>> {
    // Solving (G K + 4 prod I) a = G y instead of the K-premultiplied normal
    // equations picks the same expansion on the span of K while keeping the
    // condition number a factor of cond(K)^2 smaller.
    let n = target.len();
    let system = critic_op * k_bridge + DMatrix::identity(n, n) * (4.0 * prod);
    let rhs = critic_op * target;
    let alpha = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailure("singular dual system".into()))?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteWeights);
    }
    Ok(alpha)
}

/// Fits the outcome bridge. Kernel scales come from the median heuristic on
/// the `(a, w, x)` rows for the bridge class and on the `(a, z, x)` rows for
/// the critic class.
pub fn fit_h(data: &Dataset, hyper: &MinimaxHyper, seed: u64) -> Result<BridgeH> {
    if data.n() < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: data.n() });
    }
    let rows_awx = data.rows_awx();
    let rows_azx = data.rows_azx();
    let kernel_h = KernelSpec::gaussian(median_heuristic(&rows_awx, MEDIAN_SUBSET_CAP, seed)?)?;
    let kernel_g = KernelSpec::gaussian(median_heuristic(&rows_azx, MEDIAN_SUBSET_CAP, seed)?)?;
    let k_h = gram_matrix(&rows_awx, &rows_awx, &kernel_h)?;
    let k_g = gram_matrix(&rows_azx, &rows_azx, &kernel_g)?;
    let g_op = critic_operator(&k_g, hyper.ratio)?;
    let y = DVector::from_vec(data.y.clone());
    let alpha = solve_dual(&k_h, &g_op, &y, hyper.prod)?;
    Ok(BridgeH { alpha: alpha.iter().cloned().collect(), train_awx: rows_awx, kernel_h })
}

/// Fits the treatment bridge against the clipped reciprocal policy density.
pub fn fit_q(
    data: &Dataset,
    policy: &PolicyModel,
    hyper: &MinimaxHyper,
    clip_floor: f64,
    seed: u64,
) -> Result<BridgeQ> {
    let target = policy.reciprocal_density(data, clip_floor)?;
    fit_q_with_target(data, &target, hyper, seed)
}

/// Treatment-bridge fit with an explicit target vector in place of the
/// reciprocal density; the solver itself is target-agnostic.
pub fn fit_q_with_target(
    data: &Dataset,
    target: &[f64],
    hyper: &MinimaxHyper,
    seed: u64,
) -> Result<BridgeQ> {
    if data.n() < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: data.n() });
    }
    let rows_azx = data.rows_azx();
    let rows_awx = data.rows_awx();
    let kernel_q = KernelSpec::gaussian(median_heuristic(&rows_azx, MEDIAN_SUBSET_CAP, seed)?)?;
    let kernel_m = KernelSpec::gaussian(median_heuristic(&rows_awx, MEDIAN_SUBSET_CAP, seed)?)?;
    let k_q = gram_matrix(&rows_azx, &rows_azx, &kernel_q)?;
    let k_m = gram_matrix(&rows_awx, &rows_awx, &kernel_m)?;
    let m_op = critic_operator(&k_m, hyper.ratio)?;
    let r = DVector::from_column_slice(target);
    let beta = solve_dual(&k_q, &m_op, &r, hyper.prod)?;
    Ok(BridgeQ { beta: beta.iter().cloned().collect(), train_azx: rows_azx, kernel_q })
}

/// Closed-form inner maximum of the regularized adversarial objective for a
/// fixed residual vector `psi`:
/// `(1/(4 gamma)) psi' K^{1/2} ((ratio/n) K + I)^{-1} K^{1/2} psi`.
pub fn inner_max_value(
    psi: &DVector<f64>,
    k_critic: &DMatrix<f64>,
    ratio: f64,
    gamma_critic: f64,
) -> Result<f64> {
    if gamma_critic <= 0.0 {
        return Err(Error::Config(format!("gamma_critic must be positive, got {gamma_critic}")));
    }
    if psi.len() != k_critic.nrows() {
        return Err(Error::DimensionMismatch { expected: k_critic.nrows(), got: psi.len() });
    }
    let op = critic_operator(k_critic, ratio)?;
    Ok((psi.transpose() * op * psi)[(0, 0)] / (4.0 * gamma_critic))
}

fn eval_expansion(
    weights: &[f64],
    train: &[Vec<f64>],
    kernel: &KernelSpec,
    query: &[f64],
) -> Result<f64> {
    let dim = train.first().map_or(0, Vec::len);
    if query.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: query.len() });
    }
    Ok(weights
        .iter()
        .zip(train)
        .map(|(c, row)| c * kernel.eval(row, query))
        .sum())
}

impl BridgeH {
    pub fn eval(&self, a: f64, w: &[f64], x: &[f64]) -> Result<f64> {
        let mut q = Vec::with_capacity(1 + w.len() + x.len());
        q.push(a);
        q.extend_from_slice(w);
        q.extend_from_slice(x);
        eval_expansion(&self.alpha, &self.train_awx, &self.kernel_h, &q)
    }

    /// Bridge with zero dual weights; useful as a structural reduction check.
    pub fn zeroed(&self) -> Self {
        Self { alpha: vec![0.0; self.alpha.len()], ..self.clone() }
    }
}

impl BridgeQ {
    pub fn eval(&self, a: f64, z: &[f64], x: &[f64]) -> Result<f64> {
        let mut q = Vec::with_capacity(1 + z.len() + x.len());
        q.push(a);
        q.extend_from_slice(z);
        q.extend_from_slice(x);
        eval_expansion(&self.beta, &self.train_azx, &self.kernel_q, &q)
    }

    pub fn zeroed(&self) -> Self {
        Self { beta: vec![0.0; self.beta.len()], ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::scenario::{derived_rng, generate, ScenarioFamily, ScenarioSpec};

    #[test]
    fn default_hyper_values() {
        let h = default_hyper(1000, 1.0);
        assert_relative_eq!(h.ratio, 0.315_478_672_240_097_34, max_relative = 1e-9);
        assert_relative_eq!(h.prod, 0.5 * h.ratio.powi(4), max_relative = 1e-12);
        assert_relative_eq!(h.prod, 4.952_791_226_440_976e-3, max_relative = 1e-6);

        let h1 = default_hyper(1, 2.0);
        assert_relative_eq!(h1.ratio, 5.0);
        assert_relative_eq!(h1.prod, 625.0e-6);

        // the ridge grows quadratically in n relative to the base recipe
        let h2 = default_hyper(2000, 1.0);
        assert_relative_eq!(
            h2.prod,
            0.5 * h2.ratio.powi(4) * 4.0,
            max_relative = 1e-12
        );

        let mut prev = f64::INFINITY;
        for n in [1usize, 10, 100, 1000, 10_000] {
            let r = default_hyper(n, 1.0).ratio;
            assert!(r < prev);
            prev = r;
        }
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = derived_rng(seed, "bridge_toy", 0);
        let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let w: f64 = rng.gen_range(-1.0..1.0);
            let z: f64 = rng.gen_range(-1.0..1.0);
            d.a.push(a);
            d.w.push(vec![w]);
            d.z.push(vec![z]);
            d.x.push(vec![]);
            d.y.push((a + w).sin());
        }
        d
    }

    #[test]
    fn zero_outcomes_give_zero_bridge() {
        let mut data = toy_data(30, 1);
        data.y = vec![0.0; data.n()];
        let h = fit_h(&data, &default_hyper(data.n(), 1.0), 0).unwrap();
        assert!(h.alpha.iter().all(|&v| v == 0.0));
        assert_eq!(h.eval(0.3, &[0.1], &[]).unwrap(), 0.0);
    }

    #[test]
    fn h_is_linear_in_outcomes() {
        let data = toy_data(40, 2);
        let hyper = default_hyper(data.n(), 1.0);
        let h1 = fit_h(&data, &hyper, 0).unwrap();
        let mut scaled = data.clone();
        for y in &mut scaled.y {
            *y *= 2.0;
        }
        let h2 = fit_h(&scaled, &hyper, 0).unwrap();
        for (a, b) in h1.alpha.iter().zip(&h2.alpha) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn q_target_zero_and_homogeneity() {
        let data = toy_data(40, 3);
        let hyper = default_hyper(data.n(), 1.0);
        let q0 = fit_q_with_target(&data, &vec![0.0; data.n()], &hyper, 0).unwrap();
        assert!(q0.beta.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..data.n()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let q1 = fit_q_with_target(&data, &r, &hyper, 0).unwrap();
        let r3: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        let q3 = fit_q_with_target(&data, &r3, &hyper, 0).unwrap();
        for (a, b) in q1.beta.iter().zip(&q3.beta) {
            assert_relative_eq!(3.0 * a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let data = toy_data(35, 6);
        let hyper = default_hyper(data.n(), 1.0);
        let h1 = fit_h(&data, &hyper, 7).unwrap();
        let h2 = fit_h(&data, &hyper, 7).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn no_confounding_regression_check() {
        // Z set equal to (A, W): the conditional moment pins h down to the
        // regression of y on (a, w).
        let mut rng = derived_rng(10, "regression_check", 0);
        let n = 500;
        let mut d = Dataset { y: vec![], a: vec![], z: vec![], w: vec![], x: vec![] };
        for _ in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let w: f64 = rng.gen_range(-1.0..1.0);
            d.a.push(a);
            d.w.push(vec![w]);
            d.z.push(vec![a, w]);
            d.x.push(vec![]);
            d.y.push(a.sin() + w);
        }
        let hyper = default_hyper(n, 1.0);
        let h = fit_h(&d, &hyper, 0).unwrap();
        let fitted: Vec<f64> =
            (0..n).map(|i| h.eval(d.a[i], &d.w[i], &[]).unwrap()).collect();
        let rmse = (fitted
            .iter()
            .zip(&d.y)
            .map(|(f, y)| (f - y) * (f - y))
            .sum::<f64>()
            / n as f64)
            .sqrt();

        // oracle: kernel ridge interpolation on the same Gram matrix
        let rows = d.rows_awx();
        let spec =
            KernelSpec::gaussian(median_heuristic(&rows, MEDIAN_SUBSET_CAP, 0).unwrap()).unwrap();
        let k = gram_matrix(&rows, &rows, &spec).unwrap();
        let y = DMatrix::from_column_slice(n, 1, &d.y);
        let sol = regularized_solve(&k, &y, default_jitter(&k)).unwrap();
        let fitted_krr = &k * sol;
        let rmse_krr = (0..n)
            .map(|i| (fitted_krr[(i, 0)] - d.y[i]).powi(2))
            .sum::<f64>()
            .sqrt()
            / (n as f64).sqrt();
        assert!(rmse <= rmse_krr + 0.1, "rmse {rmse} vs baseline {rmse_krr}");
        assert!(rmse <= 0.15, "rmse {rmse}");
    }

    #[test]
    fn q_moment_check_hu1_oracle_density() {
        let spec = ScenarioSpec {
            family: ScenarioFamily::Hu { scenario: 1 },
            n: 1000,
            seed: 21,
        };
        let data = generate(&spec).unwrap().observed;
        let n = data.n();
        // closed-form conditional density of A given W implied by the design:
        // A | W = w is Gaussian with mean 4.9 - 1.6 w and variance 0.84
        let target: Vec<f64> = (0..n)
            .map(|i| {
                let mu = 4.9 - 1.6 * data.w[i][0];
                let var = 0.84;
                let dens = (-(data.a[i] - mu).powi(2) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt();
                1.0 / dens.max(1e-3)
            })
            .collect();
        let hyper = default_hyper(n, 1.0);
        let q = fit_q_with_target(&data, &target, &hyper, 0).unwrap();
        let resid: Vec<f64> = (0..n)
            .map(|i| q.eval(data.a[i], &data.z[i], &data.x[i]).unwrap() - target[i])
            .collect();
        let mean_r = target.iter().sum::<f64>() / n as f64;
        // the fitted q should kill the empirical moment against smooth test
        // functions of (a, w); check the constant, linear-in-a and linear-in-w
        // directions with the functions scaled to unit sample sd
        let moment = |g: &dyn Fn(usize) -> f64| {
            let vals: Vec<f64> = (0..n).map(g).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64)
                .sqrt()
                .max(1e-12);
            (0..n).map(|i| (vals[i] - m) / sd * resid[i]).sum::<f64>() / n as f64
        };
        let m0 = resid.iter().sum::<f64>() / n as f64;
        let ma = moment(&|i| data.a[i]);
        let mw = moment(&|i| data.w[i][0]);
        for (label, m) in [("1", m0), ("a", ma), ("w", mw)] {
            assert!(
                m.abs() <= 0.25 * mean_r,
                "moment against {label}: {m} vs target scale {mean_r}"
            );
        }
    }

    #[test]
    fn inner_max_trivial_cases() {
        let k = DMatrix::<f64>::identity(4, 4);
        let zero = DVector::zeros(4);
        assert_relative_eq!(inner_max_value(&zero, &k, 0.5, 1.0).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let psi = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let v = inner_max_value(&psi, &k, 0.5, 2.0).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn inner_max_matches_numerical_maximizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let n = 10;
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            let spec = KernelSpec::gaussian(rng.gen_range(0.3..2.0)).unwrap();
            let k = gram_matrix(&rows, &rows, &spec).unwrap();
            let psi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let ratio = rng.gen_range(0.1..2.0);
            let gamma = rng.gen_range(0.5..2.0);

            let closed = inner_max_value(&psi, &k, ratio, gamma).unwrap();

            // independent route: first-order condition over the representer
            // span, solved by least squares, then the objective evaluated
            let b = &k * (ratio / n as f64) + DMatrix::identity(n, n);
            let system = (&b * &k) * (2.0 * gamma);
            let rhs = &k * &psi;
            let coef = system
                .svd(true, true)
                .solve(&rhs, 1e-13)
                .expect("lstsq");
            let objective = (psi.transpose() * &k * &coef)[(0, 0)]
                - gamma * (coef.transpose() * &b * &k * &coef)[(0, 0)];
            assert_relative_eq!(closed, objective, max_relative = 1e-6, epsilon = 1e-12);
            let _ = trial;
        }
    }

    #[test]
    fn dual_reduces_to_interpolation() {
        // ratio, prod -> 0: the h-solve approaches K alpha = y
        let data = toy_data(12, 12);
        let hyper = MinimaxHyper { ratio: 1e-10, prod: 1e-14, s: 1.0 };
        let h = fit_h(&data, &hyper, 0).unwrap();
        let rows = data.rows_awx();
        let k = gram_matrix(&rows, &rows, &h.kernel_h).unwrap();
        let alpha = DVector::from_column_slice(&h.alpha);
        let resid = &k * alpha - DVector::from_column_slice(&data.y);
        assert!(resid.amax() <= 1e-3, "residual {}", resid.amax());
    }

    #[test]
    fn eval_permutation_invariant() {
        let data = toy_data(20, 14);
        let hyper = default_hyper(data.n(), 1.0);
        let h = fit_h(&data, &hyper, 0).unwrap();
        let mut permuted = h.clone();
        permuted.alpha.rotate_left(7);
        permuted.train_awx.rotate_left(7);
        for q in [(-0.2, 0.4), (0.9, -0.7)] {
            let v1 = h.eval(q.0, &[q.1], &[]).unwrap();
            let v2 = permuted.eval(q.0, &[q.1], &[]).unwrap();
            assert_relative_eq!(v1, v2, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_unit_self_kernel() {
        let h = BridgeH {
            alpha: vec![1.0],
            train_awx: vec![vec![0.5, -0.5]],
            kernel_h: KernelSpec::gaussian(1.0).unwrap(),
        };
        assert_relative_eq!(h.eval(0.5, &[-0.5], &[]).unwrap(), 1.0);
        let z = h.zeroed();
        assert_eq!(z.eval(0.1, &[0.2], &[]).unwrap(), 0.0);
        assert!(h.eval(0.5, &[-0.5, 1.0], &[]).is_err());
    }
}
