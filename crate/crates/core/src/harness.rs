//! Replicated experiment orchestration: fit nuisances, estimate curves,
//! score against Monte Carlo ground truth, sweep the smoothing constant,
//! and run the error-vs-sample-size study.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{default_hyper, fit_h, fit_q, BridgeH, BridgeQ};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{bandwidth_rule, AteCurve, CurveCache, GridSpec, Method};
use crate::policy::{fit_kde_policy, fit_parametric_policy, BandwidthGrid, OraclePolicy, PolicyModel};
use crate::scenario::{
    apply_misspec, derived_rng, generate, ground_truth_mc, MisspecTransform, ScenarioFamily,
    ScenarioSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Kde,
    Parametric,
    /// Closed-form density; only available for designs that have one.
    Oracle,
}

fn default_c_values() -> Vec<f64> {
    (1..=12).map(|i| 0.5 * i as f64).collect()
}

fn default_s() -> f64 {
    1.0
}

/// Per-design `(s_h, s_q, clip_floor)` defaults. The ridge recipe fixes the
/// rate in n but leaves a free scale per bridge; the treatment bridge chases
/// a reciprocal-density target with much heavier tails than the outcome, so
/// it wants a far stiffer ridge (and a coarser density clip) on the
/// wide-support designs.
pub fn nuisance_defaults(family: &ScenarioFamily) -> (f64, f64, f64) {
    match family {
        ScenarioFamily::Hu { .. } => (10.0, 10.0, 0.05),
        ScenarioFamily::TimeSeries { .. } => (1.0, 30.0, 0.05),
        _ => (1.0, 1.0, 1e-3),
    }
}

fn default_clip_floor() -> f64 {
    1e-3
}

fn default_truth_reps() -> usize {
    10_000
}

fn default_methods() -> Vec<Method> {
    vec![Method::Por, Method::Pkipw, Method::Pkdr]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenario: ScenarioSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub misspec: MisspecTransform,
    pub replications: usize,
    #[serde(default = "default_c_values")]
    pub c_values: Vec<f64>,
    pub grid: GridSpec,
    pub policy_kind: PolicyKind,
    pub base_seed: u64,
    #[serde(default = "default_s")]
    pub s_h: f64,
    #[serde(default = "default_s")]
    pub s_q: f64,
    #[serde(default = "default_clip_floor")]
    pub clip_floor: f64,
    #[serde(default = "default_truth_reps")]
    pub truth_reps: usize,
    /// Ground-truth curves are cached here keyed by a content hash.
    #[serde(default)]
    pub truth_cache_dir: Option<PathBuf>,
}

impl BenchConfig {
    /// Config with the per-scenario defaults: full method set, 100-point
    /// grid over the design's treatment support, the standard c sweep.
    pub fn for_scenario(family: ScenarioFamily, n: usize, replications: usize, base_seed: u64) -> Self {
        let (a_min, a_max) = family.default_support();
        let (s_h, s_q, clip_floor) = nuisance_defaults(&family);
        Self {
            scenario: ScenarioSpec { family, n, seed: base_seed },
            methods: default_methods(),
            misspec: family.default_misspec(),
            replications,
            c_values: default_c_values(),
            grid: GridSpec { a_min, a_max, count: 100 },
            policy_kind: PolicyKind::Kde,
            base_seed,
            s_h,
            s_q,
            clip_floor,
            truth_reps: default_truth_reps(),
            truth_cache_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.grid.count == 0 {
            return Err(Error::Config("grid count must be >= 1".into()));
        }
        if self.c_values.is_empty() {
            return Err(Error::Config("c_values must be nonempty".into()));
        }
        Ok(())
    }
}

/// Mean/std of cMSE per `(method, c)` cell plus the raw replication values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmseCell {
    pub method: Method,
    pub c: f64,
    pub mean: f64,
    pub std: f64,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmseTable {
    pub cells: Vec<CmseCell>,
    /// Replications excluded after a solver failure.
    pub failed_replications: usize,
    pub policy_kind: PolicyKind,
}

impl CmseTable {
    pub fn cell(&self, method: Method, c: f64) -> Option<&CmseCell> {
        self.cells.iter().find(|cell| cell.method == method && cell.c == c)
    }

    /// Best mean cMSE over the c sweep for a method.
    pub fn best_mean(&self, method: Method) -> Option<(f64, f64)> {
        self.cells
            .iter()
            .filter(|cell| cell.method == method)
            .map(|cell| (cell.c, cell.mean))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Mean squared gap between an estimated curve and the truth over the grid.
pub fn cmse(curve: &AteCurve, truth: &[f64]) -> Result<f64> {
    if curve.estimates.len() != truth.len() {
        return Err(Error::LengthMismatch(curve.estimates.len(), truth.len()));
    }
    let n = truth.len() as f64;
    Ok(curve
        .estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        / n)
}

fn truth_cache_key(spec: &ScenarioSpec, grid: &[f64], reps: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&(spec, grid, reps)).unwrap());
    let digest = hasher.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Ground truth for `(scenario, grid)`, loaded from the cache directory when
/// present; Monte Carlo truth dominates runtime otherwise.
pub fn cached_ground_truth(
    spec: &ScenarioSpec,
    grid: &[f64],
    reps: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<f64>> {
    let path = cache_dir.map(|d| d.join(format!("truth_{}.json", truth_cache_key(spec, grid, reps))));
    if let Some(p) = &path {
        if let Ok(bytes) = std::fs::read(p) {
            if let Ok(truth) = serde_json::from_slice::<Vec<f64>>(&bytes) {
                if truth.len() == grid.len() {
                    return Ok(truth);
                }
            }
        }
    }
    let truth = ground_truth_mc(spec, grid, reps)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(p, serde_json::to_vec(&truth)?)?;
    }
    Ok(truth)
}

/// Nuisances fitted for one replication.
pub struct FittedNuisances {
    pub policy: PolicyModel,
    pub h: BridgeH,
    pub q: BridgeQ,
}

pub fn fit_policy(data: &Dataset, kind: PolicyKind, family: &ScenarioFamily, seed: u64) -> Result<PolicyModel> {
    match kind {
        PolicyKind::Kde => {
            Ok(PolicyModel::Kde(fit_kde_policy(data, &BandwidthGrid::default(), seed)?))
        }
        PolicyKind::Parametric => Ok(PolicyModel::Parametric(fit_parametric_policy(data)?)),
        PolicyKind::Oracle => match family {
            ScenarioFamily::Hu { scenario: 1 } => {
                Ok(PolicyModel::Oracle(OraclePolicy::Hu1Conditional))
            }
            other => Err(Error::Config(format!(
                "no oracle policy available for scenario {other:?}"
            ))),
        },
    }
}

/// Fits policy and both bridges on estimation-time (possibly misspecified)
/// columns.
pub fn fit_nuisances(
    data: &Dataset,
    kind: PolicyKind,
    family: &ScenarioFamily,
    s_h: f64,
    s_q: f64,
    clip_floor: f64,
    seed: u64,
) -> Result<FittedNuisances> {
    let policy = fit_policy(data, kind, family, seed)?;
    let h = fit_h(data, &default_hyper(data.n(), s_h), seed)?;
    let q = fit_q(data, &policy, &default_hyper(data.n(), s_q), clip_floor, seed)?;
    Ok(FittedNuisances { policy, h, q })
}

fn replication_seed(base_seed: u64, rep: u64) -> u64 {
    derived_rng(base_seed, "replication", rep).gen()
}

type RepScores = BTreeMap<(usize, usize), f64>; // (method index, c index) -> cMSE

fn run_replication(config: &BenchConfig, truth: &[f64], rep: u64) -> Result<RepScores> {
    let seed = replication_seed(config.base_seed, rep);
    let spec = ScenarioSpec { seed, ..config.scenario };
    let sim = generate(&spec)?;
    let fitted = fit_nuisances(
        &sim.observed,
        config.policy_kind,
        &config.scenario.family,
        config.s_h,
        config.s_q,
        config.clip_floor,
        seed,
    )?;
    // Nuisances are fitted on the proxies as observed; the misspecification
    // corrupts the proxy columns handed to the fitted bridges at estimation
    // time, so the targeted bridge model is evaluated on inputs it was never
    // trained against.
    let data = apply_misspec(&sim.observed, config.misspec);
    let grid = config.grid.points();
    let cache = CurveCache::build(Some(&fitted.h), Some(&fitted.q), &data, &grid)?;
    let mut scores = RepScores::new();
    for (ci, &c) in config.c_values.iter().enumerate() {
        let smooth = bandwidth_rule(c, &data)?;
        for (mi, &method) in config.methods.iter().enumerate() {
            let curve = cache.estimate(method, &data, Some(&smooth))?;
            scores.insert((mi, ci), cmse(&curve, truth)?);
        }
    }
    Ok(scores)
}

/// Runs the replicated benchmark. Replications execute in a parallel pool
/// with per-replication derived seeds; a failed replication is excluded and
/// counted rather than fatal.
pub fn run_bench(config: &BenchConfig) -> Result<CmseTable> {
    config.validate()?;
    let grid = config.grid.points();
    let truth = cached_ground_truth(
        &config.scenario,
        &grid,
        config.truth_reps,
        config.truth_cache_dir.as_deref(),
    )?;
    let results: Vec<Result<RepScores>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, &truth, rep))
        .collect();

    let mut failed = 0usize;
    let mut per_cell: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for res in results {
        match res {
            Ok(scores) => {
                for (key, v) in scores {
                    per_cell.entry(key).or_default().push(v);
                }
            }
            Err(_) => failed += 1,
        }
    }
    if per_cell.is_empty() {
        return Err(Error::Config("every replication failed".into()));
    }
    let mut cells = Vec::new();
    for ((mi, ci), raw) in per_cell {
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let var = if raw.len() > 1 {
            raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (raw.len() - 1) as f64
        } else {
            0.0
        };
        cells.push(CmseCell {
            method: config.methods[mi],
            c: config.c_values[ci],
            mean,
            std: var.sqrt(),
            raw,
        });
    }
    Ok(CmseTable { cells, failed_replications: failed, policy_kind: config.policy_kind })
}

/// Mean cMSE per smoothing constant for one method; each c is independent.
pub fn sensitivity_sweep(config: &BenchConfig, method: Method) -> Result<Vec<(f64, f64)>> {
    let mut cfg = config.clone();
    cfg.methods = vec![method];
    let table = run_bench(&cfg)?;
    Ok(config
        .c_values
        .iter()
        .map(|&c| (c, table.cell(method, c).map(|cell| cell.mean).unwrap_or(f64::NAN)))
        .collect())
}

/// Per-sample-size estimator error for the rate study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub n_values: Vec<usize>,
    /// Per n: absolute PKDR errors, one per replication (mean over the
    /// reference grid).
    pub errors: Vec<Vec<f64>>,
}

impl RateStudyResult {
    pub fn median_error(&self, idx: usize) -> f64 {
        let mut v = self.errors[idx].clone();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    }
}

/// Error-vs-n study on the first Hu design: per n, the mean absolute PKDR
/// error over a uniform five-point reference grid spanning the treatment
/// support.
pub fn rate_study(
    n_values: &[usize],
    replications: usize,
    policy_kind: PolicyKind,
    c: f64,
    base_seed: u64,
) -> Result<RateStudyResult> {
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n_values must be strictly increasing".into()));
    }
    let family = ScenarioFamily::Hu { scenario: 1 };
    let (s_h, s_q, clip_floor) = nuisance_defaults(&family);
    let (a_min, a_max) = family.default_support();
    let span = a_max - a_min;
    // interior five-point reference grid
    let ref_grid: Vec<f64> = (1..=5).map(|i| a_min + span * i as f64 / 6.0).collect();
    let truth_spec = ScenarioSpec { family, n: 1, seed: base_seed };
    let truth = ground_truth_mc(&truth_spec, &ref_grid, default_truth_reps())?;

    let mut errors = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let per_rep: Vec<Result<f64>> = (0..replications as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(base_seed ^ n as u64, rep);
                let spec = ScenarioSpec { family, n, seed };
                let data = generate(&spec)?.observed;
                let fitted = fit_nuisances(&data, policy_kind, &family, s_h, s_q, clip_floor, seed)?;
                let cache = CurveCache::build(Some(&fitted.h), Some(&fitted.q), &data, &ref_grid)?;
                let smooth = bandwidth_rule(c, &data)?;
                let curve = cache.estimate(Method::Pkdr, &data, Some(&smooth))?;
                let err = curve
                    .estimates
                    .iter()
                    .zip(&truth)
                    .map(|(e, t)| (e - t).abs())
                    .sum::<f64>()
                    / ref_grid.len() as f64;
                Ok(err)
            })
            .collect();
        errors.push(per_rep.into_iter().filter_map(|r| r.ok()).collect());
    }
    Ok(RateStudyResult { n_values: n_values.to_vec(), errors })
}
