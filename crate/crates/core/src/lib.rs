//! Kernel-based proximal causal learning for continuous treatments.
//!
//! The crate fits outcome and treatment bridge functions by closed-form
//! RKHS min-max solvers, estimates the policy density by cross-validated
//! KDE (or a parametric Gaussian fallback), and combines them into the
//! POR, PKIPW and PKDR dose-response estimators. A simulation harness
//! reproduces the synthetic benchmark designs with Monte Carlo ground
//! truth.

pub mod bridge;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernel;
pub mod model_file;
pub mod policy;
pub mod scenario;

pub use bridge::{default_hyper, fit_h, fit_q, BridgeH, BridgeQ, MinimaxHyper};
pub use data::{load_csv, save_csv, DataSchema, Dataset};
pub use error::{Error, Result};
pub use estimators::{
    bandwidth_rule, estimate_curve, AteCurve, GridSpec, Method, SmoothingConfig,
};
pub use harness::{cmse, run_bench, sensitivity_sweep, BenchConfig, CmseTable, PolicyKind};
pub use kernel::{KernelSpec, SmoothingKernel};
pub use model_file::ModelFile;
pub use policy::{fit_kde_policy, fit_parametric_policy, BandwidthGrid, PolicyModel};
pub use scenario::{
    apply_misspec, generate, ground_truth_mc, MisspecTransform, ScenarioFamily, ScenarioSpec,
    SimDataset,
};
