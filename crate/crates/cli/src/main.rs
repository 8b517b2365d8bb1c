use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pkcl_core::bridge::{default_hyper, fit_h, fit_q};
use pkcl_core::data::{load_csv, save_csv};
use pkcl_core::estimators::{bandwidth_rule, estimate_curve, GridSpec, Method};
use pkcl_core::harness::{run_bench, BenchConfig};
use pkcl_core::model_file::ModelFile;
use pkcl_core::policy::{fit_kde_policy, fit_parametric_policy, BandwidthGrid, PolicyModel};
use pkcl_core::scenario::{generate, ground_truth_mc, ScenarioFamily, ScenarioSpec};

#[derive(Parser)]
#[command(name = "pkcl", about = "Proximal kernel causal learning for continuous treatments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Kde,
    Parametric,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodChoice {
    Por,
    Pkipw,
    Pkdr,
}

impl From<MethodChoice> for Method {
    fn from(m: MethodChoice) -> Self {
        match m {
            MethodChoice::Por => Method::Por,
            MethodChoice::Pkipw => Method::Pkipw,
            MethodChoice::Pkdr => Method::Pkdr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from one of the built-in designs.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        precision: usize,
    },
    /// Monte Carlo ground-truth dose-response curve for a design.
    Truth {
        #[arg(long)]
        scenario: String,
        /// Evaluation grid as min:max:count.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        precision: usize,
    },
    /// Fit policy density and both bridge functions; write a model file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        policy: PolicyChoice,
        /// Outcome-bridge stabilizer scale in the regularization product.
        #[arg(long, default_value_t = 1.0)]
        s_h: f64,
        /// Treatment-bridge stabilizer scale.
        #[arg(long, default_value_t = 1.0)]
        s_q: f64,
        #[arg(long, default_value_t = 1e-3)]
        clip_floor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a dose-response curve from fitted models.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_enum)]
        method: MethodChoice,
        /// Bandwidth constant for the local smoothing kernel.
        #[arg(long, default_value_t = 1.5)]
        c: f64,
        /// Evaluation grid as min:max:count.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        precision: usize,
    },
    /// Run a replicated benchmark from a TOML config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid `{s}` is not of the form min:max:count"));
    }
    let a_min: f64 = parts[0].parse().map_err(|_| format!("bad grid min `{}`", parts[0]))?;
    let a_max: f64 = parts[1].parse().map_err(|_| format!("bad grid max `{}`", parts[1]))?;
    let count: usize = parts[2].parse().map_err(|_| format!("bad grid count `{}`", parts[2]))?;
    if count == 0 || a_max < a_min {
        return Err(format!("grid `{s}` is empty or reversed"));
    }
    Ok(GridSpec { a_min, a_max, count })
}

fn write_curve_csv(
    path: &PathBuf,
    grid: &[f64],
    values: &[f64],
    value_name: &str,
    precision: usize,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["a", value_name])?;
    for (a, v) in grid.iter().zip(values) {
        wtr.write_record([
            pkcl_core::data::format_value(*a, precision),
            pkcl_core::data::format_value(*v, precision),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Simulate { scenario, n, seed, out, precision } => {
            let family = ScenarioFamily::parse_id(&scenario)?;
            let sim = generate(&ScenarioSpec { family, n, seed })?;
            save_csv(&sim.observed, &out, precision)?;
        }
        Command::Truth { scenario, grid, reps, seed, out, precision } => {
            let family = ScenarioFamily::parse_id(&scenario)?;
            let grid = parse_grid(&grid)?;
            let points = grid.points();
            let spec = ScenarioSpec { family, n: 1, seed };
            let truth = ground_truth_mc(&spec, &points, reps)?;
            write_curve_csv(&out, &points, &truth, "beta", precision)?;
        }
        Command::Fit { data, policy, s_h, s_q, clip_floor, seed, out } => {
            let data = load_csv(&data, None)?;
            let policy = match policy {
                PolicyChoice::Kde => {
                    PolicyModel::Kde(fit_kde_policy(&data, &BandwidthGrid::default(), seed)?)
                }
                PolicyChoice::Parametric => {
                    PolicyModel::Parametric(fit_parametric_policy(&data)?)
                }
            };
            let bridge_h = fit_h(&data, &default_hyper(data.n(), s_h), seed)?;
            let bridge_q =
                fit_q(&data, &policy, &default_hyper(data.n(), s_q), clip_floor, seed)?;
            let model = ModelFile {
                schema: data.schema(),
                policy,
                bridge_h,
                bridge_q,
                s_h,
                s_q,
                clip_floor,
            };
            model.save(&out)?;
        }
        Command::Estimate { data, models, method, c, grid, out, precision } => {
            let data = load_csv(&data, None)?;
            let model = ModelFile::load(&models)?;
            model.check_schema(&data.schema())?;
            let grid = parse_grid(&grid)?;
            let smooth = bandwidth_rule(c, &data)?;
            let curve = estimate_curve(
                method.into(),
                Some(&model.bridge_h),
                Some(&model.bridge_q),
                &data,
                &grid,
                Some(&smooth),
            )?;
            write_curve_csv(&out, &curve.grid, &curve.estimates, "estimate", precision)?;
        }
        Command::Bench { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let config: BenchConfig = toml::from_str(&text)?;
            let table = run_bench(&config)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("table.json"), serde_json::to_vec_pretty(&table)?)?;
            let mut wtr = csv::Writer::from_path(out.join("table.csv"))?;
            wtr.write_record(["method", "c", "mean_cmse", "std_cmse"])?;
            for cell in &table.cells {
                wtr.write_record([
                    cell.method.id().to_string(),
                    format!("{}", cell.c),
                    pkcl_core::data::format_value(cell.mean, 12),
                    pkcl_core::data::format_value(cell.std, 12),
                ])?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let record = serde_json::json!({ "error": err.to_string() });
        eprintln!("{record}");
        std::process::exit(1);
    }
}
