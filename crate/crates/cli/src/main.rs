//! `dpknock` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime error, 2 validation error, 3 failed
//! verification.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dpknock::knockoffs::{ar_covariance, generate_knockoffs_keyed};
use dpknock::selection::{
    mirror_peeling_select, multi_split_select, single_split_select, MirrorConfig, MultiSplitConfig,
    PipelineConfig,
};
use dpknock::sim::{run_grid, write_aggregate_csv, write_records_csv, LambdaRule, Procedure, SimConfig};
use dpknock::stats::{compute_statistics, Family, FamilyConfig, RidgeConfig, SgdConfig};
use dpknock::verify::{verify_exchangeability, verify_sensitivity, verify_threshold_oracle};
use dpknock::{load_dataset, Error, Execution, GaussianKnockoffConfig, NoiseStream, SeedSet};

#[derive(Parser)]
#[command(name = "dpknock", version, about = "Differentially private model-X knockoff selection")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a private knockoff selection on a CSV dataset.
    Select(SelectArgs),
    /// Run a Monte Carlo grid and write per-rep and aggregate CSVs.
    Simulate(SimulateArgs),
    /// Check sensitivity bounds, knockoff exchangeability or the threshold scan.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Algo {
    Mirror,
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Marginal,
    Hsic,
    Ridge,
    Sgd,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Marginal => Family::MarginalCorr,
            FamilyArg::Hsic => Family::Hsic,
            FamilyArg::Ridge => Family::RidgeDiff,
            FamilyArg::Sgd => Family::SgdDiff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Check {
    Sensitivity,
    Exchangeability,
    ThresholdOracle,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SelectArgs {
    /// Dataset CSV with header `y,x1,...,xp`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Total privacy budget (mu-GDP).
    #[arg(long)]
    mu: Option<f64>,
    /// Target FDR level [default: 0.2].
    #[arg(long)]
    q: Option<f64>,
    /// Selection procedure [default: single].
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    /// Knockoff statistic family [default: marginal].
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Covariance of X: a p x p CSV file or `ar:<scale>:<decay>`.
    #[arg(long)]
    sigma: Option<String>,
    /// Covariate bound.
    #[arg(long)]
    cx: Option<f64>,
    /// Response bound.
    #[arg(long)]
    cy: Option<f64>,
    /// Peeling size for mirror peeling [default: min(p, max(2 kn, 40))].
    #[arg(long)]
    m: Option<usize>,
    /// Screening size [default: min(20, p)].
    #[arg(long)]
    kn: Option<usize>,
    /// Screening half size [default: n / 2].
    #[arg(long)]
    n1: Option<usize>,
    /// Number of splits for `multi` [default: 5].
    #[arg(long)]
    b_splits: Option<usize>,
    /// Within-split level for `multi` [default: q / 2].
    #[arg(long)]
    alpha_kn: Option<f64>,
    /// Ridge/SGD penalty [default: 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// SGD step exponent [default: 0.5].
    #[arg(long)]
    sgd_c: Option<f64>,
    /// SGD projection radius [default: 10].
    #[arg(long)]
    sgd_radius: Option<f64>,
    /// Sample-split seed [default: 1]
    #[arg(long)]
    seed_split: Option<u64>,
    /// Knockoff seed [default: 2]
    #[arg(long)]
    seed_knockoff: Option<u64>,
    /// Privacy noise seed; drawn from OS entropy and printed when omitted.
    #[arg(long)]
    seed_noise: Option<u64>,
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    mu_grid: Option<Vec<f64>>,
    /// Nonzero coefficient value [default: 1].
    #[arg(long)]
    beta: Option<f64>,
    /// Number of nonzero coefficients [default: 10].
    #[arg(long)]
    s: Option<usize>,
    /// Repetitions per configuration [default: 100].
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Statistic family [default: ridge].
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Procedures to run, comma separated [default: single,nonprivate].
    #[arg(long, value_delimiter = ',')]
    procedures: Option<Vec<String>>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    kn: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    b_splits: Option<usize>,
    #[arg(long)]
    alpha_kn: Option<f64>,
    /// Fixed ridge/SGD penalty instead of `s / |beta|^2`.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Worker threads for repetitions.
    #[arg(long, env = "DPKNOCK_JOBS")]
    jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Family for the sensitivity check [default: all].
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Rows [default: 50, or 50000 for exchangeability].
    #[arg(long)]
    n: Option<usize>,
    /// Columns [default: 8, or 3 for exchangeability].
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allowed covariance deviation for the exchangeability check.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
    Verification(Value),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::InvalidArgument(_) | Error::Parse { .. } | Error::Validation(_)) => {
                Failure::Validation(format!("{e:#}"))
            }
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

/// Fills every unset flag from the JSON config file, if any.
fn merge_config<T: Serialize + DeserializeOwned>(flags: &T, path: Option<&Path>) -> Result<T, Failure> {
    let mut merged = serde_json::to_value(flags).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Runtime)?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let Value::Object(file) = file else {
            return Err(invalid("config file must hold a JSON object"));
        };
        let target = merged.as_object_mut().expect("flags serialise to an object");
        for (k, v) in file {
            match target.get(&k) {
                Some(Value::Null) => {
                    target.insert(k, v);
                }
                Some(_) => {}
                None => return Err(invalid(format!("unknown config key '{k}'"))),
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| invalid(format!("config: {e}")))
}

fn require<T>(v: Option<T>, name: &str) -> Result<T, Failure> {
    v.ok_or_else(|| invalid(format!("--{name} is required")))
}

fn load_sigma(source: &str, p: usize) -> Result<DMatrix<f64>, Failure> {
    if let Some(rest) = source.strip_prefix("ar:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let parse = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
        return match parts.as_slice() {
            [a, b] => match (parse(a), parse(b)) {
                (Some(a), Some(b)) if a > 0.0 && b.abs() < 1.0 => Ok(ar_covariance(p, a, b)),
                _ => Err(invalid(format!("bad AR covariance '{source}', expected scale > 0 and |decay| < 1"))),
            },
            _ => Err(invalid(format!("bad AR covariance '{source}', expected ar:<scale>:<decay>"))),
        };
    }
    let text = fs::read_to_string(source)
        .with_context(|| format!("reading covariance {source}"))
        .map_err(Failure::Runtime)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(invalid(format!("covariance {source}, line {}: {e}", i + 1))),
        }
    }
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(invalid(format!("covariance {source} must be {p} x {p} to match the data")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn family_config(family: Family, lambda: f64, sgd_c: f64, sgd_radius: f64, cx: f64, cy: f64) -> FamilyConfig {
    match family {
        Family::MarginalCorr => FamilyConfig::Marginal,
        Family::Hsic => FamilyConfig::Hsic(None),
        Family::RidgeDiff => FamilyConfig::Ridge(RidgeConfig { lambda }),
        Family::SgdDiff => FamilyConfig::Sgd(SgdConfig {
            lambda,
            c: sgd_c,
            r_beta: sgd_radius,
            m_bound: cx.max(cy),
        }),
    }
}

fn cmd_select(flags: SelectArgs) -> Result<Value, Failure> {
    let a = merge_config(&flags, flags.config.as_deref())?;
    let input = require(a.input, "input")?;
    let mu = require(a.mu, "mu")?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid(format!("--mu must be positive, got {mu}")));
    }
    let sigma_source = require(a.sigma, "sigma")?;
    let cx = require(a.cx, "cx")?;
    let cy = require(a.cy, "cy")?;
    let q = a.q.unwrap_or(0.2);
    let algo = a.algo.unwrap_or(Algo::Single);
    let family: Family = a.family.unwrap_or(FamilyArg::Marginal).into();

    let data = load_dataset(&input, cx, cy).with_context(|| format!("loading {}", input.display()))?;
    let (n, p) = (data.n(), data.p());
    let sigma = load_sigma(&sigma_source, p)?;
    let seed_noise = match a.seed_noise {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("privacy noise seed drawn from OS entropy: {s} (pass --seed-noise {s} to replay)");
            s
        }
    };
    let seeds = SeedSet {
        split: a.seed_split.unwrap_or(1),
        knockoff: a.seed_knockoff.unwrap_or(2),
        noise: Some(seed_noise),
    };
    seeds.validate()?;
    let kn = a.kn.unwrap_or(20.min(p));
    let fcfg = family_config(
        family,
        a.lambda.unwrap_or(1.0),
        a.sgd_c.unwrap_or(0.5),
        a.sgd_radius.unwrap_or(10.0),
        cx,
        cy,
    );
    let knockoffs = GaussianKnockoffConfig::equicorrelated(sigma, seeds.knockoff)?;
    if data.was_clipped() {
        info!("input values outside the declared bounds were clipped");
    }

    let mut out = match algo {
        Algo::Mirror => {
            let keys: Vec<u64> = (0..n as u64).collect();
            let aug = generate_knockoffs_keyed(&data, &knockoffs, &keys, Execution::Sequential)?;
            let stats = compute_statistics(&aug.full()?, &fcfg)?;
            let cfg = MirrorConfig::new(a.m.unwrap_or(p.min((2 * kn).max(40))), mu, q);
            let mut noise = NoiseStream::seeded(seed_noise);
            mirror_peeling_select(&stats, &cfg, &mut noise)?.to_json()
        }
        Algo::Single | Algo::Multi => {
            let mut pcfg = PipelineConfig::new(a.n1.unwrap_or(n / 2), kn, fcfg, q, mu, seeds);
            pcfg.exec = Execution::Sequential;
            if algo == Algo::Single {
                single_split_select(&data, &knockoffs, &pcfg)?.to_json()
            } else {
                let mut mcfg = MultiSplitConfig::new(pcfg, a.b_splits.unwrap_or(5));
                if let Some(alpha) = a.alpha_kn {
                    mcfg.alpha_kn = alpha;
                }
                multi_split_select(&data, &knockoffs, &mcfg)?.to_json()
            }
        }
    };
    let obj = out.as_object_mut().expect("results serialise to objects");
    obj.insert("algo".into(), json!(algo));
    obj.insert("family".into(), json!(family.name()));
    obj.insert("seeds".into(), json!(seeds));
    Ok(out)
}

fn cmd_simulate(flags: SimulateArgs) -> Result<Value, Failure> {
    let a = merge_config(&flags, flags.config.as_deref())?;
    let n_grid = require(a.n_grid, "n-grid")?;
    let p_grid = require(a.p_grid, "p-grid")?;
    let mu_grid = a.mu_grid.unwrap_or_else(|| vec![1.0]);
    let out_dir = require(a.out_dir, "out-dir")?;
    let family: Family = a.family.unwrap_or(FamilyArg::Ridge).into();
    let procedures: Vec<Procedure> = a
        .procedures
        .unwrap_or_else(|| vec!["single".into(), "nonprivate".into()])
        .iter()
        .map(|s| s.parse::<Procedure>())
        .collect::<Result<_, _>>()?;
    let jobs = a.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }

    let mut cfgs = Vec::new();
    for &n in &n_grid {
        for &p in &p_grid {
            for &mu in &mu_grid {
                let mut c = SimConfig::new(n, p, a.s.unwrap_or(10.min(p)), a.beta.unwrap_or(1.0), mu, family);
                c.reps = a.reps.unwrap_or(100);
                c.q = a.q.unwrap_or(c.q);
                c.k_n = a.kn.unwrap_or(c.k_n);
                c.m = a.m;
                c.b_splits = a.b_splits.unwrap_or(c.b_splits);
                c.alpha_kn = a.alpha_kn;
                c.base_seed = a.base_seed.unwrap_or(0);
                if let Some(l) = a.lambda {
                    c.lambda_rule = LambdaRule::Fixed(l);
                }
                c.validate()?;
                cfgs.push(c);
            }
        }
    }

    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(Failure::Runtime)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.into()))?;
    let exec = if jobs > 1 { Execution::Parallel } else { Execution::Sequential };
    let reports = pool.install(|| run_grid(&cfgs, &procedures, exec))?;
    let records = out_dir.join("records.csv");
    let aggregate = out_dir.join("aggregate.csv");
    write_records_csv(&reports, &records).context("writing per-rep CSV")?;
    write_aggregate_csv(&reports, &aggregate).context("writing aggregate CSV")?;
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "config_id": r.config_id,
                "n": r.config.n,
                "p": r.config.p,
                "mu": r.config.mu,
                "procedure": r.procedure,
                "fdr": r.mean_fdr,
                "fdr_se": r.se_fdr,
                "power": r.mean_power,
                "power_se": r.se_power,
            })
        })
        .collect();
    Ok(json!({
        "records": records,
        "aggregate": aggregate,
        "configs": summary,
    }))
}

fn cmd_verify(a: VerifyArgs) -> Result<Value, Failure> {
    if a.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let exec = Execution::default();
    match a.check {
        Check::Sensitivity => {
            let (n, p) = (a.n.unwrap_or(50), a.p.unwrap_or(8));
            if n < 4 || p < 1 {
                return Err(invalid("sensitivity check needs n >= 4 and p >= 1"));
            }
            let families: Vec<Family> = match a.family {
                Some(f) => vec![f.into()],
                None => Family::ALL.to_vec(),
            };
            let mut reports = Vec::new();
            let mut ok = true;
            for f in families {
                let r = verify_sensitivity(f, a.trials, n, p, a.seed, exec)?;
                ok &= r.passed();
                reports.push(r);
            }
            let out = json!({ "check": a.check, "reports": reports });
            if ok {
                Ok(out)
            } else {
                Err(Failure::Verification(out))
            }
        }
        Check::Exchangeability => {
            let (n, p) = (a.n.unwrap_or(50_000), a.p.unwrap_or(3));
            if n < 2 * p {
                return Err(invalid("exchangeability check needs n >= 2p"));
            }
            let r = verify_exchangeability(n, p, a.seed, exec)?;
            let ok = r.max_deviation < a.tolerance;
            let out = json!({ "check": a.check, "tolerance": a.tolerance, "report": r });
            if ok {
                Ok(out)
            } else {
                Err(Failure::Verification(out))
            }
        }
        Check::ThresholdOracle => {
            let r = verify_threshold_oracle(a.trials, a.seed)?;
            let ok = r.passed();
            let out = json!({ "check": a.check, "report": r });
            if ok {
                Ok(out)
            } else {
                Err(Failure::Verification(out))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("JSON output"));
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(witness)) => {
            println!("{}", serde_json::to_string_pretty(&witness).expect("JSON output"));
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}
