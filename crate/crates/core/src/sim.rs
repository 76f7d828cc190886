//! Monte Carlo harness: AR-correlated bounded designs, repeated selection runs,
//! FDP/power estimation and CSV output.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::knockoffs::{ar_covariance, generate_knockoffs_keyed, GaussianKnockoffConfig};
use crate::privacy::SeedSet;
use crate::rng::{derive_seed, fill_standard_normal, keyed_stream};
use crate::selection::{
    mirror_peeling_select, multi_split_select, nonprivate_baseline, single_split_select, MirrorConfig,
    MultiSplitConfig, PipelineConfig,
};
use crate::stats::{compute_statistics, Family, FamilyConfig, RidgeConfig, SgdConfig};

/// How the ridge/SGD penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaRule {
    /// `s / |beta|^2` from the true coefficients (1 when `s = 0` or `beta = 0`).
    PaperRule,
    Fixed(f64),
}

/// Selection procedure run by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    /// Mirror peeling over all features.
    Mirror,
    /// Private single-split pipeline.
    Single,
    /// Private multi-split e-BH pipeline.
    Multi,
    /// Single-split pipeline without noise.
    NonPrivate,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Mirror => "mirror",
            Procedure::Single => "single",
            Procedure::Multi => "multi",
            Procedure::NonPrivate => "nonprivate",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mirror" => Ok(Procedure::Mirror),
            "single" | "dp" => Ok(Procedure::Single),
            "multi" => Ok(Procedure::Multi),
            "nonprivate" | "np" => Ok(Procedure::NonPrivate),
            other => Err(invalid(format!("unknown procedure '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub beta_value: f64,
    /// Number of nonzero coefficients (the first `s` features).
    pub s: usize,
    pub rho_scale: f64,
    pub rho_decay: f64,
    pub c_x: f64,
    /// `c_y = c1 sqrt(ln n)`.
    pub c1: f64,
    pub q: f64,
    pub mu: f64,
    pub k_n: usize,
    /// Peeling size for mirror peeling; `None` uses `min(p, max(2 K_n, 40))`.
    pub m: Option<usize>,
    /// Screening half size; `None` uses `n / 2`.
    pub n1: Option<usize>,
    pub b_splits: usize,
    /// Within-split level for multi-split; `None` uses `q / 2`.
    pub alpha_kn: Option<f64>,
    pub reps: usize,
    pub base_seed: u64,
    pub family: Family,
    pub lambda_rule: LambdaRule,
    pub sgd_c: f64,
    pub sgd_radius: f64,
    pub noise_sd_multiplier: f64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, s: usize, beta_value: f64, mu: f64, family: Family) -> Self {
        Self {
            n,
            p,
            beta_value,
            s,
            rho_scale: 0.5,
            rho_decay: 0.3,
            c_x: 1.5,
            c1: 1.5,
            q: 0.2,
            mu,
            k_n: 20.min(p),
            m: None,
            n1: None,
            b_splits: 5,
            alpha_kn: None,
            reps: 100,
            base_seed: 0,
            family,
            lambda_rule: LambdaRule::PaperRule,
            sgd_c: 0.5,
            sgd_radius: 10.0,
            noise_sd_multiplier: 1.0,
        }
    }

    pub fn c_y(&self) -> f64 {
        self.c1 * (self.n as f64).ln().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s > self.p {
            return Err(invalid(format!("s = {} exceeds p = {}", self.s, self.p)));
        }
        if self.reps < 1 {
            return Err(invalid("at least one repetition is required"));
        }
        if self.n < 8 || self.p < 1 {
            return Err(invalid("n must be at least 8 and p at least 1"));
        }
        if !(self.c_x > 0.0 && self.c1 > 0.0) {
            return Err(invalid("clipping constants must be positive"));
        }
        if !self.beta_value.is_finite() {
            return Err(invalid("beta must be finite"));
        }
        Ok(())
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        ar_covariance(self.p, self.rho_scale, self.rho_decay)
    }

    pub fn lambda(&self) -> f64 {
        match self.lambda_rule {
            LambdaRule::Fixed(l) => l,
            LambdaRule::PaperRule => {
                let norm2 = self.s as f64 * self.beta_value * self.beta_value;
                if norm2 > 0.0 {
                    self.s as f64 / norm2
                } else {
                    1.0
                }
            }
        }
    }

    pub fn peel_size(&self) -> usize {
        self.m.unwrap_or_else(|| self.p.min((2 * self.k_n).max(40)))
    }

    fn split_size(&self) -> usize {
        self.n1.unwrap_or(self.n / 2)
    }

    /// Family configuration; HSIC bandwidths are left to the procedure.
    pub fn family_config(&self) -> FamilyConfig {
        match self.family {
            Family::MarginalCorr => FamilyConfig::Marginal,
            Family::Hsic => FamilyConfig::Hsic(None),
            Family::RidgeDiff => FamilyConfig::Ridge(RidgeConfig { lambda: self.lambda() }),
            Family::SgdDiff => FamilyConfig::Sgd(SgdConfig {
                lambda: self.lambda(),
                c: self.sgd_c,
                r_beta: self.sgd_radius,
                m_bound: self.c_x.max(self.c_y()),
            }),
        }
    }
}

/// One simulated dataset with its clipping rates.
#[derive(Debug, Clone)]
pub struct SimInstance {
    pub data: Dataset,
    /// 1-based true support.
    pub support: Vec<usize>,
    pub x_clip_rate: f64,
    pub y_clip_rate: f64,
}

/// Draws `X ~ N(0, Sigma)` clipped to `c_x`, then `y = X beta + eps` clipped
/// to `c_y`, where `X` is the clipped design. Rows come from streams keyed by
/// `rep_seed`.
pub fn generate_instance(cfg: &SimConfig, rep_seed: u64) -> Result<SimInstance> {
    cfg.validate()?;
    let chol = cfg
        .sigma()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("AR covariance is not positive definite".into()))?;
    generate_with_factor(cfg, &chol.l(), rep_seed)
}

fn generate_with_factor(cfg: &SimConfig, l: &DMatrix<f64>, rep_seed: u64) -> Result<SimInstance> {
    let (n, p) = (cfg.n, cfg.p);
    let mut z = vec![0.0; n * p];
    fill_standard_normal(&mut keyed_stream(rep_seed, 0), &mut z);
    let mut x = DMatrix::from_row_slice(n, p, &z) * l.transpose();
    let c_x = cfg.c_x;
    let x_clipped = x.iter().filter(|v| v.abs() > c_x).count();
    x.apply(|v| *v = v.clamp(-c_x, c_x));

    let mut eps = vec![0.0; n];
    fill_standard_normal(&mut keyed_stream(rep_seed, 1), &mut eps);
    let y = DVector::from_fn(n, |i, _| {
        cfg.beta_value * (0..cfg.s).map(|j| x[(i, j)]).sum::<f64>() + eps[i]
    });
    let c_y = cfg.c_y();
    let y_clipped = y.iter().filter(|v| v.abs() > c_y).count();
    Ok(SimInstance {
        data: Dataset::new(x, y, c_x, c_y)?,
        support: (1..=cfg.s).collect(),
        x_clip_rate: x_clipped as f64 / (n * p) as f64,
        y_clip_rate: y_clipped as f64 / n as f64,
    })
}

/// `FDP = |S \ S0| / max(1, |S|)`, `power = |S n S0| / s` (`None` when `s = 0`).
pub fn fdp_and_power(selected: &[usize], support: &[usize]) -> (f64, Option<f64>) {
    let truth: BTreeSet<usize> = support.iter().copied().collect();
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let hits = sel.intersection(&truth).count();
    let fdp = (sel.len() - hits) as f64 / sel.len().max(1) as f64;
    let power = if truth.is_empty() {
        None
    } else {
        Some(hits as f64 / truth.len() as f64)
    };
    (fdp, power)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub rep_seed: u64,
    pub selected: Vec<usize>,
    pub fdp: f64,
    pub power: Option<f64>,
    pub mu_spent: f64,
    pub x_clip_rate: f64,
    pub y_clip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config_id: usize,
    pub config: SimConfig,
    pub procedure: Procedure,
    pub records: Vec<RepRecord>,
    pub mean_fdr: f64,
    pub se_fdr: f64,
    pub mean_power: Option<f64>,
    pub se_power: Option<f64>,
    pub mean_selected: f64,
    pub x_clip_rate: f64,
    pub y_clip_rate: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SimReport {
    fn from_records(config_id: usize, config: SimConfig, procedure: Procedure, records: Vec<RepRecord>) -> Self {
        let fdps: Vec<f64> = records.iter().map(|r| r.fdp).collect();
        let (mean_fdr, se_fdr) = mean_se(&fdps);
        let powers: Vec<f64> = records.iter().filter_map(|r| r.power).collect();
        let (mean_power, se_power) = if powers.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_se(&powers);
            (Some(m), Some(s))
        };
        let sizes: Vec<f64> = records.iter().map(|r| r.selected.len() as f64).collect();
        let xr: Vec<f64> = records.iter().map(|r| r.x_clip_rate).collect();
        let yr: Vec<f64> = records.iter().map(|r| r.y_clip_rate).collect();
        Self {
            config_id,
            config,
            procedure,
            mean_fdr,
            se_fdr,
            mean_power,
            se_power,
            mean_selected: mean_se(&sizes).0,
            x_clip_rate: mean_se(&xr).0,
            y_clip_rate: mean_se(&yr).0,
            records,
        }
    }
}

/// Seeds for one repetition, all derived from `rep_seed`.
pub fn rep_seeds(rep_seed: u64) -> SeedSet {
    SeedSet {
        split: derive_seed(rep_seed, "split", 0),
        knockoff: derive_seed(rep_seed, "knockoff", 0),
        noise: Some(derive_seed(rep_seed, "noise", 0)),
    }
}

/// Everything a repetition needs that does not depend on the rep.
struct Prepared {
    chol: DMatrix<f64>,
    knockoffs: GaussianKnockoffConfig,
}

fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let sigma = cfg.sigma();
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("AR covariance is not positive definite".into()))?
        .l();
    Ok(Prepared {
        chol,
        knockoffs: GaussianKnockoffConfig::equicorrelated(sigma, 0)?,
    })
}

fn run_rep(cfg: &SimConfig, prep: &Prepared, procedure: Procedure, rep: usize) -> Result<RepRecord> {
    let rep_seed = cfg.base_seed.wrapping_add(rep as u64);
    let inst = generate_with_factor(cfg, &prep.chol, rep_seed)?;
    let seeds = rep_seeds(rep_seed);
    let (selected, mu_spent) = match procedure {
        Procedure::Mirror => {
            let kcfg = prep.knockoffs.with_seed(seeds.knockoff);
            let keys: Vec<u64> = (0..cfg.n as u64).collect();
            let aug = generate_knockoffs_keyed(&inst.data, &kcfg, &keys, Execution::Sequential)?;
            let stats = compute_statistics(&aug.full()?, &cfg.family_config())?;
            let mcfg = MirrorConfig {
                m: cfg.peel_size(),
                mu: cfg.mu,
                q: cfg.q,
                noise_sd_multiplier: cfg.noise_sd_multiplier,
            };
            let r = mirror_peeling_select(&stats, &mcfg, &mut seeds.noise_stream())?;
            (r.selected, r.mu_spent)
        }
        Procedure::Single | Procedure::NonPrivate | Procedure::Multi => {
            let mut pcfg = PipelineConfig::new(cfg.split_size(), cfg.k_n, cfg.family_config(), cfg.q, cfg.mu, seeds);
            pcfg.noise_sd_multiplier = cfg.noise_sd_multiplier;
            pcfg.exec = Execution::Sequential;
            match procedure {
                Procedure::Single => {
                    let r = single_split_select(&inst.data, &prep.knockoffs, &pcfg)?;
                    (r.selected, r.mu_spent)
                }
                Procedure::NonPrivate => {
                    let r = nonprivate_baseline(&inst.data, &prep.knockoffs, &pcfg)?;
                    (r.selected, r.mu_spent)
                }
                _ => {
                    let mut mcfg = MultiSplitConfig::new(pcfg, cfg.b_splits);
                    if let Some(a) = cfg.alpha_kn {
                        mcfg.alpha_kn = a;
                    }
                    let r = multi_split_select(&inst.data, &prep.knockoffs, &mcfg)?;
                    (r.selected, r.mu_spent)
                }
            }
        }
    };
    let (fdp, power) = fdp_and_power(&selected, &inst.support);
    Ok(RepRecord {
        rep,
        rep_seed,
        selected,
        fdp,
        power,
        mu_spent,
        x_clip_rate: inst.x_clip_rate,
        y_clip_rate: inst.y_clip_rate,
    })
}

/// Runs `cfg.reps` independent repetitions of `procedure`. Repetition `r`
/// uses seed `base_seed + r`, so the report does not depend on `exec`.
pub fn run_config(cfg: &SimConfig, procedure: Procedure, config_id: usize, exec: Execution) -> Result<SimReport> {
    let prep = prepare(cfg)?;
    let records: Vec<RepRecord> = exec
        .map_range(cfg.reps, |rep| run_rep(cfg, &prep, procedure, rep))
        .into_iter()
        .collect::<Result<_>>()?;
    let report = SimReport::from_records(config_id, cfg.clone(), procedure, records);
    info!(
        "config {} ({}, n={}, p={}, mu={}): FDR {:.4} (se {:.4}), power {:?}",
        config_id, procedure, cfg.n, cfg.p, cfg.mu, report.mean_fdr, report.se_fdr, report.mean_power
    );
    Ok(report)
}

/// Runs every configuration under every procedure, numbering the
/// configurations in order.
pub fn run_grid(cfgs: &[SimConfig], procedures: &[Procedure], exec: Execution) -> Result<Vec<SimReport>> {
    let mut out = Vec::with_capacity(cfgs.len() * procedures.len());
    for (id, cfg) in cfgs.iter().enumerate() {
        for &proc_ in procedures {
            out.push(run_config(cfg, proc_, id, exec)?);
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-repetition CSV: `config_id,rep,n,p,mu,beta,family,procedure,n_selected,fdp,power`.
/// Missing power is an empty field.
pub fn write_records_csv<P: AsRef<Path>>(reports: &[SimReport], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "config_id", "rep", "n", "p", "mu", "beta", "family", "procedure", "n_selected", "fdp", "power",
    ])?;
    for r in reports {
        let c = &r.config;
        for rec in &r.records {
            w.write_record([
                r.config_id.to_string(),
                rec.rep.to_string(),
                c.n.to_string(),
                c.p.to_string(),
                c.mu.to_string(),
                c.beta_value.to_string(),
                c.family.name().to_string(),
                r.procedure.name().to_string(),
                rec.selected.len().to_string(),
                rec.fdp.to_string(),
                fmt_opt(rec.power),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aggregate CSV with means and standard errors per configuration and procedure.
pub fn write_aggregate_csv<P: AsRef<Path>>(reports: &[SimReport], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "config_id",
        "n",
        "p",
        "mu",
        "beta",
        "s",
        "family",
        "procedure",
        "reps",
        "fdr",
        "fdr_se",
        "power",
        "power_se",
        "mean_selected",
        "x_clip_rate",
        "y_clip_rate",
    ])?;
    for r in reports {
        let c = &r.config;
        w.write_record([
            r.config_id.to_string(),
            c.n.to_string(),
            c.p.to_string(),
            c.mu.to_string(),
            c.beta_value.to_string(),
            c.s.to_string(),
            c.family.name().to_string(),
            r.procedure.name().to_string(),
            r.records.len().to_string(),
            r.mean_fdr.to_string(),
            r.se_fdr.to_string(),
            fmt_opt(r.mean_power),
            fmt_opt(r.se_power),
            r.mean_selected.to_string(),
            r.x_clip_rate.to_string(),
            r.y_clip_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
