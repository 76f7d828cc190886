use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use super::{e_bh, finite_or_null, knockoff_threshold, select_at, SelectionResult};
use crate::data::{make_split, Dataset};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::knockoffs::{generate_knockoffs_keyed, GaussianKnockoffConfig};
use crate::privacy::{noisy_max_peel, NoiseLedger, PrivacyBudget, SeedSet};
use crate::rng::{derive_seed, NoiseStream};
use crate::stats::{compute_statistics, screening_stats, FamilyConfig, HsicConfig, KnockoffStatistics};

/// Private top-`K` screening: `K` rounds of noisy max on `u` with noise
/// variance `4 K Delta_u^2 / mu^2`. Returns 0-based indices in peel order.
pub fn dp_screen(
    u: &[f64],
    sensitivity_u: f64,
    k_n: usize,
    mu: f64,
    noise: &mut NoiseStream,
) -> Result<Vec<usize>> {
    screen_scaled(u, sensitivity_u, k_n, mu, 1.0, noise)
}

fn screen_scaled(
    u: &[f64],
    sensitivity_u: f64,
    k_n: usize,
    mu: f64,
    multiplier: f64,
    noise: &mut NoiseStream,
) -> Result<Vec<usize>> {
    let mu = PrivacyBudget::positive(mu)?.mu();
    if k_n < 1 || k_n > u.len() {
        return Err(invalid(format!("screening size K_n = {k_n} must lie in 1..={}", u.len())));
    }
    if !(sensitivity_u.is_finite() && sensitivity_u >= 0.0) {
        return Err(invalid("screening sensitivity must be finite and nonnegative"));
    }
    let sd = multiplier * 2.0 * (k_n as f64).sqrt() * sensitivity_u / mu;
    noisy_max_peel(u, k_n, sd, noise)
}

/// Settings shared by the split pipelines.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Size of the screening half `I1`.
    pub n1: usize,
    /// Number of screened features `K_n`.
    pub k_n: usize,
    pub family: FamilyConfig,
    pub q: f64,
    pub mu: f64,
    pub seeds: SeedSet,
    /// Multiplies every privacy noise sd; must be >= 1.
    pub noise_sd_multiplier: f64,
    /// Scheduling of knockoff generation and per-feature statistics.
    pub exec: Execution,
}

impl PipelineConfig {
    pub fn new(n1: usize, k_n: usize, family: FamilyConfig, q: f64, mu: f64, seeds: SeedSet) -> Self {
        Self {
            n1,
            k_n,
            family,
            q,
            mu,
            seeds,
            noise_sd_multiplier: 1.0,
            exec: Execution::default(),
        }
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        self.seeds.validate()?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid(format!("FDR level q must lie in (0, 1), got {}", self.q)));
        }
        if self.k_n < 1 || self.k_n > data.p() {
            return Err(invalid(format!("K_n = {} must lie in 1..={}", self.k_n, data.p())));
        }
        if self.n1 < 2 || self.n1 + 2 > data.n() {
            return Err(invalid(format!(
                "split size n1 = {} leaves fewer than two rows in a half (n = {})",
                self.n1,
                data.n()
            )));
        }
        if !(self.noise_sd_multiplier.is_finite() && self.noise_sd_multiplier >= 1.0) {
            return Err(invalid("noise multiplier must be >= 1"));
        }
        Ok(())
    }
}

/// Steps 1 to 5 of the post-screening pipeline on one split.
struct SplitRun {
    knockoff_seed: u64,
    /// 0-based screened columns in peel order.
    screened: Vec<usize>,
    stats: KnockoffStatistics,
    released: Vec<f64>,
    screen_sensitivity: f64,
    release_sd: f64,
    n1: usize,
    n2: usize,
    ledger: NoiseLedger,
}

/// `mu = None` runs without any privacy noise.
fn run_split(
    data: &Dataset,
    knockoffs: &GaussianKnockoffConfig,
    cfg: &PipelineConfig,
    split_seed: u64,
    mu: Option<f64>,
    noise: &mut NoiseStream,
) -> Result<SplitRun> {
    if knockoffs.p() != data.p() {
        return Err(invalid(format!(
            "knockoff covariance has dimension {} but data has {} features",
            knockoffs.p(),
            data.p()
        )));
    }
    let plan = make_split(data.n(), cfg.n1, split_seed)?;
    let d1 = data.subset_rows(&plan.i1)?;
    let d2 = data.subset_rows(&plan.i2)?;
    let mut ledger = NoiseLedger::new();
    let half = mu.map(|m| m / std::f64::consts::SQRT_2);

    let screen = screening_stats(&d1);
    let screened = match half {
        Some(h) => {
            let c = screen_scaled(&screen.u, screen.sensitivity, cfg.k_n, h, cfg.noise_sd_multiplier, noise)?;
            let round = h / (cfg.k_n as f64).sqrt();
            for r in 0..cfg.k_n {
                ledger.record(format!("screen round {}", r + 1), round)?;
            }
            c
        }
        None => noisy_max_peel(&screen.u, cfg.k_n, 0.0, noise)?,
    };

    // Knockoffs for every column of the inference half, keyed by original row.
    let keys: Vec<u64> = plan.i2.iter().map(|&i| i as u64).collect();
    let aug = generate_knockoffs_keyed(&d2, knockoffs, &keys, cfg.exec)?;
    debug_assert_eq!(aug.x_tilde.ncols(), data.p());

    let family = match &cfg.family {
        FamilyConfig::Hsic(None) => FamilyConfig::Hsic(Some(HsicConfig::median_heuristic(&d1))),
        other => other.clone(),
    };
    let stats = compute_statistics(&aug.restrict(&screened)?, &family)?;

    let release_sd = match half {
        Some(h) => cfg.noise_sd_multiplier * stats.l2_sensitivity() / h,
        None => 0.0,
    };
    let released: Vec<f64> = stats.w.iter().map(|w| w + noise.gaussian(release_sd)).collect();
    if let Some(h) = half {
        ledger.record("release W~ on screened set", h)?;
    }

    Ok(SplitRun {
        knockoff_seed: knockoffs.knockoff_seed(),
        screened,
        stats,
        released,
        screen_sensitivity: screen.sensitivity,
        release_sd,
        n1: d1.n(),
        n2: d2.n(),
        ledger,
    })
}

fn finish(run: SplitRun, q: f64, p: usize) -> Result<SelectionResult> {
    let threshold = knockoff_threshold(&run.released, q, 1)?;
    let ids = &run.stats.feature_ids;
    let mut selected: Vec<usize> = select_at(&run.released, threshold).into_iter().map(|i| ids[i]).collect();
    selected.sort_unstable();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("knockoff_width".to_string(), p as f64);
    diagnostics.insert("sensitivity".to_string(), run.stats.sensitivity);
    diagnostics.insert("release_sensitivity".to_string(), run.stats.l2_sensitivity());
    diagnostics.insert("screen_sensitivity".to_string(), run.screen_sensitivity);
    diagnostics.insert("release_noise_sd".to_string(), run.release_sd);
    diagnostics.insert("n1".to_string(), run.n1 as f64);
    diagnostics.insert("n2".to_string(), run.n2 as f64);
    Ok(SelectionResult {
        selected,
        threshold,
        released_w: ids.iter().copied().zip(run.released.iter().copied()).collect(),
        peeled: run.screened.iter().map(|c| c + 1).collect(),
        mu_spent: run.ledger.total(),
        ledger: run.ledger,
        diagnostics,
        warnings: run.stats.warnings,
    })
}

/// Single-split private pipeline: private screening on `I1` at `mu / sqrt 2`,
/// full-width knockoffs on `I2`, statistics on the screened columns released
/// with a Gaussian mechanism at `mu / sqrt 2`, then thresholding at `q`.
///
/// The release uses the l2 sensitivity of the screened statistic vector.
pub fn single_split_select(
    data: &Dataset,
    knockoffs: &GaussianKnockoffConfig,
    cfg: &PipelineConfig,
) -> Result<SelectionResult> {
    cfg.validate(data)?;
    let budget = PrivacyBudget::positive(cfg.mu)?;
    let kcfg = knockoffs.with_seed(cfg.seeds.knockoff);
    let mut noise = cfg.seeds.noise_stream();
    let run = run_split(data, &kcfg, cfg, cfg.seeds.split, Some(budget.mu()), &mut noise)?;
    finish(run, cfg.q, data.p())
}

/// The single-split pipeline with every noise term removed: exact top-`K`
/// screening, exact statistics and the plain threshold. Spends no budget.
pub fn nonprivate_baseline(
    data: &Dataset,
    knockoffs: &GaussianKnockoffConfig,
    cfg: &PipelineConfig,
) -> Result<SelectionResult> {
    cfg.validate(data)?;
    let kcfg = knockoffs.with_seed(cfg.seeds.knockoff);
    let mut noise = NoiseStream::seeded(0);
    let run = run_split(data, &kcfg, cfg, cfg.seeds.split, None, &mut noise)?;
    finish(run, cfg.q, data.p())
}

#[derive(Debug, Clone)]
pub struct MultiSplitConfig {
    pub base: PipelineConfig,
    /// Number of splits `B`.
    pub b_splits: usize,
    /// Within-split knockoff level.
    pub alpha_kn: f64,
}

impl MultiSplitConfig {
    /// `alpha_kn` defaults to `q / 2`.
    pub fn new(base: PipelineConfig, b_splits: usize) -> Self {
        let alpha_kn = base.q / 2.0;
        Self {
            base,
            b_splits,
            alpha_kn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub split_seed: u64,
    pub knockoff_seed: u64,
    /// 1-based screened ids in peel order.
    pub screened: Vec<usize>,
    pub threshold: f64,
    pub n_negative: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EValueResult {
    /// Averaged e-value per feature, indexed by `feature_id - 1`.
    pub e_avg: Vec<f64>,
    pub k_hat: usize,
    /// Ascending 1-based ids.
    pub selected: Vec<usize>,
    pub mu_spent: f64,
    pub ledger: NoiseLedger,
    pub splits: Vec<SplitSummary>,
    pub warnings: Vec<String>,
}

impl EValueResult {
    pub fn to_json(&self) -> Value {
        let splits: Vec<Value> = self
            .splits
            .iter()
            .map(|s| {
                json!({
                    "split_seed": s.split_seed,
                    "knockoff_seed": s.knockoff_seed,
                    "screened": s.screened,
                    "threshold": finite_or_null(s.threshold),
                    "n_negative": s.n_negative,
                    "n_positive": s.n_positive,
                })
            })
            .collect();
        json!({
            "selected": self.selected,
            "k_hat": self.k_hat,
            "e_avg": self.e_avg,
            "mu_spent": self.mu_spent,
            "b_n": Value::Null,
            "ledger": self.ledger,
            "splits": splits,
            "warnings": self.warnings,
        })
    }
}

/// Multi-split pipeline with e-value aggregation.
///
/// Each of the `B` splits runs the private single-split pipeline (up to the
/// release) at budget `mu / sqrt B` with its own split and knockoff seeds,
/// thresholds at `alpha_kn`, and converts the outcome into e-values
/// `e_j = p 1(W~_j >= T) / (1 + #{k : W~_k <= -T})`. The averaged e-values
/// are passed to e-BH at level `q`.
pub fn multi_split_select(
    data: &Dataset,
    knockoffs: &GaussianKnockoffConfig,
    cfg: &MultiSplitConfig,
) -> Result<EValueResult> {
    let base = &cfg.base;
    base.validate(data)?;
    let budget = PrivacyBudget::positive(base.mu)?;
    if cfg.b_splits < 1 {
        return Err(invalid("the number of splits B must be at least 1"));
    }
    if !(cfg.alpha_kn > 0.0 && cfg.alpha_kn < 1.0) {
        return Err(invalid(format!("alpha_kn must lie in (0, 1), got {}", cfg.alpha_kn)));
    }
    let p = data.p();
    let per_split = budget.split(cfg.b_splits).mu();
    let mut noise = base.seeds.noise_stream();
    let mut e_sum = vec![0.0; p];
    let mut ledger = NoiseLedger::new();
    let mut splits = Vec::with_capacity(cfg.b_splits);
    let mut warnings = Vec::new();

    for b in 0..cfg.b_splits {
        let split_seed = derive_seed(base.seeds.split, "multi-split", b as u64);
        let kcfg = knockoffs.with_seed(derive_seed(base.seeds.knockoff, "multi-knockoff", b as u64));
        let run = run_split(data, &kcfg, base, split_seed, Some(per_split), &mut noise)?;
        let t = knockoff_threshold(&run.released, cfg.alpha_kn, 1)?;
        let n_neg = run.released.iter().filter(|&&w| w <= -t).count();
        let n_pos = run.released.iter().filter(|&&w| w >= t).count();
        let e_val = p as f64 / (1.0 + n_neg as f64);
        for (&id, &w) in run.stats.feature_ids.iter().zip(&run.released) {
            if w >= t {
                e_sum[id - 1] += e_val;
            }
        }
        ledger.absorb(&format!("split {}", b + 1), &run.ledger)?;
        warnings.extend(run.stats.warnings.iter().map(|w| format!("split {}: {w}", b + 1)));
        splits.push(SplitSummary {
            split_seed,
            knockoff_seed: run.knockoff_seed,
            screened: run.screened.iter().map(|c| c + 1).collect(),
            threshold: t,
            n_negative: n_neg,
            n_positive: n_pos,
        });
    }

    let e_avg: Vec<f64> = e_sum.iter().map(|e| e / cfg.b_splits as f64).collect();
    let (k_hat, selected) = e_bh(&e_avg, base.q)?;
    Ok(EValueResult {
        e_avg,
        k_hat,
        selected,
        mu_spent: ledger.total(),
        ledger,
        splits,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoffs::ar_covariance;
    use crate::rng::{fill_standard_normal, keyed_stream};
    use crate::stats::RidgeConfig;
    use nalgebra::{DMatrix, DVector};

    /// AR(0.5) design with `s` unit signals, clipped at 1.5 and 4.
    fn instance(n: usize, p: usize, s: usize, seed: u64) -> (Dataset, GaussianKnockoffConfig) {
        let sigma = ar_covariance(p, 1.0, 0.5);
        let chol = sigma.clone().cholesky().unwrap().l();
        let mut rng = keyed_stream(seed, 0);
        let mut z = vec![0.0; n * p];
        fill_standard_normal(&mut rng, &mut z);
        let x = DMatrix::from_row_slice(n, p, &z) * chol.transpose();
        let x = x.map(|v| v.clamp(-1.5, 1.5));
        let mut e = vec![0.0; n];
        fill_standard_normal(&mut rng, &mut e);
        let y = DVector::from_fn(n, |i, _| (0..s).map(|j| x[(i, j)]).sum::<f64>() + e[i]);
        let data = Dataset::new(x, y, 1.5, 4.0).unwrap();
        let k = GaussianKnockoffConfig::equicorrelated(sigma, 0).unwrap();
        (data, k)
    }

    fn seeds() -> SeedSet {
        SeedSet {
            split: 11,
            knockoff: 22,
            noise: Some(33),
        }
    }

    #[test]
    fn dp_screen_without_noise_is_exact_top_k() {
        let u = [0.1, 0.9, 0.3, 0.8, 0.05];
        let mut n = NoiseStream::seeded(1);
        assert_eq!(dp_screen(&u, 0.0, 3, 1.0, &mut n).unwrap(), vec![1, 3, 2]);
        let mut all = dp_screen(&u, 0.2, 5, 1.0, &mut n).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(dp_screen(&u, 0.1, 6, 1.0, &mut n).is_err());
    }

    #[test]
    fn single_split_invariants_and_budget() {
        let (data, k) = instance(300, 30, 4, 1);
        let cfg = PipelineConfig::new(150, 10, FamilyConfig::Ridge(RidgeConfig { lambda: 1.0 }), 0.2, 1.3, seeds());
        let r = single_split_select(&data, &k, &cfg).unwrap();
        assert_eq!(r.peeled.len(), 10);
        assert!((r.mu_spent - 1.3).abs() < 1e-12);
        assert_eq!(r.ledger.entries().len(), 11);
        assert_eq!(r.diagnostics["knockoff_width"], 30.0);
        for id in &r.selected {
            assert!(r.peeled.contains(id));
            assert!(r.released_w[id] >= r.threshold);
        }
        assert_eq!(r, single_split_select(&data, &k, &cfg).unwrap());
    }

    #[test]
    fn baseline_spends_nothing_and_is_deterministic() {
        let (data, k) = instance(300, 30, 4, 2);
        let cfg = PipelineConfig::new(150, 10, FamilyConfig::Marginal, 0.2, 1.0, seeds());
        let a = nonprivate_baseline(&data, &k, &cfg).unwrap();
        assert_eq!(a.mu_spent, 0.0);
        assert!(a.ledger.entries().is_empty());
        let b = nonprivate_baseline(&data, &k, &cfg.clone()).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.released_w, b.released_w);
    }

    #[test]
    fn baseline_screens_exact_top_k() {
        let (data, k) = instance(200, 20, 3, 3);
        let cfg = PipelineConfig::new(100, 5, FamilyConfig::Marginal, 0.2, 1.0, seeds());
        let r = nonprivate_baseline(&data, &k, &cfg).unwrap();
        let plan = make_split(200, 100, 11).unwrap();
        let u = screening_stats(&data.subset_rows(&plan.i1).unwrap()).u;
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
        let top: Vec<usize> = order[..5].iter().map(|c| c + 1).collect();
        assert_eq!(r.peeled, top);
    }

    #[test]
    fn multi_split_budget_and_structure() {
        let (data, k) = instance(300, 30, 4, 4);
        let base = PipelineConfig::new(150, 10, FamilyConfig::Marginal, 0.2, 1.0, seeds());
        let r = multi_split_select(&data, &k, &MultiSplitConfig::new(base, 3)).unwrap();
        assert!((r.mu_spent - 1.0).abs() < 1e-12);
        assert_eq!(r.splits.len(), 3);
        assert_eq!(r.ledger.entries().len(), 3 * 11);
        assert_eq!(r.selected.len(), r.k_hat);
        assert_eq!(r.e_avg.len(), 30);
        let seeds: std::collections::HashSet<u64> = r.splits.iter().map(|s| s.split_seed).collect();
        assert_eq!(seeds.len(), 3);
    }

    #[test]
    fn single_split_e_values_sum_to_at_most_p() {
        let (data, k) = instance(200, 20, 0, 5);
        let base = PipelineConfig::new(100, 8, FamilyConfig::Marginal, 0.2, 1.0, seeds());
        let r = multi_split_select(&data, &k, &MultiSplitConfig::new(base, 1)).unwrap();
        let s = &r.splits[0];
        let total: f64 = r.e_avg.iter().sum();
        let expect = 20.0 * s.n_positive as f64 / (1.0 + s.n_negative as f64);
        assert!((total - expect).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_configuration() {
        let (data, k) = instance(100, 10, 2, 6);
        let mut cfg = PipelineConfig::new(50, 11, FamilyConfig::Marginal, 0.2, 1.0, seeds());
        assert!(single_split_select(&data, &k, &cfg).is_err());
        cfg.k_n = 5;
        cfg.seeds.noise = Some(11);
        assert!(single_split_select(&data, &k, &cfg).is_err());
        cfg.seeds.noise = Some(33);
        cfg.n1 = 99;
        assert!(single_split_select(&data, &k, &cfg).is_err());
        cfg.n1 = 50;
        let mut m = MultiSplitConfig::new(cfg, 0);
        assert!(multi_split_select(&data, &k, &m).is_err());
        m.b_splits = 2;
        m.alpha_kn = 1.0;
        assert!(multi_split_select(&data, &k, &m).is_err());
    }
}
