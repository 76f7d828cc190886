//! Empirical checks of the analytic guarantees: sensitivity bounds on
//! adversarial neighbouring datasets, second-moment exchangeability of the
//! knockoffs, and the threshold scan against its literal definition.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::knockoffs::{ar_covariance, empirical_joint_covariance, generate_knockoffs_keyed, GaussianKnockoffConfig};
use crate::rng::{derive_seed, fill_standard_normal, keyed_stream};
use crate::selection::knockoff_threshold;
use crate::stats::{compute_statistics, Family, FamilyConfig, HsicConfig, KnockoffStatistics, RidgeConfig, SgdConfig};

/// Covariate bound used by the sensitivity check.
pub const CHECK_C_X: f64 = 1.5;
/// Response bound used by the sensitivity check.
pub const CHECK_C_Y: f64 = 3.0;

/// The worst neighbouring pair seen by [`verify_sensitivity`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityWitness {
    pub trial: usize,
    pub row: usize,
    pub new_x: Vec<f64>,
    pub new_y: f64,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    /// `"linf"` for per-coordinate bounds, `"l2"` for vector bounds.
    pub norm: &'static str,
    pub bound: f64,
    pub max_observed: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub witness: Option<SensitivityWitness>,
}

impl SensitivityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Family configuration used by the sensitivity check. HSIC uses the
/// data-independent bound bandwidths, and SGD takes the smallest `lambda`
/// (times 1.1) satisfying the stability precondition.
pub fn check_family_config(family: Family, n: usize, p: usize) -> FamilyConfig {
    match family {
        Family::MarginalCorr => FamilyConfig::Marginal,
        Family::Hsic => FamilyConfig::Hsic(Some(HsicConfig::from_bounds(p, CHECK_C_X, CHECK_C_Y))),
        Family::RidgeDiff => FamilyConfig::Ridge(RidgeConfig { lambda: 1.0 }),
        Family::SgdDiff => {
            let (c, m) = (0.5, CHECK_C_X.max(CHECK_C_Y));
            let nf = n as f64;
            let rhs = c * (1.0 - c) / (1.0 - 2f64.powf(-(1.0 - c))) * nf.ln() / nf.powf(1.0 - c);
            let base = m * m * (2.0 * p as f64 + 1.0);
            let lambda = if rhs < 1.0 { 1.1 * base * rhs / (1.0 - rhs) } else { 1e6 * base };
            FamilyConfig::Sgd(SgdConfig {
                lambda,
                c,
                r_beta: 2.0,
                m_bound: m,
            })
        }
    }
}

fn base_dataset(n: usize, p: usize, chol: &DMatrix<f64>, seed: u64) -> Result<Dataset> {
    let mut z = vec![0.0; n * p];
    fill_standard_normal(&mut keyed_stream(seed, 0), &mut z);
    let x = (DMatrix::from_row_slice(n, p, &z) * chol.transpose()).map(|v| v.clamp(-CHECK_C_X, CHECK_C_X));
    let mut e = vec![0.0; n];
    fill_standard_normal(&mut keyed_stream(seed, 1), &mut e);
    let y = DVector::from_fn(n, |i, _| (0..p.min(2)).map(|j| x[(i, j)]).sum::<f64>() + e[i]);
    Dataset::new(x, y, CHECK_C_X, CHECK_C_Y)
}

/// An in-bounds replacement row. Most rows sit on the corners of the box,
/// aligned with the response sign or with random signs.
fn adversarial_row<R: Rng>(rng: &mut R, p: usize) -> (Vec<f64>, f64) {
    let y = if rng.random_bool(0.5) { CHECK_C_Y } else { -CHECK_C_Y };
    let x = match rng.random_range(0..3) {
        0 => vec![CHECK_C_X * y.signum(); p],
        1 => (0..p)
            .map(|_| if rng.random_bool(0.5) { CHECK_C_X } else { -CHECK_C_X })
            .collect(),
        _ => (0..p).map(|_| rng.random_range(-CHECK_C_X..=CHECK_C_X)).collect(),
    };
    (x, y)
}

fn change(a: &KnockoffStatistics, b: &KnockoffStatistics, l2: bool) -> f64 {
    let d = a.w.iter().zip(&b.w).map(|(u, v)| (u - v).abs());
    if l2 {
        d.map(|v| v * v).sum::<f64>().sqrt()
    } else {
        d.fold(0.0, f64::max)
    }
}

/// Draws `trials` datasets of size `n x p`, replaces one row of each with an
/// adversarial in-bounds row, regenerates the knockoffs with the same seed and
/// compares the change in the statistics with the declared sensitivity.
pub fn verify_sensitivity(
    family: Family,
    trials: usize,
    n: usize,
    p: usize,
    seed: u64,
    exec: Execution,
) -> Result<SensitivityReport> {
    if trials == 0 {
        return Err(crate::error::invalid("at least one trial is required"));
    }
    let sigma = ar_covariance(p, 0.5, 0.3);
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("AR covariance is not positive definite".into()))?
        .l();
    let kcfg = GaussianKnockoffConfig::equicorrelated(sigma, 0)?;
    let fcfg = check_family_config(family, n, p);
    let l2 = family.bound_is_l2();
    let keys: Vec<u64> = (0..n as u64).collect();

    let outcomes = exec.map_range(trials, |t| -> Result<SensitivityWitness> {
        let tseed = derive_seed(seed, "sensitivity-trial", t as u64);
        let mut rng = keyed_stream(tseed, 2);
        let d = base_dataset(n, p, &chol, tseed)?;
        let row = rng.random_range(0..n);
        let (new_x, new_y) = adversarial_row(&mut rng, p);
        let d2 = d.with_row(row, &new_x, new_y)?;
        let k = kcfg.with_seed(derive_seed(tseed, "knockoff", 0));
        let a = generate_knockoffs_keyed(&d, &k, &keys, Execution::Sequential)?;
        let b = generate_knockoffs_keyed(&d2, &k, &keys, Execution::Sequential)?;
        let sa = compute_statistics(&a.full()?, &fcfg)?;
        let sb = compute_statistics(&b.full()?, &fcfg)?;
        Ok(SensitivityWitness {
            trial: t,
            row,
            new_x,
            new_y,
            observed: change(&sa, &sb, l2),
            bound: sa.sensitivity,
        })
    });

    let mut report = SensitivityReport {
        family,
        n,
        p,
        trials,
        norm: if l2 { "l2" } else { "linf" },
        bound: 0.0,
        max_observed: 0.0,
        max_ratio: 0.0,
        violations: 0,
        witness: None,
    };
    for w in outcomes {
        let w = w?;
        report.bound = w.bound;
        let ratio = if w.bound > 0.0 { w.observed / w.bound } else { f64::INFINITY };
        if w.observed > w.bound * (1.0 + 1e-12) {
            report.violations += 1;
        }
        if report.witness.is_none() || ratio > report.max_ratio {
            report.max_ratio = ratio;
            report.witness = Some(w.clone());
        }
        report.max_observed = report.max_observed.max(w.observed);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeabilityReport {
    pub n: usize,
    pub p: usize,
    /// `max |Cov_emp([X, X~]) - G|`.
    pub max_deviation: f64,
    pub empirical: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

/// Samples `n` unclipped AR(0.5, 0.3) rows, draws equicorrelated knockoffs
/// and compares the empirical joint covariance with its target.
pub fn verify_exchangeability(n: usize, p: usize, seed: u64, exec: Execution) -> Result<ExchangeabilityReport> {
    let sigma = ar_covariance(p, 0.5, 0.3);
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("AR covariance is not positive definite".into()))?
        .l();
    let mut z = vec![0.0; n * p];
    fill_standard_normal(&mut keyed_stream(derive_seed(seed, "design", 0), 0), &mut z);
    let x = DMatrix::from_row_slice(n, p, &z) * chol.transpose();
    // Bounds far outside the sampled range, so nothing is clipped.
    let c = 1e6;
    let data = Dataset::new(x, DVector::zeros(n), c, c)?;
    let kcfg = GaussianKnockoffConfig::equicorrelated(sigma, derive_seed(seed, "knockoff", 0))?;
    let keys: Vec<u64> = (0..n as u64).collect();
    let aug = generate_knockoffs_keyed(&data, &kcfg, &keys, exec)?;
    let emp = empirical_joint_covariance(&aug);
    let target = kcfg.joint_covariance();
    let max_deviation = (&emp - &target).amax();
    let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(ExchangeabilityReport {
        n,
        p,
        max_deviation,
        empirical: rows(&emp),
        target: rows(&target),
    })
}

/// The threshold straight from its definition: every nonzero `|w_j|` is tried
/// and the counts are recomputed from scratch.
pub fn naive_threshold(w: &[f64], q: f64, offset: usize) -> f64 {
    let mut best = f64::INFINITY;
    for &c in w {
        let t = c.abs();
        if t == 0.0 {
            continue;
        }
        let mut neg = 0usize;
        let mut pos = 0usize;
        for &v in w {
            if v <= -t {
                neg += 1;
            }
            if v >= t {
                pos += 1;
            }
        }
        if (offset + neg) as f64 <= q * pos.max(1) as f64 && t < best {
            best = t;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdOracleReport {
    pub trials: usize,
    pub mismatches: usize,
    /// Counts of trials per generated case: positive, negative, ties, mixed.
    pub cases: [usize; 4],
    pub witness: Option<(Vec<f64>, f64, f64, f64)>,
}

impl ThresholdOracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Compares [`knockoff_threshold`] with [`naive_threshold`] on random vectors
/// cycling through all-positive, all-negative, tie-heavy (with zeros) and
/// mixed vectors with zeros. Equality is exact.
pub fn verify_threshold_oracle(trials: usize, seed: u64) -> Result<ThresholdOracleReport> {
    let mut report = ThresholdOracleReport {
        trials,
        mismatches: 0,
        cases: [0; 4],
        witness: None,
    };
    let qs = [0.05, 0.1, 0.2, 0.3, 0.5];
    for t in 0..trials {
        let mut rng = keyed_stream(derive_seed(seed, "threshold-trial", t as u64), 0);
        let len = rng.random_range(1..=60);
        let case = t % 4;
        report.cases[case] += 1;
        let w: Vec<f64> = (0..len)
            .map(|_| match case {
                0 => rng.random_range(0.01..5.0),
                1 => -rng.random_range(0.01..5.0),
                2 => rng.random_range(-3i32..=3) as f64 * 0.5,
                _ => {
                    if rng.random_bool(0.15) {
                        0.0
                    } else {
                        rng.random_range(-2.0..4.0)
                    }
                }
            })
            .collect();
        let q = qs[rng.random_range(0..qs.len())];
        let offset = if rng.random_bool(0.8) { 1 } else { 0 };
        let fast = knockoff_threshold(&w, q, offset)?;
        let slow = naive_threshold(&w, q, offset);
        if fast != slow {
            report.mismatches += 1;
            if report.witness.is_none() {
                report.witness = Some((w, q, fast, slow));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_threshold_worked_example() {
        assert_eq!(naive_threshold(&[3.0, 2.5, -1.0, 0.5, -0.2], 0.5, 1), 2.5);
        assert!(naive_threshold(&[-1.0, -2.0], 0.5, 1).is_infinite());
    }

    #[test]
    fn threshold_oracle_agrees() {
        let r = verify_threshold_oracle(400, 5).unwrap();
        assert!(r.passed(), "{:?}", r.witness);
        assert_eq!(r.cases, [100; 4]);
    }

    #[test]
    fn unchanged_neighbour_gives_zero_change() {
        let sigma = ar_covariance(4, 0.5, 0.3);
        let chol = sigma.clone().cholesky().unwrap().l();
        let d = base_dataset(30, 4, &chol, 1).unwrap();
        let row: Vec<f64> = d.x().row(3).iter().copied().collect();
        let d2 = d.with_row(3, &row, d.y()[3]).unwrap();
        let k = GaussianKnockoffConfig::equicorrelated(sigma, 9).unwrap();
        let keys: Vec<u64> = (0..30).collect();
        for family in Family::ALL {
            let f = check_family_config(family, 30, 4);
            let a = generate_knockoffs_keyed(&d, &k, &keys, Execution::Sequential).unwrap();
            let b = generate_knockoffs_keyed(&d2, &k, &keys, Execution::Sequential).unwrap();
            let sa = compute_statistics(&a.full().unwrap(), &f).unwrap();
            let sb = compute_statistics(&b.full().unwrap(), &f).unwrap();
            assert_eq!(change(&sa, &sb, family.bound_is_l2()), 0.0);
        }
    }

    #[test]
    fn sgd_check_config_is_stable() {
        for (n, p) in [(50, 8), (200, 20)] {
            let FamilyConfig::Sgd(cfg) = check_family_config(Family::SgdDiff, n, p) else {
                unreachable!()
            };
            assert!(crate::stats::sgd_stability_holds(&cfg, n, p));
        }
    }

    #[test]
    fn small_sensitivity_runs_hold() {
        for family in Family::ALL {
            let r = verify_sensitivity(family, 40, 30, 4, 3, Execution::default()).unwrap();
            assert!(r.passed(), "{family}: {:?}", r.witness);
            assert!(r.max_ratio > 0.0);
        }
    }

    #[test]
    fn sensitivity_report_is_execution_independent() {
        let a = verify_sensitivity(Family::RidgeDiff, 16, 30, 4, 8, Execution::Sequential).unwrap();
        let b = verify_sensitivity(Family::RidgeDiff, 16, 30, 4, 8, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exchangeability_small() {
        let r = verify_exchangeability(20_000, 2, 1, Execution::default()).unwrap();
        assert!(r.max_deviation < 0.05, "{}", r.max_deviation);
        assert_eq!(r.target.len(), 4);
    }
}
