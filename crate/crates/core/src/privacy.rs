//! Gaussian differential privacy primitives.
//!
//! Noise calibration lives with the callers in [`crate::selection`]; this
//! module provides the raw mechanisms, the trade-off function and the
//! composition ledger.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::rng::NoiseStream;

/// A `mu`-GDP budget.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(mu: f64) -> Result<Self> {
        if mu.is_finite() && mu >= 0.0 {
            Ok(Self(mu))
        } else {
            Err(invalid(format!("privacy parameter must be finite and >= 0, got {mu}")))
        }
    }

    /// A strictly positive budget, as every mechanism requires.
    pub fn positive(mu: f64) -> Result<Self> {
        if mu.is_finite() && mu > 0.0 {
            Ok(Self(mu))
        } else {
            Err(invalid(format!("privacy parameter mu must be positive, got {mu}")))
        }
    }

    pub fn mu(self) -> f64 {
        self.0
    }

    /// Equal shares whose composition is this budget.
    pub fn split(self, parts: usize) -> Self {
        Self(self.0 / (parts as f64).sqrt())
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Trade-off function `G_mu(alpha) = Phi(Phi^-1(1 - alpha) - mu)`.
pub fn gdp_tradeoff(mu: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if mu.is_nan() {
        return Err(invalid("mu must be a number"));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    let phi = std_normal();
    Ok(phi.cdf(phi.inverse_cdf(1.0 - alpha) - mu))
}

/// Composition of GDP mechanisms: `sqrt(sum mu_i^2)`.
pub fn compose(budgets: &[f64]) -> f64 {
    budgets.iter().map(|m| m * m).sum::<f64>().sqrt()
}

/// `value + N(0, sensitivity^2 / mu^2)`.
pub fn gaussian_mechanism(value: f64, sensitivity: f64, mu: f64, noise: &mut NoiseStream) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid(format!("mu must be positive, got {mu}")));
    }
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(invalid("sensitivity must be finite and nonnegative"));
    }
    Ok(value + noise.gaussian(sensitivity / mu))
}

/// Iterated report-noisy-max: `k` rounds, each adding fresh
/// `N(0, sd^2)` noise to every surviving score and removing the argmax.
/// Returns 0-based indices in peel order; exact ties go to the lowest index.
pub fn noisy_max_peel(scores: &[f64], k: usize, sd: f64, noise: &mut NoiseStream) -> Result<Vec<usize>> {
    if k < 1 || k > scores.len() {
        return Err(invalid(format!(
            "peel size {k} must lie in 1..={}",
            scores.len()
        )));
    }
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(invalid("noise sd must be finite and nonnegative"));
    }
    let mut alive: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best_pos = 0;
        let mut best = f64::NEG_INFINITY;
        for (pos, &idx) in alive.iter().enumerate() {
            let v = scores[idx] + noise.gaussian(sd);
            if v > best {
                best = v;
                best_pos = pos;
            }
        }
        out.push(alive.remove(best_pos));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub mu_spent: f64,
}

/// Record of every mechanism invoked, composed under GDP.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLedger {
    entries: Vec<LedgerEntry>,
    total: f64,
}

impl NoiseLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, label: impl Into<String>, mu_spent: f64) -> Result<()> {
        PrivacyBudget::new(mu_spent)?;
        self.entries.push(LedgerEntry {
            label: label.into(),
            mu_spent,
        });
        self.total = compose(&self.entries.iter().map(|e| e.mu_spent).collect::<Vec<_>>());
        Ok(())
    }

    /// Appends every entry of `other` with a label prefix.
    pub fn absorb(&mut self, prefix: &str, other: &NoiseLedger) -> Result<()> {
        for e in &other.entries {
            self.record(format!("{prefix}{}", e.label), e.mu_spent)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The three named seeds of a run. Privacy noise must come from a seed
/// distinct from the split and knockoff seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub split: u64,
    pub knockoff: u64,
    /// `None` draws the privacy noise from OS entropy.
    pub noise: Option<u64>,
}

impl SeedSet {
    pub fn validate(&self) -> Result<()> {
        if self.split == self.knockoff {
            return Err(invalid("split and knockoff seeds must differ"));
        }
        if let Some(noise) = self.noise {
            if noise == self.split || noise == self.knockoff {
                return Err(invalid(
                    "the privacy noise seed must differ from the split and knockoff seeds",
                ));
            }
        }
        Ok(())
    }

    pub fn noise_stream(&self) -> NoiseStream {
        match self.noise {
            Some(s) => NoiseStream::seeded(s),
            None => NoiseStream::from_entropy(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tradeoff_at_zero_mu_is_identity_complement() {
        for a in [0.0, 0.01, 0.3, 0.5, 0.77, 1.0] {
            assert!((gdp_tradeoff(0.0, a).unwrap() - (1.0 - a)).abs() < 1e-9);
        }
    }

    #[test]
    fn tradeoff_half_alpha_unit_mu() {
        // Phi(-1) from the complementary error function: 0.5 * erfc(1/sqrt 2)
        let expect = 0.158_655_253_931_457_05;
        assert!((gdp_tradeoff(1.0, 0.5).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn tradeoff_is_monotone() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for mu in [0.0, 0.5, 1.0, 3.0] {
            for w in grid.windows(2) {
                assert!(gdp_tradeoff(mu, w[1]).unwrap() <= gdp_tradeoff(mu, w[0]).unwrap() + 1e-15);
            }
        }
        for &a in &grid {
            assert!(gdp_tradeoff(2.0, a).unwrap() <= gdp_tradeoff(1.0, a).unwrap() + 1e-15);
        }
    }

    #[test]
    fn tradeoff_rejects_bad_alpha() {
        assert!(gdp_tradeoff(1.0, -0.1).is_err());
        assert!(gdp_tradeoff(1.0, 1.5).is_err());
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&[3.0, 4.0]), 5.0);
        assert_eq!(compose(&[0.7]), 0.7);
        for b in [1usize, 2, 5, 17, 100] {
            let mu = 1.3;
            let parts = vec![mu / (b as f64).sqrt(); b];
            assert!((compose(&parts) - mu).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sensitivity_is_exact() {
        let mut s = NoiseStream::seeded(3);
        assert_eq!(gaussian_mechanism(2.5, 0.0, 1.0, &mut s).unwrap(), 2.5);
    }

    #[test]
    fn mechanism_rejects_nonpositive_mu() {
        let mut s = NoiseStream::seeded(3);
        assert!(gaussian_mechanism(0.0, 1.0, 0.0, &mut s).is_err());
        assert!(gaussian_mechanism(0.0, 1.0, -1.0, &mut s).is_err());
    }

    #[test]
    fn mechanism_scale_and_determinism() {
        let mut s = NoiseStream::seeded(11);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| gaussian_mechanism(0.0, 1.0, 2.0, &mut s).unwrap())
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.5).abs() < 0.03 * 0.5, "sd {sd}");
        let again: Vec<f64> = {
            let mut s = NoiseStream::seeded(11);
            (0..10).map(|_| gaussian_mechanism(0.0, 1.0, 2.0, &mut s).unwrap()).collect()
        };
        assert_eq!(&draws[..10], &again[..]);
    }

    #[test]
    fn mechanism_passes_ks_test() {
        let (value, delta, mu) = (1.5, 0.8, 2.0);
        let mut s = NoiseStream::seeded(12);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| gaussian_mechanism(value, delta, mu, &mut s).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let dist = Normal::new(value, delta / mu).unwrap();
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = dist.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic Kolmogorov critical value at level 0.01
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn noiseless_peel() {
        let mut s = NoiseStream::seeded(0);
        assert_eq!(noisy_max_peel(&[5.0, 1.0, 9.0], 2, 0.0, &mut s).unwrap(), vec![2, 0]);
        assert_eq!(noisy_max_peel(&[1.0, 1.0, 1.0], 2, 0.0, &mut s).unwrap(), vec![0, 1]);
    }

    #[test]
    fn full_peel_is_permutation() {
        let mut s = NoiseStream::seeded(1);
        let mut out = noisy_max_peel(&[0.3, 0.1, 0.2, 0.5, 0.4], 5, 1.0, &mut s).unwrap();
        out.sort_unstable();
        assert_eq!(out, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn huge_gap_always_wins() {
        for seed in 0..10_000 {
            let mut s = NoiseStream::seeded(seed);
            assert_eq!(noisy_max_peel(&[10.0, 0.0], 1, 0.1, &mut s).unwrap(), vec![0]);
        }
    }

    #[test]
    fn peel_rejects_bad_k() {
        let mut s = NoiseStream::seeded(1);
        assert!(noisy_max_peel(&[1.0, 2.0], 0, 1.0, &mut s).is_err());
        assert!(noisy_max_peel(&[1.0, 2.0], 3, 1.0, &mut s).is_err());
    }

    #[test]
    fn ledger_json_and_total() {
        let mut l = NoiseLedger::new();
        l.record("a", 3.0).unwrap();
        l.record("b", 4.0).unwrap();
        assert_eq!(l.total(), 5.0);
        assert!(l.record("bad", -1.0).is_err());
        let v: serde_json::Value = serde_json::from_str(&l.to_json().unwrap()).unwrap();
        assert_eq!(v["total"], 5.0);
        assert_eq!(v["entries"][1]["label"], "b");
    }

    #[test]
    fn seed_collisions_are_refused() {
        let ok = SeedSet { split: 1, knockoff: 2, noise: Some(3) };
        assert!(ok.validate().is_ok());
        assert!(SeedSet { noise: Some(1), ..ok }.validate().is_err());
        assert!(SeedSet { noise: Some(2), ..ok }.validate().is_err());
        assert!(SeedSet { knockoff: 1, ..ok }.validate().is_err());
        assert!(SeedSet { noise: None, ..ok }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn ledger_total_is_root_sum_square(mus in proptest::collection::vec(0.0f64..5.0, 1..30)) {
            let mut l = NoiseLedger::new();
            for (i, m) in mus.iter().enumerate() {
                l.record(format!("m{i}"), *m).unwrap();
            }
            let rss = mus.iter().map(|m| m * m).sum::<f64>().sqrt();
            prop_assert!((l.total() - rss).abs() < 1e-12);
        }

        #[test]
        fn peel_has_no_duplicates(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..40),
            frac in 0.0f64..1.0,
            sd in 0.0f64..3.0,
            seed: u64,
        ) {
            let k = ((scores.len() as f64 * frac) as usize).clamp(1, scores.len());
            let mut s = NoiseStream::seeded(seed);
            let out = noisy_max_peel(&scores, k, sd, &mut s).unwrap();
            prop_assert_eq!(out.len(), k);
            let mut sorted = out.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
        }
    }
}
