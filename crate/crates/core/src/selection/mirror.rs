use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{knockoff_threshold, quantile, select_at, SelectionResult};
use crate::error::{invalid, Result};
use crate::privacy::{noisy_max_peel, NoiseLedger, PrivacyBudget};
use crate::rng::NoiseStream;
use crate::stats::KnockoffStatistics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorConfig {
    /// Peeling size `m`.
    pub m: usize,
    pub mu: f64,
    pub q: f64,
    /// Multiplies every noise standard deviation. Values above 1 only add
    /// privacy; used to check that FDR control does not depend on the scale.
    pub noise_sd_multiplier: f64,
}

impl MirrorConfig {
    pub fn new(m: usize, mu: f64, q: f64) -> Self {
        Self {
            m,
            mu,
            q,
            noise_sd_multiplier: 1.0,
        }
    }
}

/// Mirror-peeling knockoff selection over all `p` statistics.
///
/// Peels `m` features by noisy max on `|W|` with noise variance
/// `8 m Delta^2 / mu^2`, releases each peeled `W` with variance
/// `2 m Delta^2 / mu^2`, and thresholds the released values.
pub fn mirror_peeling_select(
    stats: &KnockoffStatistics,
    cfg: &MirrorConfig,
    noise: &mut NoiseStream,
) -> Result<SelectionResult> {
    let p = stats.w.len();
    let budget = PrivacyBudget::positive(cfg.mu)?;
    if cfg.m < 1 || cfg.m > p {
        return Err(invalid(format!("peeling size m = {} must lie in 1..={p}", cfg.m)));
    }
    if !(cfg.noise_sd_multiplier.is_finite() && cfg.noise_sd_multiplier >= 1.0) {
        return Err(invalid("noise multiplier must be >= 1"));
    }
    let delta = stats.sensitivity;
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid("statistic sensitivity must be finite"));
    }
    let m = cfg.m as f64;
    let mu = budget.mu();
    let peel_sd = cfg.noise_sd_multiplier * (8.0 * m).sqrt() * delta / mu;
    let release_sd = cfg.noise_sd_multiplier * (2.0 * m).sqrt() * delta / mu;

    let abs_w: Vec<f64> = stats.w.iter().map(|w| w.abs()).collect();
    let peeled = noisy_max_peel(&abs_w, cfg.m, peel_sd, noise)?;
    let released: Vec<f64> = peeled
        .iter()
        .map(|&j| stats.w[j] + noise.gaussian(release_sd))
        .collect();

    // m noisy-max rounds and m scalar releases, each mu / sqrt(2m)-GDP
    let share = mu / (2.0 * m).sqrt();
    let mut ledger = NoiseLedger::new();
    for (round, &j) in peeled.iter().enumerate() {
        ledger.record(format!("peel round {}", round + 1), share)?;
        ledger.record(format!("release W~ of feature {}", stats.feature_ids[j]), share)?;
    }

    let threshold = knockoff_threshold(&released, cfg.q, 1)?;
    let mut selected: Vec<usize> = select_at(&released, threshold)
        .into_iter()
        .map(|pos| stats.feature_ids[peeled[pos]])
        .collect();
    selected.sort_unstable();

    let b_n = 8.0 * delta / mu * (3.0 * m * (p as f64).ln()).sqrt();
    let mut warnings = stats.warnings.clone();
    let mut mags: Vec<f64> = released.iter().map(|w| w.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let iqr = quantile(&mags, 0.75) - quantile(&mags, 0.25);
    if b_n > iqr {
        let msg = format!(
            "noise level b_n = {b_n:.4} exceeds the interquartile range {iqr:.4} of released |W~|; power is likely degraded"
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("b_n".to_string(), b_n);
    diagnostics.insert("sensitivity".to_string(), delta);
    diagnostics.insert("peel_noise_sd".to_string(), peel_sd);
    diagnostics.insert("release_noise_sd".to_string(), release_sd);

    Ok(SelectionResult {
        selected,
        threshold,
        released_w: peeled
            .iter()
            .zip(&released)
            .map(|(&j, &w)| (stats.feature_ids[j], w))
            .collect(),
        peeled: peeled.iter().map(|&j| stats.feature_ids[j]).collect(),
        mu_spent: ledger.total(),
        ledger,
        diagnostics,
        warnings,
    })
}
