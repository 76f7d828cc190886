use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Family, KnockoffStatistics, StatInput};
use crate::error::{invalid, Result};

/// One-pass projected SGD on the ridge objective
/// `psi(beta, D_i) = (y_i - a_i' beta)^2 + lambda |beta|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lambda: f64,
    /// Step-size exponent: `eta_t = t^-c / L2`.
    pub c: f64,
    /// Radius of the projection ball.
    pub r_beta: f64,
    /// Bound `M` on every covariate and the response.
    pub m_bound: f64,
}

impl SgdConfig {
    fn validate(&self, c_x: f64, c_y: f64) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("sgd lambda must be positive"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(invalid("sgd step exponent c must lie in (0, 1)"));
        }
        if !(self.r_beta > 0.0 && self.r_beta.is_finite()) {
            return Err(invalid("sgd projection radius must be positive"));
        }
        if !(self.m_bound >= c_x && self.m_bound >= c_y) {
            return Err(invalid(format!(
                "sgd bound M = {} must dominate c_x = {c_x} and c_y = {c_y}",
                self.m_bound
            )));
        }
        Ok(())
    }

    /// Smoothness constant `L2 = M^2 (2k + 1) + lambda`.
    pub fn l2(&self, k: usize) -> f64 {
        self.m_bound * self.m_bound * (2.0 * k as f64 + 1.0) + self.lambda
    }

    /// Lipschitz constant `L1 = M^2 (2k + 1)(1 + R) + lambda R`.
    pub fn l1(&self, k: usize) -> f64 {
        self.m_bound * self.m_bound * (2.0 * k as f64 + 1.0) * (1.0 + self.r_beta)
            + self.lambda * self.r_beta
    }
}

/// `(4 L1 / L2) n^-c`.
pub fn sgd_sensitivity(cfg: &SgdConfig, n: usize, k: usize) -> f64 {
    4.0 * cfg.l1(k) / cfg.l2(k) * (n as f64).powf(-cfg.c)
}

/// Stability precondition `lambda / L2 >= c(1-c) / (1 - 2^{-(1-c)}) * log n / n^{1-c}`.
pub fn sgd_stability_holds(cfg: &SgdConfig, n: usize, k: usize) -> bool {
    let c = cfg.c;
    let nf = n as f64;
    let rhs = c * (1.0 - c) / (1.0 - 2f64.powf(-(1.0 - c))) * nf.ln() / nf.powf(1.0 - c);
    cfg.lambda / cfg.l2(k) >= rhs
}

pub fn sgd_stats(input: &StatInput, cfg: &SgdConfig) -> Result<KnockoffStatistics> {
    cfg.validate(input.c_x, input.c_y)?;
    let (n, k) = (input.n(), input.k());
    let a = input.augmented();
    let l2 = cfg.l2(k);
    let mut beta = DVector::<f64>::zeros(2 * k);
    for t in 1..=n {
        let row = a.row(t - 1).transpose();
        let resid = input.y[t - 1] - row.dot(&beta);
        let grad = &row * (-2.0 * resid) + &beta * (2.0 * cfg.lambda);
        let eta = (t as f64).powf(-cfg.c) / l2;
        beta.axpy(-eta, &grad, 1.0);
        let norm = beta.norm();
        if norm > cfg.r_beta {
            beta *= cfg.r_beta / norm;
        }
    }
    let w = (0..k).map(|j| beta[j].abs() - beta[j + k].abs()).collect();
    let mut warnings = Vec::new();
    if !sgd_stability_holds(cfg, n, k) {
        let msg = format!(
            "sgd stability condition fails for lambda = {}, c = {}, n = {n}, |C| = {k}; \
             the sensitivity certificate assumes it",
            cfg.lambda, cfg.c
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(KnockoffStatistics {
        w,
        family: Family::SgdDiff,
        sensitivity: sgd_sensitivity(cfg, n, k),
        feature_ids: input.feature_ids.clone(),
        warnings,
    })
}
