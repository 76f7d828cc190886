use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Family, KnockoffStatistics, StatInput};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda: f64,
}

/// l2 sensitivity of the ridge coefficient-difference vector over `k`
/// features, using only the data-independent `lambda` branch:
/// `2 c_x^2 c_y k lambda^{-3/2} / n + 4 c_x c_y sqrt(k) / (n lambda)`.
pub fn ridge_sensitivity(c_x: f64, c_y: f64, n: usize, k: usize, lambda: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    2.0 * c_x * c_x * c_y * k * lambda.powf(-1.5) / n + 4.0 * c_x * c_y * k.sqrt() / (n * lambda)
}

/// Solves `(n^-1 A'A + lambda I) beta = n^-1 A'y` for `A = [X, X~]`.
pub(crate) fn ridge_coefficients(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = a.nrows() as f64;
    let mut gram = a.tr_mul(a) / n;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = a.tr_mul(y) / n;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// `W_j = |beta_j| - |beta_{j+k}|` from the ridge fit on `[X_C, X~_C]`.
pub fn ridge_stats(input: &StatInput, cfg: &RidgeConfig) -> Result<KnockoffStatistics> {
    if !(cfg.lambda.is_finite() && cfg.lambda > 0.0) {
        return Err(invalid("ridge lambda must be positive"));
    }
    let k = input.k();
    let beta = ridge_coefficients(&input.augmented(), &input.y, cfg.lambda)?;
    let w = (0..k).map(|j| beta[j].abs() - beta[j + k].abs()).collect();
    Ok(KnockoffStatistics {
        w,
        family: Family::RidgeDiff,
        sensitivity: ridge_sensitivity(input.c_x, input.c_y, input.n(), k, cfg.lambda),
        feature_ids: input.feature_ids.clone(),
        warnings: Vec::new(),
    })
}
