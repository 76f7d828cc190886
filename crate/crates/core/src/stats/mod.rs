//! Knockoff statistics and their almost-sure sensitivity certificates.
//!
//! Every family maps `([X_C, X~_C], y)` to one `W_j` per feature in `C` and
//! reports `sensitivity`: a bound on `|W_j(D) - W_j(D')|` over datasets that
//! differ in one row of `(X, X~, y)`. Marginal and HSIC bounds are per
//! coordinate; ridge and SGD bounds hold for the whole vector in l2 and hence
//! per coordinate as well.

mod hsic;
mod marginal;
mod ridge;
mod screening;
mod sgd;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use hsic::{hsic_stats, hsic_value, median_heuristic, HsicConfig};
pub use marginal::marginal_corr_stats;
pub use ridge::{ridge_sensitivity, ridge_stats, RidgeConfig};
pub use screening::{screening_stats, ScreeningStats};
pub use sgd::{sgd_sensitivity, sgd_stability_holds, sgd_stats, SgdConfig};

/// Knockoff statistic families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "marginal")]
    MarginalCorr,
    Hsic,
    #[serde(rename = "ridge")]
    RidgeDiff,
    #[serde(rename = "sgd")]
    SgdDiff,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::MarginalCorr,
        Family::Hsic,
        Family::RidgeDiff,
        Family::SgdDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::MarginalCorr => "marginal",
            Family::Hsic => "hsic",
            Family::RidgeDiff => "ridge",
            Family::SgdDiff => "sgd",
        }
    }

    /// Whether `sensitivity` is an l2 bound on the whole vector.
    pub fn bound_is_l2(self) -> bool {
        matches!(self, Family::RidgeDiff | Family::SgdDiff)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Family::MarginalCorr),
            "hsic" => Ok(Family::Hsic),
            "ridge" => Ok(Family::RidgeDiff),
            "sgd" => Ok(Family::SgdDiff),
            other => Err(invalid(format!("unknown statistic family `{other}`"))),
        }
    }
}

/// Family together with its tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FamilyConfig {
    Marginal,
    /// `None` lets the caller pick bandwidths (median heuristic on the
    /// screening half, or the declared bounds when there is no split).
    Hsic(Option<HsicConfig>),
    Ridge(RidgeConfig),
    Sgd(SgdConfig),
}

impl FamilyConfig {
    pub fn family(&self) -> Family {
        match self {
            FamilyConfig::Marginal => Family::MarginalCorr,
            FamilyConfig::Hsic(_) => Family::Hsic,
            FamilyConfig::Ridge(_) => Family::RidgeDiff,
            FamilyConfig::Sgd(_) => Family::SgdDiff,
        }
    }
}

/// Columns of `X` and `X~` restricted to a feature set, plus the response.
#[derive(Debug, Clone)]
pub struct StatInput {
    pub(crate) x: DMatrix<f64>,
    pub(crate) xt: DMatrix<f64>,
    pub(crate) y: DVector<f64>,
    pub(crate) c_x: f64,
    pub(crate) c_y: f64,
    pub(crate) feature_ids: Vec<usize>,
}

impl StatInput {
    pub fn new(
        x: DMatrix<f64>,
        xt: DMatrix<f64>,
        y: DVector<f64>,
        c_x: f64,
        c_y: f64,
        feature_ids: Vec<usize>,
    ) -> Result<Self> {
        if x.shape() != xt.shape() {
            return Err(invalid("X and X~ must have the same shape"));
        }
        if x.nrows() != y.len() || x.nrows() < 2 {
            return Err(invalid("response length must match the rows of X (n >= 2)"));
        }
        if feature_ids.len() != x.ncols() || x.ncols() == 0 {
            return Err(invalid("one feature id per column is required"));
        }
        Ok(Self {
            x,
            xt,
            y,
            c_x,
            c_y,
            feature_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of scored features `|C|`.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    /// Exchanges column `j` of `X` with column `j` of `X~`.
    pub fn swap_column(&mut self, j: usize) {
        for i in 0..self.n() {
            std::mem::swap(&mut self.x[(i, j)], &mut self.xt[(i, j)]);
        }
    }

    /// `[X, X~]` as one `n x 2k` matrix.
    pub(crate) fn augmented(&self) -> DMatrix<f64> {
        let (n, k) = self.x.shape();
        let mut a = DMatrix::zeros(n, 2 * k);
        a.columns_mut(0, k).copy_from(&self.x);
        a.columns_mut(k, k).copy_from(&self.xt);
        a
    }
}

/// Per-feature `W_j` values with the family's sensitivity certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnockoffStatistics {
    pub w: Vec<f64>,
    pub family: Family,
    /// Almost-sure bound on the change of any single `W_j` (and, for ridge
    /// and SGD, of the whole vector in l2) under a one-row change.
    pub sensitivity: f64,
    /// 1-based feature ids scored by each entry of `w`.
    pub feature_ids: Vec<usize>,
    pub warnings: Vec<String>,
}

impl KnockoffStatistics {
    /// l2 sensitivity of the full vector `w`.
    pub fn l2_sensitivity(&self) -> f64 {
        if self.family.bound_is_l2() {
            self.sensitivity
        } else {
            self.sensitivity * (self.w.len() as f64).sqrt()
        }
    }

    /// Writes `feature_id,W,family,sensitivity` rows.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature_id", "W", "family", "sensitivity"])?;
        for (id, v) in self.feature_ids.iter().zip(&self.w) {
            w.write_record([
                id.to_string(),
                v.to_string(),
                self.family.name().to_string(),
                self.sensitivity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes the statistics selected by `cfg`.
///
/// HSIC without explicit bandwidths falls back to the declared bounds.
pub fn compute_statistics(input: &StatInput, cfg: &FamilyConfig) -> Result<KnockoffStatistics> {
    match cfg {
        FamilyConfig::Marginal => Ok(marginal_corr_stats(input)),
        FamilyConfig::Hsic(Some(h)) => hsic_stats(input, h),
        FamilyConfig::Hsic(None) => {
            let max_id = input.feature_ids.iter().copied().max().unwrap_or(1);
            hsic_stats(input, &HsicConfig::from_bounds(max_id, input.c_x, input.c_y))
        }
        FamilyConfig::Ridge(r) => ridge_stats(input, r),
        FamilyConfig::Sgd(s) => sgd_stats(input, s),
    }
}
