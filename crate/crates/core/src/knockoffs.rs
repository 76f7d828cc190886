//! Gaussian model-X knockoffs with per-row seeded randomness.
//!
//! Row `i` of the knockoff matrix is `x_i (I - S^-1 D) + z_i (2D - D S^-1 D)^{1/2}`
//! where `S` is the model covariance, `D = diag(r)` and `z_i` is a standard
//! normal vector drawn from the stream keyed by `(knockoff_seed, key_i)`.
//! Because `z_i` depends only on the seed and the row key, two datasets that
//! differ in one row produce knockoff matrices that differ in that row only.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::linalg::{cholesky, min_eigenvalue, psd_sqrt, symmetrize};
use crate::rng::{fill_standard_normal, keyed_stream};
use crate::stats::StatInput;

const PSD_TOL: f64 = 1e-10;
const EQUICORRELATED_SAFETY: f64 = 0.999;
const ROW_BLOCK: usize = 64;

/// `Sigma_ij = scale * decay^|i-j|`.
pub fn ar_covariance(p: usize, scale: f64, decay: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| scale * decay.powi(i.abs_diff(j) as i32))
}

/// Equicorrelated knockoff diagonal:
/// `r_j = 0.999 * min(2 * lambda_min(corr(Sigma)) * Sigma_jj, Sigma_jj)`.
pub fn solve_equicorrelated_r(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    cholesky(sigma, "sigma")?;
    let p = sigma.nrows();
    let sd: Vec<f64> = (0..p).map(|j| sigma[(j, j)].sqrt()).collect();
    let mut corr = DMatrix::from_fn(p, p, |i, j| sigma[(i, j)] / (sd[i] * sd[j]));
    symmetrize(&mut corr);
    let lambda_min = min_eigenvalue(&corr);
    if lambda_min <= 0.0 {
        return Err(Error::Decomposition(
            "correlation matrix is not positive definite".into(),
        ));
    }
    Ok(DVector::from_fn(p, |j, _| {
        let d = sigma[(j, j)];
        EQUICORRELATED_SAFETY * (2.0 * lambda_min * d).min(d)
    }))
}

/// Validated model covariance and knockoff diagonal, with the two
/// generation matrices precomputed.
#[derive(Debug, Clone)]
pub struct GaussianKnockoffConfig {
    sigma: DMatrix<f64>,
    r: DVector<f64>,
    knockoff_seed: u64,
    /// `I - Sigma^-1 diag(r)`
    shift: DMatrix<f64>,
    /// `(2 diag(r) - diag(r) Sigma^-1 diag(r))^{1/2}`
    noise_root: DMatrix<f64>,
}

impl GaussianKnockoffConfig {
    pub fn new(sigma: DMatrix<f64>, r: DVector<f64>, knockoff_seed: u64) -> Result<Self> {
        let p = sigma.nrows();
        if r.len() != p {
            return Err(invalid(format!(
                "r has length {} but sigma is {p}x{p}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("all r_j must be finite and nonnegative"));
        }
        let chol = cholesky(&sigma, "sigma")?;
        let d = DMatrix::from_diagonal(&r);
        // Sigma^-1 diag(r) through the factor, no explicit inverse.
        let sinv_d = chol.solve(&d);
        let shift = DMatrix::identity(p, p) - &sinv_d;
        let mut cond_cov = &d * 2.0 - &d * &sinv_d;
        symmetrize(&mut cond_cov);
        let lmin = min_eigenvalue(&cond_cov);
        if lmin < -PSD_TOL {
            return Err(Error::Validation(format!(
                "2 diag(r) - diag(r) Sigma^-1 diag(r) is not PSD (min eigenvalue {lmin:e})"
            )));
        }
        let noise_root = psd_sqrt(&cond_cov);
        Ok(Self {
            sigma,
            r,
            knockoff_seed,
            shift,
            noise_root,
        })
    }

    /// Equicorrelated configuration for `sigma`.
    pub fn equicorrelated(sigma: DMatrix<f64>, knockoff_seed: u64) -> Result<Self> {
        let r = solve_equicorrelated_r(&sigma)?;
        Self::new(sigma, r, knockoff_seed)
    }

    /// Same matrices under a different seed.
    pub fn with_seed(&self, knockoff_seed: u64) -> Self {
        Self {
            knockoff_seed,
            ..self.clone()
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn knockoff_seed(&self) -> u64 {
        self.knockoff_seed
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// Target joint covariance `[[S, S - D], [S - D, S]]` of `(X, X~)`.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let p = self.p();
        let cross = &self.sigma - DMatrix::from_diagonal(&self.r);
        let mut g = DMatrix::zeros(2 * p, 2 * p);
        g.view_mut((0, 0), (p, p)).copy_from(&self.sigma);
        g.view_mut((p, p), (p, p)).copy_from(&self.sigma);
        g.view_mut((0, p), (p, p)).copy_from(&cross);
        g.view_mut((p, 0), (p, p)).copy_from(&cross);
        g
    }

    /// Knockoff rows for `x`, row `i` keyed by `row_keys[i]`, entries clipped
    /// to `[-c_x, c_x]`.
    pub fn sample(
        &self,
        x: &DMatrix<f64>,
        row_keys: &[u64],
        c_x: f64,
        exec: Execution,
    ) -> Result<DMatrix<f64>> {
        let (n, p) = x.shape();
        if p != self.p() {
            return Err(invalid(format!(
                "knockoff config has dimension {} but data has {p} columns",
                self.p()
            )));
        }
        if row_keys.len() != n {
            return Err(invalid("one row key per data row is required"));
        }
        // Fixed row blocks so that sequential and parallel runs perform the
        // same floating-point operations.
        let blocks = n.div_ceil(ROW_BLOCK);
        let parts = exec.map_range(blocks, |b| {
            let start = b * ROW_BLOCK;
            let len = ROW_BLOCK.min(n - start);
            let mut z = DMatrix::<f64>::zeros(len, p);
            let mut buf = vec![0.0; p];
            for (local, &key) in row_keys[start..start + len].iter().enumerate() {
                let mut rng = keyed_stream(self.knockoff_seed, key);
                fill_standard_normal(&mut rng, &mut buf);
                for (j, v) in buf.iter().enumerate() {
                    z[(local, j)] = *v;
                }
            }
            let xb = x.rows(start, len);
            let mut out = xb * &self.shift;
            out.gemm(1.0, &z, &self.noise_root, 1.0);
            out
        });
        let mut xt = DMatrix::zeros(n, p);
        for (b, part) in parts.into_iter().enumerate() {
            xt.rows_mut(b * ROW_BLOCK, part.nrows()).copy_from(&part);
        }
        xt.apply(|v| *v = v.clamp(-c_x, c_x));
        Ok(xt)
    }
}

/// A dataset joined with its knockoff matrix.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub base: Dataset,
    pub x_tilde: DMatrix<f64>,
    pub knockoff_seed: u64,
    pub sigma: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl AugmentedDataset {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn p(&self) -> usize {
        self.base.p()
    }

    /// Statistic input for the 0-based columns `cols`, in that order.
    pub fn restrict(&self, cols: &[usize]) -> Result<StatInput> {
        if cols.is_empty() {
            return Err(invalid("at least one feature is required"));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(invalid(format!("feature index {bad} out of range")));
        }
        StatInput::new(
            self.base.x().select_columns(cols.iter()),
            self.x_tilde.select_columns(cols.iter()),
            self.base.y().clone(),
            self.base.c_x(),
            self.base.c_y(),
            cols.iter().map(|c| c + 1).collect(),
        )
    }

    /// Statistic input over every feature.
    pub fn full(&self) -> Result<StatInput> {
        let cols: Vec<usize> = (0..self.p()).collect();
        self.restrict(&cols)
    }

    /// Writes the knockoff matrix with header `xt1..xtp`.
    pub fn write_knockoffs_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((1..=self.p()).map(|j| format!("xt{j}")))?;
        for i in 0..self.n() {
            w.write_record((0..self.p()).map(|j| self.x_tilde[(i, j)].to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates knockoffs with row `i` keyed by `i`.
pub fn generate_knockoffs(data: &Dataset, config: &GaussianKnockoffConfig) -> Result<AugmentedDataset> {
    let keys: Vec<u64> = (0..data.n() as u64).collect();
    generate_knockoffs_keyed(data, config, &keys, Execution::default())
}

/// Generates knockoffs with explicit row keys, e.g. the original row indices
/// of a split half.
pub fn generate_knockoffs_keyed(
    data: &Dataset,
    config: &GaussianKnockoffConfig,
    row_keys: &[u64],
    exec: Execution,
) -> Result<AugmentedDataset> {
    let x_tilde = config.sample(data.x(), row_keys, data.c_x(), exec)?;
    Ok(AugmentedDataset {
        base: data.clone(),
        x_tilde,
        knockoff_seed: config.knockoff_seed(),
        sigma: config.sigma().clone(),
        r: config.r().clone(),
    })
}

/// Sample covariance (denominator `n - 1`) of the rows of `[X, X~]`.
pub fn empirical_joint_covariance(aug: &AugmentedDataset) -> DMatrix<f64> {
    let (n, p) = (aug.n(), aug.p());
    if n < 2 * p {
        warn!("joint covariance from n = {n} rows for 2p = {} columns is poorly determined", 2 * p);
    }
    let mut joint = DMatrix::zeros(n, 2 * p);
    joint.columns_mut(0, p).copy_from(aug.base.x());
    joint.columns_mut(p, p).copy_from(&aug.x_tilde);
    let means = joint.row_mean();
    for mut row in joint.row_iter_mut() {
        row -= &means;
    }
    let mut cov = joint.transpose() * &joint / (n as f64 - 1.0);
    symmetrize(&mut cov);
    cov
}
