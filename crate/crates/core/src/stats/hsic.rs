use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Family, KnockoffStatistics, StatInput};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::exec::Execution;

/// Gaussian kernel bandwidths. Both kernels are bounded by 1, so the
/// sensitivity constant `sqrt(K L)` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicConfig {
    /// Bandwidth per feature, indexed by `feature_id - 1`. The same bandwidth
    /// is used for `X_j` and `X~_j`.
    pub x_bandwidths: Vec<f64>,
    pub y_bandwidth: f64,
}

impl HsicConfig {
    /// Data-independent bandwidths equal to the declared bounds.
    pub fn from_bounds(p: usize, c_x: f64, c_y: f64) -> Self {
        Self {
            x_bandwidths: vec![c_x; p],
            y_bandwidth: c_y,
        }
    }

    /// Median pairwise distance per variable, computed on `data` only.
    /// Degenerate (constant) variables fall back to their declared bound.
    pub fn median_heuristic(data: &Dataset) -> Self {
        let x_bandwidths = (0..data.p())
            .map(|j| {
                let col: Vec<f64> = data.x().column(j).iter().copied().collect();
                median_heuristic(&col).unwrap_or(data.c_x())
            })
            .collect();
        let ys: Vec<f64> = data.y().iter().copied().collect();
        Self {
            x_bandwidths,
            y_bandwidth: median_heuristic(&ys).unwrap_or(data.c_y()),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |h: f64| h.is_finite() && h > 0.0;
        if !ok(self.y_bandwidth) || !self.x_bandwidths.iter().all(|&h| ok(h)) {
            return Err(invalid("kernel bandwidths must be positive and finite"));
        }
        Ok(())
    }
}

/// Median of `|a_i - a_k|` over pairs `i < k`; `None` when it is zero.
pub fn median_heuristic(values: &[f64]) -> Option<f64> {
    let mut d = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            d.push((a - b).abs());
        }
    }
    if d.is_empty() {
        return None;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    (*m > 0.0).then_some(*m)
}

fn kernel(a: f64, b: f64, inv_two_h2: f64) -> f64 {
    (-(a - b) * (a - b) * inv_two_h2).exp()
}

fn gram(v: &[f64], h: f64) -> DMatrix<f64> {
    let c = 1.0 / (2.0 * h * h);
    DMatrix::from_fn(v.len(), v.len(), |i, j| kernel(v[i], v[j], c))
}

/// `H K H` with `H = I - 11'/n`.
fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_means: DVector<f64> = k.column_mean();
    let grand = row_means.mean();
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand)
}

/// `n^-2 trace(Kc L)` where `Kc` is the centered response Gram matrix and `L`
/// the Gram matrix of `col` at bandwidth `h`.
fn hsic_centered(kc: &DMatrix<f64>, col: &[f64], h: f64) -> f64 {
    let n = col.len();
    let c = 1.0 / (2.0 * h * h);
    let mut off = 0.0;
    let mut diag = 0.0;
    for a in 0..n {
        diag += kc[(a, a)];
        let xa = col[a];
        for b in (a + 1)..n {
            off += kc[(a, b)] * kernel(xa, col[b], c);
        }
    }
    (diag + 2.0 * off) / (n * n) as f64
}

/// Empirical HSIC (V-statistic) between `x` and `y` with Gaussian kernels.
pub fn hsic_value(x: &[f64], y: &[f64], h_x: f64, h_y: f64) -> f64 {
    let kc = double_center(&gram(y, h_y));
    hsic_centered(&kc, x, h_x)
}

/// `W_j = |HSIC(X_j, y)| - |HSIC(X~_j, y)|` with sensitivity `8 (n-1) / n^2`.
pub fn hsic_stats(input: &StatInput, cfg: &HsicConfig) -> Result<KnockoffStatistics> {
    cfg.validate()?;
    let bandwidth = |id: usize| {
        cfg.x_bandwidths
            .get(id - 1)
            .copied()
            .ok_or_else(|| invalid(format!("no bandwidth for feature {id}")))
    };
    let hs = input
        .feature_ids
        .iter()
        .map(|&id| bandwidth(id))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = input.y.iter().copied().collect();
    let kc = double_center(&gram(&ys, cfg.y_bandwidth));
    let w = Execution::default().map_range(input.k(), |j| {
        let xj: Vec<f64> = input.x.column(j).iter().copied().collect();
        let xtj: Vec<f64> = input.xt.column(j).iter().copied().collect();
        hsic_centered(&kc, &xj, hs[j]).abs() - hsic_centered(&kc, &xtj, hs[j]).abs()
    });
    let n = input.n() as f64;
    Ok(KnockoffStatistics {
        w,
        family: Family::Hsic,
        sensitivity: 8.0 * (n - 1.0) / (n * n),
        feature_ids: input.feature_ids.clone(),
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random_input;
    use super::*;

    /// Literal three-term V-statistic, O(n^4).
    fn hsic_three_sums(x: &[f64], y: &[f64], hx: f64, hy: f64) -> f64 {
        let n = x.len();
        let k = |a: usize, b: usize| kernel(y[a], y[b], 1.0 / (2.0 * hy * hy));
        let l = |a: usize, b: usize| kernel(x[a], x[b], 1.0 / (2.0 * hx * hx));
        let nf = n as f64;
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        let mut t3 = 0.0;
        for i1 in 0..n {
            for i2 in 0..n {
                t1 += k(i1, i2) * l(i1, i2);
                for i3 in 0..n {
                    t3 += k(i1, i2) * l(i1, i3);
                    for i4 in 0..n {
                        t2 += k(i1, i2) * l(i3, i4);
                    }
                }
            }
        }
        t1 / nf.powi(2) + t2 / nf.powi(4) - 2.0 * t3 / nf.powi(3)
    }

    #[test]
    fn trace_form_matches_three_sums() {
        for seed in 0..10 {
            let input = random_input(4, 1, seed);
            let x: Vec<f64> = input.x.column(0).iter().copied().collect();
            let y: Vec<f64> = input.y.iter().copied().collect();
            let fast = hsic_value(&x, &y, 0.8, 1.3);
            let slow = hsic_three_sums(&x, &y, 0.8, 1.3);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn constant_response_gives_zero() {
        let mut input = random_input(15, 3, 4);
        input.y.fill(0.7);
        let s = hsic_stats(&input, &HsicConfig::from_bounds(3, 1.5, 3.0)).unwrap();
        assert!(s.w.iter().all(|w| w.abs() < 1e-15));
    }

    #[test]
    fn sensitivity_formula() {
        let input = random_input(100, 2, 1);
        let s = hsic_stats(&input, &HsicConfig::from_bounds(2, 1.5, 3.0)).unwrap();
        assert!((s.sensitivity - 0.0792).abs() < 1e-15);
    }

    #[test]
    fn hsic_is_nonnegative() {
        for seed in 0..20 {
            let input = random_input(25, 2, seed);
            let y: Vec<f64> = input.y.iter().copied().collect();
            for j in 0..2 {
                let x: Vec<f64> = input.x.column(j).iter().copied().collect();
                assert!(hsic_value(&x, &y, 1.0, 1.0) >= -1e-12);
            }
        }
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        let input = random_input(10, 2, 1);
        let cfg = HsicConfig {
            x_bandwidths: vec![1.0, 0.0],
            y_bandwidth: 1.0,
        };
        assert!(hsic_stats(&input, &cfg).is_err());
    }

    #[test]
    fn median_heuristic_values() {
        assert_eq!(median_heuristic(&[0.0, 1.0, 3.0]), Some(2.0));
        assert_eq!(median_heuristic(&[2.0, 2.0, 2.0]), None);
        assert_eq!(median_heuristic(&[1.0]), None);
    }
}
