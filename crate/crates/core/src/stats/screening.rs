use serde::Serialize;

use crate::data::Dataset;

/// Marginal screening scores `u_j = n^-1 |X_j . y|` and their sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningStats {
    pub u: Vec<f64>,
    /// `2 c_x c_y / n`: one row changes each inner product by at most `2 c_x c_y`.
    pub sensitivity: f64,
}

pub fn screening_stats(data: &Dataset) -> ScreeningStats {
    let n = data.n() as f64;
    let u = (0..data.p())
        .map(|j| data.x().column(j).dot(data.y()).abs() / n)
        .collect();
    ScreeningStats {
        u,
        sensitivity: 2.0 * data.c_x() * data.c_y() / n,
    }
}
