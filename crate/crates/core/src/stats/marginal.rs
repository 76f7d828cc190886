use super::{Family, KnockoffStatistics, StatInput};

/// `W_j = n^-1 (|X_j . y| - |X~_j . y|)` with sensitivity `4 c_x c_y / n`.
pub fn marginal_corr_stats(input: &StatInput) -> KnockoffStatistics {
    let n = input.n() as f64;
    let w = (0..input.k())
        .map(|j| (input.x.column(j).dot(&input.y).abs() - input.xt.column(j).dot(&input.y).abs()) / n)
        .collect();
    KnockoffStatistics {
        w,
        family: Family::MarginalCorr,
        sensitivity: 4.0 * input.c_x * input.c_y / n,
        feature_ids: input.feature_ids.clone(),
        warnings: Vec::new(),
    }
}
