use crate::error::{invalid, Result};

/// Smallest `t` among the distinct positive `|w_j|` with
/// `(offset + #{w_j <= -t}) / max(1, #{w_j >= t}) <= q`, or `+inf` when no
/// candidate qualifies.
///
/// The ratio is piecewise constant between consecutive candidates, so the
/// scan over sorted magnitudes gives the exact infimum over `t > 0`.
pub fn knockoff_threshold(w: &[f64], q: f64, offset: usize) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("FDR level q must lie in (0, 1), got {q}")));
    }
    if w.is_empty() {
        return Err(invalid("cannot threshold an empty statistic vector"));
    }
    if w.iter().any(|v| v.is_nan()) {
        return Err(invalid("statistics must not contain NaN"));
    }
    let mut pos: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Counts of values >= t in each sorted list, advanced monotonically.
    let (mut ip, mut ineg) = (0usize, 0usize);
    for t in candidates {
        while ip < pos.len() && pos[ip] < t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] < t {
            ineg += 1;
        }
        let n_pos = pos.len() - ip;
        let n_neg = neg.len() - ineg;
        if (offset + n_neg) as f64 <= q * n_pos.max(1) as f64 {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

/// Indices (positions in `w`) with `w_j >= t`.
pub fn select_at(w: &[f64], t: f64) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, &v)| v >= t)
        .map(|(i, _)| i)
        .collect()
}
