use crate::error::{invalid, Result};

/// e-BH at level `q`: with `e_[1] >= e_[2] >= ...`, finds
/// `k = max{k : e_[k] >= p / (q k)}` (0 when none) and returns `k` together
/// with the ascending 1-based ids of `{j : e_j >= p / (q k)}`.
pub fn e_bh(e: &[f64], q: f64) -> Result<(usize, Vec<usize>)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("FDR level q must lie in (0, 1), got {q}")));
    }
    if e.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("e-values must be finite and nonnegative"));
    }
    let p = e.len() as f64;
    let mut sorted = e.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k_hat = (1..=sorted.len())
        .rev()
        .find(|&k| sorted[k - 1] >= p / (q * k as f64))
        .unwrap_or(0);
    if k_hat == 0 {
        return Ok((0, Vec::new()));
    }
    let cut = p / (q * k_hat as f64);
    let selected = e
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= cut)
        .map(|(j, _)| j + 1)
        .collect();
    Ok((k_hat, selected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_large_e_values() {
        assert_eq!(e_bh(&[8.0, 8.0, 0.0, 0.0], 0.5).unwrap(), (2, vec![1, 2]));
    }

    #[test]
    fn all_zero() {
        assert_eq!(e_bh(&[0.0; 6], 0.2).unwrap(), (0, vec![]));
    }

    #[test]
    fn validation() {
        assert!(e_bh(&[1.0], 0.0).is_err());
        assert!(e_bh(&[-1.0], 0.1).is_err());
        assert!(e_bh(&[f64::NAN], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn selection_size_equals_k_hat(e in proptest::collection::vec(0.0f64..40.0, 1..30), q in 0.05f64..0.5) {
            let (k, sel) = e_bh(&e, q).unwrap();
            prop_assert_eq!(sel.len(), k);
            // naive scan over k
            let p = e.len() as f64;
            let naive = (1..=e.len())
                .filter(|&k| e.iter().filter(|&&v| v >= p / (q * k as f64)).count() >= k)
                .max()
                .unwrap_or(0);
            prop_assert_eq!(k, naive);
        }
    }
}
