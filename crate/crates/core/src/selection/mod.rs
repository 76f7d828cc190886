//! Knockoff selection procedures: plain thresholding, mirror peeling,
//! private screening, and the single- and multi-split post-screening
//! pipelines with their non-private baseline.

mod ebh;
mod mirror;
mod pipeline;
mod threshold;

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::privacy::NoiseLedger;

pub use ebh::e_bh;
pub use mirror::{mirror_peeling_select, MirrorConfig};
pub use pipeline::{
    dp_screen, multi_split_select, nonprivate_baseline, single_split_select, EValueResult, MultiSplitConfig,
    PipelineConfig, SplitSummary,
};
pub use threshold::{knockoff_threshold, select_at};

/// Output of a thresholded knockoff selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    /// Selected 1-based feature ids, ascending.
    pub selected: Vec<usize>,
    /// Knockoff threshold; `+inf` when nothing qualifies.
    pub threshold: f64,
    /// Released (noisy) statistic per 1-based feature id.
    pub released_w: BTreeMap<usize, f64>,
    /// Features disclosed by peeling or screening, in peel order.
    pub peeled: Vec<usize>,
    pub mu_spent: f64,
    pub ledger: NoiseLedger,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl SelectionResult {
    pub fn b_n(&self) -> Option<f64> {
        self.diagnostics.get("b_n").copied()
    }

    /// JSON report: `{selected, threshold, mu_spent, b_n, released, ...}`.
    /// An infinite threshold and a missing `b_n` serialise as `null`.
    pub fn to_json(&self) -> Value {
        let released: serde_json::Map<String, Value> = self
            .released_w
            .iter()
            .map(|(id, w)| (id.to_string(), json!(w)))
            .collect();
        json!({
            "selected": self.selected,
            "threshold": finite_or_null(self.threshold),
            "mu_spent": self.mu_spent,
            "b_n": self.b_n(),
            "released": released,
            "peeled": self.peeled,
            "ledger": self.ledger,
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
        })
    }
}

pub(crate) fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Linear-interpolation quantile of a sorted slice.
pub(crate) fn quantile(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let mut r = SelectionResult {
            selected: vec![2],
            threshold: f64::INFINITY,
            released_w: BTreeMap::from([(2, 1.5), (7, -0.5)]),
            peeled: vec![2, 7],
            mu_spent: 1.0,
            ledger: NoiseLedger::new(),
            diagnostics: BTreeMap::new(),
            warnings: vec![],
        };
        let v = r.to_json();
        assert!(v["threshold"].is_null());
        assert!(v["b_n"].is_null());
        assert_eq!(v["released"]["7"], -0.5);
        r.threshold = 1.5;
        r.diagnostics.insert("b_n".into(), 0.25);
        let v = r.to_json();
        assert_eq!(v["threshold"], 1.5);
        assert_eq!(v["b_n"], 0.25);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.75), 4.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
