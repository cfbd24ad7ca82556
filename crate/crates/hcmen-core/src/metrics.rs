//! Sentiment metrics: multi-class accuracies from the rounded regression
//! output, both binary Acc-2/F1 conventions, MAE and Pearson correlation.

use alloc::format;
use alloc::vec::Vec;


#[allow(unused_imports)] // inherent f64 methods cover std; Float is needed for no_std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Element;

/// All reported metrics. Accuracies and F1 are fractions in `[0, 1]`;
/// `corr_degenerate` flags a Pearson correlation that was undefined (zero
/// variance on either side) and reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub acc7: f64,
    pub acc5: f64,
    /// Binary accuracy, negative vs non-negative, zero labels included.
    pub acc2_has0: f64,
    /// Binary accuracy, negative vs positive, zero labels excluded.
    pub acc2_non0: f64,
    pub f1_has0: f64,
    pub f1_non0: f64,
    pub mae: f64,
    pub corr: f64,
    pub corr_degenerate: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "mae,corr,acc7,acc5,acc2_has0,acc2_non0,f1_has0,f1_non0";

    pub fn csv_row(&self) -> alloc::string::String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mae,
            self.corr,
            self.acc7,
            self.acc5,
            self.acc2_has0,
            self.acc2_non0,
            self.f1_has0,
            self.f1_non0
        )
    }
}

fn round_clamped(v: f64, lo: f64, hi: f64) -> i64 {
    v.max(lo).min(hi).round() as i64
}

/// Computes the full report from prediction/label pairs.
pub fn compute_metrics<E: Element>(preds: &[E], labels: &[E]) -> Result<MetricsReport> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "compute_metrics: got {} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let p: Vec<f64> = preds.iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = labels.iter().map(|v| v.as_f64()).collect();
    let n = p.len() as f64;

    let acc7 = p
        .iter()
        .zip(&y)
        .filter(|(a, b)| round_clamped(**a, -3.0, 3.0) == round_clamped(**b, -3.0, 3.0))
        .count() as f64
        / n;
    let acc5 = p
        .iter()
        .zip(&y)
        .filter(|(a, b)| round_clamped(**a, -2.0, 2.0) == round_clamped(**b, -2.0, 2.0))
        .count() as f64
        / n;

    // has-zero convention: classes (y < 0) vs (y >= 0), all samples
    let has0: Vec<(bool, bool)> = p.iter().zip(&y).map(|(a, b)| (*a < 0.0, *b < 0.0)).collect();
    // non-zero convention: zero labels excluded, classes (y < 0) vs (y > 0)
    let non0: Vec<(bool, bool)> = p
        .iter()
        .zip(&y)
        .filter(|(_, b)| **b != 0.0)
        .map(|(a, b)| (*a < 0.0, *b < 0.0))
        .collect();

    let binary_acc = |pairs: &[(bool, bool)]| -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        pairs.iter().filter(|(pc, yc)| pc == yc).count() as f64 / pairs.len() as f64
    };
    let acc2_has0 = binary_acc(&has0);
    let acc2_non0 = binary_acc(&non0);
    let f1_has0 = weighted_f1(&has0);
    let f1_non0 = weighted_f1(&non0);

    let mae = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (corr, corr_degenerate) = pearson(&p, &y);

    Ok(MetricsReport {
        acc7,
        acc5,
        acc2_has0,
        acc2_non0,
        f1_has0,
        f1_non0,
        mae,
        corr,
        corr_degenerate,
    })
}

/// Support-weighted F1 over the two classes of (pred_is_negative,
/// label_is_negative) pairs.
fn weighted_f1(pairs: &[(bool, bool)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for class_negative in [true, false] {
        let support = pairs.iter().filter(|(_, yc)| *yc == class_negative).count();
        if support == 0 {
            continue;
        }
        let tp = pairs
            .iter()
            .filter(|(pc, yc)| *pc == class_negative && *yc == class_negative)
            .count() as f64;
        let fp = pairs
            .iter()
            .filter(|(pc, yc)| *pc == class_negative && *yc != class_negative)
            .count() as f64;
        let fnn = pairs
            .iter()
            .filter(|(pc, yc)| *pc != class_negative && *yc == class_negative)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1 * support as f64;
    }
    total / pairs.len() as f64
}

/// Pearson correlation; `(0, true)` when either side has zero variance.
fn pearson(p: &[f64], y: &[f64]) -> (f64, bool) {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vy = 0.0;
    for (a, b) in p.iter().zip(y) {
        cov += (a - mp) * (b - my);
        vp += (a - mp) * (a - mp);
        vy += (b - my) * (b - my);
    }
    if vp <= 0.0 || vy <= 0.0 {
        return (0.0, true);
    }
    (cov / (vp.sqrt() * vy.sqrt()), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let labels = [-2.5f64, -1.0, 0.0, 0.5, 2.0, 3.0];
        let r = compute_metrics(&labels, &labels).unwrap();
        assert_eq!(r.acc7, 1.0);
        assert_eq!(r.acc5, 1.0);
        assert_eq!(r.acc2_has0, 1.0);
        assert_eq!(r.acc2_non0, 1.0);
        assert_eq!(r.f1_has0, 1.0);
        assert_eq!(r.f1_non0, 1.0);
        assert_eq!(r.mae, 0.0);
        assert!((r.corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_shift_keeps_correlation() {
        let labels = [-2.0f64, -1.0, 0.0, 1.0, 2.0];
        let preds: Vec<f64> = labels.iter().map(|v| v + 0.5).collect();
        let r = compute_metrics(&preds, &labels).unwrap();
        assert!((r.mae - 0.5).abs() < 1e-12);
        assert!((r.corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dual_acc2_conventions() {
        // labels [-1, 0, 1], preds [-1, -0.2, 1]:
        //  has-zero: pred classes (neg, neg, nonneg) vs label (neg, nonneg, nonneg) -> 2/3
        //  non-zero: zero label dropped -> both remaining correct -> 1.0
        let labels = [-1.0f64, 0.0, 1.0];
        let preds = [-1.0f64, -0.2, 1.0];
        let r = compute_metrics(&preds, &labels).unwrap();
        assert!((r.acc2_has0 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.acc2_non0, 1.0);
    }

    #[test]
    fn identical_labels_flag_degenerate_corr() {
        let labels = [1.0f64; 4];
        let preds = [0.5f64, 1.5, 1.0, 2.0];
        let r = compute_metrics(&preds, &labels).unwrap();
        assert_eq!(r.corr, 0.0);
        assert!(r.corr_degenerate);
    }

    #[test]
    fn empty_or_mismatched_inputs_rejected() {
        assert!(compute_metrics::<f64>(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0f64], &[1.0, 2.0]).is_err());
    }
}
