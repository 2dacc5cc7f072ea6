//! Detection metrics over labelled logs or windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::WindowSource;
use crate::logdata::{span_overlaps, AnnotationSpan, AnomalyType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("ROC needs at least one positive and one negative label")]
    OneClassOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// `(fpr, tpr)` pairs from `(0, 0)` to `(1, 1)`; empty without scores.
    pub roc_points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// Confusion counts and rates.
///
/// With no positive predictions precision is 1 when nothing was missed and
/// 0 otherwise; with no positive labels recall is 1.
pub fn prf1(predictions: &[bool], labels: &[bool]) -> Result<EvalReport, EvalError> {
    check_lengths(predictions.len(), labels.len())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = if tp + fp == 0 {
        if fn_ == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok(EvalReport {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        accuracy: (tp + tn) as f64 / predictions.len() as f64,
        f1: f1_from_pr(precision, recall),
        roc_points: Vec::new(),
        auc: None,
    })
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::OneClassOnly);
    }
    Ok((pos, neg))
}

/// ROC over every distinct score used as a strict `>` threshold, plus
/// `+∞`, then trapezoidal area.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, f64)>, f64), EvalError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let mut points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&s, &l) in scores.iter().zip(labels) {
                if s > t {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            (fp as f64 / neg as f64, tp as f64 / pos as f64)
        })
        .collect();
    points.push((0.0, 0.0));
    points.push((1.0, 1.0));
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();

    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok((points, auc))
}

/// Mann–Whitney estimate: share of (anomalous, normal) pairs ordered
/// correctly, ties counting one half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut wins = 0.0;
    for (&sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (&sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos * neg) as f64)
}

/// Counts and rates plus the ROC of `scores`.
pub fn evaluate(predictions: &[bool], scores: &[f64], labels: &[bool]) -> Result<EvalReport, EvalError> {
    let mut report = prf1(predictions, labels)?;
    check_lengths(scores.len(), labels.len())?;
    if let Ok((points, auc)) = roc_auc(scores, labels) {
        report.roc_points = points;
        report.auc = Some(auc);
    }
    Ok(report)
}

/// A window is positive when it overlaps an annotation of `anomaly_type`
/// from the same log.
pub fn window_labels(
    windows: &[WindowSource],
    annotations: &[AnnotationSpan],
    anomaly_type: AnomalyType,
) -> Vec<bool> {
    windows
        .iter()
        .map(|w| {
            annotations.iter().any(|a| {
                a.anomaly_type == anomaly_type
                    && a.log_id == w.log_id
                    && span_overlaps(a, w.start_us, w.end_us)
            })
        })
        .collect()
}

/// Plain-text table with one column per named report and rows Precision,
/// Recall, Accuracy and F1 (plus AUC when every column has one).
pub fn render_table(columns: &[(&str, &EvalReport)]) -> String {
    let mut rows: Vec<(&str, Vec<String>)> = vec![
        ("Precision", columns.iter().map(|(_, r)| format!("{:.2}", r.precision)).collect()),
        ("Recall", columns.iter().map(|(_, r)| format!("{:.2}", r.recall)).collect()),
        ("Accuracy", columns.iter().map(|(_, r)| format!("{:.2}", r.accuracy)).collect()),
        ("F1", columns.iter().map(|(_, r)| format!("{:.2}", r.f1)).collect()),
    ];
    if !columns.is_empty() && columns.iter().all(|(_, r)| r.auc.is_some()) {
        rows.push((
            "AUC",
            columns
                .iter()
                .map(|(_, r)| format!("{:.3}", r.auc.unwrap_or_default()))
                .collect(),
        ));
    }
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, (name, _))| rows.iter().map(|(_, v)| v[i].len()).max().unwrap_or(0).max(name.len()))
        .collect();

    let mut out = format!("{:label_w$}", "");
    for ((name, _), w) in columns.iter().zip(&widths) {
        out.push_str(&format!("  {name:>w$}"));
    }
    out.push('\n');
    for (label, values) in &rows {
        out.push_str(&format!("{label:label_w$}"));
        for (v, w) in values.iter().zip(&widths) {
            out.push_str(&format!("  {v:>w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<bool> {
        (0..pos).map(|_| true).chain((0..neg).map(|_| false)).collect()
    }

    /// Predictions yielding exactly these confusion counts. Labels are
    /// `tp + fn` positives followed by `fp + tn` negatives.
    fn confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> (Vec<bool>, Vec<bool>) {
        let mut p = vec![true; tp];
        p.extend(vec![false; fn_]);
        p.extend(vec![true; fp]);
        p.extend(vec![false; tn]);
        (p, labels(tp + fn_, fp + tn))
    }

    #[test]
    fn all_correct() {
        let l = labels(24, 22);
        let r = prf1(&l, &l).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.total(), 46);
    }

    #[test]
    fn table_rows_f1() {
        let (p, l) = confusion(17, 8, 0, 0);
        let r = prf1(&p, &l).unwrap();
        assert!((r.precision - 0.68).abs() < 1e-12 && r.recall == 1.0);
        assert!((r.f1 - 2.0 * 0.68 / 1.68).abs() < 1e-12);
        assert!((r.f1 - 0.81).abs() <= 0.005);

        let (p, l) = confusion(201, 99, 0, 1139);
        let r = prf1(&p, &l).unwrap();
        assert!((r.precision - 0.67).abs() < 1e-12);
        assert!((r.recall - 0.15).abs() < 1e-12);
        assert!((r.f1 - 0.25).abs() <= 0.005);
        assert!((f1_from_pr(0.67, 0.15) - 0.25).abs() <= 0.005);
    }

    #[test]
    fn precision_conventions() {
        let r = prf1(&[false, false], &[false, false]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = prf1(&[false, false], &[true, false]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(prf1(&[true], &[]), Err(EvalError::LengthMismatch(1, 0)));
        assert_eq!(prf1(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn auc_examples() {
        let (pts, auc) = roc_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap().1, 0.5);
        let s = [0.1, 0.5, 0.4, 0.8];
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&s, &l).unwrap().1, 0.75);
        assert_eq!(auc_oracle(&s, &l).unwrap(), 0.75);
        assert_eq!(roc_auc(&[1.0, 2.0], &[true, true]), Err(EvalError::OneClassOnly));
        assert_eq!(auc_oracle(&[1.0], &[false]), Err(EvalError::OneClassOnly));
    }

    #[test]
    fn table_layout() {
        let (p, l) = confusion(17, 8, 0, 0);
        let r = prf1(&p, &l).unwrap();
        let text = render_table(&[("LSTM VibeX", &r), ("Rule", &r)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("LSTM VibeX"));
        assert!(lines[4].starts_with("F1") && lines[4].contains("0.81"));
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn roc_matches_oracle((scores, labels) in scored()) {
            match (roc_auc(&scores, &labels), auc_oracle(&scores, &labels)) {
                (Ok((pts, a)), Ok(b)) => {
                    prop_assert!((a - b).abs() <= 1e-9);
                    prop_assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0));
                }
                (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                _ => prop_assert!(false, "one computation failed"),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_map((scores, labels) in scored()) {
            if let Ok((_, a)) = roc_auc(&scores, &labels) {
                let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
                let (_, b) = roc_auc(&mapped, &labels).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn accuracy_and_f1_identities(p in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
            let l: Vec<bool> = p.iter().enumerate().map(|(i, &v)| v ^ ((seed >> (i % 64)) & 1 == 1)).collect();
            let r = prf1(&p, &l).unwrap();
            prop_assert_eq!(r.total(), p.len());
            prop_assert_eq!(r.accuracy, (r.tp + r.tn) as f64 / p.len() as f64);
            if r.precision + r.recall > 0.0 {
                prop_assert!((r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)).abs() < 1e-15);
            }
            for v in [r.precision, r.recall, r.accuracy, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
