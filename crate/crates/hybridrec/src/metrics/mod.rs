//! Evaluation metrics: RMSE/MAE for regression; precision, recall, AUC,
//! accuracy, top-k categorical accuracy and MRR for classification/ranking.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: predictions {pred:?} vs targets {target:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        target: (usize, usize),
    },
    #[error("empty input")]
    Empty,
    #[error("target row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("AUC undefined: flattened targets are all {0}")]
    AucUndefined(&'static str),
    #[error("k must lie in 1..=classes, got k={k} with {classes} classes")]
    BadK { k: usize, classes: usize },
}

/// Row-major matrix view used by every metric.
#[derive(Clone, Copy, Debug)]
pub struct MatrixView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> MatrixView<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        MatrixView { rows, cols, data }
    }

    fn row(&self, r: usize) -> &'a [f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn check_shapes(pred: &MatrixView, target: &MatrixView) -> Result<(), MetricError> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(MetricError::ShapeMismatch {
            pred: (pred.rows, pred.cols),
            target: (target.rows, target.cols),
        });
    }
    if pred.rows == 0 || pred.cols == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn check_one_hot(target: &MatrixView) -> Result<(), MetricError> {
    for r in 0..target.rows {
        let row = target.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != row.len() - 1 {
            return Err(MetricError::NotOneHot(r));
        }
    }
    Ok(())
}

fn argmax_lowest_tie(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn rmse(pred: &MatrixView, target: &MatrixView) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    let n = pred.data.len() as f64;
    let se: f64 = pred
        .data
        .iter()
        .zip(target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((se / n).sqrt())
}

pub fn mae(pred: &MatrixView, target: &MatrixView) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    let n = pred.data.len() as f64;
    let ae: f64 = pred
        .data
        .iter()
        .zip(target.data)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(ae / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Pool all cells into one confusion count.
    Micro,
    /// Per-class precision/recall averaged over classes.
    Macro,
}

/// Thresholded precision and recall over one-hot targets. Empty-positive
/// denominators yield 0 by convention.
pub fn precision_recall(
    pred: &MatrixView,
    target: &MatrixView,
    threshold: f64,
    averaging: Averaging,
) -> Result<(f64, f64), MetricError> {
    check_shapes(pred, target)?;
    check_one_hot(target)?;
    match averaging {
        Averaging::Micro => {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (p, t) in pred.data.iter().zip(target.data) {
                let predicted = *p >= threshold;
                let actual = *t == 1.0;
                match (predicted, actual) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = if tp + fp > 0 {
                tp as f64 / (tp + fp) as f64
            } else {
                0.0
            };
            let recall = if tp + fn_ > 0 {
                tp as f64 / (tp + fn_) as f64
            } else {
                0.0
            };
            Ok((precision, recall))
        }
        Averaging::Macro => {
            let mut psum = 0.0;
            let mut rsum = 0.0;
            for c in 0..pred.cols {
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for r in 0..pred.rows {
                    let predicted = pred.row(r)[c] >= threshold;
                    let actual = target.row(r)[c] == 1.0;
                    match (predicted, actual) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                psum += if tp + fp > 0 {
                    tp as f64 / (tp + fp) as f64
                } else {
                    0.0
                };
                rsum += if tp + fn_ > 0 {
                    tp as f64 / (tp + fn_) as f64
                } else {
                    0.0
                };
            }
            Ok((psum / pred.cols as f64, rsum / pred.cols as f64))
        }
    }
}

/// Micro one-vs-rest ROC AUC over all flattened cells: exact trapezoidal
/// integration of the ROC curve built from the sorted unique scores (tied
/// scores handled as one step, no binning).
pub fn auc(pred: &MatrixView, target: &MatrixView) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    let total_pos = target.data.iter().filter(|&&t| t == 1.0).count();
    let total_neg = target.data.len() - total_pos;
    if total_pos == 0 {
        return Err(MetricError::AucUndefined("negative"));
    }
    if total_neg == 0 {
        return Err(MetricError::AucUndefined("positive"));
    }
    let mut cells: Vec<(f64, bool)> = pred
        .data
        .iter()
        .zip(target.data)
        .map(|(&p, &t)| (p, t == 1.0))
        .collect();
    cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut i = 0;
    while i < cells.len() {
        // Consume the whole group of equal scores as one ROC step.
        let score = cells[i].0;
        while i < cells.len() && cells[i].0 == score {
            if cells[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / total_pos as f64;
        let fpr = fp as f64 / total_neg as f64;
        area += 0.5 * (tpr + prev_tpr) * (fpr - prev_fpr);
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Fraction of rows whose prediction argmax hits the one-hot target (ties to
/// the lowest index). Identical to top-1 accuracy.
pub fn accuracy(pred: &MatrixView, target: &MatrixView) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    check_one_hot(target)?;
    let hits = (0..pred.rows)
        .filter(|&r| argmax_lowest_tie(pred.row(r)) == argmax_lowest_tie(target.row(r)))
        .count();
    Ok(hits as f64 / pred.rows as f64)
}

/// Fraction of rows whose true class ranks among the k highest predictions,
/// ties resolved by ascending index before cutting at k.
pub fn topk_accuracy(pred: &MatrixView, target: &MatrixView, k: usize) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    check_one_hot(target)?;
    if k < 1 || k > pred.cols {
        return Err(MetricError::BadK {
            k,
            classes: pred.cols,
        });
    }
    let hits = (0..pred.rows)
        .filter(|&r| {
            let row = pred.row(r);
            let truth = argmax_lowest_tie(target.row(r));
            rank_of(row, truth) <= k
        })
        .count();
    Ok(hits as f64 / pred.rows as f64)
}

/// 1-based rank of class `idx` in descending score order, ties broken by
/// ascending index.
fn rank_of(row: &[f64], idx: usize) -> usize {
    let score = row[idx];
    let better = row.iter().filter(|&&v| v > score).count();
    let tied_before = row[..idx].iter().filter(|&&v| v == score).count();
    better + tied_before + 1
}

/// Mean reciprocal rank of the true class.
pub fn mrr(pred: &MatrixView, target: &MatrixView) -> Result<f64, MetricError> {
    check_shapes(pred, target)?;
    check_one_hot(target)?;
    let sum: f64 = (0..pred.rows)
        .map(|r| {
            let truth = argmax_lowest_tie(target.row(r));
            1.0 / rank_of(pred.row(r), truth) as f64
        })
        .sum();
    Ok(sum / pred.rows as f64)
}

/// Named metric values plus the counts they were computed over.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub entries: Vec<(String, f64)>,
    pub rows: usize,
    pub classes: usize,
    pub threshold: f64,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name},{value:.10}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|(n, _)| n.len())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "rows={} classes={} threshold={}",
            self.rows, self.classes, self.threshold
        );
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name:width$}  {value:.6}");
        }
        out
    }
}

/// RMSE + MAE report for a regression head.
pub fn regression_report(
    pred: &MatrixView,
    target: &MatrixView,
) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        entries: vec![
            ("rmse".into(), rmse(pred, target)?),
            ("mae".into(), mae(pred, target)?),
        ],
        rows: pred.rows,
        classes: pred.cols,
        threshold: 0.0,
    })
}

/// Precision/recall/AUC/accuracy/top-k/MRR report for a classification head.
pub fn classification_report(
    pred: &MatrixView,
    target: &MatrixView,
    threshold: f64,
    k: usize,
    averaging: Averaging,
) -> Result<EvalReport, MetricError> {
    let (precision, recall) = precision_recall(pred, target, threshold, averaging)?;
    let k = k.min(pred.cols);
    let mut entries = vec![
        ("precision".into(), precision),
        ("recall".into(), recall),
        ("accuracy".into(), accuracy(pred, target)?),
        (format!("top{k}_accuracy"), topk_accuracy(pred, target, k)?),
        ("mrr".into(), mrr(pred, target)?),
    ];
    match auc(pred, target) {
        Ok(a) => entries.insert(2, ("auc".into(), a)),
        Err(MetricError::AucUndefined(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(EvalReport {
        entries,
        rows: pred.rows,
        classes: pred.cols,
        threshold,
    })
}

#[cfg(test)]
mod tests;
