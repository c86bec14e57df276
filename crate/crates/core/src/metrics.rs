//! Binary-classification scores: confusion tally, precision/recall/F1/
//! accuracy, and their unweighted macro average.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("labels and predictions have different lengths ({labels} vs {predictions})")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("confusion matrix has no samples")]
    Empty,
    #[error("cannot average an empty list of metrics")]
    EmptyList,
}

/// 2x2 tally with class 1 as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Tallies binary labels against predictions.
pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (true, true) => cm.true_pos += 1,
            (false, true) => cm.false_pos += 1,
            (true, false) => cm.false_neg += 1,
            (false, false) => cm.true_neg += 1,
        }
    }
    Ok(cm)
}

/// Confusion-derived scores. `degenerate` marks divisions by zero, whose
/// scores are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: bool,
}

/// precision = tp/(tp+fp), recall = tp/(tp+fn), f1 = harmonic mean,
/// accuracy = (tp+tn)/total.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let recall = ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    let accuracy = (cm.true_pos + cm.true_neg) as f64 / cm.total() as f64;
    Ok(Metrics { precision, recall, f1, accuracy, degenerate })
}

/// Unweighted arithmetic mean per field; degenerate if any input was.
pub fn macro_average(items: &[Metrics]) -> Result<Metrics, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let n = items.len() as f64;
    Ok(Metrics {
        precision: items.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: items.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
        accuracy: items.iter().map(|m| m.accuracy).sum::<f64>() / n,
        degenerate: items.iter().any(|m| m.degenerate),
    })
}
