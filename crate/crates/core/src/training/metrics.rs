use crate::error::{Error, Result};

/// Classification quality on one label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// F1 per class, averaged with class-support weights.
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// True-label count per class.
    pub support: Vec<usize>,
}

/// Accuracy and F1 scores from parallel true/predicted label slices.
/// A class with no true and no predicted members scores F1 zero.
pub fn classification_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    classes: usize,
) -> Result<Metrics> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Eval(format!(
            "need equal nonempty label slices, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&c| c >= classes) {
        return Err(Error::Eval(format!("label {bad} outside 0..{classes}")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut correct = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            correct += 1;
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut per_class_f1 = Vec::with_capacity(classes);
    let mut support = Vec::with_capacity(classes);
    let mut weighted = 0.0;
    for c in 0..classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 };
        let sup = tp[c] + fn_[c];
        weighted += f1 * sup as f64;
        per_class_f1.push(f1);
        support.push(sup);
    }
    Ok(Metrics {
        accuracy: correct as f64 / y_true.len() as f64,
        weighted_f1: weighted / y_true.len() as f64,
        per_class_f1,
        support,
    })
}

/// Collapses the eight experience levels into three bands: 0-1, 2-4, 5-7.
pub const EXPERIENCE_MERGE: [usize; 8] = [0, 0, 1, 1, 1, 2, 2, 2];

/// Applies a class-index map to every label.
pub fn merge_labels(labels: &[usize], map: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&c| {
            map.get(c).copied().ok_or_else(|| {
                Error::Eval(format!("label {c} outside the {}-entry merge map", map.len()))
            })
        })
        .collect()
}
