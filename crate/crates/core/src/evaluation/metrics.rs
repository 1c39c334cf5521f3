use crate::error::{Error, Result};

fn check_lengths(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Per-class `2 TP / (2 TP + FP + FN)`, 0 when the class never occurs.
pub fn f1_score(y_true: &[usize], y_pred: &[usize], label: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == label, p == label) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Unweighted mean of per-class F1 over `labels`.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(labels.iter().map(|&l| f1_score(y_true, y_pred, l)).sum::<f64>() / labels.len() as f64)
}

/// Sorted union of the labels seen in either array.
pub fn observed_labels(y_true: &[usize], y_pred: &[usize]) -> Vec<usize> {
    let mut labels: Vec<usize> = y_true.iter().chain(y_pred).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}
