//! Softmax cross-entropy, fused and stabilized with log-sum-exp.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Mean over samples of `-log softmax(logits)[label]`.
pub fn cross_entropy<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> Result<S> {
    check_batch(logits, labels)?;
    let mut total = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        total += lse(row) - row[label];
    }
    Ok(total / S::from_usize_(labels.len()))
}

/// Row-wise `log softmax` of a `[samples, classes]` tensor.
pub fn log_softmax<S: Real>(logits: &Tensor<S>) -> Tensor<S> {
    let classes = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.batch_len() {
        let row = logits.row(i);
        let norm = lse(row);
        out.extend(row.iter().map(|&v| v - norm));
    }
    Tensor::new(vec![logits.batch_len(), classes], out).expect("same shape as input")
}

/// Fraction of samples whose argmax logit equals the label. Ties resolve to
/// the smaller class index.
pub fn accuracy<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> Result<f64> {
    check_batch(logits, labels)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(logits.row(i)) == label)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub(super) fn argmax<S: Real>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// log(Σ exp(v)) without overflow.
fn lse<S: Real>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let sum = row
        .iter()
        .fold(S::zero(), |acc, &v| acc + (v - m).exp());
    m + sum.ln()
}

fn check_batch<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> Result<()> {
    if logits.batch_len() == 0 || labels.is_empty() {
        return Err(Error::EmptyInput("cross_entropy"));
    }
    if logits.shape().len() != 2 || logits.batch_len() != labels.len() {
        return Err(Error::InvalidDataset(format!(
            "logits shape {:?} does not pair with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidDataset(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}
