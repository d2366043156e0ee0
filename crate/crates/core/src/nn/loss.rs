use super::ops::softmax_in_place;
use super::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    /// Mean loss over the batch.
    pub loss: f64,
    pub probs: Tensor,
    /// `(p - y) / N`.
    pub dlogits: Tensor,
}

/// Softmax followed by mean negative log-likelihood of `labels`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let [n, c] = *logits.shape() else {
        return Err(Error::Shape(format!("logits must be [batch × classes], got {:?}", logits.shape())));
    };
    if n != labels.len() || n == 0 {
        return Err(Error::Shape(format!("{} labels for logits {:?}", labels.len(), logits.shape())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidParam(format!("label {bad} outside {c} classes")));
    }
    logits.check_finite("softmax_cross_entropy")?;
    let mut probs = logits.clone();
    let mut dlogits = Tensor::zeros(&[n, c]);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &mut probs.data_mut()[i * c..(i + 1) * c];
        softmax_in_place(row);
        loss -= row[y].max(PROB_FLOOR).ln();
        let drow = &mut dlogits.data_mut()[i * c..(i + 1) * c];
        for k in 0..c {
            drow[k] = (row[k] - if k == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok(CrossEntropy { loss: loss / n as f64, probs, dlogits })
}
