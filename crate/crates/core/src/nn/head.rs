//! Binary classification heads and their losses.

use crate::error::{shape_err, value_err, Result};
use crate::tensor::Tensor;

/// How logits become a polyp probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    /// One logit per sample, sigmoid + binary cross-entropy.
    #[default]
    Sigmoid,
    /// Two logits per sample, softmax + cross-entropy; probability of class 1.
    Softmax2,
}

impl Head {
    pub fn logits(self) -> usize {
        match self {
            Head::Sigmoid => 1,
            Head::Softmax2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Sigmoid => "sigmoid",
            Head::Softmax2 => "softmax2",
        }
    }

    pub fn loss(self, logits: &Tensor, labels: &Tensor) -> Result<HeadOutput> {
        match self {
            Head::Sigmoid => sigmoid_bce(logits, labels),
            Head::Softmax2 => softmax2_ce(logits, labels),
        }
    }

    /// Positive-class probabilities only.
    pub fn probabilities(self, logits: &Tensor) -> Result<Vec<f64>> {
        check_logits(logits, self.logits())?;
        Ok(match self {
            Head::Sigmoid => logits.data().iter().map(|&z| sigmoid(z)).collect(),
            Head::Softmax2 => logits
                .data()
                .chunks_exact(2)
                .map(|z| sigmoid(z[1] - z[0]))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// Positive-class probability per sample.
    pub probabilities: Vec<f64>,
    /// Mean loss over the batch.
    pub loss: f64,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_logits(logits: &Tensor, width: usize) -> Result<usize> {
    match logits.shape() {
        &[n, w] if w == width => Ok(n),
        other => Err(shape_err!("head expects logits [N, {width}], got {other:?}")),
    }
}

fn check_labels(labels: &Tensor, n: usize) -> Result<()> {
    if labels.shape() != [n, 1] {
        return Err(shape_err!(
            "labels must be [{n}, 1], got {:?}",
            labels.shape()
        ));
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(value_err!("labels must be 0 or 1, found {bad}"));
    }
    Ok(())
}

/// Sigmoid probabilities and mean binary cross-entropy, in the stable form
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn sigmoid_bce(logits: &Tensor, labels: &Tensor) -> Result<HeadOutput> {
    let n = check_logits(logits, 1)?;
    check_labels(labels, n)?;
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for (&z, &y) in logits.data().iter().zip(labels.data()) {
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let p = sigmoid(z);
        probabilities.push(p);
        grad.push((p - y) / n as f64);
    }
    Ok(HeadOutput {
        probabilities,
        loss: loss / n as f64,
        grad: Tensor::from_parts(vec![n, 1], grad),
    })
}

/// Two-way softmax cross-entropy; equivalent to [`sigmoid_bce`] on the logit
/// difference `z1 - z0`.
pub fn softmax2_ce(logits: &Tensor, labels: &Tensor) -> Result<HeadOutput> {
    let n = check_logits(logits, 2)?;
    check_labels(labels, n)?;
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(2 * n);
    for (z, &y) in logits.data().chunks_exact(2).zip(labels.data()) {
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        let target = if y == 1.0 { z[1] } else { z[0] };
        loss += lse - target;
        let p1 = sigmoid(z[1] - z[0]);
        probabilities.push(p1);
        grad.push((1.0 - p1 - (1.0 - y)) / n as f64);
        grad.push((p1 - y) / n as f64);
    }
    Ok(HeadOutput {
        probabilities,
        loss: loss / n as f64,
        grad: Tensor::from_parts(vec![n, 2], grad),
    })
}
