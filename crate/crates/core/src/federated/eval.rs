use crate::data::Labeled;
use crate::error::{Error, Result};
use crate::federated::learner::{argmax, Learner};
use crate::model::ModalityMask;
use crate::tensor_core::{softmax_cross_entropy_forward, ParamSet};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    /// Predicted class per sample, in input order.
    pub predictions: Vec<usize>,
}

/// Accuracy and mean cross-entropy of `theta` on `samples` under `mask`.
pub fn evaluate<L: Learner>(learner: &L, theta: &ParamSet, samples: &[L::Sample], mask: ModalityMask) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate on an empty set"));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&L::Sample> = chunk.iter().collect();
        let logits = learner.logits(theta, &refs, mask)?;
        let labels: Vec<usize> = chunk.iter().map(Labeled::label).collect();
        let (loss, _) = softmax_cross_entropy_forward(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            let p = argmax(row);
            correct += usize::from(p == label);
            predictions.push(p);
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / samples.len() as f64,
        loss: loss_sum / samples.len() as f64,
        correct,
        count: samples.len(),
        predictions,
    })
}
