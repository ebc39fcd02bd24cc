use crate::data::{AlignedSample, Labeled};
use crate::error::Result;
use crate::model::{Batch, ModalityMask, MultimodalNet};
use crate::tensor_core::{ParamSet, Tensor};

/// Loss, number of correct argmax predictions and gradient on one batch.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub correct: usize,
    pub grad: ParamSet,
}

/// The model-side interface the federated engine drives.
///
/// The engine only needs a mean batch loss with its gradient, logits for
/// evaluation, and a seeded initializer; any model providing these can be
/// federated.
pub trait Learner: Sync {
    type Sample: Clone + Labeled + Send + Sync;

    fn init_params(&self, seed: u64) -> ParamSet;

    fn loss_and_grad(&self, params: &ParamSet, batch: &[&Self::Sample], mask: ModalityMask) -> Result<StepOutput>;

    /// Class scores `[N, K]`.
    fn logits(&self, params: &ParamSet, batch: &[&Self::Sample], mask: ModalityMask) -> Result<Tensor>;
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn count_correct(logits: &Tensor, labels: impl Iterator<Item = usize>) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, label)| argmax(row) == *label)
        .count()
}

impl Learner for MultimodalNet {
    type Sample = AlignedSample;

    fn init_params(&self, seed: u64) -> ParamSet {
        MultimodalNet::init_params(self, seed)
    }

    fn loss_and_grad(&self, params: &ParamSet, batch: &[&AlignedSample], mask: ModalityMask) -> Result<StepOutput> {
        let batch = Batch::from_samples(batch)?;
        let out = MultimodalNet::loss_and_grad(self, params, &batch, mask)?;
        let correct = count_correct(&out.logits, batch.labels.iter().copied());
        Ok(StepOutput {
            loss: out.loss,
            correct,
            grad: out.grad,
        })
    }

    fn logits(&self, params: &ParamSet, batch: &[&AlignedSample], mask: ModalityMask) -> Result<Tensor> {
        self.forward(params, &Batch::from_samples(batch)?, mask)
    }
}
