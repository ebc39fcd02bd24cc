//! Centralized missing-modality baseline: train with muted branches, test
//! with every branch live.

use rand::seq::SliceRandom;

use crate::data::{train_test_split, AlignedDataset};
use crate::error::{Error, Result};
use crate::federated::{evaluate, BaselineConfig, Learner, RoundReport};
use crate::model::{ArchSpec, ModalityMask, MultimodalNet};
use crate::rng::{rng_for, TAG_BASELINE_BATCHES};
use crate::tensor_core::{sgd_step, ParamSet};

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub params: ParamSet,
    /// One entry per epoch, starting with epoch 0 (before training). Train
    /// metrics use the training mask; test metrics use all modalities.
    pub history: Vec<RoundReport>,
}

pub fn train_baseline_with<L: Learner>(learner: &L, samples: &[L::Sample], cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let (train, test) = train_test_split(samples, cfg.test_fraction, cfg.seed)?;
    let mask = cfg.scenario.available();
    let mut params = learner.init_params(cfg.seed);

    let first_train = evaluate(learner, &params, &train, mask)?;
    let first_test = evaluate(learner, &params, &test, ModalityMask::FULL)?;
    let mut history = vec![RoundReport {
        round: 0,
        clients: Vec::new(),
        train_loss: first_train.loss,
        train_acc: first_train.accuracy,
        test_loss: first_test.loss,
        test_acc: first_test.accuracy,
    }];

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_BASELINE_BATCHES, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&L::Sample> = batch.iter().map(|&i| &train[i]).collect();
            let out = learner.loss_and_grad(&params, &refs, mask)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    round: epoch,
                    client: None,
                    msg: format!("baseline loss {}", out.loss),
                });
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            params = sgd_step(&params, &out.grad, cfg.lr)?;
        }
        let t = evaluate(learner, &params, &test, ModalityMask::FULL)?;
        history.push(RoundReport {
            round: epoch,
            clients: Vec::new(),
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_loss: t.loss,
            test_acc: t.accuracy,
        });
    }
    Ok(BaselineOutcome { params, history })
}

pub fn train_baseline(dataset: &AlignedDataset, arch: &ArchSpec, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    let net = MultimodalNet::new(arch.clone())?;
    train_baseline_with(&net, &dataset.samples, cfg)
}
