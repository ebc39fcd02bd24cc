//! Client-side MAML step: adapt on the support set, then take the query
//! gradient at the adapted parameters.

use rand::seq::SliceRandom;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::federated::Learner;
use crate::rng::{rng_for, TAG_INNER_BATCHES};
use crate::tensor_core::{sgd_step, ParamSet};

/// Query gradients are accumulated over chunks of this many samples.
pub const QUERY_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSettings {
    pub inner_lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// What one client sends back (plus diagnostics that stay local).
#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub client_id: usize,
    /// Meta-gradient g_u.
    pub grad: ParamSet,
    /// theta_u after the inner loop.
    pub adapted: ParamSet,
    /// Mean inner-loop batch loss (measured before each step).
    pub support_loss: f64,
    /// Query loss at theta_u.
    pub query_loss: f64,
    pub query_correct: usize,
    pub query_count: usize,
}

/// Mini-batch index lists for one inner epoch.
///
/// The permutation is keyed by `(seed, round, epoch)` only, so clients with
/// identical data produce identical batches.
pub fn inner_batches(n: usize, batch_size: usize, seed: u64, round: usize, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[TAG_INNER_BATCHES, round as u64, epoch as u64]));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One pass of masked inner SGD over the support set. Returns the adapted
/// parameters and the sum of the pre-step batch losses with the step count.
#[allow(clippy::too_many_arguments)]
pub fn adapt_epoch<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    shard: &ClientShard<L::Sample>,
    inner_lr: f64,
    batch_size: usize,
    seed: u64,
    round: usize,
    epoch: usize,
) -> Result<(ParamSet, f64, usize)> {
    let mut params = theta.clone();
    let mut loss_sum = 0.0;
    let batches = inner_batches(shard.support.len(), batch_size, seed, round, epoch);
    let steps = batches.len();
    for batch in batches {
        let refs: Vec<&L::Sample> = batch.iter().map(|&i| &shard.support[i]).collect();
        let out = learner.loss_and_grad(&params, &refs, shard.mask)?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence {
                round,
                client: Some(shard.client_id),
                msg: format!("support loss {} in epoch {epoch}", out.loss),
            });
        }
        loss_sum += out.loss;
        params = sgd_step(&params, &out.grad, inner_lr)?;
    }
    Ok((params, loss_sum, steps))
}

/// Mean loss and gradient over the whole query set, every modality on.
pub fn query_gradient<L: Learner>(
    learner: &L,
    params: &ParamSet,
    shard: &ClientShard<L::Sample>,
) -> Result<(f64, usize, ParamSet)> {
    let n = shard.query.len();
    if n == 0 {
        return Err(Error::data(format!("client {} has an empty query set", shard.client_id)));
    }
    let mut grad: Option<ParamSet> = None;
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in shard.query.chunks(QUERY_CHUNK) {
        let refs: Vec<&L::Sample> = chunk.iter().collect();
        let out = learner.loss_and_grad(params, &refs, shard.query_mask())?;
        let w = chunk.len() as f64 / n as f64;
        loss += w * out.loss;
        correct += out.correct;
        grad = Some(match grad {
            None if chunk.len() == n => out.grad,
            None => out.grad.scale(w),
            Some(acc) => acc.axpy(w, &out.grad)?,
        });
    }
    Ok((loss, correct, grad.expect("query set is non-empty")))
}

/// LocalTraining: E epochs of inner SGD on the support set under the
/// client's mask, then the first-order meta-gradient
/// `g_u = grad L_query(theta_u)` with all modalities. `theta` is not modified.
pub fn local_training<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    shard: &ClientShard<L::Sample>,
    settings: &LocalSettings,
    round: usize,
) -> Result<LocalUpdate> {
    if shard.support.is_empty() || shard.query.is_empty() {
        return Err(Error::data(format!(
            "client {} needs non-empty support and query sets",
            shard.client_id
        )));
    }
    let mut adapted = theta.clone();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for epoch in 0..settings.local_epochs {
        let (next, l, s) = adapt_epoch(
            learner,
            &adapted,
            shard,
            settings.inner_lr,
            settings.batch_size,
            settings.seed,
            round,
            epoch,
        )?;
        adapted = next;
        loss_sum += l;
        steps += s;
    }
    let (query_loss, query_correct, grad) = query_gradient(learner, &adapted, shard)?;
    if !query_loss.is_finite() || !grad.is_finite() {
        return Err(Error::Divergence {
            round,
            client: Some(shard.client_id),
            msg: format!("query loss {query_loss}"),
        });
    }
    Ok(LocalUpdate {
        client_id: shard.client_id,
        grad,
        adapted,
        support_loss: if steps > 0 { loss_sum / steps as f64 } else { f64::NAN },
        query_loss,
        query_correct,
        query_count: shard.query.len(),
    })
}
