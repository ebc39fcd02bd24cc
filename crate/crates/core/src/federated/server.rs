//! Server side: client sampling, meta-gradient aggregation, evaluation.

use std::collections::BTreeMap;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::federated::{evaluate, local_training, Aggregation, Learner, LocalSettings, LocalUpdate, MetaConfig};
use crate::model::ModalityMask;
use crate::rng::{rng_for, TAG_CLIENT_SAMPLING};
use crate::tensor_core::{sgd_step, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    pub support_loss: f64,
    pub query_loss: f64,
}

/// Metrics after one round (round 0 describes the initial parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientReport>,
    /// Full-modality loss/accuracy on the training data.
    pub train_loss: f64,
    pub train_acc: f64,
    /// Full-modality loss/accuracy on the held-out test set.
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct GlobalState {
    /// Rounds completed so far.
    pub round: usize,
    pub theta: ParamSet,
    pub history: Vec<RoundReport>,
}

impl GlobalState {
    pub fn last_report(&self) -> Option<&RoundReport> {
        self.history.last()
    }
}

/// Order in which sampled clients are visited. Aggregation always sums in
/// ascending client id, so the order cannot change the result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClientOrder {
    #[default]
    Ascending,
    Descending,
}

/// The `m` clients taking part in `round`, ascending; drawn without
/// replacement from a stream keyed by `(seed, round)`.
pub fn sample_clients(clients_total: usize, m: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(
        &mut rng_for(seed, &[TAG_CLIENT_SAMPLING, round as u64]),
        clients_total,
        m.min(clients_total),
    )
    .into_vec();
    picked.sort_unstable();
    picked
}

/// Runs LocalTraining on every sampled client and returns the updates in
/// ascending client-id order.
pub fn collect_updates<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    shards: &[ClientShard<L::Sample>],
    cfg: &MetaConfig,
    round: usize,
    order: ClientOrder,
) -> Result<Vec<LocalUpdate>> {
    let mut ids = sample_clients(cfg.clients_total, cfg.clients_per_round, cfg.seed, round);
    if order == ClientOrder::Descending {
        ids.reverse();
    }
    let settings = LocalSettings {
        inner_lr: cfg.inner_lr,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let mut updates = BTreeMap::new();
    for id in ids {
        let update = local_training(learner, theta, &shards[id], &settings, round)?;
        updates.insert(id, update);
    }
    Ok(updates.into_values().collect())
}

/// The step the server subtracts from theta: `beta * sum g_u` or
/// `beta * (sum g_u) / m`, summing in the given order.
pub fn aggregate(updates: &[LocalUpdate], aggregation: Aggregation, outer_lr: f64) -> Result<ParamSet> {
    let (first, rest) = updates
        .split_first()
        .ok_or_else(|| Error::config("no client updates to aggregate"))?;
    let mut total = first.grad.clone();
    for u in rest {
        total.add_assign(&u.grad)?;
    }
    let m = updates.len() as f64;
    let combined = match aggregation {
        Aggregation::Sum => total,
        Aggregation::Mean => {
            let mut t = total;
            t.iter_mut()
                .for_each(|(_, x)| x.data_mut().iter_mut().for_each(|v| *v /= m));
            t
        }
    };
    Ok(combined.scale(outer_lr))
}

/// Full-modality metrics of `theta` on every client's query set and on `test`.
pub fn round_metrics<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    shards: &[ClientShard<L::Sample>],
    test: &[L::Sample],
) -> Result<(f64, f64, f64, f64)> {
    let (mut loss, mut correct, mut count) = (0.0, 0, 0);
    for s in shards.iter().filter(|s| !s.query.is_empty()) {
        let r = evaluate(learner, theta, &s.query, ModalityMask::FULL)?;
        loss += r.loss * r.count as f64;
        correct += r.correct;
        count += r.count;
    }
    let (train_loss, train_acc) = if count > 0 {
        (loss / count as f64, correct as f64 / count as f64)
    } else {
        (f64::NAN, f64::NAN)
    };
    let t = evaluate(learner, theta, test, ModalityMask::FULL)?;
    Ok((train_loss, train_acc, t.loss, t.accuracy))
}

pub fn server_round<L: Learner>(
    learner: &L,
    state: &GlobalState,
    shards: &[ClientShard<L::Sample>],
    cfg: &MetaConfig,
    test: &[L::Sample],
) -> Result<GlobalState> {
    server_round_ordered(learner, state, shards, cfg, test, ClientOrder::Ascending)
}

/// One communication round: sample clients, collect their meta-gradients,
/// apply the aggregated step and evaluate.
pub fn server_round_ordered<L: Learner>(
    learner: &L,
    state: &GlobalState,
    shards: &[ClientShard<L::Sample>],
    cfg: &MetaConfig,
    test: &[L::Sample],
    order: ClientOrder,
) -> Result<GlobalState> {
    if shards.len() != cfg.clients_total {
        return Err(Error::config(format!(
            "{} shards for {} configured clients",
            shards.len(),
            cfg.clients_total
        )));
    }
    let round = state.round + 1;
    let updates = collect_updates(learner, &state.theta, shards, cfg, round, order)?;
    let step = aggregate(&updates, cfg.aggregation, 1.0)?;
    let theta = sgd_step(&state.theta, &step, cfg.outer_lr)?;
    if !theta.is_finite() {
        return Err(Error::Divergence {
            round,
            client: None,
            msg: "non-finite parameters after aggregation".into(),
        });
    }
    let (train_loss, train_acc, test_loss, test_acc) = round_metrics(learner, &theta, shards, test)?;
    let mut history = state.history.clone();
    history.push(RoundReport {
        round,
        clients: updates
            .iter()
            .map(|u| ClientReport {
                client_id: u.client_id,
                support_loss: u.support_loss,
                query_loss: u.query_loss,
            })
            .collect(),
        train_loss,
        train_acc,
        test_loss,
        test_acc,
    });
    Ok(GlobalState {
        round,
        theta,
        history,
    })
}
