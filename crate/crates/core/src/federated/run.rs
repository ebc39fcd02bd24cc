//! End-to-end federated meta-learning runs.

use crate::data::{apply_scenario, make_shards, partition_clients, train_test_split, AlignedDataset, ClientShard, Labeled};
use crate::error::Result;
use crate::federated::{round_metrics, server_round, GlobalState, Learner, MetaConfig, RoundReport};
use crate::model::{ArchSpec, MultimodalNet};

/// Client shards plus the held-out test set of one run.
#[derive(Clone, Debug)]
pub struct Federation<S> {
    pub shards: Vec<ClientShard<S>>,
    pub test: Vec<S>,
}

/// Stratified train/test split, IID client partition, per-client
/// support/query split and scenario masks, all keyed by `cfg.seed`.
pub fn build_federation<S: Clone + Labeled>(samples: &[S], cfg: &MetaConfig) -> Result<Federation<S>> {
    cfg.validate()?;
    let (train, test) = train_test_split(samples, cfg.test_fraction, cfg.seed)?;
    let parts = partition_clients(&train, cfg.clients_total, cfg.seed)?;
    let shards = apply_scenario(make_shards(parts, cfg.support_fraction, cfg.seed)?, cfg.scenario);
    Ok(Federation { shards, test })
}

/// Freshly initialized parameters with the round-0 evaluation.
pub fn initial_state<L: Learner>(learner: &L, fed: &Federation<L::Sample>, cfg: &MetaConfig) -> Result<GlobalState> {
    let theta = learner.init_params(cfg.seed);
    let (train_loss, train_acc, test_loss, test_acc) = round_metrics(learner, &theta, &fed.shards, &fed.test)?;
    Ok(GlobalState {
        round: 0,
        theta,
        history: vec![RoundReport {
            round: 0,
            clients: Vec::new(),
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        }],
    })
}

/// Runs rounds until `cfg.rounds` are complete, calling `on_round` after each.
pub fn continue_3mf<L, F>(
    learner: &L,
    fed: &Federation<L::Sample>,
    cfg: &MetaConfig,
    mut state: GlobalState,
    mut on_round: F,
) -> Result<GlobalState>
where
    L: Learner,
    F: FnMut(&GlobalState) -> Result<()>,
{
    while state.round < cfg.rounds {
        state = server_round(learner, &state, &fed.shards, cfg, &fed.test)?;
        log::debug!(
            "round {}: test acc {:.4} loss {:.4}",
            state.round,
            state.history.last().map_or(f64::NAN, |r| r.test_acc),
            state.history.last().map_or(f64::NAN, |r| r.test_loss)
        );
        on_round(&state)?;
    }
    Ok(state)
}

pub fn run_3mf_with<L: Learner>(learner: &L, samples: &[L::Sample], cfg: &MetaConfig) -> Result<GlobalState> {
    let fed = build_federation(samples, cfg)?;
    let state = initial_state(learner, &fed, cfg)?;
    continue_3mf(learner, &fed, cfg, state, |_| Ok(()))
}

/// Federated meta-learning on the three-branch network. The returned state
/// carries the per-round history, starting with round 0.
pub fn run_3mf(dataset: &AlignedDataset, arch: &ArchSpec, cfg: &MetaConfig) -> Result<GlobalState> {
    let net = MultimodalNet::new(arch.clone())?;
    run_3mf_with(&net, &dataset.samples, cfg)
}
