//! Federated meta-learning over multimodal clients, the missing-modality
//! baseline, and evaluation.
//!
//! Each round the server samples clients and sends them theta. A client runs
//! `local_epochs` passes of SGD on its support set with its scenario mask
//! (rate `inner_lr`), then returns the gradient of its full-modality query
//! loss taken at the adapted parameters. The server subtracts `outer_lr`
//! times the sum (or mean) of those gradients.

mod baseline;
mod checkpoint;
mod config;
mod eval;
mod learner;
mod local;
mod run;
mod server;

pub use baseline::{train_baseline, train_baseline_with, BaselineOutcome};
pub use checkpoint::{
    history_from_csv, history_to_csv, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FILE,
    HISTORY_FILE, HISTORY_HEADER, THETA_FILE,
};
pub use config::{Aggregation, BaselineConfig, MetaConfig};
pub use eval::{evaluate, EvalResult};
pub use learner::{argmax, Learner, StepOutput};
pub use local::{adapt_epoch, inner_batches, local_training, query_gradient, LocalSettings, LocalUpdate, QUERY_CHUNK};
pub use run::{build_federation, continue_3mf, initial_state, run_3mf, run_3mf_with, Federation};
pub use server::{
    aggregate, collect_updates, round_metrics, sample_clients, server_round, server_round_ordered,
    ClientOrder, ClientReport, GlobalState, RoundReport,
};
