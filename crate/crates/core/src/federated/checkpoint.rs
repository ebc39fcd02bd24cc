//! Round-boundary checkpoints: `theta.mmtf`, `checkpoint.txt` (config and
//! round) and `history.csv`.

use std::fs;
use std::path::Path;

use crate::data::{read_tensor_file, write_tensor_file, Manifest};
use crate::error::{Error, Result};
use crate::federated::{GlobalState, MetaConfig, RoundReport};
use crate::tensor_core::ParamSet;

pub const THETA_FILE: &str = "theta.mmtf";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";

pub const HISTORY_HEADER: &str = "round,train_loss,train_acc,test_loss,test_acc";

/// Per-round curves as CSV; values use the shortest exact decimal form.
pub fn history_to_csv(history: &[RoundReport]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.round, r.train_loss, r.train_acc, r.test_loss, r.test_acc
        ));
    }
    s
}

pub fn history_from_csv(text: &str) -> Result<Vec<RoundReport>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
        return Err(Error::data(format!("history must start with `{HISTORY_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::data(format!("history line {}: `{l}`", i + 2));
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let f = |c: &str| c.trim().parse::<f64>().map_err(|_| bad());
            Ok(RoundReport {
                round: cols[0].trim().parse().map_err(|_| bad())?,
                clients: Vec::new(),
                train_loss: f(cols[1])?,
                train_acc: f(cols[2])?,
                test_loss: f(cols[3])?,
                test_acc: f(cols[4])?,
            })
        })
        .collect()
}

pub fn save_checkpoint(dir: impl AsRef<Path>, state: &GlobalState, cfg: &MetaConfig, arch: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_tensor_file(dir.join(THETA_FILE), &state.theta.clone().into_entries())?;
    let mut m = cfg.to_manifest();
    m.set("round", state.round);
    m.set("arch", arch);
    fs::write(dir.join(CHECKPOINT_FILE), m.to_text())?;
    fs::write(dir.join(HISTORY_FILE), history_to_csv(&state.history))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: GlobalState,
    pub config: MetaConfig,
    pub arch: String,
    pub manifest: Manifest,
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest = Manifest::parse(&fs::read_to_string(dir.join(CHECKPOINT_FILE))?)?;
    let config = MetaConfig::from_manifest(&manifest)?;
    let round = manifest
        .get("round")
        .and_then(|r| r.parse().ok())
        .ok_or_else(|| Error::config("checkpoint has no valid `round`"))?;
    let theta = ParamSet::new(read_tensor_file(dir.join(THETA_FILE))?)?;
    let history = history_from_csv(&fs::read_to_string(dir.join(HISTORY_FILE))?)?;
    if history.last().map(|r| r.round) != Some(round) {
        return Err(Error::data("checkpoint history does not end at the saved round"));
    }
    Ok(Checkpoint {
        state: GlobalState { round, theta, history },
        config,
        arch: manifest.get("arch").unwrap_or("standard").to_string(),
        manifest,
    })
}
