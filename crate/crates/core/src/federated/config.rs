use std::fmt;
use std::str::FromStr;

use crate::data::{Manifest, ScenarioId};
use crate::error::{Error, Result};

/// How the server combines the clients' meta-gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregation {
    /// `theta <- theta - beta * sum_u g_u`
    #[default]
    Sum,
    /// `theta <- theta - beta * (1/m) * sum_u g_u`
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::config(format!("unknown aggregation `{other}` (expected sum or mean)"))),
        }
    }
}

/// Everything that defines one federated meta-learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Client-side adaptation rate (alpha).
    pub inner_lr: f64,
    /// Server-side meta rate (beta).
    pub outer_lr: f64,
    /// Communication rounds T.
    pub rounds: usize,
    /// Passes E of inner SGD over the support set per round.
    pub local_epochs: usize,
    pub clients_total: usize,
    /// Clients sampled per round (m).
    pub clients_per_round: usize,
    pub scenario: ScenarioId,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub batch_size: usize,
    pub support_fraction: f64,
    pub test_fraction: f64,
}

impl MetaConfig {
    /// 3 clients (all sampled), E = 5, T = 50, alpha = 1e-5, beta = 1e-3,
    /// sum aggregation, batch 32, 20/80 support/query, 20% held-out test.
    pub fn new(scenario: ScenarioId, seed: u64) -> Self {
        Self {
            inner_lr: 1e-5,
            outer_lr: 1e-3,
            rounds: 50,
            local_epochs: 5,
            clients_total: 3,
            clients_per_round: 3,
            scenario,
            aggregation: Aggregation::Sum,
            seed,
            batch_size: 32,
            support_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be a positive finite number, got {v}")))
            }
        };
        positive(self.inner_lr, "inner_lr")?;
        positive(self.outer_lr, "outer_lr")?;
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.clients_total == 0 {
            return Err(Error::config("clients_total must be at least 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients_total {
            return Err(Error::config(format!(
                "clients_per_round must lie in 1..={}, got {}",
                self.clients_total, self.clients_per_round
            )));
        }
        for (v, what) in [(self.support_fraction, "support_fraction"), (self.test_fraction, "test_fraction")] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{what} must lie in (0, 1), got {v}")));
            }
        }
        if self.inner_lr >= self.outer_lr {
            log::warn!(
                "inner_lr {} is not below outer_lr {}; the usual setting keeps the inner rate smaller",
                self.inner_lr,
                self.outer_lr
            );
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("inner_lr", format!("{:?}", self.inner_lr));
        m.set("outer_lr", format!("{:?}", self.outer_lr));
        m.set("rounds", self.rounds);
        m.set("local_epochs", self.local_epochs);
        m.set("clients_total", self.clients_total);
        m.set("clients_per_round", self.clients_per_round);
        m.set("scenario", self.scenario);
        m.set("aggregation", self.aggregation);
        m.set("seed", self.seed);
        m.set("batch_size", self.batch_size);
        m.set("support_fraction", format!("{:?}", self.support_fraction));
        m.set("test_fraction", format!("{:?}", self.test_fraction));
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        fn field<T: FromStr>(m: &Manifest, key: &str) -> Result<T> {
            let raw = m
                .get(key)
                .ok_or_else(|| Error::config(format!("missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::config(format!("bad value `{raw}` for `{key}`")))
        }
        let cfg = Self {
            inner_lr: field(m, "inner_lr")?,
            outer_lr: field(m, "outer_lr")?,
            rounds: field(m, "rounds")?,
            local_epochs: field(m, "local_epochs")?,
            clients_total: field(m, "clients_total")?,
            clients_per_round: field(m, "clients_per_round")?,
            scenario: m
                .get("scenario")
                .ok_or_else(|| Error::config("missing `scenario`"))?
                .parse()?,
            aggregation: m
                .get("aggregation")
                .ok_or_else(|| Error::config("missing `aggregation`"))?
                .parse()?,
            seed: field(m, "seed")?,
            batch_size: field(m, "batch_size")?,
            support_fraction: field(m, "support_fraction")?,
            test_fraction: field(m, "test_fraction")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Centralized training with a fixed modality mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    /// May be zero, which leaves the initial parameters untouched.
    pub lr: f64,
    pub batch_size: usize,
    /// Modalities present while training; testing always uses all three.
    pub scenario: ScenarioId,
    pub seed: u64,
    pub test_fraction: f64,
}

impl BaselineConfig {
    pub fn new(scenario: ScenarioId, seed: u64) -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 32,
            scenario,
            seed,
            test_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}
