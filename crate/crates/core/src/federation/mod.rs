//! Training protocols over `K` simulated clients: FedAvg on the common
//! features, CHFL (FedAvg plus per-client unique columns), and the Local and
//! Concat baselines.
//!
//! Every round broadcasts the global common column, runs `E` local epochs on
//! each client, and averages the returned common columns. Clients may run in
//! parallel; results are gathered in client order so both modes are
//! bit-identical.

mod aggregate;
mod engine;
mod local;
mod metrics;

pub use aggregate::{aggregate, compensated_mean};
pub use engine::{
    client_local_chfl, client_local_fedavg, run_chfl, run_chfl_grid, run_concat_baseline,
    run_fedavg, run_federation, FederationOutcome, HeadModel, HeadSpec,
};
pub use local::run_local_baseline;
pub use metrics::{select_mu_per_client, RoundMetrics, RunMetrics, TunedChfl};

use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Partition, PartitionData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which model a run trains and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// FedAvg over common features only.
    Common,
    /// Per-client MLP on all of the client's features, no federation.
    Local,
    /// CHFL with the lateral connections switched off.
    ChflMu0,
    /// CHFL with `μ > 0`.
    Chfl,
    /// FedAvg common net whose logits feed a per-client net with the
    /// unique features.
    Concat,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Common,
        Method::Local,
        Method::ChflMu0,
        Method::Chfl,
        Method::Concat,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Common => "common",
            Method::Local => "local",
            Method::ChflMu0 => "chfl_mu0",
            Method::Chfl => "chfl",
            Method::Concat => "concat",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub client_count: usize,
    /// Upper bound on communication rounds; `0` evaluates the initial model.
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mu: f64,
    /// Hidden widths shared by every column; the output width is the class
    /// count.
    pub hidden_widths: Vec<usize>,
    pub class_count: usize,
    pub param_seed: u64,
    pub batch_seed: u64,
    /// Stop after this many rounds without a new best mean validation
    /// accuracy. `None` always runs all rounds.
    pub early_stop_patience: Option<usize>,
    /// Run the unique step of a batch against the common column after its
    /// own update on that batch (`true`) or before it.
    pub unique_step_uses_updated_common: bool,
    pub eval_every_round: bool,
    pub parallel: bool,
    pub method: Method,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            client_count: 5,
            rounds: 100,
            local_epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            mu: 0.5,
            hidden_widths: vec![512, 256, 128],
            class_count: 2,
            param_seed: 0,
            batch_seed: 1,
            early_stop_patience: Some(10),
            unique_step_uses_updated_common: true,
            eval_every_round: false,
            parallel: false,
            method: Method::Chfl,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.client_count == 0 {
            return fail("client_count must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return fail(format!("mu must lie in [0, 1], got {}", self.mu));
        }
        if self.hidden_widths.contains(&0) {
            return fail(format!(
                "hidden widths must be positive: {:?}",
                self.hidden_widths
            ));
        }
        if self.class_count < 2 {
            return fail(format!(
                "class_count must be at least 2, got {}",
                self.class_count
            ));
        }
        if self.early_stop_patience == Some(0) {
            return fail("early_stop_patience must be positive when set".into());
        }
        Ok(())
    }

    /// `[input, hidden..., classes]`
    pub fn dims(&self, input: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(input);
        dims.extend(&self.hidden_widths);
        dims.push(self.class_count);
        dims
    }

    fn tracks_validation(&self) -> bool {
        self.eval_every_round || self.early_stop_patience.is_some()
    }
}

/// A client's partitions, materialized once per run.
#[derive(Clone, Debug)]
pub(crate) struct PreparedClient<T> {
    pub train: PartitionData<T>,
    pub val: PartitionData<T>,
    pub test: PartitionData<T>,
}

pub(crate) fn prepare_clients<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
) -> Result<Vec<PreparedClient<T>>> {
    cfg.validate()?;
    if clients.len() != cfg.client_count {
        return Err(Error::Config(format!(
            "config expects {} clients, got {}",
            cfg.client_count,
            clients.len()
        )));
    }
    let width = clients[0].common_width();
    for (k, c) in clients.iter().enumerate() {
        c.validate()?;
        if c.common_width() != width {
            return Err(Error::Config(format!(
                "client {k} has {} common features, client 0 has {width}",
                c.common_width()
            )));
        }
        if let Some(&bad) = c.labels.iter().find(|&&y| y >= cfg.class_count) {
            return Err(Error::InvalidLabel(format!(
                "client {k}: label {bad} with {} classes",
                cfg.class_count
            )));
        }
    }
    clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let prepared = PreparedClient {
                train: c.part(Partition::Train),
                val: c.part(Partition::Val),
                test: c.part(Partition::Test),
            };
            if prepared.train.is_empty() {
                return Err(Error::Config(format!("client {k} has no training rows")));
            }
            Ok(prepared)
        })
        .collect()
}

/// Maps `f` over clients, on the rayon pool when `parallel`; output order is
/// client order either way.
pub(crate) fn map_clients<S, R, F>(parallel: bool, states: &mut [S], f: F) -> Vec<R>
where
    S: Send,
    R: Send,
    F: Fn(usize, &mut S) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        states
            .par_iter_mut()
            .enumerate()
            .map(|(k, s)| f(k, s))
            .collect()
    } else {
        states
            .iter_mut()
            .enumerate()
            .map(|(k, s)| f(k, s))
            .collect()
    }
}

/// Tracks the best value of a score and how long ago it was set.
#[derive(Clone, Debug)]
pub(crate) struct Plateau {
    patience: Option<usize>,
    best: f64,
    since_best: usize,
}

impl Plateau {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    /// Records a score; returns `true` once training should stop.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.patience.is_some_and(|p| self.since_best >= p)
    }
}
