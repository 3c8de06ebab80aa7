use serde::{Deserialize, Serialize};

use super::Method;
use crate::error::{Error, Result};

/// Per-client accuracies of one method after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub method: Method,
    pub mu: Option<f64>,
    /// 1-based; `0` is the untrained model.
    pub round: usize,
    pub per_client_val_acc: Vec<f64>,
    pub per_client_test_acc: Vec<f64>,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
}

impl RoundMetrics {
    pub(crate) fn new(
        method: Method,
        mu: Option<f64>,
        round: usize,
        val: Vec<f64>,
        test: Vec<f64>,
    ) -> Self {
        Self {
            method,
            mu,
            round,
            mean_val_acc: mean(&val),
            mean_test_acc: mean(&test),
            per_client_val_acc: val,
            per_client_test_acc: test,
        }
    }
}

/// Final accuracies of one method in one run, plus the per-round history
/// when it was tracked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    /// The single `μ` of a CHFL run.
    pub mu: Option<f64>,
    /// Set when each client picked its own `μ`.
    pub per_client_mu: Option<Vec<f64>>,
    pub rounds_run: usize,
    pub per_client_val_acc: Vec<f64>,
    pub per_client_test_acc: Vec<f64>,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
    pub history: Vec<RoundMetrics>,
}

impl RunMetrics {
    pub(crate) fn from_final(last: RoundMetrics, history: Vec<RoundMetrics>) -> Self {
        Self {
            method: last.method,
            mu: last.mu,
            per_client_mu: None,
            rounds_run: last.round,
            per_client_val_acc: last.per_client_val_acc,
            per_client_test_acc: last.per_client_test_acc,
            mean_val_acc: last.mean_val_acc,
            mean_test_acc: last.mean_test_acc,
            history,
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// CHFL with `μ` chosen per client from a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedChfl {
    pub mus: Vec<f64>,
    pub metrics: RunMetrics,
}

/// Picks, for each client, the candidate run with the highest validation
/// accuracy; ties go to the smaller `μ`. Every run must carry a `μ` and the
/// same client count.
pub fn select_mu_per_client(runs: &[RunMetrics]) -> Result<TunedChfl> {
    let mut order: Vec<(f64, &RunMetrics)> = runs
        .iter()
        .map(|r| {
            r.mu.map(|mu| (mu, r))
                .ok_or_else(|| Error::Config(format!("{} run has no mu", r.method)))
        })
        .collect::<Result<_>>()?;
    if order.is_empty() {
        return Err(Error::Config("no candidate runs".into()));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let clients = order[0].1.per_client_val_acc.len();
    if order.iter().any(|(_, r)| {
        r.per_client_val_acc.len() != clients || r.per_client_test_acc.len() != clients
    }) {
        return Err(Error::Config(
            "candidate runs disagree on the client count".into(),
        ));
    }
    let (mut mus, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..clients {
        let mut best = order[0];
        for cand in &order[1..] {
            if cand.1.per_client_val_acc[k] > best.1.per_client_val_acc[k] {
                best = *cand;
            }
        }
        mus.push(best.0);
        val.push(best.1.per_client_val_acc[k]);
        test.push(best.1.per_client_test_acc[k]);
    }
    let rounds_run = order.iter().map(|(_, r)| r.rounds_run).max().unwrap_or(0);
    Ok(TunedChfl {
        metrics: RunMetrics {
            method: Method::Chfl,
            mu: None,
            per_client_mu: Some(mus.clone()),
            rounds_run,
            mean_val_acc: mean(&val),
            mean_test_acc: mean(&test),
            per_client_val_acc: val,
            per_client_test_acc: test,
            history: Vec::new(),
        },
        mus,
    })
}
