//! Mean and spread per method, and the consistency self-check.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use chfl_core::federation::Method;
use serde::{Deserialize, Serialize};

use crate::experiment::MetricsRecord;

/// Largest tolerated gap between stored and recomputed statistics.
pub const SELF_CHECK_TOLERANCE: f64 = 1e-12;

/// Statistics of one method over every (split, repeat) of one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub dataset: String,
    pub method: Method,
    pub common_ratio: f64,
    pub clients: usize,
    pub runs: usize,
    /// Mean of the per-run mean test accuracies.
    pub mean: f64,
    /// Sample standard deviation over all runs.
    pub std: f64,
    /// Mean test accuracy of each feature split, by split id.
    pub split_means: Vec<f64>,
    /// Sample standard deviation of `split_means`.
    pub split_std: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Key that orders summaries by dataset, ratio, client count, then method.
fn group_key(r: &MetricsRecord) -> (String, u64, usize, usize) {
    let method_pos = Method::ALL
        .iter()
        .position(|m| *m == r.method)
        .unwrap_or(usize::MAX);
    (
        r.dataset.clone(),
        r.common_ratio.to_bits(),
        r.clients,
        method_pos,
    )
}

fn summarize_group(records: &[&MetricsRecord]) -> MethodSummary {
    let first = records[0];
    let values: Vec<f64> = records.iter().map(|r| r.mean_test_acc).collect();
    let mut by_split: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_split
            .entry(r.split_id)
            .or_default()
            .push(r.mean_test_acc);
    }
    let split_means: Vec<f64> = by_split.values().map(|v| mean(v)).collect();
    MethodSummary {
        dataset: first.dataset.clone(),
        method: first.method,
        common_ratio: first.common_ratio,
        clients: first.clients,
        runs: records.len(),
        mean: mean(&values),
        std: sample_std(&values),
        split_std: sample_std(&split_means),
        split_means,
    }
}

/// One summary per (dataset, ratio, clients, method), in that order.
pub fn summarize(records: &[MetricsRecord]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(String, u64, usize, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(group_key(r)).or_default().push(r);
    }
    groups.values().map(|g| summarize_group(g)).collect()
}

/// Recomputes every statistic from the raw per-client accuracies and
/// compares with what is stored.
pub fn self_check(records: &[MetricsRecord], summaries: &[MethodSummary]) -> Result<()> {
    for r in records {
        let again = mean(&r.per_client_test_acc);
        ensure!(
            (again - r.mean_test_acc).abs() <= SELF_CHECK_TOLERANCE,
            "{} {} split {} seed {}: stored test mean {} but per-client entries give {}",
            r.dataset,
            r.method,
            r.split_id,
            r.seed,
            r.mean_test_acc,
            again
        );
        let again = mean(&r.per_client_val_acc);
        ensure!(
            (again - r.mean_val_acc).abs() <= SELF_CHECK_TOLERANCE,
            "{} {} split {} seed {}: stored validation mean {} but per-client entries give {}",
            r.dataset,
            r.method,
            r.split_id,
            r.seed,
            r.mean_val_acc,
            again
        );
    }
    let fresh = summarize(records);
    ensure!(
        fresh.len() == summaries.len(),
        "{} summaries stored, records give {}",
        summaries.len(),
        fresh.len()
    );
    for (s, f) in summaries.iter().zip(&fresh) {
        ensure!(
            s.dataset == f.dataset && s.method == f.method && s.runs == f.runs,
            "summary for {} {} does not match its records",
            s.dataset,
            s.method
        );
        let pairs = [
            ("mean", s.mean, f.mean),
            ("std", s.std, f.std),
            ("split std", s.split_std, f.split_std),
        ];
        for (what, stored, again) in pairs {
            ensure!(
                (stored - again).abs() <= SELF_CHECK_TOLERANCE,
                "{} {}: stored {what} {stored} but records give {again}",
                s.dataset,
                s.method
            );
        }
    }
    Ok(())
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    pearson(&ranks(x), &ranks(y))
}
