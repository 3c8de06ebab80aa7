//! Paired multi-method runs over feature splits and repeats.

use anyhow::{Context, Result};
use chfl_core::columns::{write_checkpoint, ChflClientModel};
use chfl_core::data::{build_clients, ClientDataset, DEFAULT_FRACTIONS};
use chfl_core::federation::{
    run_federation, run_local_baseline, select_mu_per_client, FederationConfig, FederationOutcome,
    HeadModel, HeadSpec, Method, RoundMetrics, RunMetrics,
};
use chfl_core::rng::{derive_seed, tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{feature_splits, load_file_dataset, SplitData};
use crate::spec::{ExperimentSpec, MuMode};
use crate::summary::{summarize, MethodSummary};

/// Final accuracies of one method on one (split, repeat).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub method: Method,
    pub split_id: usize,
    pub repeat: usize,
    /// Root seed of this (split, repeat): client partitioning, parameter
    /// init and batch order all derive from it.
    pub seed: u64,
    pub common_ratio: f64,
    pub clients: usize,
    pub mu: Option<f64>,
    pub per_client_mu: Option<Vec<f64>>,
    pub rounds_run: usize,
    pub per_client_val_acc: Vec<f64>,
    pub per_client_test_acc: Vec<f64>,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
}

/// Per-round progress line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub dataset: String,
    pub method: Method,
    pub mu: Option<f64>,
    pub split_id: usize,
    pub seed: u64,
    pub round: usize,
    pub per_client_val_acc: Vec<f64>,
    pub per_client_test_acc: Vec<f64>,
    pub mean_test_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub rounds: Vec<RoundRecord>,
    pub summaries: Vec<MethodSummary>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
}

/// Final model of one client under one CHFL method, in checkpoint text form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dataset: String,
    pub method: Method,
    pub common_ratio: f64,
    pub clients: usize,
    pub split_id: usize,
    pub repeat: usize,
    pub client: usize,
    pub mu: f64,
    pub text: String,
}

impl Checkpoint {
    pub fn file_name(&self) -> String {
        format!(
            "{}-{}-r{}-k{}-split{}-rep{}-client{}.ckpt",
            self.dataset.replace(['/', ' '], "_"),
            self.method,
            self.common_ratio,
            self.clients,
            self.split_id,
            self.repeat,
            self.client
        )
    }
}

/// Output of one (split, repeat) job.
#[derive(Clone, Debug, Default)]
pub struct JobOutput {
    pub records: Vec<MetricsRecord>,
    pub rounds: Vec<RoundRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Identity of one (split, repeat) job.
#[derive(Clone, Copy, Debug)]
pub struct JobId {
    pub split_id: usize,
    pub repeat: usize,
    pub seed: u64,
}

pub fn job_seed(root: u64, split_id: usize, repeat: usize) -> u64 {
    derive_seed(
        derive_seed(root, tag::REPEAT, split_id as u64),
        tag::REPEAT,
        repeat as u64,
    )
}

/// Federation settings of one job: the experiment's config with seeds
/// derived from the job seed.
pub fn job_config(spec: &ExperimentSpec, job: JobId) -> FederationConfig {
    FederationConfig {
        param_seed: derive_seed(job.seed, tag::COMMON_INIT, spec.federation.param_seed),
        batch_seed: derive_seed(job.seed, tag::BATCH, spec.federation.batch_seed),
        ..spec.federation.clone()
    }
}

pub fn job_clients(split: &SplitData, job: JobId) -> Result<Vec<ClientDataset<f64>>> {
    Ok(build_clients(
        &split.raw,
        &split.plan,
        job.seed,
        DEFAULT_FRACTIONS,
    )?)
}

type RoundSink<'a> = Option<&'a (dyn Fn(&RoundRecord) + Sync)>;

fn to_record(spec: &ExperimentSpec, job: JobId, m: &RunMetrics) -> MetricsRecord {
    MetricsRecord {
        dataset: spec.name.clone(),
        method: m.method,
        split_id: job.split_id,
        repeat: job.repeat,
        seed: job.seed,
        common_ratio: spec.common_ratio,
        clients: spec.federation.client_count,
        mu: m.mu,
        per_client_mu: m.per_client_mu.clone(),
        rounds_run: m.rounds_run,
        per_client_val_acc: m.per_client_val_acc.clone(),
        per_client_test_acc: m.per_client_test_acc.clone(),
        mean_val_acc: m.mean_val_acc,
        mean_test_acc: m.mean_test_acc,
    }
}

fn to_round(spec: &ExperimentSpec, job: JobId, m: &RoundMetrics) -> RoundRecord {
    RoundRecord {
        dataset: spec.name.clone(),
        method: m.method,
        mu: m.mu,
        split_id: job.split_id,
        seed: job.seed,
        round: m.round,
        per_client_val_acc: m.per_client_val_acc.clone(),
        per_client_test_acc: m.per_client_test_acc.clone(),
        mean_test_acc: m.mean_test_acc,
    }
}

/// Best single `μ` by mean validation accuracy; ties to the smaller one.
fn select_global_mu(runs: &[RunMetrics]) -> Option<RunMetrics> {
    let mut sorted: Vec<&RunMetrics> = runs.iter().collect();
    sorted.sort_by(|a, b| a.mu.unwrap_or(0.0).total_cmp(&b.mu.unwrap_or(0.0)));
    let mut best: Option<&RunMetrics> = None;
    for r in sorted {
        if best.is_none_or(|b| r.mean_val_acc > b.mean_val_acc) {
            best = Some(r);
        }
    }
    best.cloned()
}

/// Runs every requested method on one (split, repeat). All methods see
/// the same clients; the federated ones share one common-column
/// trajectory.
pub fn run_job(
    spec: &ExperimentSpec,
    split: &SplitData,
    job: JobId,
    on_round: RoundSink<'_>,
) -> Result<JobOutput> {
    let cfg = job_config(spec, job);
    let clients = job_clients(split, job).with_context(|| {
        format!(
            "building clients for split {} seed {}",
            job.split_id, job.seed
        )
    })?;
    let wants = |m: Method| spec.methods.contains(&m);
    let positive = spec.positive_mus();

    let mut heads = Vec::new();
    if wants(Method::ChflMu0) {
        heads.push(HeadSpec::Chfl { mu: 0.0 });
    }
    let chfl_from = heads.len();
    if wants(Method::Chfl) {
        heads.extend(positive.iter().map(|&mu| HeadSpec::Chfl { mu }));
    }
    let concat_at = heads.len();
    if wants(Method::Concat) {
        heads.push(HeadSpec::Concat);
    }

    let mut rounds = Vec::new();
    let mut observe = |m: &RoundMetrics| {
        let r = to_round(spec, job, m);
        if let Some(sink) = on_round {
            sink(&r);
        }
        rounds.push(r);
    };
    let mut results: Vec<RunMetrics> = Vec::new();
    let mut checkpoints = Vec::new();
    let federated = wants(Method::Common) || !heads.is_empty();
    if federated {
        let out =
            run_federation(&cfg, &clients, &heads, Some(&mut observe)).with_context(|| {
                format!(
                    "federated run failed at split {} seed {} (methods {:?})",
                    job.split_id, job.seed, spec.methods
                )
            })?;
        if wants(Method::Common) {
            results.push(out.common_metrics.clone());
        }
        if wants(Method::ChflMu0) {
            results.push(out.head_metrics[0].clone());
            if spec.save_checkpoints {
                let k = clients.len();
                checkpoints.extend(checkpoints_of(
                    spec,
                    job,
                    &out,
                    Method::ChflMu0,
                    &vec![0; k],
                )?);
            }
        }
        if wants(Method::Chfl) {
            let candidates = &out.head_metrics[chfl_from..concat_at];
            let chosen = match spec.mu_mode {
                MuMode::PerClient => select_mu_per_client(candidates)?.metrics,
                MuMode::Global => select_global_mu(candidates).expect("grid validated nonempty"),
            };
            if spec.save_checkpoints {
                let mus = chosen.per_client_mu.clone().unwrap_or_else(|| {
                    vec![chosen.mu.expect("chfl run records its mu"); clients.len()]
                });
                let heads: Vec<usize> = mus
                    .iter()
                    .map(|mu| {
                        chfl_from
                            + positive
                                .iter()
                                .position(|p| p == mu)
                                .expect("mu from the grid")
                    })
                    .collect();
                checkpoints.extend(checkpoints_of(spec, job, &out, Method::Chfl, &heads)?);
            }
            results.push(chosen);
        }
        if wants(Method::Concat) {
            results.push(out.head_metrics[concat_at].clone());
        }
    }
    if wants(Method::Local) {
        let local = run_local_baseline(&cfg, &clients, Some(&mut observe)).with_context(|| {
            format!(
                "local run failed at split {} seed {}",
                job.split_id, job.seed
            )
        })?;
        results.push(local);
    }
    results.sort_by_key(|m| Method::ALL.iter().position(|x| *x == m.method));
    Ok(JobOutput {
        records: results.iter().map(|m| to_record(spec, job, m)).collect(),
        rounds,
        checkpoints,
    })
}

/// Serializes head `heads[k]` of client `k`; clients without unique
/// features have no two-column model and are skipped.
fn checkpoints_of(
    spec: &ExperimentSpec,
    job: JobId,
    out: &FederationOutcome<f64>,
    method: Method,
    heads: &[usize],
) -> Result<Vec<Checkpoint>> {
    let mut saved = Vec::new();
    for (client, &h) in heads.iter().enumerate() {
        let HeadModel::Lateral { unique, lateral } = &out.heads[h][client] else {
            continue;
        };
        let mu = lateral.mu();
        let model =
            ChflClientModel::new(out.global_common.clone(), unique.clone(), lateral.clone())?;
        let mut text = Vec::new();
        write_checkpoint(&model, &mut text)?;
        saved.push(Checkpoint {
            dataset: spec.name.clone(),
            method,
            common_ratio: spec.common_ratio,
            clients: spec.federation.client_count,
            split_id: job.split_id,
            repeat: job.repeat,
            client,
            mu,
            text: String::from_utf8(text).context("checkpoint text")?,
        });
    }
    Ok(saved)
}

/// Every (split, repeat) job of `spec` on prepared splits, in
/// deterministic order regardless of `parallel_jobs`.
pub fn run_on_splits(
    spec: &ExperimentSpec,
    splits: &[SplitData],
    on_round: RoundSink<'_>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let jobs: Vec<(usize, JobId)> = splits
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            (0..spec.n_repeats).map(move |r| {
                (
                    i,
                    JobId {
                        split_id: s.split_id,
                        repeat: r,
                        seed: job_seed(spec.seed, s.split_id, r),
                    },
                )
            })
        })
        .collect();
    let run = |&(i, job): &(usize, JobId)| run_job(spec, &splits[i], job, on_round);
    let outputs: Vec<JobOutput> = if spec.parallel_jobs {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let mut result = ExperimentResult::default();
    for out in outputs {
        result.records.extend(out.records);
        result.rounds.extend(out.rounds);
        result.checkpoints.extend(out.checkpoints);
    }
    result.summaries = summarize(&result.records);
    Ok(result)
}

/// Full protocol: `n_feature_splits` × `n_repeats` paired runs of every
/// requested method, with mean and spread per method.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment_with(spec, None)
}

pub fn run_experiment_with(
    spec: &ExperimentSpec,
    on_round: RoundSink<'_>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let file = load_file_dataset(spec)?;
    let splits = feature_splits(spec, file.as_ref())?;
    run_on_splits(spec, &splits, on_round)
}

/// `μ` picked on one (split, repeat).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuChoice {
    pub split_id: usize,
    pub repeat: usize,
    pub seed: u64,
    pub per_client_mu: Vec<f64>,
    pub global_mu: f64,
    /// Mean validation accuracy of every candidate, in candidate order.
    pub candidate_val_acc: Vec<f64>,
}

/// Trains CHFL at every candidate `μ` on every (split, repeat) and reports
/// the per-client and global choices by validation accuracy.
pub fn tune_mu(spec: &ExperimentSpec, candidate_mus: &[f64]) -> Result<Vec<MuChoice>> {
    anyhow::ensure!(!candidate_mus.is_empty(), "no candidate mu values");
    spec.validate()?;
    let file = load_file_dataset(spec)?;
    let splits = feature_splits(spec, file.as_ref())?;
    let heads: Vec<HeadSpec> = candidate_mus
        .iter()
        .map(|&mu| HeadSpec::Chfl { mu })
        .collect();
    let mut out = Vec::new();
    for split in &splits {
        for r in 0..spec.n_repeats {
            let job = JobId {
                split_id: split.split_id,
                repeat: r,
                seed: job_seed(spec.seed, split.split_id, r),
            };
            let cfg = job_config(spec, job);
            let clients = job_clients(split, job)?;
            let fed = run_federation(&cfg, &clients, &heads, None)?;
            let per_client = select_mu_per_client(&fed.head_metrics)?;
            let global = select_global_mu(&fed.head_metrics).expect("nonempty grid");
            out.push(MuChoice {
                split_id: split.split_id,
                repeat: r,
                seed: job.seed,
                per_client_mu: per_client.mus,
                global_mu: global.mu.unwrap_or(0.0),
                candidate_val_acc: fed.head_metrics.iter().map(|m| m.mean_val_acc).collect(),
            });
        }
    }
    Ok(out)
}
