//! Ratio, client-count and correlation sweeps around one experiment.

use std::sync::Arc;

use anyhow::{Context, Result};
use chfl_core::data::select_split_by_correlation;
use chfl_core::federation::Method;
use chfl_core::rng::{stream, tag};
use serde::{Deserialize, Serialize};

use crate::datasets::{
    feature_count, feature_splits, load_file_dataset, ratio_is_feasible, SplitData,
};
use crate::experiment::{run_on_splits, ExperimentResult};
use crate::spec::ExperimentSpec;
use crate::summary::summarize;

/// Default number of random plans scored by [`corr_split`].
pub const DEFAULT_CANDIDATES: usize = 500;

/// A sweep point that could not run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepWarning {
    pub dataset: String,
    pub common_ratio: f64,
    pub clients: usize,
    pub message: String,
}

/// One line of the plot-ready sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dataset: String,
    pub common_ratio: f64,
    pub clients: usize,
    pub method: Method,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub result: ExperimentResult,
    pub warnings: Vec<SweepWarning>,
}

impl SweepResult {
    fn absorb(&mut self, part: ExperimentResult) {
        self.result.records.extend(part.records);
        self.result.rounds.extend(part.rounds);
        self.result.checkpoints.extend(part.checkpoints);
    }

    fn finish(mut self) -> Self {
        self.result.summaries = summarize(&self.result.records);
        self
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        self.result
            .summaries
            .iter()
            .map(|s| SweepPoint {
                dataset: s.dataset.clone(),
                common_ratio: s.common_ratio,
                clients: s.clients,
                method: s.method,
                mean: s.mean,
                std: s.std,
            })
            .collect()
    }
}

/// Full protocol at every common ratio. Ratios that leave some client
/// without a unique feature are skipped with a warning.
pub fn sweep_ratio(spec: &ExperimentSpec, ratios: &[f64]) -> Result<SweepResult> {
    spec.validate()?;
    let file = load_file_dataset(spec)?;
    let d = feature_count(spec, file.as_ref());
    let mut out = SweepResult::default();
    for &ratio in ratios {
        let clients = spec.federation.client_count;
        if !(ratio > 0.0 && ratio < 1.0) || !ratio_is_feasible(d, ratio, clients) {
            out.warnings.push(SweepWarning {
                dataset: spec.name.clone(),
                common_ratio: ratio,
                clients,
                message: format!("ratio {ratio} leaves no unique feature for some of {clients} clients over {d} features"),
            });
            continue;
        }
        let point = ExperimentSpec {
            common_ratio: ratio,
            ..spec.clone()
        };
        let splits = feature_splits(&point, file.as_ref())?;
        out.absorb(
            run_on_splits(&point, &splits, None)
                .with_context(|| format!("at common ratio {ratio}"))?,
        );
    }
    Ok(out.finish())
}

/// Full protocol at every client count, common ratio held at the spec's.
pub fn sweep_clients(spec: &ExperimentSpec, counts: &[usize]) -> Result<SweepResult> {
    spec.validate()?;
    let file = load_file_dataset(spec)?;
    let d = feature_count(spec, file.as_ref());
    let mut out = SweepResult::default();
    for &k in counts {
        if k == 0 || !ratio_is_feasible(d, spec.common_ratio, k) {
            out.warnings.push(SweepWarning {
                dataset: spec.name.clone(),
                common_ratio: spec.common_ratio,
                clients: k,
                message: format!("{k} clients cannot each get a unique feature out of {d}"),
            });
            continue;
        }
        let mut point = spec.clone();
        point.federation.client_count = k;
        let splits = feature_splits(&point, file.as_ref())?;
        out.absorb(
            run_on_splits(&point, &splits, None).with_context(|| format!("with {k} clients"))?,
        );
    }
    Ok(out.finish())
}

/// Plans with the largest, median and smallest correlation score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationChoice {
    pub label: String,
    pub score: f64,
    pub candidate: usize,
}

/// Runs the protocol on the max-, median- and min-correlation feature
/// splits of `n_candidates` random plans. Records carry the dataset name
/// suffixed with `/max`, `/median` or `/min`. Generated datasets use the
/// draw of the first split.
pub fn corr_split(
    spec: &ExperimentSpec,
    n_candidates: usize,
) -> Result<(SweepResult, Vec<CorrelationChoice>)> {
    spec.validate()?;
    let file = load_file_dataset(spec)?;
    let raw = match &file {
        Some(raw) => Arc::new(raw.clone()),
        None => {
            feature_splits(
                &ExperimentSpec {
                    n_feature_splits: 1,
                    ..spec.clone()
                },
                None,
            )?
            .remove(0)
            .raw
        }
    };
    let picks = select_split_by_correlation(
        raw.features.view(),
        spec.federation.client_count,
        spec.common_ratio,
        n_candidates,
        &mut stream(spec.seed, tag::CANDIDATES, 0),
    )?;
    let mut out = SweepResult::default();
    let mut choices = Vec::new();
    for (label, scored) in [
        ("max", picks.max),
        ("median", picks.median),
        ("min", picks.min),
    ] {
        let point = ExperimentSpec {
            name: format!("{}/{label}", spec.name),
            n_feature_splits: 1,
            ..spec.clone()
        };
        let mut plan = scored.plan;
        plan.seed = Some(spec.seed);
        let split = SplitData {
            split_id: 0,
            raw: raw.clone(),
            plan,
        };
        out.absorb(
            run_on_splits(&point, &[split], None)
                .with_context(|| format!("on the {label}-correlation split"))?,
        );
        choices.push(CorrelationChoice {
            label: label.into(),
            score: scored.score,
            candidate: scored.candidate,
        });
    }
    Ok((out.finish(), choices))
}
