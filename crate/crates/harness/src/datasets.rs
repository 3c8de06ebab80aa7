//! Turning a [`DatasetRef`] into per-split raw data and feature plans.

use anyhow::{bail, Context, Result};
use chfl_core::data::{
    gen_synthetic, load_csv_with, make_feature_split, CsvOptions, FeatureSplitPlan, RawDataset,
};
use chfl_core::rng::{stream, tag};

use crate::spec::{DatasetRef, ExperimentSpec};

/// Raw data and the feature partition of one feature split.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub split_id: usize,
    pub raw: std::sync::Arc<RawDataset<f64>>,
    pub plan: FeatureSplitPlan,
}

/// Loads a file-backed dataset (subsampled when `max_rows` is set).
/// Returns `None` for generated datasets.
pub fn load_file_dataset(spec: &ExperimentSpec) -> Result<Option<RawDataset<f64>>> {
    let DatasetRef::Csv {
        path,
        label_column,
        has_header,
        delimiter,
        drop_columns,
        max_rows,
    } = &spec.dataset
    else {
        return Ok(None);
    };
    let resolved = spec.resolve_path(path);
    if !resolved.exists() {
        bail!(
            "dataset file {} not found (looked next to the spec and under $CHFL_DATA_DIR)",
            path.display()
        );
    }
    let options = CsvOptions {
        label_column: label_column.clone(),
        has_header: *has_header,
        delimiter: *delimiter,
        drop_columns: drop_columns.clone(),
        class_count: Some(spec.federation.class_count),
    };
    let raw: RawDataset<f64> = load_csv_with(&resolved, &options)
        .with_context(|| format!("loading {}", resolved.display()))?;
    Ok(Some(match max_rows {
        Some(m) => raw.subsample(*m, &mut stream(spec.seed, tag::SUBSAMPLE, 0)),
        None => raw,
    }))
}

/// Whether `ratio` leaves at least one unique feature per client.
pub fn ratio_is_feasible(features: usize, ratio: f64, clients: usize) -> bool {
    let common = ((ratio * features as f64).round() as usize).max(1);
    features >= common + clients
}

pub fn feature_count(spec: &ExperimentSpec, file: Option<&RawDataset<f64>>) -> usize {
    match (&spec.dataset, file) {
        (DatasetRef::Synthetic { features, .. }, _) => *features,
        (_, Some(raw)) => raw.feature_count(),
        _ => 0,
    }
}

/// The `n_feature_splits` (raw, plan) pairs of an experiment. Generated
/// datasets are redrawn per split around that split's partition; file
/// datasets are shared and only the partition changes.
pub fn feature_splits(
    spec: &ExperimentSpec,
    file: Option<&RawDataset<f64>>,
) -> Result<Vec<SplitData>> {
    let clients = spec.federation.client_count;
    let shared = file.map(|raw| std::sync::Arc::new(raw.clone()));
    (0..spec.n_feature_splits)
        .map(|s| {
            let (raw, plan) = match (
                &shared,
                spec.dataset.synthetic_spec(clients, spec.common_ratio),
            ) {
                (_, Some(syn)) => {
                    let (raw, plan) =
                        gen_synthetic(&syn, &mut stream(spec.seed, tag::SYNTHETIC, s as u64))?;
                    (std::sync::Arc::new(raw), plan)
                }
                (Some(raw), None) => {
                    let mut plan = make_feature_split(
                        raw.feature_count(),
                        spec.common_ratio,
                        clients,
                        &mut stream(spec.seed, tag::FEATURE_SPLIT, s as u64),
                    )?;
                    plan.seed = Some(spec.seed);
                    (raw.clone(), plan)
                }
                (None, None) => bail!("file dataset was not loaded"),
            };
            Ok(SplitData {
                split_id: s,
                raw,
                plan,
            })
        })
        .collect()
}
