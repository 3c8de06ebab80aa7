//! Tabular data handling: ingestion, standardization, sample and feature
//! partitioning across clients, correlation-ranked feature splits, and a
//! synthetic generator whose labels depend on both feature groups.

mod clients;
mod correlation;
mod csv_io;
mod split;
mod standardize;
mod synthetic;

pub use clients::{build_clients, ClientDataset, PartitionData};
pub use correlation::{
    correlation_score, pearson, select_split_by_correlation, CorrelationSplits, ScoredPlan,
};
pub use csv_io::{load_csv, load_csv_with, ColumnRef, CsvOptions, Delimiter};
pub use split::{
    make_feature_split, partition_samples, split_train_val_test, Partition, DEFAULT_FRACTIONS,
};
pub use standardize::{standardize, Standardizer};
pub use synthetic::{class_frequencies, gen_synthetic, SyntheticSpec};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled feature matrix with labels in `0..class_count`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    /// Client that holds each sample, when the data was generated for a
    /// known set of clients. `None` lets [`build_clients`] deal samples out
    /// at random.
    pub owners: Option<Vec<usize>>,
}

impl<T> RawDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }
}

impl<T: Clone> RawDataset<T> {
    /// A uniformly drawn subset of `rows` samples, kept in source order.
    /// Returns a copy of everything when `rows >= len`.
    pub fn subsample<R: rand::Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Self {
        if rows >= self.len() {
            return self.clone();
        }
        let mut keep = rand::seq::index::sample(rng, self.len(), rows).into_vec();
        keep.sort_unstable();
        Self {
            features: self.features.select(ndarray::Axis(0), &keep),
            labels: keep.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
            owners: self
                .owners
                .as_ref()
                .map(|o| keep.iter().map(|&r| o[r]).collect()),
        }
    }
}

/// Assignment of feature columns to the common group and to each client's
/// unique group. Serialized as JSON so a run can be reconstructed exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSplitPlan {
    pub common: Vec<usize>,
    pub unique: Vec<Vec<usize>>,
    /// Seed the plan was drawn with, when it was drawn at random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FeatureSplitPlan {
    pub fn client_count(&self) -> usize {
        self.unique.len()
    }

    /// Checks disjointness, range, and a nonempty common group.
    pub fn validate(&self, feature_count: usize) -> Result<()> {
        if self.common.is_empty() {
            return Err(Error::Config("common feature group is empty".into()));
        }
        let mut seen = vec![false; feature_count];
        for &f in self.common.iter().chain(self.unique.iter().flatten()) {
            if f >= feature_count {
                return Err(Error::Config(format!(
                    "feature {f} out of range 0..{feature_count}"
                )));
            }
            if std::mem::replace(&mut seen[f], true) {
                return Err(Error::Config(format!("feature {f} assigned twice")));
            }
        }
        Ok(())
    }

    /// Features outside the common group, in ascending order.
    pub fn non_common(&self, feature_count: usize) -> Vec<usize> {
        let mut is_common = vec![false; feature_count];
        for &c in &self.common {
            is_common[c] = true;
        }
        (0..feature_count).filter(|&f| !is_common[f]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
