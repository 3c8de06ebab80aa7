use ndarray::{concatenate, Array2, Axis};

use super::split::{partition_samples, split_train_val_test, Partition};
use super::standardize::standardize;
use super::{FeatureSplitPlan, RawDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

/// Rows of one partition of one client, materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionData<T> {
    pub x_common: Array2<T>,
    pub x_unique: Array2<T>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

impl<T: Scalar> PartitionData<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[x_common | x_unique]`, the full feature view of the client.
    pub fn x_all(&self) -> Array2<T> {
        concatenate(Axis(1), &[self.x_common.view(), self.x_unique.view()])
            .expect("row counts agree")
            .as_standard_layout()
            .into_owned()
    }
}

/// One client's rows: common features, its unique features, labels, and a
/// train/val/test tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset<T> {
    pub x_common: Array2<T>,
    pub x_unique: Array2<T>,
    pub labels: Vec<usize>,
    pub partition: Vec<Partition>,
    /// Row indices into the source dataset.
    pub sample_ids: Vec<usize>,
}

impl<T: Scalar> ClientDataset<T> {
    /// Stacks separately prepared partitions into one client dataset.
    pub fn from_parts(
        train: PartitionData<T>,
        val: PartitionData<T>,
        test: PartitionData<T>,
    ) -> Result<Self> {
        let parts = [
            (Partition::Train, train),
            (Partition::Val, val),
            (Partition::Test, test),
        ];
        let x_common = concatenate(
            Axis(0),
            &parts
                .iter()
                .map(|(_, p)| p.x_common.view())
                .collect::<Vec<_>>(),
        )
        .map_err(|e| Error::Shape(format!("common widths differ across partitions: {e}")))?;
        let x_unique = concatenate(
            Axis(0),
            &parts
                .iter()
                .map(|(_, p)| p.x_unique.view())
                .collect::<Vec<_>>(),
        )
        .map_err(|e| Error::Shape(format!("unique widths differ across partitions: {e}")))?;
        let mut labels = Vec::new();
        let mut partition = Vec::new();
        let mut sample_ids = Vec::new();
        for (tag, p) in &parts {
            labels.extend(&p.labels);
            partition.extend(std::iter::repeat_n(*tag, p.len()));
            sample_ids.extend(&p.sample_ids);
        }
        let client = Self {
            x_common,
            x_unique,
            labels,
            partition,
            sample_ids,
        };
        client.validate()?;
        Ok(client)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.x_common.nrows() != n
            || self.x_unique.nrows() != n
            || self.partition.len() != n
            || self.sample_ids.len() != n
        {
            return Err(Error::Shape(format!(
                "client rows disagree: common {}, unique {}, labels {n}, tags {}, ids {}",
                self.x_common.nrows(),
                self.x_unique.nrows(),
                self.partition.len(),
                self.sample_ids.len()
            )));
        }
        Ok(())
    }

    pub fn common_width(&self) -> usize {
        self.x_common.ncols()
    }

    pub fn unique_width(&self) -> usize {
        self.x_unique.ncols()
    }

    pub fn rows(&self, part: Partition) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&r| self.partition[r] == part)
            .collect()
    }

    pub fn part(&self, part: Partition) -> PartitionData<T> {
        let rows = self.rows(part);
        PartitionData {
            x_common: self.x_common.select(Axis(0), &rows),
            x_unique: self.x_unique.select(Axis(0), &rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r]).collect(),
        }
    }
}

/// Splits `raw` into train/val/test, standardizes with training statistics,
/// and spreads every partition evenly over the clients of `plan`. Samples
/// with a recorded owner go to that client instead.
///
/// All randomness derives from `seed`, so the same `(raw, plan, seed)` always
/// yields the same clients.
pub fn build_clients<T: Scalar>(
    raw: &RawDataset<T>,
    plan: &FeatureSplitPlan,
    seed: u64,
    fractions: [f64; 3],
) -> Result<Vec<ClientDataset<T>>> {
    plan.validate(raw.feature_count())?;
    let k = plan.client_count();
    if k == 0 {
        return Err(Error::Config("plan has no clients".into()));
    }
    let tags = split_train_val_test(
        raw.len(),
        fractions,
        &mut stream(seed, tag::SAMPLE_SPLIT, 0),
    )?;
    let train_rows: Vec<usize> = (0..raw.len())
        .filter(|&r| tags[r] == Partition::Train)
        .collect();
    let (features, _) = standardize(raw.features.view(), &train_rows);

    if let Some(owners) = &raw.owners {
        if owners.len() != raw.len() || owners.iter().any(|&o| o >= k) {
            return Err(Error::Config(format!(
                "sample owners must be one client index below {k} per row"
            )));
        }
    }

    let mut per_client: Vec<Vec<(usize, Partition)>> = vec![Vec::new(); k];
    for (p, part) in Partition::ALL.iter().enumerate() {
        let rows: Vec<usize> = (0..raw.len()).filter(|&r| tags[r] == *part).collect();
        if let Some(owners) = &raw.owners {
            for &r in &rows {
                per_client[owners[r]].push((r, *part));
            }
            continue;
        }
        let lists = partition_samples(
            rows.len(),
            k,
            &mut stream(seed, tag::CLIENT_PARTITION, p as u64),
        )?;
        for (client, list) in lists.into_iter().enumerate() {
            per_client[client].extend(list.into_iter().map(|i| (rows[i], *part)));
        }
    }

    Ok(per_client
        .into_iter()
        .enumerate()
        .map(|(client, rows)| {
            let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let sub = features.select(Axis(0), &ids);
            ClientDataset {
                x_common: sub.select(Axis(1), &plan.common),
                x_unique: sub.select(Axis(1), &plan.unique[client]),
                labels: ids.iter().map(|&r| raw.labels[r]).collect(),
                partition: rows.iter().map(|r| r.1).collect(),
                sample_ids: ids,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec, DEFAULT_FRACTIONS};

    fn setup() -> (RawDataset<f64>, FeatureSplitPlan) {
        let spec = SyntheticSpec {
            samples: 503,
            features: 12,
            clients: 3,
            ..Default::default()
        };
        gen_synthetic(&spec, &mut stream(1, 0, 0)).unwrap()
    }

    #[test]
    fn clients_partition_the_samples() {
        let (mut raw, plan) = setup();
        raw.owners = None;
        let clients = build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap();
        assert_eq!(clients.len(), 3);
        let mut ids: Vec<usize> = clients.iter().flat_map(|c| c.sample_ids.clone()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..503).collect::<Vec<_>>());
        for (k, c) in clients.iter().enumerate() {
            c.validate().unwrap();
            assert_eq!(c.common_width(), plan.common.len());
            assert_eq!(c.unique_width(), plan.unique[k].len());
            for (r, &id) in c.sample_ids.iter().enumerate() {
                assert_eq!(c.labels[r], raw.labels[id]);
            }
        }
        let train_sizes: Vec<usize> = clients
            .iter()
            .map(|c| c.rows(Partition::Train).len())
            .collect();
        assert!(train_sizes.iter().max().unwrap() - train_sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn owners_decide_the_client() {
        let (raw, plan) = setup();
        let clients = build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap();
        let owners = raw.owners.as_ref().unwrap();
        for (k, c) in clients.iter().enumerate() {
            assert!(c.sample_ids.iter().all(|&id| owners[id] == k));
        }
        let mut bad = raw.clone();
        bad.owners.as_mut().unwrap()[0] = 3;
        assert!(build_clients(&bad, &plan, 7, DEFAULT_FRACTIONS).is_err());
    }

    #[test]
    fn same_seed_same_clients() {
        let (raw, plan) = setup();
        let a = build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap();
        let b = build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap();
        let c = build_clients(&raw, &plan, 8, DEFAULT_FRACTIONS).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn training_rows_are_standardized() {
        let (raw, plan) = setup();
        let clients = build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap();
        let train: Vec<Array2<f64>> = clients
            .iter()
            .map(|c| c.part(Partition::Train).x_common)
            .collect();
        let stacked =
            concatenate(Axis(0), &train.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
        for col in stacked.axis_iter(Axis(1)) {
            assert!(col.mean().unwrap().abs() < 1e-10);
            assert!((col.std(0.0) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn parts_round_trip() {
        let (raw, plan) = setup();
        let c = &build_clients(&raw, &plan, 7, DEFAULT_FRACTIONS).unwrap()[0];
        let rebuilt = ClientDataset::from_parts(
            c.part(Partition::Train),
            c.part(Partition::Val),
            c.part(Partition::Test),
        )
        .unwrap();
        assert_eq!(rebuilt.part(Partition::Test), c.part(Partition::Test));
        assert_eq!(rebuilt.x_common.nrows(), c.x_common.nrows());
    }
}
