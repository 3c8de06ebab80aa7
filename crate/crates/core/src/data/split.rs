use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureSplitPlan;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Random train/val/test tags for `n` rows.
///
/// Sizes are `floor(n·f)` per partition with the leftover rows handed out one
/// at a time by largest fractional remainder (ties to the earlier partition).
pub fn split_train_val_test<R: Rng + ?Sized>(
    n: usize,
    fractions: [f64; 3],
    rng: &mut R,
) -> Result<Vec<Partition>> {
    if n < 3 {
        return Err(Error::Config(format!("cannot split {n} rows three ways")));
    }
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut tags = vec![Partition::Train; n];
    for (pos, &row) in perm.iter().enumerate() {
        tags[row] = if pos < sizes[0] {
            Partition::Train
        } else if pos < sizes[0] + sizes[1] {
            Partition::Val
        } else {
            Partition::Test
        };
    }
    Ok(tags)
}

/// Randomly assigns `round(common_ratio · d)` features to the common group
/// and deals the rest round-robin to `clients` unique groups.
///
/// The common count is clamped to `[1, d − clients]` so every client keeps at
/// least one unique feature.
pub fn make_feature_split<R: Rng + ?Sized>(
    feature_count: usize,
    common_ratio: f64,
    clients: usize,
    rng: &mut R,
) -> Result<FeatureSplitPlan> {
    if !(common_ratio > 0.0 && common_ratio < 1.0) {
        return Err(Error::Config(format!(
            "common ratio {common_ratio} must lie in (0, 1)"
        )));
    }
    if clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if feature_count < clients + 1 {
        return Err(Error::Config(format!(
            "{feature_count} features cannot give {clients} clients a unique feature each plus a common one"
        )));
    }
    let common_count =
        ((common_ratio * feature_count as f64).round() as usize).clamp(1, feature_count - clients);
    let mut perm: Vec<usize> = (0..feature_count).collect();
    perm.shuffle(rng);
    let mut common = perm[..common_count].to_vec();
    common.sort_unstable();
    let mut unique = vec![Vec::new(); clients];
    for (i, &f) in perm[common_count..].iter().enumerate() {
        unique[i % clients].push(f);
    }
    for u in &mut unique {
        u.sort_unstable();
    }
    Ok(FeatureSplitPlan {
        common,
        unique,
        seed: None,
    })
}

/// Shuffles `0..n` and deals the indices round-robin to `clients` lists,
/// each returned in ascending order.
pub fn partition_samples<R: Rng + ?Sized>(
    n: usize,
    clients: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if clients == 0 || n < clients {
        return Err(Error::Config(format!(
            "cannot spread {n} samples over {clients} clients"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut lists = vec![Vec::with_capacity(n / clients + 1); clients];
    for (i, &row) in perm.iter().enumerate() {
        lists[i % clients].push(row);
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    Ok(lists)
}
