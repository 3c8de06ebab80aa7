use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::split::make_feature_split;
use super::FeatureSplitPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pearson correlation; 0 when either column has zero variance.
pub fn pearson<T: Scalar>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> T {
    let n = T::of(x.len().max(1) as f64);
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return T::zero();
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Sum of `|pearson(c, j)|` over every common column `c` and every column
/// `j` outside the common group.
pub fn correlation_score<T: Scalar>(features: ArrayView2<'_, T>, plan: &FeatureSplitPlan) -> T {
    let rest = plan.non_common(features.ncols());
    plan.common
        .iter()
        .flat_map(|&c| rest.iter().map(move |&j| (c, j)))
        .map(|(c, j)| pearson(features.column(c), features.column(j)).abs())
        .sum()
}

/// Matrix of `|pearson(i, j)|` over all column pairs.
fn abs_correlation_matrix<T: Scalar>(features: ArrayView2<'_, T>) -> Array2<f64> {
    let d = features.ncols();
    let cols: Vec<ArrayView1<'_, T>> = features.axis_iter(Axis(1)).collect();
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            (0..d)
                .map(|j| {
                    if j > i {
                        pearson(cols[i], cols[j]).abs().as_f64()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut m = Array2::zeros((d, d));
    for i in 0..d {
        for j in i + 1..d {
            m[[i, j]] = rows[i][j];
            m[[j, i]] = rows[i][j];
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPlan {
    pub plan: FeatureSplitPlan,
    pub score: f64,
    /// Position of the plan among the sampled candidates.
    pub candidate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSplits {
    pub max: ScoredPlan,
    pub median: ScoredPlan,
    pub min: ScoredPlan,
}

/// Draws `n_candidates` random feature splits and returns those with the
/// largest, median and smallest correlation score.
///
/// Candidate plans are drawn sequentially from `rng`; scoring runs in
/// parallel but the result only depends on the drawn plans.
pub fn select_split_by_correlation<T: Scalar, R: Rng + ?Sized>(
    features: ArrayView2<'_, T>,
    clients: usize,
    common_ratio: f64,
    n_candidates: usize,
    rng: &mut R,
) -> Result<CorrelationSplits> {
    if n_candidates < 3 {
        return Err(Error::Config(format!(
            "need at least 3 candidates, got {n_candidates}"
        )));
    }
    let d = features.ncols();
    let plans = (0..n_candidates)
        .map(|_| make_feature_split(d, common_ratio, clients, rng))
        .collect::<Result<Vec<_>>>()?;
    let corr = abs_correlation_matrix(features);
    let scores: Vec<f64> = plans
        .par_iter()
        .map(|p| {
            let rest = p.non_common(d);
            p.common
                .iter()
                .map(|&c| rest.iter().map(|&j| corr[[c, j]]).sum::<f64>())
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..n_candidates).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let pick = |i: usize| ScoredPlan {
        plan: plans[i].clone(),
        score: scores[i],
        candidate: i,
    };
    Ok(CorrelationSplits {
        max: pick(order[0]),
        median: pick(order[(n_candidates - 1) / 2]),
        min: pick(order[n_candidates - 1]),
    })
}
