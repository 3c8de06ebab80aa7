use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::make_feature_split;
use super::{FeatureSplitPlan, RawDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters of the synthetic classification task.
///
/// Features are unit-variance Gaussians sharing `feature_correlation` of
/// their variance with a low-rank latent factor, so common and unique
/// features are correlated. Every sample belongs to one client. Its class
/// scores add a common-feature teacher, the teacher of its owner's unique
/// group, and Gaussian noise; the label is the arg-max score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub clients: usize,
    pub common_ratio: f64,
    pub common_signal: f64,
    pub unique_signal: f64,
    pub noise: f64,
    /// Share of each feature's variance explained by the latent factor, in `[0, 1)`.
    #[serde(default)]
    pub feature_correlation: f64,
    /// Hidden width of the common-feature teacher; 0 makes it linear. The
    /// unique-group teachers are always linear.
    #[serde(default)]
    pub teacher_hidden: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 5000,
            features: 30,
            classes: 4,
            clients: 5,
            common_ratio: 0.3,
            common_signal: 1.0,
            unique_signal: 1.0,
            noise: 0.1,
            feature_correlation: 0.5,
            teacher_hidden: 0,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Random teacher mapping `x` to `classes` scores, rescaled so the scores
/// have unit standard deviation over the sample.
fn teacher<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    classes: usize,
    hidden: usize,
    rng: &mut R,
) -> Array2<f64> {
    let d = x.ncols().max(1);
    let mut s = if hidden == 0 {
        x.dot(&gaussian(x.ncols(), classes, 1.0 / (d as f64).sqrt(), rng))
    } else {
        let w1 = gaussian(x.ncols(), hidden, 1.0 / (d as f64).sqrt(), rng);
        let b1 = gaussian(1, hidden, 0.5, rng).remove_axis(Axis(0));
        let mut h = x.dot(&w1) + &b1;
        h.mapv_inplace(|v| v.max(0.0));
        h.dot(&gaussian(
            hidden,
            classes,
            1.0 / (hidden as f64).sqrt(),
            rng,
        ))
    };
    let mean = s.mean().unwrap_or(0.0);
    let sd = s.std(0.0);
    if sd > 0.0 {
        s.mapv_inplace(|v| (v - mean) / sd);
    }
    s
}

/// Generates a dataset together with the feature split it was built around.
pub fn gen_synthetic<T: Scalar, R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<(RawDataset<T>, FeatureSplitPlan)> {
    if spec.common_signal < 0.0 || spec.unique_signal < 0.0 || spec.noise < 0.0 {
        return Err(Error::Config(
            "signal and noise weights must be nonnegative".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.feature_correlation) {
        return Err(Error::Config(
            "feature_correlation must lie in [0, 1)".into(),
        ));
    }
    if spec.classes < 2 || spec.samples == 0 {
        return Err(Error::Config(
            "need at least two classes and one sample".into(),
        ));
    }
    let (n, d) = (spec.samples, spec.features);
    let plan = make_feature_split(d, spec.common_ratio, spec.clients, rng)?;

    let rank = (d / 3).max(1);
    let latent = gaussian(n, rank, 1.0, rng);
    let loadings = gaussian(rank, d, 1.0 / (rank as f64).sqrt(), rng);
    let rho = spec.feature_correlation;
    let x = latent.dot(&loadings) * rho.sqrt() + gaussian(n, d, (1.0 - rho).sqrt(), rng);

    // Samples are dealt to clients up front; a sample's unique score comes
    // from its owner's group only.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut owners = vec![0; n];
    for (i, &r) in order.iter().enumerate() {
        owners[r] = i % spec.clients;
    }

    let common = teacher(
        x.select(Axis(1), &plan.common).view(),
        spec.classes,
        spec.teacher_hidden,
        rng,
    );
    let mut unique = Array2::<f64>::zeros((n, spec.classes));
    for (k, group) in plan.unique.iter().enumerate() {
        let scores = teacher(x.select(Axis(1), group).view(), spec.classes, 0, rng);
        for r in (0..n).filter(|&r| owners[r] == k) {
            unique.row_mut(r).assign(&scores.row(r));
        }
    }
    let noise = gaussian(n, spec.classes, spec.noise, rng);
    let scores = common * spec.common_signal + unique * spec.unique_signal + noise;
    let labels = crate::nn::argmax_rows(scores.view());

    let dataset = RawDataset {
        features: x.mapv(T::of),
        labels,
        class_count: spec.classes,
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        owners: Some(owners),
    };
    Ok((dataset, plan))
}

/// Empirical class frequencies.
pub fn class_frequencies(labels: &[usize], classes: usize) -> Array1<f64> {
    let mut out = Array1::zeros(classes);
    for &y in labels {
        out[y] += 1.0;
    }
    out / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn deterministic_and_well_formed() {
        let spec = SyntheticSpec {
            samples: 400,
            ..Default::default()
        };
        let (a, pa) = gen_synthetic::<f64, _>(&spec, &mut stream(1, 0, 0)).unwrap();
        let (b, pb) = gen_synthetic::<f64, _>(&spec, &mut stream(1, 0, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.features.dim(), (400, 30));
        pa.validate(30).unwrap();
        assert_eq!(pa.common.len(), 9);
        assert!(a.labels.iter().all(|&y| y < 4));
        // every class shows up
        assert!(class_frequencies(&a.labels, 4).iter().all(|&f| f > 0.05));
    }

    #[test]
    fn huge_noise_gives_balanced_labels() {
        let spec = SyntheticSpec {
            samples: 8000,
            noise: 1e6,
            ..Default::default()
        };
        let (ds, _) = gen_synthetic::<f64, _>(&spec, &mut stream(2, 0, 0)).unwrap();
        for f in class_frequencies(&ds.labels, 4).iter() {
            assert!((f - 0.25).abs() < 0.03);
        }
    }

    #[test]
    fn features_share_variance_across_groups() {
        let spec = SyntheticSpec {
            samples: 4000,
            feature_correlation: 0.8,
            ..Default::default()
        };
        let (ds, plan) = gen_synthetic::<f64, _>(&spec, &mut stream(3, 0, 0)).unwrap();
        let strong = crate::data::correlation_score(ds.features.view(), &plan);
        let spec = SyntheticSpec {
            feature_correlation: 0.0,
            ..spec
        };
        let (ds0, plan0) = gen_synthetic::<f64, _>(&spec, &mut stream(3, 0, 0)).unwrap();
        let weak = crate::data::correlation_score(ds0.features.view(), &plan0);
        assert!(strong > 3.0 * weak, "{strong} vs {weak}");
    }

    #[test]
    fn rejects_negative_weights() {
        let spec = SyntheticSpec {
            noise: -1.0,
            ..Default::default()
        };
        assert!(gen_synthetic::<f64, _>(&spec, &mut stream(0, 0, 0)).is_err());
    }
}
