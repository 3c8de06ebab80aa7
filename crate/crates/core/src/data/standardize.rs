use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

/// Per-feature affine transform `(x − mean) / std` fitted on training rows.
///
/// Features whose training standard deviation is zero (up to rounding) are
/// mapped to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    /// Population standard deviation; zero marks a constant feature.
    pub std: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(train: ArrayView2<'_, T>) -> Self {
        let n = T::of(train.nrows().max(1) as f64);
        let mean = train.sum_axis(Axis(0)).mapv(|s| s / n);
        let mut std = Array1::zeros(train.ncols());
        for (j, col) in train.axis_iter(Axis(1)).enumerate() {
            let m = mean[j];
            let var = col.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
            let sd = var.sqrt();
            let floor = T::epsilon() * T::of(64.0) * m.abs().max(T::one());
            std[j] = if sd > floor { sd } else { T::zero() };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row)
                .and(&self.mean)
                .and(&self.std)
                .for_each(|v, &m, &s| {
                    *v = if s > T::zero() {
                        (*v - m) / s
                    } else {
                        T::zero()
                    };
                });
        }
        out
    }

    /// Maps standardized values back; constant features come back as their mean.
    pub fn invert(&self, z: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = z.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row)
                .and(&self.mean)
                .and(&self.std)
                .for_each(|v, &m, &s| {
                    *v = *v * s + m;
                });
        }
        out
    }
}

/// Fits on the rows selected by `train_rows` and transforms the whole matrix.
pub fn standardize<T: Scalar>(
    features: ArrayView2<'_, T>,
    train_rows: &[usize],
) -> (Array2<T>, Standardizer<T>) {
    let train = features.select(Axis(0), train_rows);
    let st = Standardizer::fit(train.view());
    (st.apply(features), st)
}
