use crate::error::{Error, Result};
use crate::nn::{MlpParams, ParamTensors};
use crate::scalar::Scalar;

/// Error-free transformation: `a + b = s + e` exactly.
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Mean of `values` accumulated in iteration order with compensated
/// summation and an FMA-corrected division.
///
/// The result is the float nearest the exact mean in all but pathological
/// cases; in particular `k` copies of `x` return `x` bit for bit, which
/// plain sum-then-divide does not guarantee for `k` not a power of two.
pub fn compensated_mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let (mut sum, mut err, mut k) = (T::zero(), T::zero(), 0usize);
    for v in values {
        let (s, e) = two_sum(sum, v);
        sum = s;
        err += e;
        k += 1;
    }
    if k == 0 {
        return T::nan();
    }
    let kk = T::of(k as f64);
    let q = sum / kk;
    // sum - q*k exactly, then fold in the compensation term
    let residual = (-q).mul_add(kk, sum) + err;
    q + residual / kk
}

/// Unweighted elementwise mean of client parameter sets, summed in slice
/// order.
pub fn aggregate<T: Scalar>(param_sets: &[MlpParams<T>]) -> Result<MlpParams<T>> {
    let first = param_sets
        .first()
        .ok_or_else(|| Error::Aggregation("no parameter sets to aggregate".into()))?;
    if let Some(k) = param_sets.iter().position(|p| !p.same_shape(first)) {
        return Err(Error::Aggregation(format!(
            "client {k} has dims {:?}, client 0 has {:?}",
            param_sets[k].dims(),
            first.dims()
        )));
    }
    let sources: Vec<Vec<&[T]>> = param_sets.iter().map(|p| p.tensors()).collect();
    let mut out = first.zeros_like();
    for (t, dst) in out.tensors_mut().into_iter().enumerate() {
        for (i, d) in dst.iter_mut().enumerate() {
            *d = compensated_mean(sources.iter().map(|s| s[t][i]));
        }
    }
    Ok(out)
}
