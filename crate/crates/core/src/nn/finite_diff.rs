use super::params::ParamTensors;
use crate::scalar::Scalar;

pub const DEFAULT_FD_EPSILON: f64 = 1e-5;

/// Central-difference gradient `(f(p + ε) − f(p − ε)) / 2ε` of `loss_fn`,
/// one entry at a time, returned with the same layout as `params`.
pub fn finite_diff_grad<T, P, F>(loss_fn: F, params: &P, epsilon: T) -> P
where
    T: Scalar,
    P: ParamTensors<T> + Clone,
    F: Fn(&P) -> T,
{
    let mut probe = params.clone();
    let mut out = params.clone();
    let two_eps = epsilon + epsilon;
    let shape: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in shape.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + epsilon;
            let up = loss_fn(&probe);
            probe.tensors_mut()[ti][j] = orig - epsilon;
            let down = loss_fn(&probe);
            probe.tensors_mut()[ti][j] = orig;
            out.tensors_mut()[ti][j] = (up - down) / two_eps;
        }
    }
    out
}

/// `|analytic − numeric| / max(1, |analytic|)`
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(T::one())
}
