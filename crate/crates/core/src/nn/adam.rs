use super::params::ParamTensors;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam moment estimates for one parameter group.
///
/// Moments are stored as flat buffers mirroring [`ParamTensors::tensors`] of
/// the group they were created for.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamTensors<T> + ?Sized>(params: &P) -> Self {
        Self::with_hyperparameters(
            params,
            T::of(DEFAULT_BETA1),
            T::of(DEFAULT_BETA2),
            T::of(DEFAULT_EPSILON),
        )
    }

    pub fn with_hyperparameters<P: ParamTensors<T> + ?Sized>(
        params: &P,
        beta1: T,
        beta2: T,
        epsilon: T,
    ) -> Self {
        Self::for_lengths(
            params.tensors().iter().map(|t| t.len()),
            beta1,
            beta2,
            epsilon,
        )
    }

    pub(crate) fn for_lengths(
        lengths: impl Iterator<Item = usize> + Clone,
        beta1: T,
        beta2: T,
        epsilon: T,
    ) -> Self {
        Self {
            first_moment: lengths.clone().map(|n| vec![T::zero(); n]).collect(),
            second_moment: lengths.map(|n| vec![T::zero(); n]).collect(),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step<P: ParamTensors<T> + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: T,
    ) -> Result<()> {
        self.step_tensors(params.tensors_mut(), grads.tensors(), lr)
    }

    /// One bias-corrected Adam update over explicit tensor views. Nothing is
    /// written if any gradient entry is non-finite or a shape disagrees.
    pub fn step_tensors(
        &mut self,
        mut params: Vec<&mut [T]>,
        grads: Vec<&[T]>,
        lr: T,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::State(format!(
                "{} parameter tensors, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, ((p, g), m)) in params
            .iter()
            .zip(&grads)
            .zip(&self.first_moment)
            .enumerate()
        {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::State(format!(
                    "tensor {i}: {} params, {} grads, {} moments",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in tensor {i}"
                )));
            }
        }

        self.step_count += 1;
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let (b1, b2) = (self.beta1, self.beta2);
        let correct1 = T::one() - b1.powi(t);
        let correct2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar, P: ParamTensors<T> + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    state.step(params, grads, lr)
}
