//! The two-column client model.
//!
//! A client owns a common column (a local copy of the federated network over
//! the shared features), a unique column over its private features, and
//! lateral matrices that feed common-column activations into the unique
//! column. Layer `i` of the unique column (for `i = 2..=L`) computes
//!
//! ```text
//! z_u(i) = a(W_u(i) z_u(i-1) + b_u(i) + μ U(i) z_c(i-1))
//! ```
//!
//! with `a` = ReLU on hidden layers and the identity on the output layer.
//! The client prediction is `softmax(z_c(L) + z_u(L))`.
//!
//! Gradients from the combined output are only ever propagated into the
//! unique column and the lateral matrices; the common column is trained
//! exclusively on its own common-feature loss.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    affine, he_uniform, mask_relu, mlp_forward, softmax, weight_grad, ForwardCache, MlpParams,
    ParamTensors,
};
use crate::scalar::Scalar;

/// Lateral matrices `U(2..=L)` and the fixed coupling strength `μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralSet<T> {
    /// `matrices[j]` is `U(j + 2)`: unique width of layer `j + 2` ×
    /// common width of layer `j + 1`.
    matrices: Vec<Array2<T>>,
    mu: T,
}

impl<T: Scalar> LateralSet<T> {
    pub fn new(matrices: Vec<Array2<T>>, mu: T) -> Result<Self> {
        check_mu(mu)?;
        if matrices.iter().any(|m| !m.is_standard_layout()) {
            return Err(Error::Shape("lateral matrices must be row-major".into()));
        }
        Ok(Self { matrices, mu })
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    /// Changes the coupling strength without touching the matrices.
    pub fn set_mu(&mut self, mu: T) -> Result<()> {
        check_mu(mu)?;
        self.mu = mu;
        Ok(())
    }

    pub fn matrices(&self) -> &[Array2<T>] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.matrices
    }

    /// `U(i)` for `i` in `2..=L`.
    pub fn matrix(&self, i: usize) -> Option<&Array2<T>> {
        i.checked_sub(2).and_then(|j| self.matrices.get(j))
    }

    fn zeros_like(&self) -> Vec<Array2<T>> {
        self.matrices
            .iter()
            .map(|m| Array2::zeros(m.dim()))
            .collect()
    }
}

impl<T: Scalar> ParamTensors<T> for LateralSet<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.matrices
            .iter()
            .map(|m| m.as_slice().expect("row-major"))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.matrices
            .iter_mut()
            .map(|m| m.as_slice_mut().expect("row-major"))
            .collect()
    }
}

fn check_mu<T: Scalar>(mu: T) -> Result<()> {
    if !(mu >= T::zero() && mu <= T::one()) {
        return Err(Error::Config(format!("mu must lie in [0, 1], got {mu}")));
    }
    Ok(())
}

/// Allocates `U(i)` for `i = 2..=L` with the same He-uniform scheme as
/// [`crate::nn::mlp_init`] (fan-in = common width of layer `i - 1`).
///
/// `common_dims` and `unique_dims` are full dimension lists
/// `[d_in, n_1, ..., n_L]` of the two columns.
pub fn lateral_init<T: Scalar, R: Rng + ?Sized>(
    common_dims: &[usize],
    unique_dims: &[usize],
    mu: T,
    rng: &mut R,
) -> Result<LateralSet<T>> {
    check_mu(mu)?;
    if common_dims.len() != unique_dims.len() || common_dims.len() < 2 {
        return Err(Error::Shape(format!(
            "columns must have equal depth: common {common_dims:?}, unique {unique_dims:?}"
        )));
    }
    let depth = common_dims.len() - 1;
    let matrices = (2..=depth)
        .map(|i| he_uniform(unique_dims[i], common_dims[i - 1], common_dims[i - 1], rng))
        .collect();
    Ok(LateralSet { matrices, mu })
}

/// `Θ_k = (θ_c, θ_u, U)` for one client.
#[derive(Clone, Debug, PartialEq)]
pub struct ChflClientModel<T> {
    pub common: MlpParams<T>,
    pub unique: MlpParams<T>,
    pub lateral: LateralSet<T>,
}

impl<T: Scalar> ChflClientModel<T> {
    pub fn new(common: MlpParams<T>, unique: MlpParams<T>, lateral: LateralSet<T>) -> Result<Self> {
        let model = Self {
            common,
            unique,
            lateral,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.common.validate()?;
        self.unique.validate()?;
        let (cd, ud) = (self.common.dims(), self.unique.dims());
        if cd.len() != ud.len() {
            return Err(Error::Shape(format!(
                "column depths differ: {cd:?} vs {ud:?}"
            )));
        }
        if cd.last() != ud.last() {
            return Err(Error::Shape(format!(
                "columns emit different class counts: {cd:?} vs {ud:?}"
            )));
        }
        let depth = cd.len() - 1;
        if self.lateral.matrices.len() + 1 != depth {
            return Err(Error::Shape(format!(
                "{} lateral matrices for a depth-{depth} model",
                self.lateral.matrices.len()
            )));
        }
        for i in 2..=depth {
            let m = self.lateral.matrix(i).expect("count checked above");
            if m.dim() != (ud[i], cd[i - 1]) {
                return Err(Error::Shape(format!(
                    "U({i}) is {:?}, expected {:?}",
                    m.dim(),
                    (ud[i], cd[i - 1])
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.common.depth()
    }

    pub fn mu(&self) -> T {
        self.lateral.mu
    }

    /// Trainable tensors of the unique side, in the order of [`UniqueGrads`].
    pub fn unique_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.unique.tensors_mut();
        out.extend(self.lateral.tensors_mut());
        out
    }

    pub fn unique_tensors(&self) -> Vec<&[T]> {
        let mut out = self.unique.tensors();
        out.extend(self.lateral.tensors());
        out
    }
}

/// Parameter-group view of a model exposing only `θ_u` and `U` as
/// trainable tensors; `θ_c` rides along untouched. Lets the finite-difference
/// oracle perturb the unique side while holding the common column fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct UniqueSide<T>(pub ChflClientModel<T>);

impl<T: Scalar> ParamTensors<T> for UniqueSide<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.0.unique_tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.0.unique_tensors_mut()
    }
}

/// Forward state of both columns for one batch.
#[derive(Clone, Debug)]
pub struct ChflCache<T> {
    pub common: ForwardCache<T>,
    pub unique: ForwardCache<T>,
    /// `z_c(L) + z_u(L)`
    pub combined_logits: Array2<T>,
}

/// Gradients of the unique column and lateral matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct UniqueGrads<T> {
    pub unique: MlpParams<T>,
    pub lateral: Vec<Array2<T>>,
}

impl<T: Scalar> UniqueGrads<T> {
    pub fn zeros_for(model: &ChflClientModel<T>) -> Self {
        Self {
            unique: model.unique.zeros_like(),
            lateral: model.lateral.zeros_like(),
        }
    }
}

impl<T: Scalar> ParamTensors<T> for UniqueGrads<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.unique.tensors();
        out.extend(
            self.lateral
                .iter()
                .map(|m| m.as_slice().expect("row-major")),
        );
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.unique.tensors_mut();
        out.extend(
            self.lateral
                .iter_mut()
                .map(|m| m.as_slice_mut().expect("row-major")),
        );
        out
    }
}

/// Plain forward pass of the common column; never sees unique features.
pub fn common_logits<T: Scalar>(
    model: &ChflClientModel<T>,
    x_common: ArrayView2<'_, T>,
) -> Result<(Array2<T>, ForwardCache<T>)> {
    mlp_forward(&model.common, x_common)
}

/// Unique-column forward pass given an already computed common cache.
pub(crate) fn unique_forward_parts<T: Scalar>(
    unique: &MlpParams<T>,
    lateral: &LateralSet<T>,
    common: &ForwardCache<T>,
    x_unique: ArrayView2<'_, T>,
) -> Result<ForwardCache<T>> {
    if x_unique.ncols() != unique.input_dim() {
        return Err(Error::Shape(format!(
            "unique batch has {} features, column expects {}",
            x_unique.ncols(),
            unique.input_dim()
        )));
    }
    if x_unique.nrows() != common.batch_size() {
        return Err(Error::Shape(format!(
            "common batch has {} rows, unique batch {}",
            common.batch_size(),
            x_unique.nrows()
        )));
    }
    let depth = unique.depth();
    let mu = lateral.mu;
    let mut activations: Vec<Array2<T>> = Vec::with_capacity(depth);
    for (j, layer) in unique.layers().iter().enumerate() {
        let prev = if j == 0 {
            x_unique.view()
        } else {
            activations[j - 1].view()
        };
        let mut z = affine(&prev, layer);
        if j >= 1 && mu != T::zero() {
            let lateral = common.activations[j - 1].dot(&lateral.matrices[j - 1].t());
            z.scaled_add(mu, &lateral);
        }
        if j + 1 < depth {
            crate::nn::relu_inplace(&mut z);
        }
        activations.push(z);
    }
    Ok(ForwardCache::from_parts(
        x_unique.to_owned(),
        activations,
        unique.dims(),
    ))
}

/// Client prediction `softmax(z_c(L) + z_u(L))` with caches of both columns.
pub fn chfl_forward<T: Scalar>(
    model: &ChflClientModel<T>,
    x_common: ArrayView2<'_, T>,
    x_unique: ArrayView2<'_, T>,
) -> Result<(Array2<T>, ChflCache<T>)> {
    let (_, common) = common_logits(model, x_common)?;
    let unique = unique_forward_parts(&model.unique, &model.lateral, &common, x_unique)?;
    let combined_logits = common.logits() + unique.logits();
    let probs = softmax(combined_logits.view());
    Ok((
        probs,
        ChflCache {
            common,
            unique,
            combined_logits,
        },
    ))
}

/// Gradients of the combined-output loss with respect to `θ_u` and `U`.
///
/// The common column and its activations are constants here: nothing is
/// propagated into `θ_c`. Lateral gradients carry the `μ` factor and are
/// exactly zero when `μ = 0`.
pub fn chfl_backward_unique<T: Scalar>(
    model: &ChflClientModel<T>,
    cache: &ChflCache<T>,
    grad_logits_total: ArrayView2<'_, T>,
) -> Result<UniqueGrads<T>> {
    cache.common.check_matches(&model.common)?;
    unique_backward_parts(
        &model.unique,
        &model.lateral,
        &cache.common,
        &cache.unique,
        grad_logits_total,
    )
}

pub(crate) fn unique_backward_parts<T: Scalar>(
    unique: &MlpParams<T>,
    lateral: &LateralSet<T>,
    common_cache: &ForwardCache<T>,
    unique_cache: &ForwardCache<T>,
    grad_logits_total: ArrayView2<'_, T>,
) -> Result<UniqueGrads<T>> {
    unique_cache.check_matches(unique)?;
    if grad_logits_total.dim() != unique_cache.logits().dim() {
        return Err(Error::Shape(format!(
            "grad_logits {:?} does not match logits {:?}",
            grad_logits_total.dim(),
            unique_cache.logits().dim()
        )));
    }
    let mu = lateral.mu;
    let mut grads = UniqueGrads {
        unique: unique.zeros_like(),
        lateral: lateral.zeros_like(),
    };
    let mut delta = grad_logits_total.to_owned();
    for j in (0..unique.depth()).rev() {
        let prev = unique_cache.layer_output(j);
        let g = &mut grads.unique.layers_mut()[j];
        g.weights = weight_grad(&delta, prev);
        g.biases = delta.sum_axis(Axis(0));
        if j >= 1 {
            if mu != T::zero() {
                let mut gu = weight_grad(&delta, &common_cache.activations[j - 1]);
                gu.mapv_inplace(|v| v * mu);
                grads.lateral[j - 1] = gu;
            }
            let mut next = delta.dot(&unique.layers()[j].weights);
            mask_relu(&mut next, prev);
            delta = next;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
