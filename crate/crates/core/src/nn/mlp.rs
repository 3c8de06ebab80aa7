use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::params::{DenseLayerParams, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-layer outputs of one forward pass.
///
/// `activations[i]` is the post-ReLU output of hidden layer `i + 1`; the last
/// entry holds the raw logits. ReLU is applied in place, so a unit was active
/// exactly when its cached activation is positive.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub input: Array2<T>,
    pub activations: Vec<Array2<T>>,
    dims: Vec<usize>,
}

impl<T: Scalar> ForwardCache<T> {
    pub(crate) fn from_parts(
        input: Array2<T>,
        activations: Vec<Array2<T>>,
        dims: Vec<usize>,
    ) -> Self {
        Self {
            input,
            activations,
            dims,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn logits(&self) -> &Array2<T> {
        self.activations
            .last()
            .expect("cache has at least one layer")
    }

    /// Output of layer `i` for `i = 0..=L`, where layer 0 is the input.
    pub fn layer_output(&self, i: usize) -> &Array2<T> {
        if i == 0 {
            &self.input
        } else {
            &self.activations[i - 1]
        }
    }

    pub(crate) fn check_matches(&self, params: &MlpParams<T>) -> Result<()> {
        if self.dims != params.dims() {
            return Err(Error::State(format!(
                "cache was produced by a {:?} network, not {:?}",
                self.dims,
                params.dims()
            )));
        }
        Ok(())
    }
}

pub fn relu_inplace<T: Scalar>(z: &mut Array2<T>) {
    z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// `x Wᵀ + b`, broadcasting the bias over batch rows.
pub(crate) fn affine<T: Scalar>(x: &ArrayView2<'_, T>, layer: &DenseLayerParams<T>) -> Array2<T> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.biases;
    z
}

/// `deltaᵀ x` laid out row-major, whatever the layout of the operands.
pub(crate) fn weight_grad<T: Scalar>(delta: &Array2<T>, x: &Array2<T>) -> Array2<T> {
    let g = delta.t().dot(x);
    if g.is_standard_layout() {
        g
    } else {
        g.as_standard_layout().into_owned()
    }
}

/// Zeroes `delta` wherever the ReLU that produced `activation` was inactive.
pub(crate) fn mask_relu<T: Scalar>(delta: &mut Array2<T>, activation: &Array2<T>) {
    Zip::from(delta).and(activation).for_each(|d, &a| {
        if a <= T::zero() {
            *d = T::zero();
        }
    });
}

pub fn mlp_forward<T: Scalar>(
    params: &MlpParams<T>,
    batch: ArrayView2<'_, T>,
) -> Result<(Array2<T>, ForwardCache<T>)> {
    if batch.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, network expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    let depth = params.depth();
    let mut activations: Vec<Array2<T>> = Vec::with_capacity(depth);
    for (i, layer) in params.layers().iter().enumerate() {
        let prev = if i == 0 {
            batch.view()
        } else {
            activations[i - 1].view()
        };
        let mut z = affine(&prev, layer);
        if i + 1 < depth {
            relu_inplace(&mut z);
        }
        activations.push(z);
    }
    let logits = activations[depth - 1].clone();
    Ok((
        logits,
        ForwardCache {
            input: batch.to_owned(),
            activations,
            dims: params.dims(),
        },
    ))
}

/// Reverse-mode gradients of a scalar loss given `∂loss/∂logits`.
pub fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: ArrayView2<'_, T>,
) -> Result<MlpParams<T>> {
    cache.check_matches(params)?;
    if grad_logits.dim() != cache.logits().dim() {
        return Err(Error::Shape(format!(
            "grad_logits {:?} does not match logits {:?}",
            grad_logits.dim(),
            cache.logits().dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut delta = grad_logits.to_owned();
    for i in (0..params.depth()).rev() {
        let prev = cache.layer_output(i);
        let g = &mut grads.layers_mut()[i];
        g.weights = weight_grad(&delta, prev);
        g.biases = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut next = delta.dot(&params.layers()[i].weights);
            mask_relu(&mut next, prev);
            delta = next;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_grad, mlp_init, relative_error, ParamTensors};
    use crate::rng::stream;
    use ndarray::{array, Array1};
    use rand::Rng;

    fn random_batch(b: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, 99, 0);
        Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0))
    }

    /// Scalar-loop evaluation of the same network.
    fn oracle_forward(params: &MlpParams<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let depth = params.depth();
        for (i, layer) in params.layers().iter().enumerate() {
            let mut out = vec![0.0; layer.output_dim()];
            for r in 0..layer.output_dim() {
                let mut acc = layer.biases[r];
                for c in 0..layer.input_dim() {
                    acc += layer.weights[[r, c]] * h[c];
                }
                out[r] = if i + 1 < depth { acc.max(0.0) } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = MlpParams::<f64>::zeros(&[3, 5, 2]).unwrap();
        let (logits, _) = mlp_forward(&p, random_batch(4, 3, 1).view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayerParams {
            weights: Array2::<f64>::eye(3),
            biases: Array1::zeros(3),
        };
        let p = MlpParams::from_layers(vec![layer]).unwrap();
        let x = array![[1.5, -2.0, 0.25]];
        let (logits, _) = mlp_forward(&p, x.view()).unwrap();
        assert_eq!(logits, x);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let p: MlpParams<f64> = mlp_init(&[4, 6, 3], &mut stream(5, 1, 0)).unwrap();
        let x = random_batch(1, 4, 2);
        let (logits, _) = mlp_forward(&p, x.view()).unwrap();
        let expect = oracle_forward(&p, x.row(0).as_slice().unwrap());
        for (a, b) in logits.row(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::<f64>::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            mlp_forward(&p, random_batch(2, 4, 0).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let p: MlpParams<f64> = mlp_init(&[5, 8, 8, 3], &mut stream(6, 1, 0)).unwrap();
        let x = random_batch(7, 5, 3);
        let (a, _) = mlp_forward(&p, x.view()).unwrap();
        let (b, _) = mlp_forward(&p, x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p: MlpParams<f64> = mlp_init(&[3, 4, 2], &mut stream(1, 1, 0)).unwrap();
        let (logits, cache) = mlp_forward(&p, random_batch(3, 3, 0).view()).unwrap();
        let g = mlp_backward(&p, &cache, Array2::zeros(logits.dim()).view()).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_net_gradient_is_outer_product() {
        // loss = ½‖Wx + b‖², so ∂/∂W = z xᵀ and ∂/∂b = z
        let p: MlpParams<f64> = mlp_init(&[3, 2], &mut stream(2, 1, 0)).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let (z, cache) = mlp_forward(&p, x.view()).unwrap();
        let g = mlp_backward(&p, &cache, z.view()).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((g.layers()[0].weights[[r, c]] - z[[0, r]] * x[[0, c]]).abs() < 1e-14);
            }
            assert!((g.layers()[0].biases[r] - z[[0, r]]).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let p: MlpParams<f64> = mlp_init(&[3, 4, 2], &mut stream(1, 1, 0)).unwrap();
        let q: MlpParams<f64> = mlp_init(&[3, 5, 2], &mut stream(1, 1, 0)).unwrap();
        let (logits, cache) = mlp_forward(&q, random_batch(2, 3, 0).view()).unwrap();
        assert!(matches!(
            mlp_backward(&p, &cache, logits.view()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let p: MlpParams<f64> = mlp_init(&[4, 6, 5, 3], &mut stream(8, 1, 0)).unwrap();
        let x = random_batch(5, 4, 4);
        let labels = [0usize, 2, 1, 1, 0];
        let loss = |q: &MlpParams<f64>| {
            let (z, _) = mlp_forward(q, x.view()).unwrap();
            crate::nn::softmax_cross_entropy_labels(z.view(), &labels)
                .unwrap()
                .0
        };
        let (z, cache) = mlp_forward(&p, x.view()).unwrap();
        let (_, gz) = crate::nn::softmax_cross_entropy_labels(z.view(), &labels).unwrap();
        let analytic = mlp_backward(&p, &cache, gz.view()).unwrap();
        let numeric = finite_diff_grad(loss, &p, 1e-5);
        for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
            for (&a, &n) in a.iter().zip(n) {
                assert!(relative_error(a, n) < 1e-4, "{a} vs {n}");
            }
        }
    }
}
