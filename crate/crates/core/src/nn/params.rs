use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat views over every trainable tensor of a parameter group, in a fixed order.
///
/// Optimizers and the finite-difference oracle work on these views, so any
/// parameter group (a plain MLP, a lateral set, or a combination) can be
/// updated and checked the same way.
pub trait ParamTensors<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerParams<T> {
    /// `out × in`
    pub weights: Array2<T>,
    pub biases: Array1<T>,
}

impl<T: Scalar> DenseLayerParams<T> {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((output_dim, input_dim)),
            biases: Array1::zeros(output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.weights.nrows() != self.biases.len() {
            return Err(Error::Shape(format!(
                "layer {index}: {} weight rows but {} biases",
                self.weights.nrows(),
                self.biases.len()
            )));
        }
        if !self.weights.is_standard_layout() {
            return Err(Error::Shape(format!(
                "layer {index}: weights not row-major"
            )));
        }
        if self
            .weights
            .iter()
            .chain(self.biases.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical(format!("layer {index}: non-finite entry")));
        }
        Ok(())
    }
}

/// Parameters of one fully-connected column: `L` dense layers, the last of
/// which produces class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<DenseLayerParams<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<DenseLayerParams<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("network has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if i > 0 && layer.input_dim() != layers[i - 1].output_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    layer.input_dim(),
                    i - 1,
                    layers[i - 1].output_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network with the given layer dimensions `[d_in, n_1, ..., n_L]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims
                .windows(2)
                .map(|w| DenseLayerParams::zeros(w[0], w[1]))
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayerParams::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayerParams<T>] {
        &self.layers
    }

    /// Mutable access to the layers. Replacing an array with one of a
    /// different shape breaks the chaining invariant; [`Self::validate`]
    /// detects that.
    pub fn layers_mut(&mut self) -> &mut [DenseLayerParams<T>] {
        &mut self.layers
    }

    pub fn validate(&self) -> Result<()> {
        Self::from_layers(self.layers.clone()).map(|_| ())
    }

    /// Number of layers including the output layer.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// `[d_in, n_1, ..., n_L]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }
}

impl<T: Scalar> ParamTensors<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("row-major weights"),
                    l.biases.as_slice().expect("contiguous biases"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("row-major weights"),
                    l.biases.as_slice_mut().expect("contiguous biases"),
                ]
            })
            .collect()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "zero-width layer in {dims:?}"
        )));
    }
    Ok(())
}

/// `rows × cols` matrix with entries uniform in `±sqrt(6 / fan_in)`, drawn in
/// row-major order.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Array2<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..bound)))
}

/// Initializes a network with layer dimensions `[d_in, n_1, ..., n_L]`:
/// He-uniform weights, zero biases.
pub fn mlp_init<T: Scalar, R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<MlpParams<T>> {
    check_dims(dims)?;
    let layers = dims
        .windows(2)
        .map(|w| DenseLayerParams {
            weights: he_uniform(w[1], w[0], w[0], rng),
            biases: Array1::zeros(w[1]),
        })
        .collect();
    Ok(MlpParams { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};

    #[test]
    fn init_shapes() {
        let p: MlpParams<f64> = mlp_init(&[4, 3], &mut stream(1, tag::COMMON_INIT, 0)).unwrap();
        assert_eq!(p.depth(), 1);
        assert_eq!(p.layers()[0].weights.dim(), (3, 4));
        assert_eq!(p.layers()[0].biases, Array1::<f64>::zeros(3));
    }

    #[test]
    fn init_matches_experiment_widths() {
        let p: MlpParams<f64> =
            mlp_init(&[54, 512, 256, 128, 7], &mut stream(9, tag::COMMON_INIT, 0)).unwrap();
        assert_eq!(p.depth(), 4);
        let shapes: Vec<_> = p.layers().iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(512, 54), (256, 512), (128, 256), (7, 128)]);
        let bound = (6.0f64 / 54.0).sqrt();
        assert!(p.layers()[0].weights.iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn init_is_deterministic() {
        let a: MlpParams<f64> = mlp_init(&[5, 8, 3], &mut stream(3, tag::COMMON_INIT, 0)).unwrap();
        let b: MlpParams<f64> = mlp_init(&[5, 8, 3], &mut stream(3, tag::COMMON_INIT, 0)).unwrap();
        let c: MlpParams<f64> = mlp_init(&[5, 8, 3], &mut stream(4, tag::COMMON_INIT, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut rng = stream(0, 0, 0);
        assert!(matches!(
            mlp_init::<f64, _>(&[], &mut rng),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            mlp_init::<f64, _>(&[4], &mut rng),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            mlp_init::<f64, _>(&[4, 0, 2], &mut rng),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn from_layers_checks_chaining() {
        let bad = vec![
            DenseLayerParams::<f64>::zeros(3, 4),
            DenseLayerParams::zeros(5, 2),
        ];
        assert!(matches!(MlpParams::from_layers(bad), Err(Error::Shape(_))));
        let good = vec![
            DenseLayerParams::<f64>::zeros(3, 4),
            DenseLayerParams::zeros(4, 2),
        ];
        assert_eq!(MlpParams::from_layers(good).unwrap().dims(), vec![3, 4, 2]);
    }

    #[test]
    fn tensor_views_cover_every_parameter() {
        let p: MlpParams<f32> = mlp_init(&[3, 4, 2], &mut stream(0, 0, 0)).unwrap();
        assert_eq!(p.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
