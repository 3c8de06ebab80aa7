use super::*;
use crate::nn::{finite_diff_grad, mlp_init, relative_error, softmax_cross_entropy_labels};
use crate::rng::{stream, tag};
use ndarray::array;
use rand::Rng;

fn random_model(
    common_dims: &[usize],
    unique_dims: &[usize],
    mu: f64,
    seed: u64,
) -> ChflClientModel<f64> {
    let common = mlp_init(common_dims, &mut stream(seed, tag::COMMON_INIT, 0)).unwrap();
    let unique = mlp_init(unique_dims, &mut stream(seed, tag::UNIQUE_INIT, 0)).unwrap();
    let lateral = lateral_init(
        common_dims,
        unique_dims,
        mu,
        &mut stream(seed, tag::LATERAL_INIT, 0),
    )
    .unwrap();
    ChflClientModel::new(common, unique, lateral).unwrap()
}

fn random_batch(b: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, 77, 0);
    Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0))
}

#[test]
fn lateral_shapes_follow_common_previous_layer() {
    let dims = [16, 512, 256, 128, 7];
    let set: LateralSet<f64> = lateral_init(&dims, &dims, 0.3, &mut stream(1, 0, 0)).unwrap();
    let shapes: Vec<_> = set.matrices().iter().map(|m| m.dim()).collect();
    assert_eq!(shapes, vec![(256, 512), (128, 256), (7, 128)]);
    assert_eq!(set.matrix(2).unwrap().dim(), (256, 512));
    assert!(set.matrix(1).is_none());
    assert!(set.matrix(5).is_none());
}

#[test]
fn lateral_shapes_with_different_input_widths() {
    let set: LateralSet<f64> =
        lateral_init(&[5, 8, 6, 3], &[2, 8, 6, 3], 1.0, &mut stream(1, 0, 0)).unwrap();
    let shapes: Vec<_> = set.matrices().iter().map(|m| m.dim()).collect();
    assert_eq!(shapes, vec![(6, 8), (3, 6)]);
}

#[test]
fn mu_zero_still_allocates() {
    let set: LateralSet<f64> =
        lateral_init(&[4, 6, 3], &[2, 6, 3], 0.0, &mut stream(1, 0, 0)).unwrap();
    assert_eq!(set.matrices().len(), 1);
    assert!(set.matrices()[0].iter().any(|&v| v != 0.0));
}

#[test]
fn lateral_init_is_deterministic() {
    let a: LateralSet<f64> =
        lateral_init(&[4, 6, 3], &[2, 6, 3], 0.5, &mut stream(2, 0, 0)).unwrap();
    let b: LateralSet<f64> =
        lateral_init(&[4, 6, 3], &[2, 6, 3], 0.5, &mut stream(2, 0, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lateral_init_rejects_bad_input() {
    let mut rng = stream(0, 0, 0);
    assert!(matches!(
        lateral_init::<f64, _>(&[4, 6, 3], &[2, 3], 0.5, &mut rng),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        lateral_init::<f64, _>(&[4, 6, 3], &[2, 6, 3], 1.5, &mut rng),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        lateral_init::<f64, _>(&[4, 6, 3], &[2, 6, 3], -0.1, &mut rng),
        Err(Error::Config(_))
    ));
}

#[test]
fn model_validation_catches_mismatches() {
    let m = random_model(&[4, 6, 3], &[2, 6, 3], 0.5, 1);
    let other = random_model(&[4, 5, 3], &[2, 5, 3], 0.5, 1);
    assert!(matches!(
        ChflClientModel::new(m.common.clone(), m.unique.clone(), other.lateral.clone()),
        Err(Error::Shape(_))
    ));
    let four_classes = mlp_init(&[2, 6, 4], &mut stream(0, 0, 0)).unwrap();
    assert!(matches!(
        ChflClientModel::new(m.common.clone(), four_classes, m.lateral.clone()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn hand_evaluated_two_layer_model() {
    let layer = |w: Array2<f64>, b: Array1<f64>| DenseLayerParams {
        weights: w,
        biases: b,
    };
    use crate::nn::DenseLayerParams;
    use ndarray::Array1;
    let common = MlpParams::from_layers(vec![
        layer(array![[1.0, -1.0], [0.5, 2.0]], array![0.1, -0.2]),
        layer(array![[1.0, 0.0], [-1.0, 1.0]], array![0.0, 0.3]),
    ])
    .unwrap();
    let unique = MlpParams::from_layers(vec![
        layer(array![[0.3, 0.7], [-0.4, 0.2]], array![0.0, 0.1]),
        layer(array![[0.5, -0.5], [1.0, 1.0]], array![0.2, 0.0]),
    ])
    .unwrap();
    let lateral = LateralSet::new(vec![array![[0.2, -0.1], [0.3, 0.4]]], 0.5).unwrap();
    let model = ChflClientModel::new(common, unique, lateral).unwrap();
    let (probs, cache) = chfl_forward(
        &model,
        array![[1.0, 2.0]].view(),
        array![[-1.0, 0.5]].view(),
    )
    .unwrap();

    // z_c(1) = relu([-0.9, 4.3]) = [0, 4.3];  z_c(2) = [0, 4.6]
    // z_u(1) = relu([0.05, 0.6]);  z_u(2) = [-0.075, 0.65] + 0.5·[-0.43, 1.72] = [-0.29, 1.51]
    // softmax([-0.29, 6.11])
    let expected_logits = [-0.29, 6.11];
    let expected_probs = [0.0016588010801744213, 0.9983411989198255];
    for c in 0..2 {
        assert!((cache.combined_logits[[0, c]] - expected_logits[c]).abs() < 1e-12);
        assert!((probs[[0, c]] - expected_probs[c]).abs() < 1e-12);
    }
    assert!((cache.unique.logits()[[0, 0]] - -0.29).abs() < 1e-12);
}

#[test]
fn inert_unique_column_reduces_to_common_softmax() {
    let mut model = random_model(&[4, 6, 3], &[2, 6, 3], 0.0, 3);
    model.unique = model.unique.zeros_like();
    let xc = random_batch(5, 4, 1);
    let xu = random_batch(5, 2, 2);
    let (probs, _) = chfl_forward(&model, xc.view(), xu.view()).unwrap();
    let (logits, _) = mlp_forward(&model.common, xc.view()).unwrap();
    assert_eq!(probs, softmax(logits.view()));
}

#[test]
fn zero_laterals_decouple_unique_column() {
    let mut model = random_model(&[4, 6, 5, 3], &[2, 6, 5, 3], 0.7, 4);
    for m in model.lateral.matrices_mut() {
        m.fill(0.0);
    }
    let xc = random_batch(3, 4, 1);
    let xu = random_batch(3, 2, 2);
    let (probs, cache) = chfl_forward(&model, xc.view(), xu.view()).unwrap();
    let (zu, _) = mlp_forward(&model.unique, xu.view()).unwrap();
    let (zc, _) = mlp_forward(&model.common, xc.view()).unwrap();
    for (a, b) in cache.unique.logits().iter().zip(zu.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    let expected = softmax((&zc + &zu).view());
    for (a, b) in probs.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn mu_zero_isolates_unique_column_from_common_input() {
    let model = random_model(&[4, 6, 5, 3], &[2, 6, 5, 3], 0.0, 5);
    let xu = random_batch(4, 2, 2);
    let (_, a) = chfl_forward(&model, random_batch(4, 4, 10).view(), xu.view()).unwrap();
    let (_, b) = chfl_forward(&model, random_batch(4, 4, 11).view(), xu.view()).unwrap();
    assert_eq!(a.unique.logits(), b.unique.logits());
    assert_ne!(a.common.logits(), b.common.logits());

    let mut coupled = model.clone();
    coupled.lateral.set_mu(0.5).unwrap();
    let (_, c) = chfl_forward(&coupled, random_batch(4, 4, 10).view(), xu.view()).unwrap();
    let (_, d) = chfl_forward(&coupled, random_batch(4, 4, 11).view(), xu.view()).unwrap();
    assert_ne!(c.unique.logits(), d.unique.logits());
}

#[test]
fn zeroed_unique_output_predicts_common_argmax() {
    let mut model = random_model(&[4, 6, 5, 3], &[2, 6, 5, 3], 0.8, 6);
    let last = model.depth() - 1;
    model.unique.layers_mut()[last].weights.fill(0.0);
    model.unique.layers_mut()[last].biases.fill(0.0);
    model.lateral.matrices_mut()[last - 1].fill(0.0);
    let xc = random_batch(20, 4, 1);
    let (probs, _) = chfl_forward(&model, xc.view(), random_batch(20, 2, 2).view()).unwrap();
    let (logits, _) = common_logits(&model, xc.view()).unwrap();
    assert_eq!(
        crate::nn::argmax_rows(probs.view()),
        crate::nn::argmax_rows(logits.view())
    );
}

#[test]
fn common_logits_is_plain_forward() {
    let model = random_model(&[4, 6, 3], &[2, 6, 3], 0.3, 7);
    let xc = random_batch(6, 4, 1);
    let (a, _) = common_logits(&model, xc.view()).unwrap();
    let (b, _) = mlp_forward(&model.common, xc.view()).unwrap();
    assert_eq!(a, b);
    let mut zeroed = model.clone();
    zeroed.common = zeroed.common.zeros_like();
    let (z, _) = common_logits(&zeroed, xc.view()).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn forward_rejects_mismatched_batches() {
    let model = random_model(&[4, 6, 3], &[2, 6, 3], 0.3, 7);
    let xc = random_batch(3, 4, 1);
    assert!(matches!(
        chfl_forward(&model, xc.view(), random_batch(3, 3, 2).view()),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        chfl_forward(&model, xc.view(), random_batch(2, 2, 2).view()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn mu_zero_gives_exactly_zero_lateral_gradients() {
    let model = random_model(&[4, 6, 5, 3], &[2, 6, 5, 3], 0.0, 8);
    let (_, cache) = chfl_forward(
        &model,
        random_batch(4, 4, 1).view(),
        random_batch(4, 2, 2).view(),
    )
    .unwrap();
    let (_, g) = softmax_cross_entropy_labels(cache.combined_logits.view(), &[0, 1, 2, 1]).unwrap();
    let grads = chfl_backward_unique(&model, &cache, g.view()).unwrap();
    assert!(grads.lateral.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    assert!(grads
        .unique
        .tensors()
        .iter()
        .any(|t| t.iter().any(|&v| v != 0.0)));
}

#[test]
fn zero_upstream_gives_zero_unique_gradients() {
    let model = random_model(&[4, 6, 3], &[2, 6, 3], 0.5, 9);
    let (_, cache) = chfl_forward(
        &model,
        random_batch(4, 4, 1).view(),
        random_batch(4, 2, 2).view(),
    )
    .unwrap();
    let grads = chfl_backward_unique(&model, &cache, Array2::zeros((4, 3)).view()).unwrap();
    assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn backward_rejects_foreign_cache() {
    let model = random_model(&[4, 6, 3], &[2, 6, 3], 0.5, 9);
    let other = random_model(&[4, 5, 3], &[2, 5, 3], 0.5, 9);
    let (_, cache) = chfl_forward(
        &other,
        random_batch(4, 4, 1).view(),
        random_batch(4, 2, 2).view(),
    )
    .unwrap();
    assert!(matches!(
        chfl_backward_unique(&model, &cache, Array2::zeros((4, 3)).view()),
        Err(Error::State(_))
    ));
}

#[test]
fn unique_gradients_match_finite_differences() {
    for (seed, &mu) in [0.0, 0.3, 1.0].iter().enumerate() {
        let model = random_model(&[3, 7, 5, 4], &[2, 7, 5, 4], mu, 20 + seed as u64);
        let xc = random_batch(5, 3, 1);
        let xu = random_batch(5, 2, 2);
        let labels = [3usize, 0, 1, 2, 1];
        let loss = |side: &UniqueSide<f64>| {
            let (_, c) = chfl_forward(&side.0, xc.view(), xu.view()).unwrap();
            softmax_cross_entropy_labels(c.combined_logits.view(), &labels)
                .unwrap()
                .0
        };
        let (_, cache) = chfl_forward(&model, xc.view(), xu.view()).unwrap();
        let (_, g) = softmax_cross_entropy_labels(cache.combined_logits.view(), &labels).unwrap();
        let analytic = chfl_backward_unique(&model, &cache, g.view()).unwrap();
        let numeric = finite_diff_grad(loss, &UniqueSide(model.clone()), 1e-5);
        for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
            for (&a, &n) in a.iter().zip(n) {
                assert!(relative_error(a, n) < 1e-4, "mu={mu}: {a} vs {n}");
            }
        }
        // the oracle leaves the common column untouched
        assert_eq!(numeric.0.common, model.common);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = random_model(&[4, 6, 5, 3], &[2, 6, 5, 3], 0.3, 10);
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    let back: ChflClientModel<f64> = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("CHFL-CHECKPOINT 1\nscalar f64\n"));
}

#[test]
fn checkpoint_rejects_wrong_scalar_and_truncation() {
    let model = random_model(&[4, 6, 3], &[2, 6, 3], 0.3, 10);
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    assert!(matches!(
        read_checkpoint::<f32, _>(buf.as_slice()),
        Err(Error::Checkpoint(_))
    ));
    let cut = &buf[..buf.len() / 2];
    assert!(matches!(
        read_checkpoint::<f64, _>(cut),
        Err(Error::Checkpoint(_))
    ));
    let bumped = String::from_utf8(buf.clone()).unwrap().replacen(
        "CHFL-CHECKPOINT 1",
        "CHFL-CHECKPOINT 9",
        1,
    );
    assert!(matches!(
        read_checkpoint::<f64, _>(bumped.as_bytes()),
        Err(Error::Checkpoint(_))
    ));
}
