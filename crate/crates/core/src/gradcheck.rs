//! Gradient oracle suite: analytic gradients of random small models against
//! central finite differences, in `f64`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::columns::{
    chfl_backward_unique, chfl_forward, lateral_init, ChflClientModel, UniqueSide,
};
use crate::error::Result;
use crate::nn::{
    affine, finite_diff_grad, mlp_backward, mlp_forward, mlp_init, relative_error,
    softmax_cross_entropy_labels, MlpParams, ParamTensors, DEFAULT_FD_EPSILON,
};
use crate::rng::{stream, StreamRng};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Coupling strengths exercised for the two-column model.
pub const DEFAULT_MUS: [f64; 3] = [0.0, 0.3, 1.0];

/// Hidden pre-activations closer to zero than this are resampled: a finite
/// difference that straddles a ReLU kink measures a one-sided slope.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random cases per model family (plain MLP, and CHFL at each `μ`).
    pub cases: usize,
    pub mus: Vec<f64>,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_width: usize,
    pub max_classes: usize,
    pub max_batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 25,
            mus: DEFAULT_MUS.to_vec(),
            epsilon: DEFAULT_FD_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
            max_width: 8,
            max_classes: 4,
            max_batch: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    /// `"mlp"` or `"chfl"`.
    pub family: String,
    pub mu: Option<f64>,
    pub common_dims: Vec<usize>,
    pub unique_dims: Option<Vec<usize>>,
    pub batch: usize,
    pub checked_entries: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

fn random_dims(
    rng: &mut StreamRng,
    input: usize,
    depth: usize,
    classes: usize,
    max_width: usize,
) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend((1..depth).map(|_| rng.random_range(1..=max_width)));
    dims.push(classes);
    dims
}

fn random_batch(rng: &mut StreamRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Hidden pre-activations of a plain MLP.
fn mlp_preactivations(params: &MlpParams<f64>, x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut out = Vec::new();
    let mut h = x.clone();
    for layer in &params.layers()[..params.depth() - 1] {
        let z = affine(&h.view(), layer);
        h = z.mapv(|v| v.max(0.0));
        out.push(z);
    }
    out
}

fn clear_of_kinks(zs: &[Array2<f64>]) -> bool {
    zs.iter().all(|z| z.iter().all(|v| v.abs() > KINK_MARGIN))
}

/// Hidden pre-activations of the unique column, lateral term included.
fn unique_preactivations(
    model: &ChflClientModel<f64>,
    xc: &Array2<f64>,
    xu: &Array2<f64>,
) -> Vec<Array2<f64>> {
    let (_, cache) = mlp_forward(&model.common, xc.view()).expect("shapes fixed by construction");
    let mu = model.mu();
    let mut out = Vec::new();
    let mut h = xu.clone();
    for (j, layer) in model.unique.layers()[..model.depth() - 1]
        .iter()
        .enumerate()
    {
        let mut z = affine(&h.view(), layer);
        if j >= 1 {
            let lateral = model.lateral.matrix(j + 1).expect("depth checked");
            z.scaled_add(mu, &cache.activations[j - 1].dot(&lateral.t()));
        }
        h = z.mapv(|v| v.max(0.0));
        out.push(z);
    }
    out
}

fn compare<A: ParamTensors<f64>, N: ParamTensors<f64>>(analytic: &A, numeric: &N) -> (usize, f64) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        for (&a, &n) in a.iter().zip(n.iter()) {
            worst = worst.max(relative_error(a, n));
            count += 1;
        }
    }
    (count, worst)
}

fn mlp_case(cfg: &GradcheckConfig, rng: &mut StreamRng) -> Result<CaseResult> {
    loop {
        let depth = rng.random_range(2..=3);
        let classes = rng.random_range(2..=cfg.max_classes.max(2));
        let input = rng.random_range(1..=cfg.max_width);
        let dims = random_dims(rng, input, depth, classes, cfg.max_width);
        let batch = rng.random_range(1..=cfg.max_batch);
        let params = mlp_init(&dims, rng)?;
        let x = random_batch(rng, batch, dims[0]);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        if !clear_of_kinks(&mlp_preactivations(&params, &x)) {
            continue;
        }
        let loss = |p: &MlpParams<f64>| {
            let (logits, _) = mlp_forward(p, x.view()).expect("shapes fixed");
            softmax_cross_entropy_labels(logits.view(), &labels)
                .expect("labels in range")
                .0
        };
        let numeric = finite_diff_grad(loss, &params, cfg.epsilon);
        let (logits, cache) = mlp_forward(&params, x.view())?;
        let (_, g) = softmax_cross_entropy_labels(logits.view(), &labels)?;
        let analytic = mlp_backward(&params, &cache, g.view())?;
        let (checked_entries, worst) = compare(&analytic, &numeric);
        return Ok(CaseResult {
            family: "mlp".into(),
            mu: None,
            common_dims: dims,
            unique_dims: None,
            batch,
            checked_entries,
            max_relative_error: worst,
            passed: worst < cfg.tolerance,
        });
    }
}

fn chfl_case(cfg: &GradcheckConfig, mu: f64, rng: &mut StreamRng) -> Result<CaseResult> {
    loop {
        let depth = rng.random_range(2..=3);
        let classes = rng.random_range(2..=cfg.max_classes.max(2));
        let (common_in, unique_in) = (
            rng.random_range(1..=cfg.max_width),
            rng.random_range(1..=cfg.max_width),
        );
        let common_dims = random_dims(rng, common_in, depth, classes, cfg.max_width);
        let unique_dims = random_dims(rng, unique_in, depth, classes, cfg.max_width);
        let batch = rng.random_range(1..=cfg.max_batch);
        let common = mlp_init(&common_dims, rng)?;
        let unique = mlp_init(&unique_dims, rng)?;
        let lateral = lateral_init(&common_dims, &unique_dims, mu, rng)?;
        let model = ChflClientModel::new(common, unique, lateral)?;
        let xc = random_batch(rng, batch, common_dims[0]);
        let xu = random_batch(rng, batch, unique_dims[0]);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        if !clear_of_kinks(&mlp_preactivations(&model.common, &xc))
            || !clear_of_kinks(&unique_preactivations(&model, &xc, &xu))
        {
            continue;
        }
        let loss = |side: &UniqueSide<f64>| {
            let (_, cache) = chfl_forward(&side.0, xc.view(), xu.view()).expect("shapes fixed");
            softmax_cross_entropy_labels(cache.combined_logits.view(), &labels)
                .expect("labels in range")
                .0
        };
        let side = UniqueSide(model);
        let numeric = finite_diff_grad(loss, &side, cfg.epsilon);
        let (_, cache) = chfl_forward(&side.0, xc.view(), xu.view())?;
        let (_, g) = softmax_cross_entropy_labels(cache.combined_logits.view(), &labels)?;
        let analytic = chfl_backward_unique(&side.0, &cache, g.view())?;
        let (checked_entries, worst) = compare(&analytic, &numeric);
        return Ok(CaseResult {
            family: "chfl".into(),
            mu: Some(mu),
            common_dims,
            unique_dims: Some(unique_dims),
            batch,
            checked_entries,
            max_relative_error: worst,
            passed: worst < cfg.tolerance,
        });
    }
}

/// Runs `cfg.cases` random plain-MLP cases and as many CHFL cases per `μ`.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut cases = Vec::new();
    let mut rng = stream(cfg.seed, 0, 0);
    for _ in 0..cfg.cases {
        cases.push(mlp_case(cfg, &mut rng)?);
    }
    for (i, &mu) in cfg.mus.iter().enumerate() {
        let mut rng = stream(cfg.seed, 1, i as u64);
        for _ in 0..cfg.cases {
            cases.push(chfl_case(cfg, mu, &mut rng)?);
        }
    }
    let max_relative_error = cases
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        passed: cases.iter().all(|c| c.passed),
        max_relative_error,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
        assert_eq!(report.cases.len(), 25 * 4);
        assert!(report.passed, "worst {:e}", report.max_relative_error);
        assert!(report
            .cases
            .iter()
            .all(|c| c.common_dims.len() <= 4 && c.batch <= 5));
    }

    #[test]
    fn suite_is_deterministic() {
        let cfg = GradcheckConfig {
            cases: 3,
            ..Default::default()
        };
        assert_eq!(run_gradcheck(&cfg).unwrap(), run_gradcheck(&cfg).unwrap());
    }

    #[test]
    fn broken_gradients_are_caught() {
        let mut rng = stream(5, 0, 0);
        let params: MlpParams<f64> = mlp_init(&[3, 4, 2], &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, 3);
        let labels = vec![0, 1, 1, 0];
        let (logits, cache) = mlp_forward(&params, x.view()).unwrap();
        let (_, g) = softmax_cross_entropy_labels(logits.view(), &labels).unwrap();
        let mut analytic = mlp_backward(&params, &cache, g.view()).unwrap();
        analytic.layers_mut()[0].weights[[0, 0]] += 0.01;
        let numeric = finite_diff_grad(
            |p: &MlpParams<f64>| {
                let (l, _) = mlp_forward(p, x.view()).unwrap();
                softmax_cross_entropy_labels(l.view(), &labels).unwrap().0
            },
            &params,
            1e-5,
        );
        assert!(compare(&analytic, &numeric).1 > 1e-3);
    }
}
