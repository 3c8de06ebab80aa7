use ndarray::{concatenate, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::metrics::{select_mu_per_client, RoundMetrics, RunMetrics, TunedChfl};
use super::{
    aggregate, map_clients, prepare_clients, FederationConfig, Method, Plateau, PreparedClient,
};
use crate::columns::{
    lateral_init, unique_backward_parts, unique_forward_parts, ChflClientModel, LateralSet,
};
use crate::data::{ClientDataset, PartitionData};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, mlp_backward, mlp_forward, mlp_init, softmax, softmax_cross_entropy_labels,
    AdamState, ForwardCache, MlpParams, ParamTensors,
};
use crate::rng::{stream, tag, StreamRng};
use crate::scalar::Scalar;

/// A per-client model trained next to the federated common column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadSpec {
    /// Unique column with lateral connections at strength `mu`.
    Chfl { mu: f64 },
    /// Net over `[x_unique | common logits]` whose output alone is the
    /// prediction.
    Concat,
}

impl HeadSpec {
    fn method(self) -> (Method, Option<f64>) {
        match self {
            HeadSpec::Chfl { mu } if mu == 0.0 => (Method::ChflMu0, Some(0.0)),
            HeadSpec::Chfl { mu } => (Method::Chfl, Some(mu)),
            HeadSpec::Concat => (Method::Concat, None),
        }
    }
}

/// Trained state of one head on one client.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadModel<T> {
    /// The client has no unique features, so it predicts with the common
    /// column alone.
    Disabled,
    Lateral {
        unique: MlpParams<T>,
        lateral: LateralSet<T>,
    },
    Concat {
        net: MlpParams<T>,
    },
}

#[derive(Clone, Debug)]
struct HeadState<T> {
    model: HeadModel<T>,
    adam: Option<AdamState<T>>,
}

impl<T: Scalar> HeadState<T> {
    fn lateral(unique: MlpParams<T>, lateral: LateralSet<T>) -> Self {
        let lengths: Vec<usize> = unique
            .tensors()
            .iter()
            .chain(lateral.tensors().iter())
            .map(|t| t.len())
            .collect();
        let adam = AdamState::for_lengths(
            lengths.iter().copied(),
            T::of(crate::nn::DEFAULT_BETA1),
            T::of(crate::nn::DEFAULT_BETA2),
            T::of(crate::nn::DEFAULT_EPSILON),
        );
        Self {
            model: HeadModel::Lateral { unique, lateral },
            adam: Some(adam),
        }
    }

    fn init(
        spec: HeadSpec,
        k: usize,
        common_dims: &[usize],
        unique_width: usize,
        cfg: &FederationConfig,
    ) -> Result<Self> {
        let k = k as u64;
        match spec {
            HeadSpec::Chfl { .. } if unique_width == 0 => Ok(Self {
                model: HeadModel::Disabled,
                adam: None,
            }),
            HeadSpec::Chfl { mu } => {
                let unique_dims = cfg.dims(unique_width);
                let unique = mlp_init(
                    &unique_dims,
                    &mut stream(cfg.param_seed, tag::UNIQUE_INIT, k),
                )?;
                let lateral = lateral_init(
                    common_dims,
                    &unique_dims,
                    T::of(mu),
                    &mut stream(cfg.param_seed, tag::LATERAL_INIT, k),
                )?;
                Ok(Self::lateral(unique, lateral))
            }
            HeadSpec::Concat => {
                let net = mlp_init(
                    &cfg.dims(unique_width + cfg.class_count),
                    &mut stream(cfg.param_seed, tag::CONCAT_INIT, k),
                )?;
                let adam = AdamState::new(&net);
                Ok(Self {
                    model: HeadModel::Concat { net },
                    adam: Some(adam),
                })
            }
        }
    }

    /// One optimizer step with the common side held fixed.
    fn step(
        &mut self,
        common: &ForwardCache<T>,
        x_unique: ArrayView2<'_, T>,
        labels: &[usize],
        lr: T,
    ) -> Result<()> {
        let adam = match self.adam.as_mut() {
            Some(a) => a,
            None => return Ok(()),
        };
        match &mut self.model {
            HeadModel::Disabled => Ok(()),
            HeadModel::Lateral { unique, lateral } => {
                let ucache = unique_forward_parts(unique, lateral, common, x_unique)?;
                let combined = common.logits() + ucache.logits();
                let (_, grad) = softmax_cross_entropy_labels(combined.view(), labels)?;
                let grads = unique_backward_parts(unique, lateral, common, &ucache, grad.view())?;
                let mut params = unique.tensors_mut();
                params.extend(lateral.tensors_mut());
                adam.step_tensors(params, grads.tensors(), lr)
            }
            HeadModel::Concat { net } => {
                let input = concat_input(x_unique, common.logits().view());
                train_step_mlp(net, adam, input.view(), labels, lr).map(|_| ())
            }
        }
    }

    /// Class probabilities for a batch given the common column's cache.
    fn predict(
        &self,
        common: &ForwardCache<T>,
        x_unique: ArrayView2<'_, T>,
    ) -> Result<ndarray::Array2<T>> {
        match &self.model {
            HeadModel::Disabled => Ok(softmax(common.logits().view())),
            HeadModel::Lateral { unique, lateral } => {
                let ucache = unique_forward_parts(unique, lateral, common, x_unique)?;
                Ok(softmax((common.logits() + ucache.logits()).view()))
            }
            HeadModel::Concat { net } => {
                let (logits, _) =
                    mlp_forward(net, concat_input(x_unique, common.logits().view()).view())?;
                Ok(softmax(logits.view()))
            }
        }
    }
}

fn concat_input<T: Scalar>(
    x_unique: ArrayView2<'_, T>,
    logits: ArrayView2<'_, T>,
) -> ndarray::Array2<T> {
    concatenate(Axis(1), &[x_unique, logits])
        .expect("row counts agree")
        .as_standard_layout()
        .into_owned()
}

/// Forward, cross-entropy, backward, Adam. Returns the pre-update cache.
pub(crate) fn train_step_mlp<T: Scalar>(
    params: &mut MlpParams<T>,
    adam: &mut AdamState<T>,
    x: ArrayView2<'_, T>,
    labels: &[usize],
    lr: T,
) -> Result<ForwardCache<T>> {
    let (logits, cache) = mlp_forward(params, x)?;
    let (_, grad) = softmax_cross_entropy_labels(logits.view(), labels)?;
    let grads = mlp_backward(params, &cache, grad.view())?;
    adam.step(params, &grads, lr)?;
    Ok(cache)
}

/// Row indices of one epoch, shuffled and cut into batches.
pub(crate) fn epoch_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn gather_labels(labels: &[usize], rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&r| labels[r]).collect()
}

/// `E` epochs on one client: per batch a common step on the common-only
/// loss, then one step of every head against the combined output.
fn local_round<T: Scalar>(
    common: &mut MlpParams<T>,
    heads: &mut [HeadState<T>],
    train: &PartitionData<T>,
    cfg: &FederationConfig,
    rng: &mut StreamRng,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("local training on an empty dataset".into()));
    }
    let lr = T::of(cfg.learning_rate);
    let mut common_adam = AdamState::new(common);
    let any_head = heads.iter().any(|h| h.adam.is_some());
    for _ in 0..cfg.local_epochs {
        for rows in epoch_batches(train.len(), cfg.batch_size, rng) {
            let x_common = train.x_common.select(Axis(0), &rows);
            let labels = gather_labels(&train.labels, &rows);
            let before = train_step_mlp(common, &mut common_adam, x_common.view(), &labels, lr)?;
            if !any_head {
                continue;
            }
            let cache = if cfg.unique_step_uses_updated_common {
                mlp_forward(common, x_common.view())?.1
            } else {
                before
            };
            let x_unique = train.x_unique.select(Axis(0), &rows);
            for head in heads.iter_mut() {
                head.step(&cache, x_unique.view(), &labels, lr)?;
            }
        }
    }
    Ok(())
}

/// `E` epochs of FedAvg local learning on common features, starting from
/// `theta_start`. Adam starts fresh; batch order comes from `rng`.
pub fn client_local_fedavg<T: Scalar>(
    theta_start: &MlpParams<T>,
    data: &PartitionData<T>,
    cfg: &FederationConfig,
    rng: &mut StreamRng,
) -> Result<MlpParams<T>> {
    let mut theta = theta_start.clone();
    local_round(&mut theta, &mut [], data, cfg, rng)?;
    Ok(theta)
}

/// One CHFL client round. `model.common` is replaced by `theta_c_start` and
/// trained; the unique column and lateral matrices are updated in place
/// with `unique_adam`, which must cover [`ChflClientModel::unique_tensors`].
/// Returns the trained common column.
pub fn client_local_chfl<T: Scalar>(
    theta_c_start: &MlpParams<T>,
    model: &mut ChflClientModel<T>,
    unique_adam: &mut AdamState<T>,
    data: &PartitionData<T>,
    cfg: &FederationConfig,
    rng: &mut StreamRng,
) -> Result<MlpParams<T>> {
    model.validate()?;
    if !theta_c_start.same_shape(&model.common) {
        return Err(Error::Shape(format!(
            "broadcast common column {:?} does not fit client column {:?}",
            theta_c_start.dims(),
            model.common.dims()
        )));
    }
    if data.x_common.ncols() != model.common.input_dim()
        || data.x_unique.ncols() != model.unique.input_dim()
    {
        return Err(Error::Shape(format!(
            "data widths ({}, {}) do not match model inputs ({}, {})",
            data.x_common.ncols(),
            data.x_unique.ncols(),
            model.common.input_dim(),
            model.unique.input_dim()
        )));
    }
    let mut head = HeadState {
        model: HeadModel::Lateral {
            unique: model.unique.clone(),
            lateral: model.lateral.clone(),
        },
        adam: Some(unique_adam.clone()),
    };
    let mut theta = theta_c_start.clone();
    local_round(&mut theta, std::slice::from_mut(&mut head), data, cfg, rng)?;
    if let (HeadModel::Lateral { unique, lateral }, Some(adam)) = (head.model, head.adam) {
        model.unique = unique;
        model.lateral = lateral;
        *unique_adam = adam;
    }
    model.common = theta.clone();
    Ok(theta)
}

/// Result of [`run_federation`].
#[derive(Clone, Debug)]
pub struct FederationOutcome<T> {
    pub global_common: MlpParams<T>,
    /// `heads[h][k]`: head `h` on client `k`.
    pub heads: Vec<Vec<HeadModel<T>>>,
    pub common_metrics: RunMetrics,
    /// One entry per requested head, in request order.
    pub head_metrics: Vec<RunMetrics>,
}

struct ClientState<T> {
    heads: Vec<HeadState<T>>,
    rng: StreamRng,
}

type ClientEval = (f64, f64, Vec<(f64, f64)>);

fn evaluate_client<T: Scalar>(
    global: &MlpParams<T>,
    heads: &[HeadState<T>],
    data: &PreparedClient<T>,
) -> Result<ClientEval> {
    let mut accs = [(0.0, Vec::new()), (0.0, Vec::new())];
    for (slot, part) in accs.iter_mut().zip([&data.val, &data.test]) {
        let (logits, cache) = mlp_forward(global, part.x_common.view())?;
        slot.0 = accuracy(softmax(logits.view()).view(), &part.labels);
        for head in heads {
            slot.1.push(accuracy(
                head.predict(&cache, part.x_unique.view())?.view(),
                &part.labels,
            ));
        }
    }
    let [(val_c, val_h), (test_c, test_h)] = accs;
    Ok((val_c, test_c, val_h.into_iter().zip(test_h).collect()))
}

fn evaluate_round<T: Scalar>(
    cfg: &FederationConfig,
    specs: &[HeadSpec],
    global: &MlpParams<T>,
    states: &mut [ClientState<T>],
    prepared: &[PreparedClient<T>],
    round: usize,
) -> Result<(RoundMetrics, Vec<RoundMetrics>)> {
    let evals: Vec<ClientEval> = map_clients(cfg.parallel, states, |k, s| {
        evaluate_client(global, &s.heads, &prepared[k])
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let common = RoundMetrics::new(
        Method::Common,
        None,
        round,
        evals.iter().map(|e| e.0).collect(),
        evals.iter().map(|e| e.1).collect(),
    );
    let heads = specs
        .iter()
        .enumerate()
        .map(|(h, spec)| {
            let (method, mu) = spec.method();
            RoundMetrics::new(
                method,
                mu,
                round,
                evals.iter().map(|e| e.2[h].0).collect(),
                evals.iter().map(|e| e.2[h].1).collect(),
            )
        })
        .collect();
    Ok((common, heads))
}

/// The shared server loop. Trains the common column with FedAvg and every
/// head in `specs` alongside it on every client. Heads never influence the
/// common column, so one call yields the Common metrics together with any
/// number of CHFL / Concat variants.
///
/// Early stopping watches the mean validation accuracy of the common
/// column. `observer` sees every evaluated round.
pub fn run_federation<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
    specs: &[HeadSpec],
    mut observer: Option<&mut dyn FnMut(&RoundMetrics)>,
) -> Result<FederationOutcome<T>> {
    let prepared = prepare_clients(cfg, clients)?;
    for spec in specs {
        if let HeadSpec::Chfl { mu } = spec {
            if !(0.0..=1.0).contains(mu) {
                return Err(Error::Config(format!("mu must lie in [0, 1], got {mu}")));
            }
        }
    }
    let common_dims = cfg.dims(clients[0].common_width());
    let mut global: MlpParams<T> = mlp_init(
        &common_dims,
        &mut stream(cfg.param_seed, tag::COMMON_INIT, 0),
    )?;
    let mut states: Vec<ClientState<T>> = clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let heads = specs
                .iter()
                .map(|&spec| HeadState::init(spec, k, &common_dims, c.unique_width(), cfg))
                .collect::<Result<_>>()?;
            Ok(ClientState {
                heads,
                rng: stream(cfg.batch_seed, tag::BATCH, k as u64),
            })
        })
        .collect::<Result<_>>()?;

    let mut common_history = Vec::new();
    let mut head_history: Vec<Vec<RoundMetrics>> = vec![Vec::new(); specs.len()];
    let mut emit = |common: &RoundMetrics,
                    heads: &[RoundMetrics],
                    ch: &mut Vec<RoundMetrics>,
                    hh: &mut [Vec<RoundMetrics>]| {
        if let Some(obs) = observer.as_mut() {
            obs(common);
            heads.iter().for_each(|m| obs(m));
        }
        ch.push(common.clone());
        for (h, m) in heads.iter().enumerate() {
            hh[h].push(m.clone());
        }
    };

    if cfg.eval_every_round {
        let (c, h) = evaluate_round(cfg, specs, &global, &mut states, &prepared, 0)?;
        emit(&c, &h, &mut common_history, &mut head_history);
    }
    let mut plateau = Plateau::new(cfg.early_stop_patience);
    let mut rounds_run = 0;
    let mut last = None;
    for round in 1..=cfg.rounds {
        let locals: Vec<MlpParams<T>> = map_clients(cfg.parallel, &mut states, |k, s| {
            let mut theta = global.clone();
            local_round(
                &mut theta,
                &mut s.heads,
                &prepared[k].train,
                cfg,
                &mut s.rng,
            )?;
            Ok(theta)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        global = aggregate(&locals)?;
        rounds_run = round;
        if cfg.tracks_validation() {
            let (c, h) = evaluate_round(cfg, specs, &global, &mut states, &prepared, round)?;
            let stop = plateau.observe(c.mean_val_acc);
            emit(&c, &h, &mut common_history, &mut head_history);
            last = Some((c, h));
            if stop {
                break;
            }
        }
    }
    let (common_final, heads_final) = match last {
        Some(l) => l,
        None => evaluate_round(cfg, specs, &global, &mut states, &prepared, rounds_run)?,
    };
    let head_metrics = heads_final
        .into_iter()
        .zip(head_history)
        .map(|(m, hist)| RunMetrics::from_final(m, hist))
        .collect();
    let mut heads: Vec<Vec<HeadModel<T>>> = vec![Vec::with_capacity(states.len()); specs.len()];
    for state in states {
        for (h, head) in state.heads.into_iter().enumerate() {
            heads[h].push(head.model);
        }
    }
    Ok(FederationOutcome {
        global_common: global,
        heads,
        common_metrics: RunMetrics::from_final(common_final, common_history),
        head_metrics,
    })
}

/// FedAvg on common features. Returns `θ_c^T` and the per-client accuracy of
/// `θ_c^T` on each client's own common-feature partitions.
pub fn run_fedavg<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
) -> Result<(MlpParams<T>, RunMetrics)> {
    let out = run_federation(cfg, clients, &[], None)?;
    Ok((out.global_common, out.common_metrics))
}

/// CHFL at `cfg.mu`. Client models carry the final global common column;
/// clients without unique features get `None` and are scored with the
/// common column alone.
pub fn run_chfl<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
) -> Result<(MlpParams<T>, Vec<Option<ChflClientModel<T>>>, RunMetrics)> {
    let mut out = run_federation(cfg, clients, &[HeadSpec::Chfl { mu: cfg.mu }], None)?;
    let models = out
        .heads
        .remove(0)
        .into_iter()
        .map(|h| match h {
            HeadModel::Lateral { unique, lateral } => {
                ChflClientModel::new(out.global_common.clone(), unique, lateral).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok((out.global_common, models, out.head_metrics.remove(0)))
}

/// CHFL at every `μ` in `mus` from one shared common trajectory, with the
/// per-client choice of `μ` by validation accuracy.
pub fn run_chfl_grid<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
    mus: &[f64],
) -> Result<(Vec<RunMetrics>, TunedChfl)> {
    let specs: Vec<HeadSpec> = mus.iter().map(|&mu| HeadSpec::Chfl { mu }).collect();
    let out = run_federation(cfg, clients, &specs, None)?;
    let tuned = select_mu_per_client(&out.head_metrics)?;
    Ok((out.head_metrics, tuned))
}

/// FedAvg common net plus a per-client net over `[x_unique | raw common
/// logits]`.
pub fn run_concat_baseline<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
) -> Result<RunMetrics> {
    let mut out = run_federation(cfg, clients, &[HeadSpec::Concat], None)?;
    Ok(out.head_metrics.remove(0))
}
