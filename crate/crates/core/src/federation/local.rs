use ndarray::{Array2, Axis};

use super::engine::{epoch_batches, gather_labels, train_step_mlp};
use super::metrics::{RoundMetrics, RunMetrics};
use super::{map_clients, prepare_clients, FederationConfig, Method, Plateau};
use crate::data::ClientDataset;
use crate::error::Result;
use crate::nn::{accuracy, mlp_forward, mlp_init, softmax, AdamState, MlpParams};
use crate::rng::{stream, tag, StreamRng};
use crate::scalar::Scalar;

struct LocalClient<T> {
    net: MlpParams<T>,
    adam: AdamState<T>,
    rng: StreamRng,
    plateau: Plateau,
    stopped: bool,
    train: (Array2<T>, Vec<usize>),
    val: (Array2<T>, Vec<usize>),
    test: (Array2<T>, Vec<usize>),
}

impl<T: Scalar> LocalClient<T> {
    fn accuracies(&self) -> Result<(f64, f64)> {
        let acc = |(x, y): &(Array2<T>, Vec<usize>)| -> Result<f64> {
            let (logits, _) = mlp_forward(&self.net, x.view())?;
            Ok(accuracy(softmax(logits.view()).view(), y))
        };
        Ok((acc(&self.val)?, acc(&self.test)?))
    }
}

/// Every client trains its own MLP on `[x_common | x_unique]` for `rounds`
/// blocks of `local_epochs` epochs, with no communication. Adam state
/// persists across blocks and batch order uses the same per-client stream
/// as the federated methods. With early stopping, each client stops on its
/// own validation plateau.
pub fn run_local_baseline<T: Scalar>(
    cfg: &FederationConfig,
    clients: &[ClientDataset<T>],
    mut observer: Option<&mut dyn FnMut(&RoundMetrics)>,
) -> Result<RunMetrics> {
    let prepared = prepare_clients(cfg, clients)?;
    let lr = T::of(cfg.learning_rate);
    let mut states: Vec<LocalClient<T>> = prepared
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let dims = cfg.dims(p.train.x_common.ncols() + p.train.x_unique.ncols());
            let net = mlp_init(
                &dims,
                &mut stream(cfg.param_seed, tag::LOCAL_INIT, k as u64),
            )?;
            Ok(LocalClient {
                adam: AdamState::new(&net),
                net,
                rng: stream(cfg.batch_seed, tag::BATCH, k as u64),
                plateau: Plateau::new(cfg.early_stop_patience),
                stopped: false,
                train: (p.train.x_all(), p.train.labels),
                val: (p.val.x_all(), p.val.labels),
                test: (p.test.x_all(), p.test.labels),
            })
        })
        .collect::<Result<_>>()?;

    let evaluate = |states: &mut [LocalClient<T>], round: usize| -> Result<RoundMetrics> {
        let accs: Vec<(f64, f64)> = map_clients(cfg.parallel, states, |_, s| s.accuracies())
            .into_iter()
            .collect::<Result<_>>()?;
        Ok(RoundMetrics::new(
            Method::Local,
            None,
            round,
            accs.iter().map(|a| a.0).collect(),
            accs.iter().map(|a| a.1).collect(),
        ))
    };

    let mut history = Vec::new();
    if cfg.eval_every_round {
        let m = evaluate(&mut states, 0)?;
        if let Some(obs) = observer.as_mut() {
            obs(&m);
        }
        history.push(m);
    }
    let mut rounds_run = 0;
    for round in 1..=cfg.rounds {
        if states.iter().all(|s| s.stopped) {
            break;
        }
        map_clients(cfg.parallel, &mut states, |_, s| -> Result<()> {
            if s.stopped {
                return Ok(());
            }
            for _ in 0..cfg.local_epochs {
                for rows in epoch_batches(s.train.1.len(), cfg.batch_size, &mut s.rng) {
                    let x = s.train.0.select(Axis(0), &rows);
                    let y = gather_labels(&s.train.1, &rows);
                    train_step_mlp(&mut s.net, &mut s.adam, x.view(), &y, lr)?;
                }
            }
            Ok(())
        })
        .into_iter()
        .collect::<Result<Vec<()>>>()?;
        rounds_run = round;
        if cfg.tracks_validation() {
            let m = evaluate(&mut states, round)?;
            for (s, &v) in states.iter_mut().zip(&m.per_client_val_acc) {
                if !s.stopped && s.plateau.observe(v) {
                    s.stopped = true;
                }
            }
            if let Some(obs) = observer.as_mut() {
                obs(&m);
            }
            history.push(m);
        }
    }
    let last = match history.last() {
        Some(m) if m.round == rounds_run => m.clone(),
        _ => evaluate(&mut states, rounds_run)?,
    };
    Ok(RunMetrics::from_final(last, history))
}
