//! Mini-batch training loop with early stopping on validation accuracy.

use std::fmt;

use rand::Rng;

use super::engine::{evaluate, train_step, Examples};
use super::{adam_step, NetworkParams, Plan, TrainConfig};
use crate::rng::{stream, StreamDomain};

#[derive(Debug)]
pub enum TrainError {
    EmptySplit,
    NonFinite { context: &'static str },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptySplit => write!(f, "training requires non-empty splits"),
            TrainError::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

/// Stops when validation accuracy has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs_since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1);
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    /// Observe one epoch's validation accuracy. Returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> (bool, bool) {
        if val_acc > self.best {
            self.best = val_acc;
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
            (true, false)
        } else {
            self.epochs_since_best += 1;
            (false, self.epochs_since_best >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub params: NetworkParams<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
}

/// Train on shuffled mini-batches; monitor validation accuracy; return the
/// parameters from the best epoch.
///
/// All randomness derives from `config.seed`: network init, per-epoch
/// shuffles, and per-step dropout streams. Identical configs and data give
/// bit-identical outcomes.
pub fn train(
    plan: &Plan,
    train_data: &Examples,
    val_data: &Examples,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_data.is_empty() || val_data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    assert_eq!(train_data.dim, plan.input_len());

    let mut params = NetworkParams::<f32>::init(plan, config.seed);
    let mut best_params = params.layers.clone();
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let n = train_data.len();
    let mut step: u64 = 0;

    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        // Seeded in-place shuffle, one stream per epoch.
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = stream(config.seed, StreamDomain::Shuffle, epoch as u64);
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch_indices in order.chunks(config.batch_size) {
            let batch = train_data.subset(batch_indices);
            let (ce_sum, batch_correct, grads) =
                train_step(plan, &params, &batch.x, &batch.labels, config.seed, step)?;
            loss_sum += ce_sum;
            correct += batch_correct;
            adam_step(&mut params, &grads, config)?;
            step += 1;
        }
        if !loss_sum.is_finite() {
            return Err(TrainError::NonFinite {
                context: "epoch loss",
            });
        }

        let val_acc = evaluate(plan, &params, val_data)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_acc,
        });

        let (improved, stop) = stopper.observe(epoch, val_acc);
        if improved {
            best_params = params.layers.clone();
        }
        if stop {
            break;
        }
    }

    params.layers = best_params;
    if !params.all_finite() {
        return Err(TrainError::NonFinite {
            context: "trained parameters",
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_acc: stopper.best(),
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{reduced_network, Plan};
    use super::*;

    #[test]
    fn stopper_with_patience_one_stops_after_two_epochs() {
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.observe(1, 0.5), (true, false));
        assert_eq!(s.observe(2, 0.4), (false, true));
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn stopper_waits_out_patience() {
        let mut s = EarlyStopper::new(3);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.49), (false, false));
        assert_eq!(s.observe(3, 0.48), (false, false));
        assert_eq!(s.observe(4, 0.51), (true, false));
        assert_eq!(s.observe(5, 0.50), (false, false));
        assert_eq!(s.observe(6, 0.50), (false, false));
        assert_eq!(s.observe(7, 0.50), (false, true));
        assert_eq!(s.best_epoch(), 4);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopper::new(2);
        s.observe(1, 0.3);
        assert_eq!(s.observe(2, 0.3), (false, false));
        assert_eq!(s.observe(3, 0.3), (false, true));
    }

    fn synthetic_examples(n: usize, jitter_seed: u64, shuffle_labels: bool) -> Examples {
        // Ten fixed class prototypes on the reduced 12x12 input; examples
        // are jittered prototypes, labels either consistent or shuffled to
        // sever the signal. Prototypes are shared across calls so train
        // and validation describe the same task.
        let plan = Plan::compile(&reduced_network());
        let dim = plan.input_len();
        let mut proto_rng = stream(424_242, StreamDomain::Probe, 0);
        let prototypes: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..dim).map(|_| proto_rng.gen_range(0.0..1.0)).collect())
            .collect();
        let mut rng = stream(jitter_seed, StreamDomain::Probe, 1);
        let mut x = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 10;
            for &proto in &prototypes[class] {
                let noise: f32 = rng.gen_range(-0.05..0.05);
                x.push((proto + noise).clamp(0.0, 1.0));
            }
            labels.push(class as u8);
        }
        if shuffle_labels {
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                labels.swap(i, j);
            }
        }
        Examples { x, labels, dim }
    }

    #[test]
    fn learns_separable_prototypes_and_stays_deterministic() {
        let plan = Plan::compile(&reduced_network());
        let train_data = synthetic_examples(400, 1, false);
        let val_data = synthetic_examples(200, 2, false);
        let config = TrainConfig {
            max_epochs: 25,
            patience: 25,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&plan, &train_data, &val_data, &config).unwrap();
        assert!(
            a.best_val_acc > 0.9,
            "prototype task should be easy, got {}",
            a.best_val_acc
        );
        let b = train(&plan, &train_data, &val_data, &config).unwrap();
        assert_eq!(a.params.layers, b.params.layers);
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.val_acc, y.val_acc);
            assert_eq!(x.train_loss, y.train_loss);
        }
    }

    #[test]
    fn shuffled_labels_stay_at_chance_on_validation() {
        let plan = Plan::compile(&reduced_network());
        let train_data = synthetic_examples(500, 3, true);
        let val_data = synthetic_examples(500, 4, true);
        let config = TrainConfig {
            max_epochs: 4,
            patience: 4,
            seed: 6,
            ..TrainConfig::default()
        };
        let outcome = train(&plan, &train_data, &val_data, &config).unwrap();
        let final_acc = outcome.history.last().unwrap().val_acc;
        assert!(
            (final_acc - 0.10).abs() <= 0.05,
            "label-shuffled validation accuracy {final_acc} should sit at chance"
        );
    }

    #[test]
    fn empty_split_is_rejected() {
        let plan = Plan::compile(&reduced_network());
        let empty = Examples {
            x: vec![],
            labels: vec![],
            dim: plan.input_len(),
        };
        let data = synthetic_examples(50, 7, false);
        assert!(matches!(
            train(&plan, &empty, &data, &TrainConfig::default()),
            Err(TrainError::EmptySplit)
        ));
        assert!(matches!(
            train(&plan, &data, &empty, &TrainConfig::default()),
            Err(TrainError::EmptySplit)
        ));
    }

    #[test]
    fn memorizes_a_single_batch() {
        // Sanity overfit: train on 32 fixed examples until they classify
        // perfectly when re-evaluated.
        let plan = Plan::compile(&reduced_network());
        let data = synthetic_examples(32, 8, false);
        // One step per epoch at batch 32, so the epoch cap is the step cap.
        let config = TrainConfig {
            max_epochs: 400,
            patience: 400,
            seed: 9,
            ..TrainConfig::default()
        };
        let outcome = train(&plan, &data, &data, &config).unwrap();
        let acc = evaluate(&plan, &outcome.params, &data).unwrap();
        assert_eq!(acc, 1.0, "32 examples should be memorized, got {acc}");
    }



}
