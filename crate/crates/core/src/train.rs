//! Training loop: deterministic shuffling, optional data-parallel batch
//! shards (one tape per worker thread, gradients merged in worker order),
//! plateau scheduling, and CSV-able epoch records.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalize};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::optim::{Adam, Optimizer, PlateauScheduler, SgdMomentum};
use crate::scalar::Scalar;
use crate::tensor::{mse_loss, softmax_cross_entropy, Tape};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Data-parallel shards per step (1 = single-threaded).
    pub threads: usize,
    pub normalize: Normalize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 10,
            batch: 16,
            plateau_factor: 0.1,
            plateau_patience: 5,
            plateau_min_delta: 1e-4,
            seed: 0,
            loss: LossKind::CrossEntropy,
            threads: 1,
            normalize: Normalize::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.plateau_factor) || self.plateau_factor == 0.0 {
            return Err(Error::Config(format!(
                "plateau factor must be in (0,1), got {}",
                self.plateau_factor
            )));
        }
        if self.batch == 0 || self.epochs == 0 || self.threads == 0 {
            return Err(Error::Config("batch, epochs and threads must be positive".into()));
        }
        Ok(())
    }

    fn build_optimizer<T: Scalar>(&self) -> Result<Box<dyn Optimizer<T>>> {
        Ok(match self.optimizer {
            OptimizerKind::SgdMomentum => {
                Box::new(SgdMomentum::new(self.lr, self.momentum, self.weight_decay)?)
            }
            OptimizerKind::Adam => Box::new(Adam::new(self.lr, self.weight_decay)?),
        })
    }
}

/// One row of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Accuracy for classifiers, per-sample MSE for autoencoders.
    pub metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,metric,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e}\n",
                r.epoch, r.split, r.loss, r.metric, r.lr
            ));
        }
        out
    }

    pub fn final_metric(&self) -> Option<f64> {
        self.records.last().map(|r| r.metric)
    }
}

/// Loss, metric accumulator and named gradients of one batch shard.
struct ShardResult<T: Scalar> {
    loss: f64,
    metric_sum: f64,
    grads: Vec<(String, Vec<T>)>,
}

fn shard_pass<T: Scalar>(
    model: &dyn Network<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<ShardResult<T>> {
    let (batch, labels) = dataset.batch(indices, cfg.normalize)?;
    let tape = Tape::new();
    let x = tape.watch(&batch); // watched so the tape sees one connected graph
    let output = model.forward(&x, Some(&tape))?;
    let (loss, metric_sum) = match cfg.loss {
        LossKind::CrossEntropy => {
            let loss = softmax_cross_entropy(&output, &labels)?;
            let k = output.shape().c;
            let mut correct = 0usize;
            for (row, &label) in output.values().chunks_exact(k).zip(labels.iter()) {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if pred == label {
                    correct += 1;
                }
            }
            (loss, correct as f64)
        }
        LossKind::Mse => {
            let loss = mse_loss(&output, &batch)?;
            // batch-multiplied MSE equals the per-sample mean-squared-error
            // summed over the shard, so shard sums aggregate exactly
            let m = loss.item().as_f64();
            (loss, m)
        }
    };
    let loss_value = loss.item().as_f64();
    let grads = tape.backward_collect(&loss)?;
    Ok(ShardResult {
        loss: loss_value,
        metric_sum,
        grads,
    })
}

fn split_shards(indices: &[usize], shards: usize) -> Vec<&[usize]> {
    let per = indices.len().div_ceil(shards);
    indices.chunks(per).collect()
}

/// Train in place; returns per-epoch records. Deterministic for a fixed
/// config (seed, thread count) and model.
pub fn train<T: Scalar>(
    model: &dyn Network<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let params = model.parameters();
    let mut optimizer = cfg.build_optimizer::<T>()?;
    let mut scheduler = PlateauScheduler::new(
        cfg.lr,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_min_delta,
    )?;
    let by_name: std::collections::HashMap<String, usize> = params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name().to_string(), i))
        .collect();

    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37 * epoch as u64 + 1));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut metric_sum = 0.0;
        let mut batches = 0usize;
        let lr_in_use = optimizer.lr();

        for (batch_idx, batch_indices) in order.chunks(cfg.batch).enumerate() {
            for p in &params {
                p.zero_grad();
            }
            let shards = split_shards(batch_indices, cfg.threads.min(batch_indices.len()));
            let results: Vec<ShardResult<T>> = if shards.len() == 1 {
                vec![shard_pass(model, dataset, shards[0], cfg)?]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = shards
                        .iter()
                        .map(|shard| scope.spawn(move || shard_pass(model, dataset, shard, cfg)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("shard thread panicked"))
                        .collect::<Result<Vec<_>>>()
                })?
            };

            // merge shard gradients in worker order so results are
            // reproducible for a fixed thread count
            let total = batch_indices.len() as f64;
            let mut batch_loss = 0.0;
            for (shard, result) in shards.iter().zip(results) {
                let weight = match cfg.loss {
                    LossKind::CrossEntropy => shard.len() as f64 / total,
                    LossKind::Mse => 1.0,
                };
                batch_loss += result.loss * weight;
                metric_sum += result.metric_sum;
                let w = T::from_f64(weight);
                for (name, grad) in result.grads {
                    let idx = by_name
                        .get(&name)
                        .copied()
                        .ok_or_else(|| Error::Config(format!("gradient for unknown parameter '{name}'")))?;
                    params[idx].add_grad_scaled(&grad, w);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            optimizer.step(&params)?;
            epoch_loss += batch_loss;
            batches += 1;
        }

        let loss = epoch_loss / batches as f64;
        let metric = metric_sum / dataset.len() as f64;
        log.records.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss,
            metric,
            lr: lr_in_use,
        });
        optimizer.set_lr(scheduler.observe(loss));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthKind};
    use crate::model::{build_cae, build_classifier, CaeSpec, ClassifierSpec};
    use crate::pooling::{PoolConfig, PoolKind};

    fn tiny_classifier_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch: 4,
            lr: 0.01,
            ..TrainConfig::default()
        }
    }

    fn tiny_spec(kind: PoolKind) -> ClassifierSpec {
        ClassifierSpec {
            input: (3, 16, 16),
            stage_widths: vec![4, 8],
            pool: PoolConfig::new(kind),
            classes: 2,
        }
    }

    #[test]
    fn one_epoch_emits_one_record() {
        let ds = synth_dataset::<f32>(SynthKind::Shapes2, 8, 16, 1).unwrap();
        let model = build_classifier::<f32>(&tiny_spec(PoolKind::Normal), 0).unwrap();
        let log = train(&model, &ds, &tiny_classifier_cfg()).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].split, "train");
        assert!(log.records[0].loss.is_finite());
    }

    #[test]
    fn identical_seeds_give_identical_logs_and_weights() {
        let ds = synth_dataset::<f32>(SynthKind::Shapes2, 8, 16, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..tiny_classifier_cfg()
        };
        let run = || {
            let model = build_classifier::<f32>(&tiny_spec(PoolKind::Lgca), 3).unwrap();
            let log = train(&model, &ds, &cfg).unwrap();
            let weights: Vec<Vec<f32>> = model
                .parameters()
                .iter()
                .map(|p| p.value().values().to_vec())
                .collect();
            (log.to_csv(), weights)
        };
        let (log_a, w_a) = run();
        let (log_b, w_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(w_a, w_b);
    }

    #[test]
    fn sharded_training_is_deterministic_for_fixed_thread_count() {
        let ds = synth_dataset::<f32>(SynthKind::Shapes2, 8, 16, 4).unwrap();
        let cfg = TrainConfig {
            threads: 2,
            ..tiny_classifier_cfg()
        };
        let run = || {
            let model = build_classifier::<f32>(&tiny_spec(PoolKind::Wadca), 5).unwrap();
            train(&model, &ds, &cfg).unwrap().to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn classifier_overfits_two_samples() {
        let ds = synth_dataset::<f32>(SynthKind::Shapes2, 2, 16, 6).unwrap();
        let model = build_classifier::<f32>(&tiny_spec(PoolKind::Normal), 7).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch: 2,
            lr: 0.02,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let log = train(&model, &ds, &cfg).unwrap();
        let final_loss = log.records.last().unwrap().loss;
        assert!(final_loss < 1e-3, "failed to overfit: loss {final_loss}");
    }

    #[test]
    fn cae_trains_and_reduces_reconstruction_error() {
        let ds = synth_dataset::<f32>(SynthKind::Shapes2, 4, 16, 8).unwrap();
        let spec = CaeSpec {
            input: (3, 16, 16),
            widths: [8, 12, 16, 8],
            pool: PoolConfig::new(PoolKind::Normal),
        };
        let model = build_cae::<f32>(&spec, 9).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch: 4,
            lr: 0.003,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        let log = train(&model, &ds, &cfg).unwrap();
        let first = log.records.first().unwrap().loss;
        let last = log.records.last().unwrap().loss;
        assert!(last < first, "reconstruction error did not drop: {first} -> {last}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset::<f32> {
            images: vec![],
            labels: vec![],
            class_names: vec!["a".into(), "b".into()],
        };
        let model = build_classifier::<f32>(&tiny_spec(PoolKind::Normal), 0).unwrap();
        assert!(train(&model, &ds, &tiny_classifier_cfg()).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
