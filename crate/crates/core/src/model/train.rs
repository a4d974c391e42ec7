use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, cross_entropy, forward, MlpModel};
use super::params::sgd_step;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Local training hyperparameters. `epochs` is the number of local passes a
/// node makes before reporting its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Simulated compute cost of one sample pass, in milliseconds.
    pub per_sample_cost_ms: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            per_sample_cost_ms: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.per_sample_cost_ms >= 0.0 && self.per_sample_cost_ms.is_finite()) {
            return Err(Error::config(
                "per_sample_cost_ms",
                "must be a non-negative number",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    /// `epochs * |data|`
    pub samples_seen: usize,
    /// `samples_seen * per_sample_cost_ms`
    pub sim_train_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Seeded-shuffle mini-batch SGD for `cfg.epochs` passes over `data`.
///
/// The trailing partial batch of each epoch is used, not dropped.
pub fn train_local(
    model: &MlpModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainStats)> {
    cfg.validate()?;
    let mut trained = model.clone();
    if cfg.epochs == 0 {
        return Ok((
            trained,
            TrainStats {
                samples_seen: 0,
                sim_train_ms: 0.0,
            },
        ));
    }
    if data.is_empty() {
        return Err(Error::EmptyData(format!(
            "cannot train {} epochs on an empty dataset",
            cfg.epochs
        )));
    }
    if data.num_features() != model.dims().input {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            data.num_features(),
            model.dims().input
        )));
    }

    let mut rng = rng::derived_stream(&[cfg.seed, rng::tag::LOCAL_TRAIN]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features().select_rows(batch);
            batch_labels.clear();
            batch_labels.extend(batch.iter().map(|&i| data.labels()[i]));
            let grads = backward(&trained, &x, &batch_labels)?;
            let next = sgd_step(trained.params(), &grads, cfg.learning_rate)?;
            trained.set_params(next)?;
        }
    }
    let samples_seen = cfg.epochs * data.len();
    Ok((
        trained,
        TrainStats {
            samples_seen,
            sim_train_ms: samples_seen as f64 * cfg.per_sample_cost_ms,
        },
    ))
}

const EVAL_CHUNK: usize = 1024;

/// Argmax accuracy (ties resolve to the lowest class index) and mean
/// cross-entropy.
pub fn evaluate(model: &MlpModel, data: &LabeledDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyData(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = data.features().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
        let probs = forward(model, &x)?;
        loss_sum += cross_entropy(&probs, &labels)? * chunk.len() as f64;
        for (s, &y) in labels.iter().enumerate() {
            if argmax(probs.row(s)) == y {
                correct += 1;
            }
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss_sum / data.len() as f64,
    })
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;
    use crate::model::{Matrix, ModelDims, ParamVector};

    fn blobs(seed: u64) -> LabeledDataset {
        synth_blobs(seed, 100, 10, 2, 0.05).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = MlpModel::init(ModelDims::new(10, 8, 2).unwrap(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, stats) = train_local(&m, &blobs(1), &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(stats.samples_seen, 0);
        // empty data is fine with zero epochs
        let empty = blobs(1).subset(&[]);
        assert_eq!(train_local(&m, &empty, &cfg).unwrap().0, m);
    }

    #[test]
    fn empty_data_with_epochs_errors() {
        let m = MlpModel::init(ModelDims::new(10, 8, 2).unwrap(), 1).unwrap();
        let empty = blobs(1).subset(&[]);
        assert!(matches!(
            train_local(&m, &empty, &TrainConfig::default()),
            Err(Error::EmptyData(_))
        ));
        assert!(matches!(evaluate(&m, &empty), Err(Error::EmptyData(_))));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let m = MlpModel::init(ModelDims::new(10, 8, 2).unwrap(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let data = blobs(2);
        let (a, sa) = train_local(&m, &data, &cfg).unwrap();
        let (b, sb) = train_local(&m, &data, &cfg).unwrap();
        assert_eq!(a.params().to_bytes(), b.params().to_bytes());
        assert_eq!(sa, sb);
        assert_eq!(sa.samples_seen, 3 * 200);
        assert!((sa.sim_train_ms - 6.0).abs() < 1e-12);
    }

    #[test]
    fn separable_blobs_train_above_095() {
        let m = MlpModel::init(ModelDims::new(10, 16, 2).unwrap(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let data = blobs(4);
        let (trained, _) = train_local(&m, &data, &cfg).unwrap();
        let eval = evaluate(&trained, &data).unwrap();
        assert!(eval.accuracy > 0.95, "accuracy {}", eval.accuracy);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = MlpModel::zeros(ModelDims::new(10, 4, 10).unwrap()).unwrap();
        let data = synth_blobs(8, 7, 10, 10, 0.1).unwrap();
        let eval = evaluate(&m, &data).unwrap();
        assert!((eval.accuracy - 0.1).abs() < 1e-12);
        assert!((eval.mean_loss - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn exact_model_scores_one() {
        // identity-like 2 -> 2 -> 2 net: class k iff feature k is hot
        let dims = ModelDims::new(2, 2, 2).unwrap();
        let p = ParamVector::new(
            dims.layout(),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 0.0, 0.0],
        )
        .unwrap();
        let m = MlpModel::from_params(dims, p).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let data = LabeledDataset::new(x, vec![0, 1, 1], 2).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
