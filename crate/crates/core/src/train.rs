//! Adam, mini-batch training, evaluation and best-validation selection.
//!
//! A [`Trainer`] owns the only random stream of a run: parameter
//! initialization, per-epoch shuffling and dropout masks all draw from it in a
//! fixed order, so a run is a pure function of its configuration and data.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Ketm, ModelConfig, PairInput};
use crate::param::ParamStore;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 48,
            lr: 5e-5,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    /// First and second moment estimates, one per parameter in store order.
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one bias-corrected update from the gradients in `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (nb1, nb2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let step = T::c(self.lr / c1);
        let c2 = T::c(c2);
        let eps = T::c(self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                m[i] = b1 * m[i] + nb1 * g[i];
                v[i] = b2 * v[i] + nb2 * g[i] * g[i];
                w[i] -= step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Per-epoch log record, printed as `epoch=<i> loss=<f> val_acc=<f>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} val_acc={:.4}",
            self.epoch, self.loss, self.val_acc
        )
    }
}

pub struct FitSummary<T: Real> {
    pub history: Vec<EpochRecord>,
    /// Epoch of the kept parameters, 0 for the initial ones.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best: ParamStore<T>,
}

pub type Example = (PairInput, usize);

#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub model: Ketm,
    pub store: ParamStore<T>,
    pub optimizer: Adam<T>,
    pub rng: ChaCha8Rng,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = Ketm::new(model, &mut store, &mut rng)?;
        let optimizer = Adam::new(&store, config.lr);
        Ok(Trainer {
            model,
            store,
            optimizer,
            rng,
            config,
            epoch: 0,
        })
    }

    /// One optimizer step on `batch`; returns the batch loss before the step.
    pub fn step(&mut self, batch: &[(&PairInput, usize)]) -> Result<f64> {
        self.store.zero_grad();
        let mut tape = Tape::new();
        let opts = self.model.default_options();
        let dropout: Option<&mut dyn rand::RngCore> = if self.model.config.matching.dropout > 0.0 {
            Some(&mut self.rng)
        } else {
            None
        };
        let loss = self
            .model
            .batch_loss(&mut tape, &self.store, batch, opts, dropout)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Precondition(format!(
                "loss became non-finite ({value})"
            )));
        }
        tape.backward(loss, &mut self.store)?;
        self.model.embedding.mask_pad_grad(&mut self.store);
        self.store.clip_grad_norm(T::c(self.config.clip_norm));
        self.optimizer.update(&mut self.store);
        Ok(value)
    }

    /// Shuffles `data` and runs one pass of mini-batch steps. Returns the
    /// example-weighted mean batch loss.
    pub fn train_epoch(&mut self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Argument("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<(&PairInput, usize)> =
                chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            total += self.step(&batch)? * chunk.len() as f64;
        }
        self.epoch += 1;
        Ok(total / data.len() as f64)
    }

    pub fn predict(&self, input: &PairInput) -> Result<Vec<T>> {
        self.model.predict(&self.store, input)
    }

    /// Evaluation-mode accuracy, computed in parallel over examples.
    pub fn evaluate(&self, data: &[Example]) -> Result<f64> {
        evaluate(&self.model, &self.store, data)
    }

    /// Trains for the configured number of epochs, evaluating on `val` after
    /// each. Keeps the parameters with the best validation accuracy; ties go to
    /// the earlier epoch. Without `val` the last epoch is kept.
    pub fn fit(
        &mut self,
        train: &[Example],
        val: Option<&[Example]>,
        mut log: impl FnMut(&EpochRecord),
    ) -> Result<FitSummary<T>> {
        let score = |t: &Self| -> Result<f64> {
            match val {
                Some(v) => t.evaluate(v),
                None => Ok(f64::NAN),
            }
        };
        let mut best = self.store.clone();
        let mut best_epoch = self.epoch;
        let mut best_val_acc = score(self)?;
        let mut history = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let loss = self.train_epoch(train)?;
            let val_acc = score(self)?;
            let record = EpochRecord {
                epoch: self.epoch,
                loss,
                val_acc,
            };
            log(&record);
            history.push(record);
            if val.is_none() || val_acc > best_val_acc {
                best = self.store.clone();
                best_epoch = self.epoch;
                best_val_acc = val_acc;
            }
        }
        Ok(FitSummary {
            history,
            best_epoch,
            best_val_acc,
            best,
        })
    }
}

pub fn evaluate<T: Real>(model: &Ketm, store: &ParamStore<T>, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty split".into()));
    }
    let correct = data
        .par_iter()
        .map(|(input, label)| Ok(usize::from(argmax(&model.predict(store, input)?) == *label)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_each_weight_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        store.get_mut(id).grad = Tensor::vector(vec![0.3, -4.0, 1e-3]).unwrap();
        let mut adam = Adam::new(&store, 0.01);
        adam.update(&mut store);
        let w = store.get(id).value.data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert!((w[2] - 0.49).abs() < 1e-4);
    }

    #[test]
    fn record_format() {
        let r = EpochRecord {
            epoch: 3,
            loss: 0.5,
            val_acc: 0.75,
        };
        assert_eq!(r.to_string(), "epoch=3 loss=0.500000 val_acc=0.7500");
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
