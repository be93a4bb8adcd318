//! Mini-batch SGD with momentum on the mean cross-entropy loss, plus
//! accuracy/timing evaluation and seeded multi-run training.
//!
//! Gradients are computed one sample at a time on a fresh tape, summed in
//! batch order and divided by the batch size, so a run is a pure function of
//! its configs, dataset, split and seed.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams};
use crate::phantom::{Dataset, DatasetSplit};
use crate::rng::{stream, SplitMix64};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Drives both initialization and the per-epoch shuffles.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        Ok(())
    }
}

/// Per-epoch convergence audit of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Mean per-sample training loss of each epoch (pre-update losses).
    pub train_loss: Vec<f64>,
    /// Validation accuracy after each epoch; `None` without a validation set.
    pub val_accuracy: Vec<Option<f64>>,
    pub wall_seconds: f64,
    /// 1-based index of the last completed epoch.
    pub final_epoch: usize,
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − η v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Vec<Tensor>], grads: &[Vec<Tensor>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = grads
                .iter()
                .map(|g| g.iter().map(|t| t.map(|_| 0.0)).collect())
                .collect();
        }
        for ((layer, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if layer.len() != grad.len() {
                return Err(Error::shape("gradient layout does not match parameters"));
            }
            for ((p, g), v) in layer.iter_mut().zip(grad).zip(vel) {
                if p.shape() != g.shape() {
                    return Err(Error::shape(format!(
                        "gradient shape {:?} does not match parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vv = self.momentum * *vv + gv;
                    *pv -= self.learning_rate * *vv;
                }
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [Vec<Tensor>], grads: Vec<Vec<Tensor>>) {
    for (a_layer, g_layer) in acc.iter_mut().zip(grads) {
        for (a, g) in a_layer.iter_mut().zip(g_layer) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
}

/// Trains a freshly initialized model on `split.train`, reporting
/// validation accuracy on `split.val` after every epoch.
///
/// A leading `center` layer is first set to the training images' mean and
/// then held fixed; every other parameter is updated by SGD.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    split: &DatasetSplit,
) -> Result<(ModelParams, TrainRecord)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::input("training split is empty"));
    }
    let train_samples = dataset.select(&split.train)?;
    dataset.select(&split.val)?;
    let mut params = ModelParams::init(model_config, config.seed)?;
    let images: Vec<&Tensor> = train_samples.iter().map(|s| &s.image).collect();
    params.fit_center(&images)?;
    let trainable: Vec<bool> = model_config.layers.iter().map(|l| l.kind.is_trainable()).collect();
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let start = Instant::now();
    let mut record = TrainRecord {
        train_loss: Vec::with_capacity(config.epochs),
        val_accuracy: Vec::with_capacity(config.epochs),
        wall_seconds: 0.0,
        final_epoch: 0,
    };
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        if config.shuffle {
            order.shuffle(&mut SplitMix64::derived(config.seed, &[stream::SHUFFLE, epoch as u64]));
        }
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut acc: Option<Vec<Vec<Tensor>>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = train_samples[i];
                let (loss, grads) = params.loss_and_gradients(&s.image, s.label.index())?;
                batch_loss += loss;
                match acc.as_mut() {
                    Some(a) => add_into(a, grads),
                    None => acc = Some(grads),
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            epoch_loss += batch_loss;
            let n = batch.len() as f64;
            let mean: Vec<Vec<Tensor>> = acc
                .expect("batches are nonempty")
                .iter()
                .zip(&trainable)
                .map(|(l, &on)| l.iter().map(|t| t.scale(if on { 1.0 / n } else { 0.0 })).collect())
                .collect();
            sgd.step(params.layers_mut(), &mean)?;
        }
        record.train_loss.push(epoch_loss / train_samples.len() as f64);
        record.val_accuracy.push(if split.val.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(&params, dataset, &split.val)?)
        });
        record.final_epoch = epoch;
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok((params, record))
}

/// Predicted class of every listed sample, in order.
pub fn predictions(params: &ModelParams, dataset: &Dataset, ids: &[u64]) -> Result<Vec<usize>> {
    dataset
        .select(ids)?
        .into_iter()
        .map(|s| params.predict(&s.image))
        .collect()
}

/// Fraction of listed samples whose prediction equals the label.
pub fn evaluate_accuracy(params: &ModelParams, dataset: &Dataset, ids: &[u64]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::contract("accuracy over an empty id list is undefined"));
    }
    let samples = dataset.select(ids)?;
    let mut correct = 0usize;
    for s in &samples {
        if params.predict(&s.image)? == s.label.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Minimum number of timed forwards in [`measure_inference_ms`].
pub const MIN_TIMING_REPETITIONS: usize = 20;

/// Median wall-clock milliseconds of a single-image forward, over at least
/// [`MIN_TIMING_REPETITIONS`] forwards cycling through the listed samples.
pub fn measure_inference_ms(params: &ModelParams, dataset: &Dataset, ids: &[u64]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::contract("timing over an empty id list is undefined"));
    }
    let samples = dataset.select(ids)?;
    let reps = samples.len().max(MIN_TIMING_REPETITIONS);
    let mut times = Vec::with_capacity(reps);
    for i in 0..reps {
        let x = &samples[i % samples.len()].image;
        let t = Instant::now();
        std::hint::black_box(params.forward(x)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = reps / 2;
    Ok(if reps % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// One independent [`train`] run per seed (run in parallel), returned in
/// seed order.
pub fn train_ensemble(
    model_config: &ModelConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    split: &DatasetSplit,
    seeds: &[u64],
) -> Result<Vec<(ModelParams, TrainRecord)>> {
    if seeds.len() < 2 {
        return Err(Error::input(format!(
            "an ensemble needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(Error::input(format!("duplicate seed {s}")));
        }
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            train(model_config, &cfg, dataset, split)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, split, PhantomConfig, DEFAULT_RATIOS};

    fn tiny() -> (Dataset, DatasetSplit) {
        let d = generate(
            &PhantomConfig {
                size: 16,
                per_class: 5,
                benign_radius: (1.0, 1.5),
                malignant_radius: (2.0, 2.5),
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let s = split(&d, DEFAULT_RATIOS, 4).unwrap();
        (d, s)
    }

    #[test]
    fn momentum_step_matches_closed_form() {
        // L(θ) = ½(θ − 3)², θ0 = 1: g = −2, v1 = −2, θ1 = 1 + 0.1·2 = 1.2;
        // g = −1.8, v2 = 0.9·(−2) − 1.8 = −3.6, θ2 = 1.2 + 0.36 = 1.56.
        let mut sgd = Sgd::new(0.1, 0.9);
        let mut p = vec![vec![Tensor::vector(&[1.0])]];
        for want in [1.2, 1.56] {
            let g = p[0][0].data()[0] - 3.0;
            sgd.step(&mut p, &[vec![Tensor::vector(&[g])]]).unwrap();
            assert!((p[0][0].data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_zero_lr_is_identity() {
        let (d, s) = tiny();
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let (a, ra) = train(&c, &cfg, &d, &s).unwrap();
        let (b, rb) = train(&c, &cfg, &d, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.train_loss.len(), 2);
        assert_eq!(ra.final_epoch, 2);
        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let (z, _) = train(&c, &frozen, &d, &s).unwrap();
        let init = ModelParams::init(&c, 9).unwrap();
        assert_eq!(z.layers()[1..], init.layers()[1..]);
        // Only the fitted mean image differs from initialization.
        let train_images: Vec<_> = d.select(&s.train).unwrap().into_iter().map(|x| &x.image).collect();
        let mut centered = init.clone();
        assert!(centered.fit_center(&train_images).unwrap());
        assert_eq!(z, centered);
    }

    #[test]
    fn divergence_is_reported() {
        let (d, s) = tiny();
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            momentum: 0.0,
            ..Default::default()
        };
        assert!(matches!(train(&c, &cfg, &d, &s), Err(Error::Diverged { .. })));
    }

    #[test]
    fn constant_model_accuracy_is_class_zero_fraction() {
        let (d, s) = tiny();
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let mut p = ModelParams::init(&c, 0).unwrap();
        let head = p.head_index();
        for t in &mut p.layers_mut()[head] {
            t.data_mut().fill(0.0);
        }
        let ids: Vec<u64> = d.samples().iter().map(|s| s.id).collect();
        assert!((evaluate_accuracy(&p, &d, &ids).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(evaluate_accuracy(&p, &d, &[]).is_err());
        assert!(measure_inference_ms(&p, &d, &s.test).unwrap() > 0.0);
    }

    #[test]
    fn config_and_ensemble_domain_checks() {
        let (d, s) = tiny();
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(train(&c, &bad, &d, &s), Err(Error::Config(_))));
        }
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_ensemble(&c, &cfg, &d, &s, &[1, 1]),
            Err(Error::Input(_))
        ));
        assert!(matches!(train_ensemble(&c, &cfg, &d, &s, &[1]), Err(Error::Input(_))));
    }
}
