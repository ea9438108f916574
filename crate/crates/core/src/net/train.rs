//! Adam training with a step-decay schedule, and evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{jitter, Dataset, DatasetSample};
use crate::error::{Error, Result};
use crate::geom::random_rotation;
use crate::mix_seed;
use crate::net::layers::softmax_cross_entropy;
use crate::net::model::{argmax_rows, encode, EncodedCloud, Model, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            decay: 0.3,
            decay_every: 20,
            lr_floor: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 250,
            batch_size: 32,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::invalid(
                "training needs lr >= 0, epochs >= 1, batch size >= 1, decay period >= 1",
            ));
        }
        Ok(())
    }

    /// `lr0 * decay^(epoch / decay_every)`, never below the floor (or below `lr0` if that is smaller).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_every) as i32;
        let lr = self.lr0 * self.decay.powi(steps);
        lr.max(self.lr_floor.min(self.lr0))
    }
}

/// First and second moment estimates, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .tensors()
            .iter()
            .map(|t| Array2::zeros(t.raw_dim()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            m.zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub iou: Option<f64>,
}

/// Targets for one sample: the class id, or per-point part ids.
pub fn targets(model: &Model, sample: &DatasetSample) -> Result<Vec<usize>> {
    match model.config.task {
        Task::Classify => Ok(vec![sample.class_id]),
        Task::Segment => sample
            .part_labels()
            .map(<[usize]>::to_vec)
            .ok_or_else(|| Error::invalid("segmentation sample without part labels")),
    }
}

/// Loss, logits and parameter gradients for one encoded sample.
pub fn loss_and_grad(model: &Model, input: &EncodedCloud, labels: &[usize]) -> Result<(f64, Array2<f64>, Model)> {
    let (logits, cache) = model.forward(input)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    let grads = model.backward(&cache, &grad)?;
    Ok((loss, logits, grads))
}

/// Model plus optimizer state; the unit that is checkpointed.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    /// Index of the next epoch to run.
    pub next_epoch: usize,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(&model);
        Trainer {
            model,
            adam,
            next_epoch: 0,
        }
    }

    /// One pass over `data` in shuffled mini-batches with fresh jitter.
    ///
    /// Shuffle order and jitter depend only on `(cfg.seed, epoch)`, so a resumed
    /// run replays exactly what an uninterrupted one would have done.
    pub fn run_epoch(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let epoch = self.next_epoch;
        let lr = cfg.learning_rate(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64)));

        let mut stats = Stats::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = self.model.zeros_like();
            for &idx in batch {
                let sample = &data.samples[idx];
                let jitter_seed = mix_seed(mix_seed(cfg.seed, epoch as u64), idx as u64 + 1);
                let cloud = jitter(&sample.cloud, cfg.jitter_sigma, cfg.jitter_clip, jitter_seed)?;
                let input = encode(&self.model.config, &cloud)?;
                let labels = targets(&self.model, sample)?;
                let (loss, logits, g) = loss_and_grad(&self.model, &input, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingFailure {
                        epoch,
                        message: format!("loss became {loss}"),
                    });
                }
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
                stats.record(data, sample, loss, &argmax_rows(&logits), &labels);
            }
            self.adam.step(&mut self.model, &grads, lr, cfg);
        }
        if self.model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingFailure {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
        self.next_epoch += 1;
        Ok(stats.finish(epoch, lr, self.model.config.task))
    }

    /// Runs epochs until `cfg.epochs` have completed in total.
    pub fn fit(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
        cfg.validate()?;
        let mut out = Vec::new();
        while self.next_epoch < cfg.epochs {
            out.push(self.run_epoch(data, cfg)?);
        }
        Ok(out)
    }
}

pub fn train(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(model);
    let metrics = trainer.fit(data, cfg)?;
    Ok((trainer.model, metrics))
}

#[derive(Default)]
struct Stats {
    loss: f64,
    samples: usize,
    correct: usize,
    labeled: usize,
    iou: f64,
}

impl Stats {
    fn record(&mut self, data: &Dataset, sample: &DatasetSample, loss: f64, pred: &[usize], labels: &[usize]) {
        self.loss += loss;
        self.samples += 1;
        self.correct += pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        self.labeled += labels.len();
        if labels.len() > 1 {
            let parts = data
                .class_parts
                .get(sample.class_id)
                .cloned()
                .unwrap_or_else(|| (0..data.part_count).collect());
            self.iou += shape_iou(pred, labels, &parts);
        }
    }

    fn finish(&self, epoch: usize, lr: f64, task: Task) -> EpochMetrics {
        let n = self.samples.max(1) as f64;
        EpochMetrics {
            epoch,
            lr,
            loss: self.loss / n,
            accuracy: self.correct as f64 / self.labeled.max(1) as f64,
            iou: (task == Task::Segment).then(|| self.iou / n),
        }
    }
}

/// Mean IoU over `parts`; a part absent from both prediction and truth scores 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> f64 {
    if parts.is_empty() {
        return 1.0;
    }
    let total: f64 = parts
        .iter()
        .map(|&p| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &b) in pred.iter().zip(truth) {
                let (ia, ib) = (a == p, b == p);
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    total / parts.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    /// Sample accuracy when classifying, point accuracy when segmenting.
    pub accuracy: f64,
    /// Per-shape mean IoU, segmentation only.
    pub mean_iou: Option<f64>,
    /// Predicted class (or per-point parts) for every sample, in dataset order.
    pub predictions: Vec<Vec<usize>>,
}

/// Evaluates without augmentation. With `rotate`, sample `i` is first rotated
/// by an independent random rotation derived from `(seed, i)`.
pub fn evaluate(model: &Model, data: &Dataset, rotate: bool, seed: u64) -> Result<EvalReport> {
    let mut stats = Stats::default();
    let mut predictions = Vec::with_capacity(data.len());
    for (i, sample) in data.samples.iter().enumerate() {
        let cloud = if rotate {
            sample.cloud.rotated(&random_rotation(mix_seed(seed, i as u64)))
        } else {
            sample.cloud.clone()
        };
        let labels = targets(model, sample)?;
        let logits = model.logits(&encode(&model.config, &cloud)?)?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        let pred = argmax_rows(&logits);
        stats.record(data, sample, loss, &pred, &labels);
        predictions.push(pred);
    }
    let m = stats.finish(0, 0.0, model.config.task);
    Ok(EvalReport {
        loss: m.loss,
        accuracy: m.accuracy,
        mean_iou: m.iou,
        predictions,
    })
}

/// Fraction of samples whose predictions are identical in both reports.
pub fn prediction_agreement(a: &EvalReport, b: &EvalReport) -> f64 {
    let same = a
        .predictions
        .iter()
        .zip(&b.predictions)
        .filter(|(x, y)| x == y)
        .count();
    same as f64 / a.predictions.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_by_point_three_every_twenty() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(19), 1e-3);
        assert!((cfg.learning_rate(20) - 3e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(39) - 3e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(40) - 9e-5).abs() < 1e-18);
        assert_eq!(cfg.learning_rate(200), 1e-5);
        let zero = TrainConfig { lr0: 0.0, ..cfg };
        assert_eq!(zero.learning_rate(100), 0.0);
    }

    #[test]
    fn iou_conventions() {
        assert_eq!(shape_iou(&[0, 0, 1], &[0, 0, 1], &[0, 1]), 1.0);
        // part 2 absent everywhere scores 1, part 1 has empty intersection
        assert_eq!(shape_iou(&[0, 0, 0], &[0, 0, 1], &[1, 2]), 0.5);
        assert!((shape_iou(&[0, 1, 1], &[0, 0, 1], &[0, 1]) - 0.5).abs() < 1e-12);
    }
}
