//! Central-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::layers::softmax_cross_entropy;
use crate::net::model::{EncodedCloud, Model};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_SAMPLES: usize = 20;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Worst error over entries where the loss is differentiable within the step.
    pub max_rel_error: f64,
    /// Entries where a ReLU or max-pool switch lies within one step: the
    /// one-sided differences disagree and the analytic value equals one of them.
    pub kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks).sum()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Relative error of `analytic` against the central difference with step `h`,
/// or `None` when that stencil straddles a kink: its two one-sided slopes
/// disagree, yet a central difference with step `h / 100` agrees with
/// `analytic`. `loss_at(d)` is the loss with the parameter shifted by `d`.
pub fn score_entry(
    analytic: f64,
    base: f64,
    h: f64,
    mut loss_at: impl FnMut(f64) -> Result<f64>,
) -> Result<Option<f64>> {
    let (plus, minus) = (loss_at(h)?, loss_at(-h)?);
    let err = relative_error(analytic, (plus - minus) / (2.0 * h));
    let (ahead, behind) = ((plus - base) / h, (base - minus) / h);
    if err < GRADCHECK_TOLERANCE || relative_error(ahead, behind) <= GRADCHECK_TOLERANCE {
        return Ok(Some(err));
    }
    let fine = h / 100.0;
    let refined = (loss_at(fine)? - loss_at(-fine)?) / (2.0 * fine);
    Ok((relative_error(analytic, refined) >= GRADCHECK_TOLERANCE).then_some(err))
}

fn batch_loss(model: &Model, batch: &[(EncodedCloud, Vec<usize>)]) -> Result<f64> {
    let mut total = 0.0;
    for (input, labels) in batch {
        total += softmax_cross_entropy(&model.logits(input)?, labels)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Compares backprop against central differences on up to 20 random entries
/// of every parameter tensor, using the mean loss over `batch`.
///
/// Entries sitting within one step of a kink are counted separately rather
/// than scored: there the central difference averages two different slopes.
pub fn gradient_check(model: &Model, batch: &[(EncodedCloud, Vec<usize>)], seed: u64) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient check needs at least one sample"));
    }
    let mut grads = model.zeros_like();
    for (input, labels) in batch {
        let (logits, cache) = model.forward(input)?;
        let (_, g) = softmax_cross_entropy(&logits, labels)?;
        grads.add_scaled(&model.backward(&cache, &g)?, 1.0 / batch.len() as f64);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = model.tensor_names();
    let analytic = grads.tensors();
    let base_loss = batch_loss(model, batch)?;
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let size = analytic[t].len();
        let picks = sample(&mut rng, size, size.min(GRADCHECK_SAMPLES));
        let mut worst: f64 = 0.0;
        let mut kinks = 0;
        for flat in picks.iter() {
            let base = model.tensors()[t].as_slice().expect("standard layout")[flat];
            let mut loss_at = |delta: f64| {
                probe.tensors_mut().swap_remove(t).as_slice_mut().expect("standard layout")[flat] = base + delta;
                batch_loss(&probe, batch)
            };
            let a = analytic[t].as_slice().expect("standard layout")[flat];
            let scored = score_entry(a, base_loss, GRADCHECK_STEP, &mut loss_at);
            probe.tensors_mut().swap_remove(t).as_slice_mut().expect("standard layout")[flat] = base;
            match scored? {
                Some(err) => worst = worst.max(err),
                None => kinks += 1,
            }
        }
        tensors.push(TensorCheck {
            name,
            checked: picks.len(),
            max_rel_error: worst,
            kinks,
        });
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(f: impl Fn(f64) -> f64, x: f64, analytic: f64) -> Option<f64> {
        let h = GRADCHECK_STEP;
        score_entry(analytic, f(x), h, |d| Ok(f(x + d))).unwrap()
    }

    #[test]
    fn smooth_entries_are_scored() {
        let f = |x: f64| x.sin();
        assert!(score(f, 0.3, 0.3f64.cos()).unwrap() < 1e-9);
        assert!(score(f, 0.3, 0.3f64.cos() * 1.01).unwrap() > 1e-3);
    }

    #[test]
    fn kink_within_step_is_recognized() {
        // relu(x - c) with the switch between x and x + h
        let c = 0.5 + 3e-6;
        let f = |x: f64| 2.0 * x + (x - c).max(0.0) * 5.0;
        assert_eq!(score(f, 0.5, 2.0), None);
        // switch between x - h and x: the true slope is the right-hand one
        assert_eq!(score(f, c + 3e-6, 7.0), None);
        // anything else is still an error, including the slope past the switch
        assert!(score(f, 0.5, 7.0).unwrap() > 1e-2);
        assert!(score(f, 0.5, 4.0).unwrap() > 1e-2);
        assert!(score(f, 0.5, -2.0).unwrap() > 1e-2);
    }

    #[test]
    fn kink_within_the_fine_step_stays_an_error() {
        let c = 0.5 + 3e-8;
        let f = |x: f64| 2.0 * x + (x - c).max(0.0) * 5.0;
        assert!(score(f, 0.5, 2.0).unwrap() > 1e-2);
    }

    #[test]
    fn mild_kinks_are_recognized_too() {
        // the slope changes by 1% just past x
        let c = 0.5 + 5e-6;
        let f = |x: f64| x + (x - c).max(0.0) * 0.01;
        assert_eq!(score(f, 0.5, 1.0), None);
        assert!(score(f, 0.5, 1.002).unwrap() > GRADCHECK_TOLERANCE);
    }
}
