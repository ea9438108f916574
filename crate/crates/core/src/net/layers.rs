//! Dense/shared layers, pooling and the loss, each with an explicit backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::he_init;

/// Affine layer, optionally followed by ReLU.
///
/// Applied to an `N x C_in` matrix it acts on every row independently, so the
/// same type serves as a shared pointwise layer and as a fully connected layer
/// on a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub relu: bool,
}

pub struct DenseCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

impl Dense {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, relu: bool, rng: &mut R) -> Self {
        Dense {
            w: he_init(c_in, c_out, rng),
            b: Array2::zeros((1, c_out)),
            relu,
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn c_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
            relu: self.relu,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        if x.ncols() != self.c_in() {
            return Err(Error::invalid(format!(
                "layer expects {} input channels, got {}",
                self.c_in(),
                x.ncols()
            )));
        }
        let pre = x.dot(&self.w) + &self.b;
        let out = if self.relu {
            pre.mapv(|v| v.max(0.0))
        } else {
            pre.clone()
        };
        Ok((
            out,
            DenseCache {
                input: x.clone(),
                pre,
            },
        ))
    }

    /// Returns parameter gradients (as a `Dense`) and the input gradient.
    pub fn backward(&self, cache: &DenseCache, grad_out: &Array2<f64>) -> Result<(Dense, Array2<f64>)> {
        if grad_out.dim() != cache.pre.dim() {
            return Err(Error::InvalidState(format!(
                "gradient shape {:?} does not match layer output {:?}",
                grad_out.dim(),
                cache.pre.dim()
            )));
        }
        let mut d_pre = grad_out.clone();
        if self.relu {
            d_pre.zip_mut_with(&cache.pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
        }
        let grads = Dense {
            w: cache.input.t().dot(&d_pre),
            b: d_pre.sum_axis(Axis(0)).insert_axis(Axis(0)),
            relu: self.relu,
        };
        Ok((grads, d_pre.dot(&self.w.t())))
    }
}

/// Runs a stack of layers.
pub fn mlp_forward(layers: &[Dense], x: &Array2<f64>) -> Result<(Array2<f64>, Vec<DenseCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for layer in layers {
        let (out, cache) = layer.forward(&h)?;
        caches.push(cache);
        h = out;
    }
    Ok((h, caches))
}

pub fn mlp_backward(
    layers: &[Dense],
    caches: &[DenseCache],
    grad_out: &Array2<f64>,
) -> Result<(Vec<Dense>, Array2<f64>)> {
    if layers.len() != caches.len() {
        return Err(Error::InvalidState("layer/cache count mismatch".into()));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out.clone();
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (pg, gin) = layer.backward(cache, &g)?;
        grads.push(pg);
        g = gin;
    }
    grads.reverse();
    Ok((grads, g))
}

/// Channelwise max over rows and the (first) row index that attained it.
pub fn global_max_pool(x: &Array2<f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    if x.nrows() == 0 {
        return Err(Error::invalid("max pooling over zero rows"));
    }
    let mut best = x.row(0).to_owned();
    let mut arg = vec![0; x.ncols()];
    for (r, row) in x.rows().into_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    Ok((best, arg))
}

/// Routes each channel's gradient to its argmax row.
pub fn global_max_pool_backward(arg: &[usize], grad: &Array1<f64>, rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, arg.len()));
    for (c, &r) in arg.iter().enumerate() {
        out[[r, c]] = grad[c];
    }
    out
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (rows, classes) = logits.dim();
    if labels.len() != rows || rows == 0 {
        return Err(Error::invalid(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Array2::zeros((rows, classes));
    let mut loss = 0.0;
    for (r, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (c, &v) in row.iter().enumerate() {
            grad[[r, c]] = (v - log_z).exp() / rows as f64;
        }
        grad[[r, label]] -= 1.0 / rows as f64;
    }
    Ok((loss / rows as f64, grad))
}
