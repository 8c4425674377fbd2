//! Forward and backward passes of the head:
//! conv (same padding) → ReLU → batch norm → global average pool → dense
//! layers (ReLU on all but the last) → softmax.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{DenseLayer, Gradients, HeadParams};
use crate::ensemble::StackedTensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Floor applied to probabilities inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// A batch with its convolution patches already unrolled.
///
/// Training reuses one of these for every epoch, since the support set is fixed.
#[derive(Debug, Clone)]
pub struct PreparedBatch<T> {
    batch: usize,
    side: usize,
    channels: usize,
    kernel: usize,
    /// `[B·S·S, k·k·C]`; row `(b·S + y)·S + x`.
    cols: Arc<Array2<T>>,
}

impl<T: Real> PreparedBatch<T> {
    /// `inputs` is `[B, C·S·S]`, each row a channel-major stacked tensor.
    pub fn new(inputs: ArrayView2<T>, side: usize, channels: usize, kernel: usize) -> Result<Self> {
        let (batch, len) = inputs.dim();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if len != side * side * channels {
            return Err(Error::Shape(format!(
                "input rows have {len} values, expected {side}x{side}x{channels}"
            )));
        }
        let plane = side * side;
        let pad = kernel / 2;
        let mut cols = Array2::<T>::zeros((batch * plane, kernel * kernel * channels));
        for b in 0..batch {
            let input = inputs.row(b);
            for y in 0..side {
                for x in 0..side {
                    let mut row = cols.row_mut((b * side + y) * side + x);
                    for ky in 0..kernel {
                        let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < side) else {
                            continue;
                        };
                        for kx in 0..kernel {
                            let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < side) else {
                                continue;
                            };
                            let base = (ky * kernel + kx) * channels;
                            let offset = iy * side + ix;
                            for c in 0..channels {
                                row[base + c] = input[c * plane + offset];
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            batch,
            side,
            channels,
            kernel,
            cols: Arc::new(cols),
        })
    }

    pub fn from_tensors<U: Real>(tensors: &[&StackedTensor<U>], kernel: usize) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let x = stack_inputs(tensors)?;
        Self::new(x.view(), first.side(), first.channels(), kernel)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Stacks tensors into a `[B, C·S·S]` matrix, converting the element type.
pub fn stack_inputs<T: Real, U: Real>(tensors: &[&StackedTensor<U>]) -> Result<Array2<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (side, channels) = (first.side(), first.channels());
    let len = first.as_slice().len();
    let mut x = Array2::<T>::zeros((tensors.len(), len));
    for (mut row, t) in x.rows_mut().into_iter().zip(tensors) {
        if t.side() != side || t.channels() != channels {
            return Err(Error::Shape(format!(
                "mixed tensor shapes {side}x{side}x{channels} and {}x{}x{}",
                t.side(),
                t.side(),
                t.channels()
            )));
        }
        for (dst, &src) in row.iter_mut().zip(t.as_slice()) {
            *dst = T::from_f64_lossy(src.to_f64().unwrap());
        }
    }
    Ok(x)
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    batch: usize,
    generation: u64,
    cols: Arc<Array2<T>>,
    /// Pre-activation convolution output, `[B·S·S, F]`.
    conv_pre: Array2<T>,
    /// Normalized (pre-affine) batch-norm output.
    normalized: Array2<T>,
    inv_std: Array1<T>,
    /// Input of each dense layer; entry 0 is the pooled convolution output.
    dense_inputs: Vec<Array2<T>>,
    probs: Array2<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn probs(&self) -> &Array2<T> {
        &self.probs
    }

    /// Batch-norm output before the `gamma`/`beta` affine step.
    pub fn normalized(&self) -> &Array2<T> {
        &self.normalized
    }

    /// Activations feeding the output layer (the last hidden layer).
    pub fn penultimate(&self) -> &Array2<T> {
        self.dense_inputs.last().expect("at least one dense layer")
    }
}

/// Class probabilities and the predicted label of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub probs: Vec<T>,
    pub label: usize,
}

fn relu<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

fn softmax_rows<T: Real>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> HeadParams<T> {
    fn check_batch(&self, batch: &PreparedBatch<T>) -> Result<()> {
        let c = &self.config;
        if batch.side != c.input_side || batch.channels != c.input_channels || batch.kernel != c.conv_kernel {
            return Err(Error::Shape(format!(
                "batch is {}x{}x{} (kernel {}), head expects {}x{}x{} (kernel {})",
                batch.side,
                batch.side,
                batch.channels,
                batch.kernel,
                c.input_side,
                c.input_side,
                c.input_channels,
                c.conv_kernel
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, inputs: ArrayView2<T>) -> Result<PreparedBatch<T>> {
        let c = &self.config;
        PreparedBatch::new(inputs, c.input_side, c.input_channels, c.conv_kernel)
    }

    pub fn prepare_tensors<U: Real>(&self, tensors: &[&StackedTensor<U>]) -> Result<PreparedBatch<T>> {
        let x = stack_inputs(tensors)?;
        self.prepare(x.view())
    }

    /// Runs the head on `[B, C·S·S]` inputs.
    pub fn forward(&mut self, inputs: ArrayView2<T>, mode: Mode) -> Result<ForwardCache<T>> {
        let batch = self.prepare(inputs)?;
        self.forward_prepared(&batch, mode)
    }

    pub fn forward_prepared(&mut self, batch: &PreparedBatch<T>, mode: Mode) -> Result<ForwardCache<T>> {
        let (cache, stats) = self.run(batch, mode)?;
        if let Some((mean, var)) = stats {
            let m = T::from_f64_lossy(self.config.bn_momentum);
            let rows = T::from_usize(batch.cols.nrows()).unwrap();
            let unbias = rows / (rows - T::one());
            Zip::from(&mut self.bn_running_mean)
                .and(&mean)
                .for_each(|r, &b| *r = m * *r + (T::one() - m) * b);
            Zip::from(&mut self.bn_running_var)
                .and(&var)
                .for_each(|r, &b| *r = m * *r + (T::one() - m) * b * unbias);
        }
        Ok(cache)
    }

    /// Eval-mode forward pass; leaves the parameters untouched.
    pub fn infer(&self, inputs: ArrayView2<T>) -> Result<ForwardCache<T>> {
        let batch = self.prepare(inputs)?;
        self.infer_prepared(&batch)
    }

    pub fn infer_prepared(&self, batch: &PreparedBatch<T>) -> Result<ForwardCache<T>> {
        Ok(self.run(batch, Mode::Eval)?.0)
    }

    /// Returns the cache and, in train mode, the batch mean and biased variance.
    #[allow(clippy::type_complexity)]
    fn run(&self, batch: &PreparedBatch<T>, mode: Mode) -> Result<(ForwardCache<T>, Option<(Array1<T>, Array1<T>)>)> {
        self.check_batch(batch)?;
        if mode == Mode::Train && batch.batch < 2 {
            return Err(Error::Shape(
                "train-mode batch norm needs at least 2 samples".into(),
            ));
        }
        let plane = batch.side * batch.side;
        let eps = T::from_f64_lossy(self.config.bn_epsilon);

        let mut conv_pre = batch.cols.dot(&self.conv_weights);
        conv_pre += &self.conv_bias;
        let mut act = conv_pre.clone();
        relu(&mut act);

        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mean = act.mean_axis(Axis(0)).unwrap();
                let var = act.var_axis(Axis(0), T::zero());
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            Mode::Eval => (self.bn_running_mean.clone(), self.bn_running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let mut normalized = act;
        normalized -= &mean;
        normalized *= &inv_std;
        let mut bn_out = &normalized * &self.bn_gamma;
        bn_out += &self.bn_beta;

        let f = self.config.conv_filters;
        let pooled = bn_out
            .into_shape_with_order((batch.batch, plane, f))
            .expect("contiguous")
            .mean_axis(Axis(1))
            .unwrap();

        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut h = pooled;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                relu(&mut z);
            }
            dense_inputs.push(h);
            h = z;
        }
        softmax_rows(&mut h);

        Ok((
            ForwardCache {
                mode,
                batch: batch.batch,
                generation: self.generation,
                cols: Arc::clone(&batch.cols),
                conv_pre,
                normalized,
                inv_std,
                dense_inputs,
                probs: h,
            },
            stats,
        ))
    }

    /// Exact gradient of [`loss`] with respect to every trainable parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: &[usize], l2_lambda: T) -> Result<Gradients<T>> {
        if cache.mode != Mode::Train {
            return Err(Error::StaleCache("cache comes from an eval-mode pass".into()));
        }
        if cache.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache generation {} but parameters are at {}",
                cache.generation, self.generation
            )));
        }
        if labels.len() != cache.batch {
            return Err(Error::StaleCache(format!(
                "{} labels for a cached batch of {}",
                labels.len(),
                cache.batch
            )));
        }
        let n = self.config.n_classes;
        if let Some(&label) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::LabelOutOfRange { label, n_classes: n });
        }

        let b = cache.batch;
        let two_lambda = l2_lambda + l2_lambda;
        let mut dz = cache.probs.clone();
        for (i, &label) in labels.iter().enumerate() {
            dz[[i, label]] -= T::one();
        }
        dz.mapv_inplace(|v| v / T::from_usize(b).unwrap());

        let mut dense_grads = Vec::with_capacity(self.dense.len());
        for (i, layer) in self.dense.iter().enumerate().rev() {
            let input = &cache.dense_inputs[i];
            let mut dw = input.t().dot(&dz);
            dw.scaled_add(two_lambda, &layer.weights);
            let db = dz.sum_axis(Axis(0));
            let mut d_in = dz.dot(&layer.weights.t());
            if i > 0 {
                Zip::from(&mut d_in)
                    .and(input)
                    .for_each(|d, &h| if h <= T::zero() { *d = T::zero() });
            }
            dense_grads.push(DenseLayer { weights: dw, bias: db });
            dz = d_in;
        }
        dense_grads.reverse();
        let d_pooled = dz;

        // Average pool spreads each pooled gradient evenly over its S·S positions.
        let plane = self.config.input_side * self.config.input_side;
        let f = self.config.conv_filters;
        let inv_plane = T::one() / T::from_usize(plane).unwrap();
        let mut d_bn = Array2::<T>::zeros((b * plane, f));
        for (s, grad) in d_pooled.outer_iter().enumerate() {
            d_bn.slice_mut(s![s * plane..(s + 1) * plane, ..])
                .assign(&grad.mapv(|g| g * inv_plane));
        }

        let xhat = &cache.normalized;
        let d_gamma = (&d_bn * xhat).sum_axis(Axis(0));
        let d_beta = d_bn.sum_axis(Axis(0));

        // Batch-norm backward through the batch mean and variance.
        let m = T::from_usize(b * plane).unwrap();
        let mut d_xhat = d_bn;
        d_xhat *= &self.bn_gamma;
        let sum_d = d_xhat.sum_axis(Axis(0));
        let sum_dx = (&d_xhat * xhat).sum_axis(Axis(0));
        let mut d_act = d_xhat;
        Zip::from(d_act.rows_mut())
            .and(xhat.rows())
            .for_each(|mut d_row, x_row| {
                Zip::from(&mut d_row)
                    .and(&x_row)
                    .and(&sum_d)
                    .and(&sum_dx)
                    .and(&cache.inv_std)
                    .for_each(|d, &x, &sd, &sdx, &is| {
                        *d = is / m * (m * *d - sd - x * sdx);
                    });
            });
        Zip::from(&mut d_act)
            .and(&cache.conv_pre)
            .for_each(|d, &z| if z <= T::zero() { *d = T::zero() });

        let mut d_conv_w = cache.cols.t().dot(&d_act);
        d_conv_w.scaled_add(two_lambda, &self.conv_weights);
        let d_conv_b = d_act.sum_axis(Axis(0));

        Ok(Gradients {
            conv_weights: d_conv_w,
            conv_bias: d_conv_b,
            bn_gamma: d_gamma,
            bn_beta: d_beta,
            dense: dense_grads,
        })
    }

    /// Eval-mode class probabilities and labels.
    pub fn predict<U: Real>(&self, inputs: &[&StackedTensor<U>]) -> Result<Vec<Prediction<T>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.infer_prepared(&self.prepare_tensors(inputs)?)?;
        Ok(cache
            .probs
            .rows()
            .into_iter()
            .map(|row| {
                let probs = row.to_vec();
                Prediction {
                    label: argmax(&probs),
                    probs,
                }
            })
            .collect())
    }

    /// Eval-mode activations of the last hidden layer.
    pub fn embed<U: Real>(&self, inputs: &[&StackedTensor<U>]) -> Result<Array2<T>> {
        let cache = self.infer_prepared(&self.prepare_tensors(inputs)?)?;
        Ok(cache.penultimate().clone())
    }
}

/// Mean cross-entropy of `probs` against `labels` plus `l2_lambda · Σ w²`
/// over the convolution and dense weight matrices.
pub fn loss<T: Real>(probs: &Array2<T>, labels: &[usize], params: &HeadParams<T>, l2_lambda: T) -> Result<T> {
    Ok(cross_entropy(probs, labels)? + l2_lambda * params.weight_sq_norm())
}

pub fn cross_entropy<T: Real>(probs: &Array2<T>, labels: &[usize]) -> Result<T> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let n = probs.ncols();
    let mut total = T::zero();
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= n {
            return Err(Error::LabelOutOfRange { label, n_classes: n });
        }
        total = total - row[label].max(floor).ln();
    }
    Ok(total / T::from_usize(labels.len()).unwrap())
}
