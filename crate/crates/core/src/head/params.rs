use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::HeadConfig;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `[in, out]`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

/// All parameters of a head, trainable and running batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub(crate) config: HeadConfig,
    /// Unrolled kernel, `[k·k·C, F]`; row `(ky·k + kx)·C + c`.
    pub conv_weights: Array2<T>,
    pub conv_bias: Array1<T>,
    pub bn_gamma: Array1<T>,
    pub bn_beta: Array1<T>,
    pub bn_running_mean: Array1<T>,
    pub bn_running_var: Array1<T>,
    pub dense: Vec<DenseLayer<T>>,
    /// Bumped by every optimizer step; ties activation caches to a state.
    pub(crate) generation: u64,
}

/// Gradients, shaped like the trainable part of [`HeadParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub conv_weights: Array2<T>,
    pub conv_bias: Array1<T>,
    pub bn_gamma: Array1<T>,
    pub bn_beta: Array1<T>,
    pub dense: Vec<DenseLayer<T>>,
}

fn he_normal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let normal = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("finite std");
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64_lossy(normal.sample(rng)))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape")
}

impl<T: Real> HeadParams<T> {
    /// He-normal weights (variance 2 / fan-in), zero biases, identity batch norm.
    ///
    /// Samples are drawn in `f64` and rounded, so `f32` and `f64` heads built
    /// from the same generator state agree up to rounding.
    pub fn init<R: Rng + ?Sized>(config: &HeadConfig, rng: &mut R) -> Self {
        let f = config.conv_filters;
        let conv_weights = he_normal(config.conv_fan_in(), f, rng);
        let dense = config
            .dense_shapes()
            .into_iter()
            .map(|(n_in, n_out)| DenseLayer {
                weights: he_normal(n_in, n_out, rng),
                bias: Array1::zeros(n_out),
            })
            .collect();
        Self {
            config: config.clone(),
            conv_weights,
            conv_bias: Array1::zeros(f),
            bn_gamma: Array1::ones(f),
            bn_beta: Array1::zeros(f),
            bn_running_mean: Array1::zeros(f),
            bn_running_var: Array1::ones(f),
            dense,
            generation: 0,
        }
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Trainable tensors in a fixed order: conv weights, conv bias, gamma,
    /// beta, then weights and bias of each dense layer.
    pub fn trainables(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            self.conv_weights.as_slice().unwrap(),
            self.conv_bias.as_slice().unwrap(),
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
        ];
        for layer in &self.dense {
            out.push(layer.weights.as_slice().unwrap());
            out.push(layer.bias.as_slice().unwrap());
        }
        out
    }

    pub fn trainables_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            self.conv_weights.as_slice_mut().unwrap(),
            self.conv_bias.as_slice_mut().unwrap(),
            self.bn_gamma.as_slice_mut().unwrap(),
            self.bn_beta.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.dense {
            out.push(layer.weights.as_slice_mut().unwrap());
            out.push(layer.bias.as_slice_mut().unwrap());
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainables().iter().map(|s| s.len()).sum()
    }

    /// `Σ w²` over the convolution and dense weight matrices.
    pub fn weight_sq_norm(&self) -> T {
        let sq = |a: &Array2<T>| a.iter().fold(T::zero(), |acc, &w| acc + w * w);
        self.dense
            .iter()
            .fold(sq(&self.conv_weights), |acc, l| acc + sq(&l.weights))
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            self.conv_weights.as_slice().unwrap(),
            self.conv_bias.as_slice().unwrap(),
            self.bn_gamma.as_slice().unwrap(),
            self.bn_beta.as_slice().unwrap(),
        ];
        for layer in &self.dense {
            out.push(layer.weights.as_slice().unwrap());
            out.push(layer.bias.as_slice().unwrap());
        }
        out
    }

    /// Largest absolute entry, used in tests and diagnostics.
    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, &g| m.max(g.abs()))
    }
}
