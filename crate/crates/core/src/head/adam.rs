use super::params::{Gradients, HeadParams};
use crate::error::{Error, Result};
use crate::real::Real;

/// First and second moment estimates for every trainable scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &HeadParams<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .trainables()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update. Batch-norm running statistics are not touched.
    pub fn step(&mut self, params: &mut HeadParams<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        {
            let shapes_ok = grads.len() == self.m.len()
                && params.trainables().len() == self.m.len()
                && grads
                    .iter()
                    .zip(params.trainables())
                    .zip(&self.m)
                    .all(|((g, p), m)| g.len() == p.len() && p.len() == m.len());
            if !shapes_ok {
                return Err(Error::Shape(
                    "gradients, parameters and optimizer state disagree".into(),
                ));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(self.epsilon);
        let one = T::one();

        for (((p, g), m), v) in params
            .trainables_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.bump_generation();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::HeadConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> HeadParams<f64> {
        let cfg = HeadConfig {
            input_side: 2,
            input_channels: 2,
            conv_filters: 3,
            hidden_sizes: vec![4],
            n_classes: 3,
            ..HeadConfig::default()
        };
        HeadParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn grads_like(p: &HeadParams<f64>, f: impl Fn(usize) -> f64) -> Gradients<f64> {
        let mut k = 0;
        let mut next = |a: &ndarray::Array2<f64>| {
            a.mapv(|_| {
                k += 1;
                f(k)
            })
        };
        let conv_weights = next(&p.conv_weights);
        let mut next1 = |a: &ndarray::Array1<f64>| {
            a.mapv(|_| {
                k += 1;
                f(k)
            })
        };
        let conv_bias = next1(&p.conv_bias);
        let bn_gamma = next1(&p.bn_gamma);
        let bn_beta = next1(&p.bn_beta);
        let dense = p
            .dense
            .iter()
            .map(|l| crate::head::DenseLayer {
                weights: l.weights.mapv(|_| {
                    k += 1;
                    f(k)
                }),
                bias: l.bias.mapv(|_| {
                    k += 1;
                    f(k)
                }),
            })
            .collect();
        Gradients { conv_weights, conv_bias, bn_gamma, bn_beta, dense }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = small();
        let before = p.clone();
        let mut adam = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &grads_like(&before, |_| 0.0), 1e-3).unwrap();
        assert_eq!(p.trainables(), before.trainables());
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = small();
        let before = p.clone();
        let g = grads_like(&before, |k| if k % 2 == 0 { 1e-3 * k as f64 } else { -50.0 * k as f64 });
        let mut adam = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let lr = 5e-5;
        adam.step(&mut p, &g, lr).unwrap();
        for ((new, old), grad) in p.trainables().iter().zip(before.trainables()).zip(g.tensors()) {
            for i in 0..new.len() {
                let delta = new[i] - old[i];
                let expected = -lr * grad[i].signum();
                assert!((delta - expected).abs() < 1e-9 * lr.max(1.0) + lr * 1e-4, "{delta} vs {expected}");
            }
        }
    }

    #[test]
    fn running_stats_untouched() {
        let mut p = small();
        p.bn_running_mean.fill(0.25);
        let g = grads_like(&p, |_| 1.0);
        let mut adam = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, 0.1).unwrap();
        assert!(p.bn_running_mean.iter().all(|&v| v == 0.25));
        assert!(p.bn_running_var.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = small();
        let mut g = grads_like(&p, |_| 1.0);
        g.dense.pop();
        let mut adam = AdamState::new(&p, 0.9, 0.999, 1e-8);
        assert!(adam.step(&mut p, &g, 0.1).is_err());
        assert_eq!(adam.t, 0);
    }
}
