//! Exact t-SNE for desk-scale point sets (O(N²) affinities).
//!
//! Gaussian conditional affinities with a per-point precision found by
//! bisection on the target perplexity, symmetrized; Student-t affinities in
//! 2-D; KL gradient descent with momentum, per-coordinate gains and early
//! exaggeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    /// Capped at `(N - 1) / 3`.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

/// Entropy tolerance (nats) of the perplexity search.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-stochastic `p(j|i)`, row-major `n x n`.
    pub conditional: Vec<f64>,
    /// Symmetrized `(p(j|i) + p(i|j)) / 2n`.
    pub joint: Vec<f64>,
    /// Shannon entropy (nats) of each conditional row.
    pub entropies: Vec<f64>,
    pub perplexity: f64,
}

pub fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Effective perplexity after the `(N - 1) / 3` cap.
pub fn effective_perplexity(requested: f64, count: usize) -> Result<f64> {
    if count < 4 {
        return Err(Error::TooFewPoints(count));
    }
    let cap = (count - 1) as f64 / 3.0;
    let p = requested.min(cap);
    if !(requested < count as f64) || !(p >= 1.0) {
        return Err(Error::InfeasiblePerplexity {
            perplexity: requested,
            count,
        });
    }
    Ok(p)
}

/// Conditional row `i` for precision `beta`; returns the row and its entropy.
fn conditional_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    // Shift by the nearest neighbour so the largest weight is exp(0).
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (r, &d)) in row.iter_mut().zip(dist).enumerate() {
        *r = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *r;
    }
    let mut entropy = 0.0;
    for r in row.iter_mut() {
        *r /= sum;
        if *r > 0.0 {
            entropy -= *r * r.ln();
        }
    }
    entropy
}

pub fn affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    let perplexity = effective_perplexity(perplexity, n)?;
    let dist = squared_distances(points);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateAffinities);
    }
    let target = perplexity.ln();
    let mut conditional = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let row = &mut conditional[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        // Scale the starting precision to the data.
        let mean: f64 = d.iter().sum::<f64>() / (n - 1) as f64;
        if mean > 0.0 {
            beta = 1.0 / mean;
        }
        let mut entropy = conditional_row(d, i, beta, row);
        for _ in 0..MAX_BISECTIONS {
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            entropy = conditional_row(d, i, beta, row);
        }
        if (entropy - target).abs() >= ENTROPY_TOLERANCE {
            return Err(Error::InfeasiblePerplexity { perplexity, count: n });
        }
        entropies[i] = entropy;
    }
    let mut joint = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((conditional[i * n + j] + conditional[j * n + i]) / denom).max(1e-12);
            }
        }
    }
    Ok(Affinities {
        n,
        conditional,
        joint,
        entropies,
        perplexity,
    })
}

/// Student-t affinities of a 2-D layout: returns `(q, unnormalized kernel)`.
fn low_dim_affinities(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            sum += 2.0 * k;
        }
    }
    let q = num.iter().map(|&k| (k / sum).max(1e-12)).collect();
    (q, num)
}

/// `KL(P || Q)` of a layout.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (q, _) = low_dim_affinities(y);
    let n = y.len();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                kl += pij * (pij / q[i * n + j]).ln();
            }
        }
    }
    kl
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// KL divergence after the first iteration (against the true, not
    /// exaggerated, affinities).
    pub initial_kl: f64,
    pub final_kl: f64,
    pub perplexity: f64,
}

pub fn tsne_embed(points: &[Vec<f64>], config: &TsneConfig) -> Result<Embedding> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(Error::Shape("t-SNE input vectors differ in length".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("t-SNE input contains non-finite values".into()));
        }
    }
    if config.iterations == 0 {
        return Err(Error::Config("t-SNE needs at least one iteration".into()));
    }
    let aff = affinities(points, config.perplexity)?;
    let n = aff.n;
    let p = &aff.joint;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-2).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut initial_kl = f64::NAN;

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.exaggeration_iters {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let (q, num) = low_dim_affinities(&y);
        let mut grad = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = 4.0 * (exaggeration * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                grad[i][0] += m * (y[i][0] - y[j][0]);
                grad[i][1] += m * (y[i][1] - y[j][1]);
            }
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        // Re-center; the objective is translation invariant.
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        for v in &mut y {
            v[0] -= cx;
            v[1] -= cy;
        }
        if iter == 0 {
            initial_kl = kl_divergence(p, &y);
        }
    }
    let final_kl = kl_divergence(p, &y);
    Ok(Embedding {
        coords: y,
        initial_kl,
        final_kl,
        perplexity: aff.perplexity,
    })
}
