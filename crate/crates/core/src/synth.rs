//! Synthetic clustered feature stores for tests, demos and sanity checks.
//!
//! Class centers are mutually orthogonal with pairwise distance
//! `separation · σ`; each sample adds isotropic Gaussian noise whose expected
//! norm is `σ` (per-coordinate standard deviation `σ / √D`).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::store::{join, FeatureRecord, FeatureStore, JoinMode, JoinedDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// One store is generated per entry.
    pub dims: Vec<usize>,
    pub n_classes: usize,
    pub per_class: usize,
    /// Pairwise center distance in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: vec![2048, 2048, 1920],
            n_classes: 5,
            per_class: 32,
            separation: 10.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

fn orthonormal_directions(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Class centers in the joined space.
pub fn cluster_centers(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    let dim: usize = spec.dims.iter().sum();
    if spec.n_classes == 0 || spec.n_classes > dim || spec.dims.contains(&0) {
        return Err(Error::Config(format!(
            "cannot place {} orthogonal centers in dimension {dim}",
            spec.n_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.separation * spec.sigma / std::f64::consts::SQRT_2;
    Ok(orthonormal_directions(spec.n_classes, dim, &mut rng)
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * scale).collect())
        .collect())
}

pub fn clustered_stores(spec: &SynthSpec) -> Result<Vec<FeatureStore>> {
    let centers = cluster_centers(spec)?;
    let dim: usize = spec.dims.iter().sum();
    let noise = Normal::new(0.0, spec.sigma / (dim as f64).sqrt())
        .map_err(|e| Error::Config(format!("sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_fea7);
    let class_names: Vec<String> = (0..spec.n_classes).map(|c| format!("class-{c}")).collect();
    let mut stores: Vec<FeatureStore> = spec
        .dims
        .iter()
        .enumerate()
        .map(|(i, &d)| FeatureStore {
            backbone_name: format!("synthetic-{i}"),
            dim: d,
            class_names: class_names.clone(),
            records: Vec::new(),
        })
        .collect();
    for (c, center) in centers.iter().enumerate() {
        for image in 0..spec.per_class {
            let sample: Vec<f32> = center
                .iter()
                .map(|&m| (m + noise.sample(&mut rng)) as f32)
                .collect();
            let mut offset = 0;
            for store in &mut stores {
                store.records.push(FeatureRecord {
                    class_index: c as u32,
                    image_id: image as u32,
                    features: sample[offset..offset + store.dim].to_vec(),
                });
                offset += store.dim;
            }
        }
    }
    Ok(stores)
}

pub fn clustered_dataset(spec: &SynthSpec) -> Result<JoinedDataset> {
    join(&clustered_stores(spec)?, JoinMode::Strict)
}

/// Reassigns feature vectors to random keys, destroying any class signal
/// while keeping per-class counts.
pub fn shuffle_features(dataset: &JoinedDataset, seed: u64) -> JoinedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<Vec<f32>> = dataset.items.iter().map(|i| i.features.clone()).collect();
    vectors.shuffle(&mut rng);
    let mut out = dataset.clone();
    for (item, v) in out.items.iter_mut().zip(vectors) {
        item.features = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn centers_are_equidistant() {
        let spec = SynthSpec {
            dims: vec![64, 32],
            ..SynthSpec::default()
        };
        let c = cluster_centers(&spec).unwrap();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!((dist(&c[i], &c[j]) - 10.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stores_split_the_joined_vector() {
        let spec = SynthSpec {
            dims: vec![8, 4],
            per_class: 3,
            ..SynthSpec::default()
        };
        let stores = clustered_stores(&spec).unwrap();
        assert_eq!(stores.len(), 2);
        assert_eq!(stores[0].records.len(), 15);
        let joined = clustered_dataset(&spec).unwrap();
        assert_eq!(joined.dim(), 12);
        assert_eq!(&joined.items[4].features[8..], stores[1].records[4].features.as_slice());
    }

    #[test]
    fn shuffling_keeps_keys_and_vectors() {
        let spec = SynthSpec {
            dims: vec![6],
            per_class: 4,
            ..SynthSpec::default()
        };
        let d = clustered_dataset(&spec).unwrap();
        let s = shuffle_features(&d, 1);
        assert_eq!(
            d.items.iter().map(|i| i.key).collect::<Vec<_>>(),
            s.items.iter().map(|i| i.key).collect::<Vec<_>>()
        );
        let mut a: Vec<_> = d.items.iter().map(|i| i.features.clone()).collect();
        let mut b: Vec<_> = s.items.iter().map(|i| i.features.clone()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
        assert_ne!(d, s);
    }
}
