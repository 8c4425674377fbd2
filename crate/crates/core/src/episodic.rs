//! The n-way k-shot protocol: episode sampling, per-episode training and
//! scoring, repeated-episode evaluation, k sweeps and ablation grids.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{reshape_stack, stacked_channels, StackedTensor};
use crate::error::{Error, Result};
use crate::head::{train_head, HeadConfig, Precision, TrainConfig, TrainedHead};
use crate::real::Real;
use crate::store::{join, FeatureStore, ItemKey, JoinMode, JoinedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub pool_per_class: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            q_query: 27,
            pool_per_class: 32,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.q_query == 0 {
            return Err(Error::Config("ways, shots and queries must be positive".into()));
        }
        if self.k_shot + self.q_query > self.pool_per_class {
            return Err(Error::Config(format!(
                "{} shots + {} queries exceed the pool of {} per class",
                self.k_shot, self.q_query, self.pool_per_class
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeItem {
    pub key: ItemKey,
    /// Position in `JoinedDataset::items`.
    pub index: usize,
    /// Episode label in `0..n_way`.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Dataset class index of each episode label.
    pub classes: Vec<usize>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    /// Reshape-stacks the features of `items` at grid side `side`.
    pub fn stacked(
        &self,
        dataset: &JoinedDataset,
        items: &[EpisodeItem],
        side: usize,
    ) -> Result<Vec<(StackedTensor, usize)>> {
        items
            .iter()
            .map(|it| Ok((reshape_stack(dataset.items[it.index].features.clone(), side)?, it.label)))
            .collect()
    }
}

/// Draws an episode.
///
/// When the dataset has more classes than `n_way`, a random subset is used,
/// labelled in ascending class order. Each class contributes a uniform pool of
/// `pool_per_class` items (or all of them, if fewer), shuffled, whose first
/// `k_shot` items form the support and next `q_query` the query.
pub fn sample_episode<R: Rng + ?Sized>(dataset: &JoinedDataset, spec: &EpisodeSpec, rng: &mut R) -> Result<Episode> {
    spec.validate()?;
    let by_class = dataset.indices_by_class();
    if spec.n_way > by_class.len() {
        return Err(Error::Data(format!(
            "{}-way episodes need {} classes, dataset has {}",
            spec.n_way,
            spec.n_way,
            by_class.len()
        )));
    }
    let mut classes: Vec<usize> = if spec.n_way == by_class.len() {
        (0..by_class.len()).collect()
    } else {
        index::sample(rng, by_class.len(), spec.n_way).into_vec()
    };
    classes.sort_unstable();

    let need = spec.k_shot + spec.q_query;
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.q_query);
    for (label, &class) in classes.iter().enumerate() {
        let members = &by_class[class];
        if members.len() < need {
            return Err(Error::Data(format!(
                "class {:?} has {} items, an episode needs {need}",
                dataset.class_names[class],
                members.len()
            )));
        }
        let mut pool: Vec<usize> = if members.len() > spec.pool_per_class {
            index::sample(rng, members.len(), spec.pool_per_class)
                .into_iter()
                .map(|i| members[i])
                .collect()
        } else {
            members.clone()
        };
        pool.shuffle(rng);
        let item = |index: usize| EpisodeItem {
            key: dataset.items[index].key,
            index,
            label,
        };
        support.extend(pool[..spec.k_shot].iter().map(|&i| item(i)));
        query.extend(pool[spec.k_shot..need].iter().map(|&i| item(i)));
    }
    Ok(Episode { classes, support, query })
}

/// Accuracy and confusion counts of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

/// An episode together with the head trained on its support set.
#[derive(Debug, Clone)]
pub struct FittedEpisode<T> {
    pub episode: Episode,
    /// Config the head was built with: channels and classes filled in.
    pub head_config: HeadConfig,
    pub head: TrainedHead<T>,
}

/// Samples an episode and trains a fresh head on its support set. Consumes
/// `rng` exactly as [`run_episode`] does.
pub fn fit_episode<T: Real, R: Rng + ?Sized>(
    dataset: &JoinedDataset,
    spec: &EpisodeSpec,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    rng: &mut R,
) -> Result<FittedEpisode<T>> {
    let episode = sample_episode(dataset, spec, rng)?;
    let side = head_config.input_side;
    let head_config = HeadConfig {
        input_channels: stacked_channels(dataset.dim(), side)?,
        n_classes: spec.n_way,
        ..head_config.clone()
    };
    let train_config = TrainConfig {
        seed: rng.next_u64(),
        ..train_config.clone()
    };
    let support = episode.stacked(dataset, &episode.support, side)?;
    let head = train_head::<T, f32>(&support, &head_config, &train_config)?;
    Ok(FittedEpisode {
        episode,
        head_config,
        head,
    })
}

/// Samples an episode, trains a fresh head on its support set and scores the query set.
pub fn run_episode<R: Rng + ?Sized>(
    dataset: &JoinedDataset,
    spec: &EpisodeSpec,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    match train_config.precision {
        Precision::F32 => score_episode::<f32, R>(dataset, spec, head_config, train_config, rng),
        Precision::F64 => score_episode::<f64, R>(dataset, spec, head_config, train_config, rng),
    }
}

fn score_episode<T: Real, R: Rng + ?Sized>(
    dataset: &JoinedDataset,
    spec: &EpisodeSpec,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let fitted = fit_episode::<T, R>(dataset, spec, head_config, train_config, rng)?;
    let query = fitted
        .episode
        .stacked(dataset, &fitted.episode.query, head_config.input_side)?;
    let inputs: Vec<&StackedTensor> = query.iter().map(|(t, _)| t).collect();
    let predicted: Vec<usize> = fitted
        .head
        .params
        .predict(&inputs)?
        .into_iter()
        .map(|p| p.label)
        .collect();

    let mut confusion = vec![vec![0u64; spec.n_way]; spec.n_way];
    for ((_, truth), pred) in query.iter().zip(&predicted) {
        confusion[*truth][*pred] += 1;
    }
    let correct = query.iter().zip(&predicted).filter(|((_, t), p)| t == *p).count();
    Ok(EpisodeOutcome {
        accuracy: correct as f64 / query.len() as f64,
        confusion,
    })
}

/// Aggregate of repeated episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_episode_accuracy: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Summed over episodes; rows are true labels, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let accs: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        let ways = outcomes.first().map_or(0, |o| o.confusion.len());
        let mut confusion = vec![vec![0u64; ways]; ways];
        for o in outcomes {
            for (row, orow) in confusion.iter_mut().zip(&o.confusion) {
                for (c, v) in row.iter_mut().zip(orow) {
                    *c += v;
                }
            }
        }
        Self {
            per_episode_accuracy: accs,
            mean,
            std,
            confusion,
        }
    }

    /// `trace / total` of the pooled confusion matrix.
    pub fn diagonal_fraction(&self) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let trace: u64 = self.confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
        if total == 0 {
            0.0
        } else {
            trace as f64 / total as f64
        }
    }
}

/// Runs `n_episodes` independent episodes seeded `spec.seed + i` on up to
/// `jobs` threads. The report does not depend on `jobs`.
pub fn cross_validate(
    dataset: &JoinedDataset,
    spec: &EpisodeSpec,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    n_episodes: usize,
    jobs: usize,
) -> Result<EvalReport> {
    if n_episodes < 2 {
        return Err(Error::Config(format!("need at least 2 episodes, got {n_episodes}")));
    }
    spec.validate()?;
    head_config.validate()?;
    train_config.validate()?;
    stacked_channels(dataset.dim(), head_config.input_side)?;

    let one = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));
        run_episode(dataset, spec, head_config, train_config, &mut rng)
    };
    let outcomes: Vec<EpisodeOutcome> = if jobs <= 1 {
        (0..n_episodes).map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        // `collect` on an indexed parallel iterator preserves episode order.
        pool.install(|| (0..n_episodes).into_par_iter().map(one).collect::<Result<_>>())?
    };
    Ok(EvalReport::from_outcomes(&outcomes))
}

/// One [`cross_validate`] per shot count, all from the same base seed.
pub fn k_sweep(
    dataset: &JoinedDataset,
    ks: &[usize],
    spec: &EpisodeSpec,
    head_config: &HeadConfig,
    train_config: &TrainConfig,
    n_episodes: usize,
    jobs: usize,
) -> Result<Vec<(usize, EvalReport)>> {
    for &k in ks {
        EpisodeSpec { k_shot: k, ..*spec }.validate()?;
    }
    ks.iter()
        .map(|&k| {
            let spec = EpisodeSpec { k_shot: k, ..*spec };
            Ok((k, cross_validate(dataset, &spec, head_config, train_config, n_episodes, jobs)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    /// The subset's total dimension is not divisible by `S²`.
    Incompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub backbone_subset: Vec<String>,
    pub reshape_side: usize,
    /// Hidden layer widths of the head.
    pub mlp_structure: Vec<usize>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub status: CellStatus,
}

/// Settings shared by every cell of an ablation grid.
#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub spec: EpisodeSpec,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub n_episodes: usize,
    pub jobs: usize,
}

/// All non-empty subsets of `0..n`, by size and then lexicographically.
pub fn all_subsets(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Evaluates every (subset, side, structure) combination. Subsets whose joined
/// dimension is not divisible by `S²` yield incompatible cells.
pub fn ablation_grid(
    stores: &[FeatureStore],
    subsets: &[Vec<usize>],
    sides: &[usize],
    mlp_structures: &[Vec<usize>],
    settings: &AblationSettings,
) -> Result<Vec<AblationCell>> {
    if subsets.is_empty() || subsets.iter().any(|s| s.is_empty()) {
        return Err(Error::Config("backbone subsets must be non-empty".into()));
    }
    if sides.is_empty() || mlp_structures.is_empty() {
        return Err(Error::Config("need at least one reshape side and one MLP structure".into()));
    }
    let mut cells = Vec::new();
    for subset in subsets {
        if let Some(&bad) = subset.iter().find(|&&i| i >= stores.len()) {
            return Err(Error::Config(format!(
                "subset refers to backbone {bad}, only {} given",
                stores.len()
            )));
        }
        let chosen: Vec<FeatureStore> = subset.iter().map(|&i| stores[i].clone()).collect();
        let names: Vec<String> = chosen.iter().map(|s| s.backbone_name.clone()).collect();
        let dataset = join(&chosen, JoinMode::Strict)?;
        for &side in sides {
            let compatible = stacked_channels(dataset.dim(), side).is_ok();
            for structure in mlp_structures {
                let mut cell = AblationCell {
                    backbone_subset: names.clone(),
                    reshape_side: side,
                    mlp_structure: structure.clone(),
                    accuracy_mean: None,
                    accuracy_std: None,
                    status: CellStatus::Incompatible,
                };
                if compatible {
                    let head = HeadConfig {
                        input_side: side,
                        hidden_sizes: structure.clone(),
                        ..settings.head.clone()
                    };
                    let report = cross_validate(
                        &dataset,
                        &settings.spec,
                        &head,
                        &settings.train,
                        settings.n_episodes,
                        settings.jobs,
                    )?;
                    cell.accuracy_mean = Some(report.mean);
                    cell.accuracy_std = Some(report.std);
                    cell.status = CellStatus::Ok;
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{clustered_dataset, clustered_stores, SynthSpec};

    fn tiny(per_class: usize) -> JoinedDataset {
        clustered_dataset(&SynthSpec {
            dims: vec![32],
            per_class,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn tiny_head() -> HeadConfig {
        HeadConfig {
            input_side: 2,
            conv_filters: 8,
            hidden_sizes: vec![16],
            l2_lambda: 0.0,
            ..HeadConfig::default()
        }
    }

    fn quick_train() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 60,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_episode_sizes() {
        let d = tiny(40);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&d, &EpisodeSpec::default(), &mut rng).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (25, 135));
        let one_shot = EpisodeSpec { k_shot: 1, ..EpisodeSpec::default() };
        let ep = sample_episode(&d, &one_shot, &mut rng).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (5, 135));
    }

    #[test]
    fn episodes_are_reproducible() {
        let d = tiny(40);
        let spec = EpisodeSpec::default();
        let a = sample_episode(&d, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_episode(&d, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = sample_episode(&d, &spec, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn small_classes_use_everything_and_too_small_fail() {
        let d = tiny(33);
        let spec = EpisodeSpec { pool_per_class: 40, ..EpisodeSpec::default() };
        let ep = sample_episode(&d, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ep.query.len(), 135);
        let d = tiny(20);
        assert!(matches!(
            sample_episode(&d, &EpisodeSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn fewer_ways_pick_a_class_subset() {
        let d = tiny(10);
        let spec = EpisodeSpec { n_way: 3, k_shot: 2, q_query: 3, pool_per_class: 5, seed: 0 };
        let ep = sample_episode(&d, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(ep.classes.len(), 3);
        assert!(ep.classes.windows(2).all(|w| w[0] < w[1]));
        for it in ep.support.iter().chain(&ep.query) {
            assert_eq!(it.key.class_index as usize, ep.classes[it.label]);
        }
        let too_many = EpisodeSpec { n_way: 6, ..spec };
        assert!(sample_episode(&d, &too_many, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn run_episode_counts_add_up() {
        let d = tiny(32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = run_episode(&d, &EpisodeSpec::default(), &tiny_head(), &quick_train(), &mut rng).unwrap();
        let total: u64 = out.confusion.iter().flatten().sum();
        assert_eq!(total, 135);
        assert!(out.confusion.iter().all(|r| r.iter().sum::<u64>() == 27));
        let trace: u64 = (0..5).map(|i| out.confusion[i][i]).sum();
        assert_eq!(out.accuracy, trace as f64 / 135.0);
    }

    #[test]
    fn reshape_incompatibility_propagates() {
        let d = tiny(32);
        let head = HeadConfig { input_side: 3, ..tiny_head() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            run_episode(&d, &EpisodeSpec::default(), &head, &quick_train(), &mut rng),
            Err(Error::Indivisible { dim: 32, side: 3 })
        ));
    }

    #[test]
    fn report_statistics() {
        let mk = |a: f64| EpisodeOutcome { accuracy: a, confusion: vec![vec![1, 0], vec![0, 1]] };
        let r = EvalReport::from_outcomes(&[mk(0.5), mk(1.0), mk(0.75)]);
        assert!((r.mean - 0.75).abs() < 1e-15);
        assert!((r.std - (0.125f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![3, 0], vec![0, 3]]);
        let same = EvalReport::from_outcomes(&[mk(1.0), mk(1.0)]);
        assert_eq!(same.std, 0.0);
    }

    #[test]
    fn cross_validate_is_job_independent() {
        let d = tiny(32);
        let spec = EpisodeSpec { seed: 5, ..EpisodeSpec::default() };
        let train = TrainConfig { epochs: 10, ..quick_train() };
        let a = cross_validate(&d, &spec, &tiny_head(), &train, 3, 1).unwrap();
        let b = cross_validate(&d, &spec, &tiny_head(), &train, 3, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_episode_accuracy.len(), 3);
        assert!(cross_validate(&d, &spec, &tiny_head(), &train, 1, 1).is_err());
    }

    #[test]
    fn subsets_ordered_by_size_then_members() {
        assert_eq!(
            all_subsets(3),
            vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
        );
    }

    #[test]
    fn ablation_marks_incompatible_cells() {
        let stores = clustered_stores(&SynthSpec {
            dims: vec![2048, 1920],
            per_class: 8,
            ..SynthSpec::default()
        })
        .unwrap();
        let settings = AblationSettings {
            spec: EpisodeSpec { k_shot: 2, q_query: 2, pool_per_class: 8, ..EpisodeSpec::default() },
            head: HeadConfig { conv_filters: 4, l2_lambda: 0.0, ..HeadConfig::default() },
            train: TrainConfig { epochs: 1, ..TrainConfig::default() },
            n_episodes: 2,
            jobs: 1,
        };
        let cells = ablation_grid(&stores, &[vec![1]], &[32, 16, 8], &[vec![8]], &settings).unwrap();
        let status: Vec<CellStatus> = cells.iter().map(|c| c.status).collect();
        assert_eq!(status, [CellStatus::Incompatible, CellStatus::Incompatible, CellStatus::Ok]);
        assert!(cells[0].accuracy_mean.is_none());
        assert!(cells[2].accuracy_mean.is_some());

        assert!(matches!(
            ablation_grid(&stores, &[vec![]], &[4], &[vec![8]], &settings),
            Err(Error::Config(_))
        ));
    }
}
