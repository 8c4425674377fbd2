//! Resolution of flags, the JSON config file and the seed environment
//! variable into one configuration. Precedence: flag, config file,
//! `FEWSHOT_STACK_SEED` (seed only), built-in default.

use std::path::Path;

use fewshot_stack::episodic::EpisodeSpec;
use fewshot_stack::head::{HeadConfig, Precision, TrainConfig};
use fewshot_stack::reporting::Format;
use fewshot_stack::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::RunArgs;

pub const SEED_ENV: &str = "FEWSHOT_STACK_SEED";
pub const DEFAULT_EPISODES: usize = 10;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Flat JSON config; keys mirror the long flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub ways: Option<usize>,
    pub shots: Option<usize>,
    pub queries: Option<usize>,
    pub pool: Option<usize>,
    pub episodes: Option<usize>,
    pub reshape: Option<OneOrMany<usize>>,
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    pub hidden: Option<OneOrMany<Vec<usize>>>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub l2: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    pub precision: Option<Precision>,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub lenient: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// Reshape sides from the file; a list is only meaningful to `ablate`.
    pub fn reshape_sides(&self) -> Option<Vec<usize>> {
        self.reshape.clone().map(OneOrMany::into_vec)
    }

    pub fn single_reshape(&self) -> Result<Option<usize>> {
        match self.reshape_sides() {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0])),
            Some(_) => Err(Error::Config("config \"reshape\" must be a single side here".into())),
        }
    }

    pub fn hidden_structures(&self) -> Option<Vec<Vec<usize>>> {
        self.hidden.clone().map(OneOrMany::into_vec)
    }

    pub fn single_hidden(&self) -> Result<Option<Vec<usize>>> {
        match self.hidden_structures() {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0].clone())),
            Some(_) => Err(Error::Config("config \"hidden\" must be a single structure here".into())),
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn parse_precision(s: &str) -> Result<Precision> {
    match s.to_ascii_lowercase().as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Error::Config(format!("unknown precision {other:?}"))),
    }
}

/// Everything a training command needs, with every default materialized.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub episodes: usize,
    pub jobs: usize,
    pub format: Format,
    pub lenient: bool,
    pub spec: EpisodeSpec,
    /// Input side, widths and regularization; channels and classes are derived per dataset.
    pub head: HeadConfig,
    pub train: TrainConfig,
}

pub fn resolve(run: &RunArgs, file: &FileConfig) -> Result<Resolved> {
    let seed = match run.seed.or(file.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let format = match &run.format {
        Some(f) => f.parse()?,
        None => file.format.unwrap_or_default(),
    };
    let precision = match &run.precision {
        Some(p) => parse_precision(p)?,
        None => file.precision.unwrap_or_default(),
    };
    let spec_default = EpisodeSpec::default();
    let spec = EpisodeSpec {
        n_way: run.ways.or(file.ways).unwrap_or(spec_default.n_way),
        k_shot: run.shots.or(file.shots).unwrap_or(spec_default.k_shot),
        q_query: run.queries.or(file.queries).unwrap_or(spec_default.q_query),
        pool_per_class: run.pool.or(file.pool).unwrap_or(spec_default.pool_per_class),
        seed,
    };
    let head_default = HeadConfig::default();
    let head = HeadConfig {
        conv_filters: run.filters.or(file.filters).unwrap_or(head_default.conv_filters),
        conv_kernel: run.kernel.or(file.kernel).unwrap_or(head_default.conv_kernel),
        l2_lambda: run.l2.or(file.l2).unwrap_or(head_default.l2_lambda),
        n_classes: spec.n_way,
        ..head_default
    };
    let train_default = TrainConfig::default();
    let train = TrainConfig {
        learning_rate: run.lr.or(file.lr).unwrap_or(train_default.learning_rate),
        epochs: run.epochs.or(file.epochs).unwrap_or(train_default.epochs),
        seed,
        precision,
        ..train_default
    };
    let jobs = run.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    spec.validate()?;
    train.validate()?;
    Ok(Resolved {
        seed,
        episodes: run.episodes.or(file.episodes).unwrap_or(DEFAULT_EPISODES),
        jobs,
        format,
        lenient: run.lenient || file.lenient.unwrap_or(false),
        spec,
        head,
        train,
    })
}

/// Parses one `--hidden` occurrence of `ablate`.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    let widths: Vec<usize> = s
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad MLP structure {s:?}")))?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Config(format!("bad MLP structure {s:?}")));
    }
    Ok(widths)
}

/// Parses one `--subset` occurrence: backbone indices or names.
pub fn parse_subset(s: &str, backbones: &[String]) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::Config("empty backbone subset".into()));
    }
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let i = match p.parse::<usize>() {
            Ok(i) if i < backbones.len() => i,
            Ok(i) => return Err(Error::Config(format!("backbone index {i} out of range"))),
            Err(_) => backbones
                .iter()
                .position(|b| b == p)
                .ok_or_else(|| Error::Config(format!("unknown backbone {p:?}")))?,
        };
        if out.contains(&i) {
            return Err(Error::Config(format!("backbone {p:?} repeated in subset")));
        }
        out.push(i);
    }
    Ok(out)
}
