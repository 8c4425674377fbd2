//! C ABI over `fewshot_stack`.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns an [`FssStatus`]; on failure a message is kept
//! per thread and read back with [`fss_last_error`]. Panics are caught at the
//! boundary and reported as `FSS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fewshot_stack::ensemble::{reshape_stack, stacked_channels, StackedTensor};
use fewshot_stack::episodic::{cross_validate, EpisodeSpec, EvalReport};
use fewshot_stack::head::{count_params, train_head, AnyHead, HeadConfig, Precision, TrainConfig};
use fewshot_stack::{join, read_fsf, Error, ErrorKind, FeatureStore, HeadParams, JoinMode, JoinedDataset, Real};

/// Maximum number of dense layers in [`FssHeadConfig`].
pub const FSS_MAX_HIDDEN: usize = 8;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FssStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Data = 5,
    Incompatible = 6,
    Panic = 7,
}

/// A feature file loaded into memory.
pub struct FssStore(FeatureStore);

/// Feature files joined on their item keys.
pub struct FssDataset(JoinedDataset);

/// A trained head of either precision.
pub struct FssHead(AnyHead);

/// Result of a repeated-episode evaluation.
pub struct FssReport(EvalReport);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FssEpisodeConfig {
    pub n_way: u32,
    pub k_shot: u32,
    pub q_query: u32,
    pub pool_per_class: u32,
    pub seed: u64,
}

/// Head architecture. `input_channels` is derived from the data where a
/// dataset is given; `n_classes` follows `n_way` in evaluations.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FssHeadConfig {
    pub input_side: u32,
    pub input_channels: u32,
    pub conv_filters: u32,
    pub conv_kernel: u32,
    pub hidden_sizes: [u32; FSS_MAX_HIDDEN],
    pub n_hidden: u32,
    pub n_classes: u32,
    pub l2_lambda: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FssTrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub seed: u64,
    /// 0 for f32 arithmetic, 1 for f64.
    pub precision: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FssParamCount {
    pub trainable: u64,
    pub non_trainable: u64,
}

enum Failure {
    Status(FssStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FssStatus {
    match e.kind() {
        ErrorKind::Io => FssStatus::Io,
        ErrorKind::Config => FssStatus::Config,
        ErrorKind::Data => FssStatus::Data,
        ErrorKind::Incompatible => FssStatus::Incompatible,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> FssStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FssStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            FssStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(FssStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(FssStatus::InvalidArgument, msg.into())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

impl FssHeadConfig {
    fn to_config(self) -> FfiResult<HeadConfig> {
        let n = self.n_hidden as usize;
        if n > FSS_MAX_HIDDEN {
            return Err(invalid(format!("n_hidden {n} exceeds {FSS_MAX_HIDDEN}")));
        }
        Ok(HeadConfig {
            input_side: self.input_side as usize,
            input_channels: self.input_channels as usize,
            conv_filters: self.conv_filters as usize,
            conv_kernel: self.conv_kernel as usize,
            hidden_sizes: self.hidden_sizes[..n].iter().map(|&h| h as usize).collect(),
            n_classes: self.n_classes as usize,
            l2_lambda: self.l2_lambda,
            ..HeadConfig::default()
        })
    }

    fn from_config(c: &HeadConfig) -> Self {
        let mut hidden_sizes = [0u32; FSS_MAX_HIDDEN];
        for (dst, &h) in hidden_sizes.iter_mut().zip(&c.hidden_sizes) {
            *dst = h as u32;
        }
        Self {
            input_side: c.input_side as u32,
            input_channels: c.input_channels as u32,
            conv_filters: c.conv_filters as u32,
            conv_kernel: c.conv_kernel as u32,
            hidden_sizes,
            n_hidden: c.hidden_sizes.len().min(FSS_MAX_HIDDEN) as u32,
            n_classes: c.n_classes as u32,
            l2_lambda: c.l2_lambda,
        }
    }
}

impl FssTrainConfig {
    fn to_config(self) -> FfiResult<TrainConfig> {
        let precision = match self.precision {
            0 => Precision::F32,
            1 => Precision::F64,
            p => return Err(invalid(format!("precision must be 0 (f32) or 1 (f64), got {p}"))),
        };
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs as usize,
            seed: self.seed,
            precision,
            ..TrainConfig::default()
        })
    }
}

impl From<FssEpisodeConfig> for EpisodeSpec {
    fn from(c: FssEpisodeConfig) -> Self {
        EpisodeSpec {
            n_way: c.n_way as usize,
            k_shot: c.k_shot as usize,
            q_query: c.q_query as usize,
            pool_per_class: c.pool_per_class as usize,
            seed: c.seed,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Fills `out` with the default episode settings.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_episode_config_default(out: *mut FssEpisodeConfig) -> FssStatus {
    guard(|| {
        let d = EpisodeSpec::default();
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = FssEpisodeConfig {
            n_way: d.n_way as u32,
            k_shot: d.k_shot as u32,
            q_query: d.q_query as u32,
            pool_per_class: d.pool_per_class as u32,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Fills `out` with the default head settings.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_head_config_default(out: *mut FssHeadConfig) -> FssStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = FssHeadConfig::from_config(&HeadConfig::default());
        Ok(())
    })
}

/// Fills `out` with the default training settings.
///
/// # Safety
/// `out` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_train_config_default(out: *mut FssTrainConfig) -> FssStatus {
    guard(|| {
        let d = TrainConfig::default();
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = FssTrainConfig {
            learning_rate: d.learning_rate,
            epochs: d.epochs as u32,
            seed: d.seed,
            precision: 0,
        };
        Ok(())
    })
}

/// Trainable and non-trainable parameter counts of a head.
///
/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fss_count_params(config: *const FssHeadConfig, out: *mut FssParamCount) -> FssStatus {
    guard(|| {
        let config = borrow(config, "config")?.to_config()?;
        config.validate()?;
        let counts = count_params(&config, &[]);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = FssParamCount {
            trainable: counts.trainable,
            non_trainable: counts.non_trainable,
        };
        Ok(())
    })
}

/// Reads and validates a feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_store_open(path: *const c_char, out: *mut *mut FssStore) -> FssStatus {
    guard(|| {
        let store = read_fsf(path_arg(path)?)?;
        put(out, FssStore(store))
    })
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_store_dim(store: *const FssStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.dim)
}

/// Record count, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_store_len(store: *const FssStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.records.len())
}

/// Class count, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_store_n_classes(store: *const FssStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.class_names.len())
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fss_store_free(store: *mut FssStore) {
    free(store)
}

/// Joins `count` stores in the given order. With `lenient`, keys missing
/// from some store are dropped instead of failing.
///
/// # Safety
/// `stores` must point to `count` live handles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_dataset_join(
    stores: *const *const FssStore,
    count: usize,
    lenient: bool,
    out: *mut *mut FssDataset,
) -> FssStatus {
    guard(|| {
        if stores.is_null() {
            return Err(null("stores"));
        }
        if count == 0 {
            return Err(invalid("need at least one store"));
        }
        let handles = std::slice::from_raw_parts(stores, count);
        let owned: Vec<FeatureStore> = handles
            .iter()
            .map(|&h| borrow(h, "store").map(|s| s.0.clone()))
            .collect::<FfiResult<_>>()?;
        let mode = if lenient { JoinMode::Lenient } else { JoinMode::Strict };
        put(out, FssDataset(join(&owned, mode)?))
    })
}

/// Joined dimension, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_dataset_dim(dataset: *const FssDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.dim())
}

/// Item count, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_dataset_len(dataset: *const FssDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.items.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fss_dataset_free(dataset: *mut FssDataset) {
    free(dataset)
}

/// Runs `n_episodes` episodes seeded `episode.seed + i` on up to `jobs` threads.
///
/// # Safety
/// All pointers must be valid; `out` receives a report handle.
#[no_mangle]
pub unsafe extern "C" fn fss_cross_validate(
    dataset: *const FssDataset,
    episode: *const FssEpisodeConfig,
    head: *const FssHeadConfig,
    train: *const FssTrainConfig,
    n_episodes: u32,
    jobs: u32,
    out: *mut *mut FssReport,
) -> FssStatus {
    guard(|| {
        let dataset = &borrow(dataset, "dataset")?.0;
        let spec: EpisodeSpec = (*borrow(episode, "episode")?).into();
        let mut head = borrow(head, "head")?.to_config()?;
        head.input_channels = stacked_channels(dataset.dim(), head.input_side)?;
        head.n_classes = spec.n_way;
        let train = borrow(train, "train")?.to_config()?;
        let report = cross_validate(dataset, &spec, &head, &train, n_episodes as usize, jobs.max(1) as usize)?;
        put(out, FssReport(report))
    })
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_report_episodes(report: *const FssReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.per_episode_accuracy.len())
}

/// Accuracy of episode `index`, or NaN when out of range.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_report_accuracy(report: *const FssReport, index: usize) -> f64 {
    report
        .as_ref()
        .and_then(|r| r.0.per_episode_accuracy.get(index).copied())
        .unwrap_or(f64::NAN)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_report_mean(report: *const FssReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.mean)
}

/// Population standard deviation of the episode accuracies.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_report_std(report: *const FssReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.std)
}

/// Side of the square confusion matrix.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_report_n_classes(report: *const FssReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.confusion.len())
}

/// Copies the pooled confusion matrix, row-major with rows as true labels,
/// into `out`, which must hold `n_classes²` values.
///
/// # Safety
/// `report` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn fss_report_confusion(report: *const FssReport, out: *mut u64, len: usize) -> FssStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let n = r.confusion.len();
        if out.is_null() {
            return Err(null("out"));
        }
        if len != n * n {
            return Err(invalid(format!("confusion buffer holds {len} values, need {}", n * n)));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, &v) in dst.iter_mut().zip(r.confusion.iter().flatten()) {
            *d = v;
        }
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fss_report_free(report: *mut FssReport) {
    free(report)
}

fn train_any<T: Real>(support: &[(StackedTensor, usize)], head: &HeadConfig, train: &TrainConfig) -> FfiResult<HeadParams<T>> {
    Ok(train_head::<T, f32>(support, head, train)?.params)
}

/// Trains a head on dataset items `indices` with labels `labels`.
/// `input_channels` is derived from the dataset dimension and `input_side`.
///
/// # Safety
/// `indices` and `labels` must each hold `count` values; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn fss_head_train(
    dataset: *const FssDataset,
    indices: *const usize,
    labels: *const u32,
    count: usize,
    head: *const FssHeadConfig,
    train: *const FssTrainConfig,
    out: *mut *mut FssHead,
) -> FssStatus {
    guard(|| {
        let dataset = &borrow(dataset, "dataset")?.0;
        if indices.is_null() || labels.is_null() {
            return Err(null("indices or labels"));
        }
        let indices = std::slice::from_raw_parts(indices, count);
        let labels = std::slice::from_raw_parts(labels, count);
        let mut config = borrow(head, "head")?.to_config()?;
        config.input_channels = stacked_channels(dataset.dim(), config.input_side)?;
        let train = borrow(train, "train")?.to_config()?;
        let support: Vec<(StackedTensor, usize)> = indices
            .iter()
            .zip(labels)
            .map(|(&i, &l)| {
                let item = dataset
                    .items
                    .get(i)
                    .ok_or_else(|| invalid(format!("item index {i} out of range")))?;
                Ok((reshape_stack(item.features.clone(), config.input_side)?, l as usize))
            })
            .collect::<FfiResult<_>>()?;
        let any = match train.precision {
            Precision::F32 => AnyHead::F32(train_any::<f32>(&support, &config, &train)?),
            Precision::F64 => AnyHead::F64(train_any::<f64>(&support, &config, &train)?),
        };
        put(out, FssHead(any))
    })
}

fn predict_any<T: Real>(
    params: &HeadParams<T>,
    tensors: &[StackedTensor],
    labels: &mut [u32],
    probs: Option<&mut [f32]>,
) -> FfiResult<()> {
    let refs: Vec<&StackedTensor> = tensors.iter().collect();
    let preds = params.predict(&refs)?;
    for (dst, p) in labels.iter_mut().zip(&preds) {
        *dst = p.label as u32;
    }
    if let Some(probs) = probs {
        for (dst, v) in probs.iter_mut().zip(preds.iter().flat_map(|p| &p.probs)) {
            *dst = v.to_f32().unwrap_or(f32::NAN);
        }
    }
    Ok(())
}

/// Classifies `count` joined feature vectors of length `dim`, stored
/// row-major in `features`. Writes one label per vector and, when `probs` is
/// non-null, `count · n_classes` probabilities.
///
/// # Safety
/// `features` must hold `count · dim` values, `labels` `count` slots and
/// `probs` (if non-null) `count · n_classes` slots.
#[no_mangle]
pub unsafe extern "C" fn fss_head_predict(
    head: *const FssHead,
    features: *const f32,
    count: usize,
    dim: usize,
    labels: *mut u32,
    probs: *mut f32,
) -> FssStatus {
    guard(|| {
        let head = &borrow(head, "head")?.0;
        let config = head.config();
        if features.is_null() || labels.is_null() {
            return Err(null("features or labels"));
        }
        if dim != config.input_len() {
            return Err(invalid(format!("head expects {} features, got {dim}", config.input_len())));
        }
        let flat = std::slice::from_raw_parts(features, count * dim);
        let tensors: Vec<StackedTensor> = flat
            .chunks_exact(dim.max(1))
            .take(count)
            .map(|row| reshape_stack(row.to_vec(), config.input_side))
            .collect::<Result<_, _>>()?;
        let labels = std::slice::from_raw_parts_mut(labels, count);
        let probs = (!probs.is_null()).then(|| std::slice::from_raw_parts_mut(probs, count * config.n_classes));
        match head {
            AnyHead::F32(p) => predict_any(p, &tensors, labels, probs),
            AnyHead::F64(p) => predict_any(p, &tensors, labels, probs),
        }
    })
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `head` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_head_n_classes(head: *const FssHead) -> usize {
    head.as_ref().map_or(0, |h| h.0.config().n_classes)
}

/// Length of the joined feature vectors the head accepts, or 0 for null.
///
/// # Safety
/// `head` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fss_head_input_len(head: *const FssHead) -> usize {
    head.as_ref().map_or(0, |h| h.0.config().input_len())
}

/// # Safety
/// `head` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fss_head_save(head: *const FssHead, path: *const c_char) -> FssStatus {
    guard(|| {
        let head = &borrow(head, "head")?.0;
        let path = path_arg(path)?;
        match head {
            AnyHead::F32(p) => p.save(path)?,
            AnyHead::F64(p) => p.save(path)?,
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fss_head_load(path: *const c_char, out: *mut *mut FssHead) -> FssStatus {
    guard(|| {
        let head = AnyHead::load(path_arg(path)?)?;
        put(out, FssHead(head))
    })
}

/// # Safety
/// `head` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fss_head_free(head: *mut FssHead) {
    free(head)
}
