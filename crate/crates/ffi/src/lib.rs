//! C interface to `nasrec-core`.
//!
//! Every fallible call returns a [`NasrecStatus`]; on failure the message is
//! available from [`nasrec_last_error`] on the same thread. Handles are opaque
//! and released with their `_free` function. Strings returned by the library
//! are released with [`nasrec_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nasrec_core::config::{parse_genotype, RunConfig};
use nasrec_core::data::{load_dataset, split, synth_generate, CtrDataset, PlantedStructure, SynthSpec};
use nasrec_core::rank_eval::{kendall_tau, pearson_rho};
use nasrec_core::sampler::{sample, SamplingStrategy};
use nasrec_core::search_space::{flop_count, param_count, SupernetConfig};
use nasrec_core::trainer::{eval_subnet_shared, finetune_last_fc, train_supernet, TrainState};
use nasrec_core::NasError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NasrecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGenotype = 3,
    InvalidConfig = 4,
    Io = 5,
    Format = 6,
    Numeric = 7,
    Panic = 8,
}

impl From<&NasError> for NasrecStatus {
    fn from(e: &NasError) -> Self {
        match e {
            NasError::InvalidArgument(_) | NasError::Json(_) => NasrecStatus::InvalidArgument,
            NasError::InvalidGenotype(_) => NasrecStatus::InvalidGenotype,
            NasError::InvalidConfig(_) => NasrecStatus::InvalidConfig,
            NasError::Io(_) => NasrecStatus::Io,
            NasError::Parse { .. } | NasError::Format(_) | NasError::MissingWeights(_) => NasrecStatus::Format,
            _ => NasrecStatus::Numeric,
        }
    }
}

/// A loaded or generated click dataset.
pub struct NasrecDataset {
    data: CtrDataset,
}

/// Trained supernet weights with the configuration they were built from.
pub struct NasrecSupernet {
    run: RunConfig,
    space: SupernetConfig,
    state: TrainState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NasrecStatus, String);

impl From<NasError> for Failure {
    fn from(e: NasError) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> NasrecStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NasrecStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            NasrecStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NasrecStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NasrecStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn run_config(json: Option<&str>) -> FfiResult<RunConfig> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| Failure(NasrecStatus::InvalidConfig, e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(NasrecStatus::Format, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn nasrec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nasrec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nasrec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a synthetic dataset with planted pairwise interactions.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn nasrec_dataset_synth(
    rows: usize,
    num_dense: usize,
    num_cat: usize,
    vocab: usize,
    seed: u64,
    out: *mut *mut NasrecDataset,
) -> NasrecStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = synth_generate(&SynthSpec {
            n_rows: rows,
            num_dense,
            num_cat,
            vocab,
            structure: PlantedStructure::PairwiseInteraction,
            seed,
        })?;
        *out = Box::into_raw(Box::new(NasrecDataset { data }));
        Ok(())
    })
}

/// Loads a TSV file or dataset cache using the schema in `config_json`
/// (null for defaults).
///
/// # Safety
/// `path` must be a NUL-terminated string, `config_json` null or a
/// NUL-terminated string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_dataset_load(
    path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut NasrecDataset,
) -> NasrecStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let rc = run_config(opt_str_arg(config_json, "config_json")?)?;
        let out = out_ptr(out, "out")?;
        let data = load_dataset(path.as_ref(), &rc.schema)?;
        *out = Box::into_raw(Box::new(NasrecDataset { data }));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn nasrec_dataset_len(ds: *const NasrecDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.len())
}

/// # Safety
/// `ds` must be null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nasrec_dataset_free(ds: *mut NasrecDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a supernet on the training split of `ds`. `config_json` holds a run
/// configuration (null for defaults).
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` null or a NUL-terminated
/// string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_train(
    config_json: *const c_char,
    ds: *const NasrecDataset,
    out: *mut *mut NasrecSupernet,
) -> NasrecStatus {
    guard(|| {
        let run = run_config(opt_str_arg(config_json, "config_json")?)?;
        let ds = handle(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let splits = split(&ds.data, &run.split)?;
        let space = run.space_for(Some(&ds.data))?;
        let state = train_supernet(&space, &run.train, &splits.train)?;
        *out = Box::into_raw(Box::new(NasrecSupernet { run, space, state }));
        Ok(())
    })
}

/// Writes the supernet weights and optimizer state to `path`.
///
/// # Safety
/// `net` must be a live supernet handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_save(net: *const NasrecSupernet, path: *const c_char) -> NasrecStatus {
    guard(|| {
        let net = handle(net, "supernet")?;
        let path = str_arg(path, "path")?;
        net.state
            .save(BufWriter::new(File::create(path).map_err(NasError::from)?))?;
        Ok(())
    })
}

/// Reads a checkpoint written by [`nasrec_supernet_save`]. `ds` supplies the
/// raw-feature shapes.
///
/// # Safety
/// Pointers must be valid as for [`nasrec_supernet_train`]; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_load(
    path: *const c_char,
    config_json: *const c_char,
    ds: *const NasrecDataset,
    out: *mut *mut NasrecSupernet,
) -> NasrecStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let run = run_config(opt_str_arg(config_json, "config_json")?)?;
        let ds = handle(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let space = run.space_for(Some(&ds.data))?;
        let file = File::open(path).map_err(NasError::from)?;
        let state = TrainState::load(BufReader::new(file), &space, &run.train)?;
        *out = Box::into_raw(Box::new(NasrecSupernet { run, space, state }));
        Ok(())
    })
}

/// Log loss and AUC of the subnet `genotype` (JSON or `"full"`) on all rows of
/// `ds` with shared weights. With `finetune_steps > 0` the head is first
/// fine-tuned on `train`, which must then be non-null.
///
/// # Safety
/// Handles must be live or null as described; `genotype` must be a
/// NUL-terminated string; `logloss` and `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_eval(
    net: *const NasrecSupernet,
    genotype: *const c_char,
    ds: *const NasrecDataset,
    train: *const NasrecDataset,
    finetune_steps: usize,
    logloss: *mut f64,
    auc: *mut f64,
) -> NasrecStatus {
    guard(|| {
        let net = handle(net, "supernet")?;
        let g = parse_genotype(str_arg(genotype, "genotype")?, &net.space)?;
        let ds = handle(ds, "dataset")?;
        let (logloss, auc) = (out_ptr(logloss, "logloss")?, out_ptr(auc, "auc")?);
        let r = if finetune_steps > 0 {
            let train = handle(train, "train")?;
            finetune_last_fc(&net.state.supernet, &g, finetune_steps, &train.data, &ds.data, &net.run.train)?
        } else {
            eval_subnet_shared(&net.state.supernet, &g, &ds.data)?
        };
        *logloss = r.logloss;
        *auc = r.auc;
        Ok(())
    })
}

/// Optimizer steps taken so far, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live supernet handle.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_steps(net: *const NasrecSupernet) -> u64 {
    net.as_ref().map_or(0, |n| n.state.step as u64)
}

/// # Safety
/// `net` must be null or a supernet handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nasrec_supernet_free(net: *mut NasrecSupernet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Samples a genotype under `strategy` (`sosc`, `aoac` or `soac`) and returns
/// its JSON, to be released with [`nasrec_string_free`].
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string, `strategy` a
/// NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_sample_genotype(
    config_json: *const c_char,
    strategy: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> NasrecStatus {
    guard(|| {
        let run = run_config(opt_str_arg(config_json, "config_json")?)?;
        let strategy: SamplingStrategy = str_arg(strategy, "strategy")?.parse()?;
        let out = out_ptr(out, "out")?;
        let space = run.space_for(None)?;
        let g = sample(strategy, &space, &mut ChaCha8Rng::seed_from_u64(seed));
        *out = into_c_string(g.to_json())?;
        Ok(())
    })
}

/// FLOPs at batch size `batch` and total parameters of a subnet.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string, `genotype` a
/// NUL-terminated string, and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_genotype_cost(
    config_json: *const c_char,
    genotype: *const c_char,
    batch: usize,
    flops: *mut u64,
    params: *mut u64,
) -> NasrecStatus {
    guard(|| {
        let run = run_config(opt_str_arg(config_json, "config_json")?)?;
        let space = run.space_for(None)?;
        let g = parse_genotype(str_arg(genotype, "genotype")?, &space)?;
        let (flops, params) = (out_ptr(flops, "flops")?, out_ptr(params, "params")?);
        *flops = flop_count(&g, &space, batch)?.total;
        *params = param_count(&g, &space, run.train.embedding_cap)?.total;
        Ok(())
    })
}

unsafe fn pair<'a>(x: *const f64, y: *const f64, n: usize) -> FfiResult<(&'a [f64], &'a [f64])> {
    if x.is_null() || y.is_null() {
        return Err(null("input array"));
    }
    Ok((std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n)))
}

/// Kendall tau-b of two length-`n` arrays.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_kendall_tau(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> NasrecStatus {
    guard(|| {
        let (x, y) = pair(x, y, n)?;
        *out_ptr(out, "out")? = kendall_tau(x, y)?;
        Ok(())
    })
}

/// Pearson correlation of two length-`n` arrays.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nasrec_pearson_rho(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> NasrecStatus {
    guard(|| {
        let (x, y) = pair(x, y, n)?;
        *out_ptr(out, "out")? = pearson_rho(x, y)?;
        Ok(())
    })
}
