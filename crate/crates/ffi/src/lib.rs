//! C interface to `shapescale`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`SsStatus`]; on failure [`ss_last_error`] describes what went
//! wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shapescale::data::{column_sigmas, deduplicate, impute_mean, load_csv, CsvOptions, Dataset, LabelColumn, UniqueView};
use shapescale::kmeans::{kmeans, KMeansConfig, Partition};
use shapescale::problem::{residual, run_batch, ObjectiveVariant, TrialConfig, TrialSet};
use shapescale::shape::{sc_gradient, sc_value, AlphaVector, PairTable, TableOptions};
use shapescale::{ari, Error};

/// Result of every fallible call. The numeric values of the first four
/// match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numerical = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Objective minimized by [`ss_run_trials`].
pub const SS_VARIANT_PAIR_ONE_TWO: u32 = 0;
pub const SS_VARIANT_ALL_PAIRS: u32 = 1;
pub const SS_VARIANT_MAXIMIZE_SC: u32 = 2;

/// A numeric table with optional reference labels.
pub struct SsDataset(Dataset);

/// Precomputed pair differences of a dataset's rows.
pub struct SsPairTable(PairTable);

/// Results of a batch of scale-factor searches.
pub struct SsTrialSet(TrialSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SsStatus {
    match e.exit_code() {
        1 => SsStatus::Usage,
        3 => SsStatus::Numerical,
        _ => SsStatus::Data,
    }
}

struct Fail(SsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn alpha(values: &[f64]) -> Result<AlphaVector, Fail> {
    Ok(AlphaVector::new(values.to_vec())?)
}

/// Message for the most recent failure on this thread, or null. The string
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a comma-separated file with a header row. When `label_last` is
/// nonzero the last column holds reference labels. Absent cells (empty or
/// `?`) are filled with column means.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_load_csv(path: *const c_char, label_last: i32, out: *mut *mut SsDataset) -> SsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(SsStatus::Usage, "path is not UTF-8".into()))?;
        let opts = CsvOptions {
            label_column: (label_last != 0).then_some(LabelColumn::Last),
            ..CsvOptions::default()
        };
        let ds = impute_mean(&load_csv(path, &opts)?)?;
        write(out, Box::into_raw(Box::new(SsDataset(ds))), "out")
    })
}

/// Builds a dataset from `n_rows * n_cols` row-major values.
///
/// # Safety
/// `values` must point to `n_rows * n_cols` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_from_values(
    values: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut SsDataset,
) -> SsStatus {
    guard(|| {
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Fail(SsStatus::Usage, "matrix size overflows".into()))?;
        let v = slice(values, len, "values")?;
        let rows: Vec<Vec<f64>> = v.chunks(n_cols.max(1)).map(<[f64]>::to_vec).collect();
        let names = (1..=n_cols).map(|k| format!("x{k}")).collect();
        let ds = Dataset::from_rows(&rows, names)?;
        write(out, Box::into_raw(Box::new(SsDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_free(ds: *mut SsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_n_rows(ds: *const SsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_rows())
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_n_cols(ds: *const SsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_cols())
}

/// Copies the dataset's values, row-major, into `out` (`len` doubles).
///
/// # Safety
/// `ds` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_values(ds: *const SsDataset, out: *mut f64, len: usize) -> SsStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let out = slice_mut(out, len, "out")?;
        if len != ds.values().len() {
            return Err(Error::DimensionMismatch {
                expected: ds.values().len(),
                got: len,
            }
            .into());
        }
        out.copy_from_slice(ds.values());
        Ok(())
    })
}

/// Writes the reference label of each row, renumbered from 0 in order of
/// first appearance, into `out` (`len` = number of rows).
///
/// # Safety
/// `ds` must be a live handle and `out` point to `len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn ss_dataset_labels(ds: *const SsDataset, out: *mut usize, len: usize) -> SsStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let labels = ds
            .labels()
            .ok_or_else(|| Fail(SsStatus::Usage, "dataset has no labels".into()))?;
        let out = slice_mut(out, len, "out")?;
        if len != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: len,
            }
            .into());
        }
        out.copy_from_slice(Partition::from_labels(labels).labels());
        Ok(())
    })
}

/// Per-column sample standard deviations into `out` (`len` = columns).
///
/// # Safety
/// `ds` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_column_sigmas(ds: *const SsDataset, out: *mut f64, len: usize) -> SsStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let s = column_sigmas(ds)?;
        let out = slice_mut(out, len, "out")?;
        if len != s.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: len,
            }
            .into());
        }
        out.copy_from_slice(s.as_slice());
        Ok(())
    })
}

/// Pair table over the dataset's distinct rows (or all rows when `dedup` is
/// zero), normalized by the columns' standard deviations.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_pair_table_new(ds: *const SsDataset, dedup: i32, out: *mut *mut SsPairTable) -> SsStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let sigmas = column_sigmas(ds)?;
        let view = if dedup != 0 {
            deduplicate(ds)?
        } else {
            UniqueView::all(ds.n_rows())
        };
        let table = PairTable::build(&view, ds, &sigmas, &TableOptions::default())?;
        write(out, Box::into_raw(Box::new(SsPairTable(table))), "out")
    })
}

/// # Safety
/// `table` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_pair_table_free(table: *mut SsPairTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_pair_table_n_pairs(table: *const SsPairTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.n_pairs())
}

/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_pair_table_dims(table: *const SsPairTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.d())
}

/// Shape complexity at `alpha` (`d` entries).
///
/// # Safety
/// `table` must be a live handle, `alpha` point to `d` doubles and `sc` be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ss_sc_value(table: *const SsPairTable, alpha: *const f64, d: usize, sc: *mut f64) -> SsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        let a = self::alpha(slice(alpha, d, "alpha")?)?;
        write(sc, sc_value(t, &a)?.sc, "sc")
    })
}

/// Shape complexity and its gradient (`d` entries written to `gradient`).
///
/// # Safety
/// `table` must be a live handle; `alpha` and `gradient` must point to `d`
/// doubles and `sc` be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_sc_gradient(
    table: *const SsPairTable,
    alpha: *const f64,
    d: usize,
    sc: *mut f64,
    gradient: *mut f64,
) -> SsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        let a = self::alpha(slice(alpha, d, "alpha")?)?;
        let e = sc_gradient(t, &a)?;
        slice_mut(gradient, d, "gradient")?.copy_from_slice(e.gradient.as_deref().unwrap_or_default());
        write(sc, e.sc, "sc")
    })
}

/// Orthogonality residual between dimensions `k` and `l` (zero-based).
///
/// # Safety
/// `table` must be a live handle, `alpha` point to `d` doubles and `out` be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ss_residual(
    table: *const SsPairTable,
    alpha: *const f64,
    d: usize,
    k: usize,
    l: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        let a = self::alpha(slice(alpha, d, "alpha")?)?;
        write(out, residual(t, &a, k, l)?, "out")
    })
}

fn variant(v: u32) -> Result<ObjectiveVariant, Fail> {
    match v {
        SS_VARIANT_PAIR_ONE_TWO => Ok(ObjectiveVariant::PairOneTwo),
        SS_VARIANT_ALL_PAIRS => Ok(ObjectiveVariant::AllPairs),
        SS_VARIANT_MAXIMIZE_SC => Ok(ObjectiveVariant::MaximizeSc),
        _ => Err(Fail(SsStatus::Usage, format!("unknown variant {v}"))),
    }
}

/// Runs `count` searches from seeded random starts with default settings
/// for `variant` (one of the `SS_VARIANT_*` constants).
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_run_trials(
    table: *const SsPairTable,
    count: usize,
    seed: u64,
    variant: u32,
    out: *mut *mut SsTrialSet,
) -> SsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        let v = self::variant(variant)?;
        let config = TrialConfig {
            seed,
            ..TrialConfig::for_variant(v)
        };
        let set = run_batch(t, count, &config, v)?;
        write(out, Box::into_raw(Box::new(SsTrialSet(set))), "out")
    })
}

/// # Safety
/// `set` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_trial_set_free(set: *mut SsTrialSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_trial_set_len(set: *const SsTrialSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.results.len())
}

/// Final factors (`d` entries), objective, SC and convergence flag of trial
/// `index`.
///
/// # Safety
/// `set` must be a live handle, `alpha` point to `d` writable doubles and
/// the remaining pointers be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_trial_get(
    set: *const SsTrialSet,
    index: usize,
    alpha: *mut f64,
    d: usize,
    objective: *mut f64,
    sc: *mut f64,
    converged: *mut i32,
) -> SsStatus {
    guard(|| {
        let s = &handle(set, "trial set")?.0;
        let t = s
            .results
            .get(index)
            .ok_or_else(|| Fail(SsStatus::Usage, format!("trial {index} out of range")))?;
        if d != t.final_alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: t.final_alpha.len(),
                got: d,
            }
            .into());
        }
        slice_mut(alpha, d, "alpha")?.copy_from_slice(&t.final_alpha);
        write(objective, t.objective, "objective")?;
        write(sc, t.sc, "sc")?;
        write(converged, t.converged as i32, "converged")
    })
}

/// k-means on `n * d` row-major values with `restarts` seeded restarts.
/// Writes `n` labels and the within-cluster sum of squares.
///
/// # Safety
/// `values` must point to `n * d` doubles, `labels` to `n` writable
/// entries and `within_ss` be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_kmeans(
    values: *const f64,
    n: usize,
    d: usize,
    clusters: usize,
    restarts: usize,
    seed: u64,
    labels: *mut usize,
    within_ss: *mut f64,
) -> SsStatus {
    guard(|| {
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Fail(SsStatus::Usage, "matrix size overflows".into()))?;
        let v = slice(values, len, "values")?;
        let config = KMeansConfig {
            restarts,
            seed,
            ..KMeansConfig::default()
        };
        let res = kmeans(v, d, clusters, &config)?;
        slice_mut(labels, n, "labels")?.copy_from_slice(res.partition.labels());
        write(within_ss, res.within_ss, "within_ss")
    })
}

/// Fixed-cluster-count adjusted Rand index of `obtained` against
/// `reference` (both `n` labels).
///
/// # Safety
/// `reference` and `obtained` must point to `n` entries and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_ari_fnc(reference: *const usize, obtained: *const usize, n: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        let r = Partition::from_labels(slice(reference, n, "reference")?);
        let o = Partition::from_labels(slice(obtained, n, "obtained")?);
        write(out, ari::ari_fnc(&r, &o)?.ari_fnc, "out")
    })
}

/// `S(n-1, c) / S(n, c)` for Stirling numbers of the second kind.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stirling_ratio(n: usize, c: usize, out: *mut f64) -> SsStatus {
    guard(|| write(out, ari::stirling_ratio(n, c)?, "out"))
}
