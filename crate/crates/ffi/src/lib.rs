//! C ABI over the `halfjoin` library.
//!
//! Datasets and result sets are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`HjStatus`]; on failure, [`hj_last_error`] describes the most recent
//! error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use halfjoin::analysis::{self, HardwareModel};
use halfjoin::dataset::{self, Dataset};
use halfjoin::error::{Error, ErrorClass};
use halfjoin::layout;
use halfjoin::oracle;
use halfjoin::result::{Pair, ResultSet};
use halfjoin::tiling::{self, TileConfig};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid argument or tile configuration.
    Argument = 2,
    /// Malformed input file or value outside the FP16 range.
    Format = 3,
    /// Overflow, failed calibration or undefined statistics.
    Compute = 4,
    Io = 5,
    /// Index past the end of a result set.
    OutOfRange = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

/// Opaque point dataset.
pub struct HjDataset(Dataset);

enum Pairs {
    Mixed(ResultSet<f32>),
    Exact(ResultSet<f64>),
}

/// Opaque result set from either the mixed-precision or the FP64 join.
pub struct HjResultSet(Pairs);

/// Tiled engine parameters. `workers = 0` means available parallelism.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HjTileConfig {
    pub block_side: usize,
    pub block_kslice: usize,
    pub warp_side: usize,
    pub warp_kslice: usize,
    pub dispatch_square: usize,
    pub prefetch_depth: usize,
    pub workers: usize,
}

impl From<TileConfig> for HjTileConfig {
    fn from(c: TileConfig) -> Self {
        Self {
            block_side: c.block_side,
            block_kslice: c.block_kslice,
            warp_side: c.warp_side,
            warp_kslice: c.warp_kslice,
            dispatch_square: c.dispatch_square,
            prefetch_depth: c.prefetch_depth,
            workers: c.workers,
        }
    }
}

impl From<HjTileConfig> for TileConfig {
    fn from(c: HjTileConfig) -> Self {
        let workers = if c.workers == 0 {
            TileConfig::default().workers
        } else {
            c.workers
        };
        Self {
            block_side: c.block_side,
            block_kslice: c.block_kslice,
            warp_side: c.warp_side,
            warp_kslice: c.warp_kslice,
            dispatch_square: c.dispatch_square,
            prefetch_depth: c.prefetch_depth,
            workers,
        }
    }
}

/// Hardware figures in TFLOPS, bytes per element and TB/s.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HjHardwareModel {
    pub peak_tflops: f64,
    pub element_bytes: f64,
    pub dram_bw: f64,
    pub l2_bw: f64,
    pub smem_bw: f64,
}

impl From<HardwareModel> for HjHardwareModel {
    fn from(h: HardwareModel) -> Self {
        Self {
            peak_tflops: h.peak_tflops,
            element_bytes: h.element_bytes,
            dram_bw: h.dram_bw,
            l2_bw: h.l2_bw,
            smem_bw: h.smem_bw,
        }
    }
}

impl From<HjHardwareModel> for HardwareModel {
    fn from(h: HjHardwareModel) -> Self {
        Self {
            peak_tflops: h.peak_tflops,
            element_bytes: h.element_bytes,
            dram_bw: h.dram_bw,
            l2_bw: h.l2_bw,
            smem_bw: h.smem_bw,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    OutOfRange(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HjStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HjStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("{name} must not be null"));
            HjStatus::NullPointer
        }
        Ok(Err(Failure::OutOfRange(msg))) => {
            set_last_error(msg);
            HjStatus::OutOfRange
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            match e.class() {
                ErrorClass::Argument => HjStatus::Argument,
                ErrorClass::Format => HjStatus::Format,
                ErrorClass::Compute => HjStatus::Compute,
                ErrorClass::Io => HjStatus::Io,
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            HjStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Error::Argument("path is not valid UTF-8".into()).into())
}

/// Message for the last failed call on this thread, or null if it
/// succeeded. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn hj_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `n * d` row-major FP32 values into a new dataset.
///
/// # Safety
/// `values` must point to `n * d` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_from_buffer(
    values: *const f32,
    n: usize,
    d: usize,
    out: *mut *mut HjDataset,
) -> HjStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::Argument("n * d overflows".into()))?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        *out = Box::into_raw(Box::new(HjDataset(Dataset::new(n, d, data)?)));
        Ok(())
    })
}

/// Uniform synthetic dataset in `[lo, hi)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_synthetic(
    n: usize,
    d: usize,
    seed: u64,
    lo: f32,
    hi: f32,
    out: *mut *mut HjDataset,
) -> HjStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = dataset::generate_synthetic(n, d, seed, lo, hi)?;
        *out = Box::into_raw(Box::new(HjDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_load_fvecs(path: *const c_char, out: *mut *mut HjDataset) -> HjStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = dataset::load_fvecs(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(HjDataset(ds)));
        Ok(())
    })
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_n(ds: *const HjDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Dimensionality, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_d(ds: *const HjDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.d())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hj_dataset_free(ds: *mut HjDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_tile_config_default(out: *mut HjTileConfig) -> HjStatus {
    guard(|| {
        *out_ptr(out, "out")? = TileConfig::default().into();
        Ok(())
    })
}

/// Mixed-precision tiled self-join. A null `cfg` uses the defaults.
///
/// # Safety
/// `ds` must be a live dataset handle, `cfg` null or readable, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hj_self_join(
    ds: *const HjDataset,
    epsilon: f32,
    cfg: *const HjTileConfig,
    out: *mut *mut HjResultSet,
) -> HjStatus {
    guard(|| {
        let ds = nonnull(ds, "ds")?;
        let out = out_ptr(out, "out")?;
        let cfg: TileConfig = cfg.as_ref().map_or_else(TileConfig::default, |c| (*c).into());
        cfg.validate()?;
        let hd = dataset::to_half(&ds.0, cfg.block_side, dataset::DEFAULT_KSLICE)?;
        let rs = tiling::self_join(&hd, epsilon, &cfg)?;
        *out = Box::into_raw(Box::new(HjResultSet(Pairs::Mixed(rs))));
        Ok(())
    })
}

/// Brute-force FP64 self-join.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hj_fp64_join(ds: *const HjDataset, epsilon: f64, out: *mut *mut HjResultSet) -> HjStatus {
    guard(|| {
        let ds = nonnull(ds, "ds")?;
        let out = out_ptr(out, "out")?;
        let rs = oracle::brute_force_fp64(&ds.0, epsilon)?;
        *out = Box::into_raw(Box::new(HjResultSet(Pairs::Exact(rs))));
        Ok(())
    })
}

/// Number of pairs, 0 for a null handle.
///
/// # Safety
/// `rs` must be null or a live result-set handle.
#[no_mangle]
pub unsafe extern "C" fn hj_result_len(rs: *const HjResultSet) -> usize {
    match rs.as_ref() {
        Some(HjResultSet(Pairs::Mixed(r))) => r.len(),
        Some(HjResultSet(Pairs::Exact(r))) => r.len(),
        None => 0,
    }
}

/// Pair `index` in (i, j) order; indices are 0-based.
///
/// # Safety
/// `rs` must be a live handle; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn hj_result_get(
    rs: *const HjResultSet,
    index: usize,
    i: *mut u32,
    j: *mut u32,
    dist_sq: *mut f64,
) -> HjStatus {
    guard(|| {
        let rs = nonnull(rs, "rs")?;
        let (pi, pj, pd) = match &rs.0 {
            Pairs::Mixed(r) => r.pairs().get(index).map(|p| (p.i, p.j, p.dist_sq as f64)),
            Pairs::Exact(r) => r.pairs().get(index).map(|p| (p.i, p.j, p.dist_sq)),
        }
        .ok_or_else(|| Failure::OutOfRange(format!("pair index {index} out of range")))?;
        *out_ptr(i, "i")? = pi;
        *out_ptr(j, "j")? = pj;
        *out_ptr(dist_sq, "dist_sq")? = pd;
        Ok(())
    })
}

/// `(|R| - n) / n`.
///
/// # Safety
/// `rs` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hj_result_selectivity(rs: *const HjResultSet, out: *mut f64) -> HjStatus {
    guard(|| {
        let rs = nonnull(rs, "rs")?;
        *out_ptr(out, "out")? = match &rs.0 {
            Pairs::Mixed(r) => analysis::selectivity(r),
            Pairs::Exact(r) => analysis::selectivity(r),
        };
        Ok(())
    })
}

/// Writes the pairs in the binary pairs format (FP64 distances are
/// narrowed to FP32).
///
/// # Safety
/// `rs` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hj_result_write_pairs(rs: *const HjResultSet, path: *const c_char) -> HjStatus {
    guard(|| {
        let rs = nonnull(rs, "rs")?;
        let path = path_arg(path)?;
        match &rs.0 {
            Pairs::Mixed(r) => r.write_pairs(path)?,
            Pairs::Exact(r) => {
                let narrowed = r
                    .pairs()
                    .iter()
                    .map(|p| Pair {
                        i: p.i,
                        j: p.j,
                        dist_sq: p.dist_sq as f32,
                    })
                    .collect();
                ResultSet::new(narrowed, r.n(), r.epsilon()).write_pairs(path)?
            }
        }
        Ok(())
    })
}

/// # Safety
/// `rs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hj_result_free(rs: *mut HjResultSet) {
    if !rs.is_null() {
        drop(Box::from_raw(rs));
    }
}

/// Mean per-point intersection-over-union of neighbour sets.
///
/// # Safety
/// `test` and `truth` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hj_overlap_accuracy(
    test: *const HjResultSet,
    truth: *const HjResultSet,
    out: *mut f64,
) -> HjStatus {
    guard(|| {
        let test = nonnull(test, "test")?;
        let truth = nonnull(truth, "truth")?;
        let v = match (&test.0, &truth.0) {
            (Pairs::Mixed(a), Pairs::Mixed(b)) => analysis::overlap_accuracy(a, b),
            (Pairs::Mixed(a), Pairs::Exact(b)) => analysis::overlap_accuracy(a, b),
            (Pairs::Exact(a), Pairs::Mixed(b)) => analysis::overlap_accuracy(a, b),
            (Pairs::Exact(a), Pairs::Exact(b)) => analysis::overlap_accuracy(a, b),
        }?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_hardware_model_a100(out: *mut HjHardwareModel) -> HjStatus {
    guard(|| {
        *out_ptr(out, "out")? = HardwareModel::a100().into();
        Ok(())
    })
}

/// # Safety
/// `hw` must be readable; `global` and `shared` writable.
#[no_mangle]
pub unsafe extern "C" fn hj_required_reuse(
    hw: *const HjHardwareModel,
    global: *mut u64,
    shared: *mut u64,
) -> HjStatus {
    guard(|| {
        let hw: HardwareModel = (*nonnull(hw, "hw")?).into();
        hw.validate()?;
        let r = analysis::required_reuse(&hw);
        *out_ptr(global, "global")? = r.global;
        *out_ptr(shared, "shared")? = r.shared;
        Ok(())
    })
}

/// Shared-memory position of slice `slice` (0..8) of point `point`
/// (1-based) under the XOR swizzle.
///
/// # Safety
/// `row` and `slot` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hj_swizzle_address(point: usize, slice: usize, row: *mut usize, slot: *mut usize) -> HjStatus {
    guard(|| {
        let row = out_ptr(row, "row")?;
        let slot = out_ptr(slot, "slot")?;
        let a = layout::swizzle_address(point, slice)?;
        *row = a.row;
        *slot = a.slot;
        Ok(())
    })
}

/// Radius whose estimated selectivity is within `tol * target` of `target`.
///
/// # Safety
/// `ds` must be a live handle; `epsilon` writable.
#[no_mangle]
pub unsafe extern "C" fn hj_calibrate_epsilon(
    ds: *const HjDataset,
    target_selectivity: f64,
    tol: f64,
    sample: usize,
    seed: u64,
    epsilon: *mut f64,
) -> HjStatus {
    guard(|| {
        let ds = nonnull(ds, "ds")?;
        let cal = analysis::calibrate_epsilon(&ds.0, target_selectivity, tol, sample, seed)?;
        *out_ptr(epsilon, "epsilon")? = cal.epsilon;
        Ok(())
    })
}
