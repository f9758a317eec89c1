//! C ABI over `binfer`.
//!
//! Every function returns a [`BinferStatus`]; on failure a message for the
//! calling thread is available from [`binfer_last_error`]. Models are opaque
//! handles created by [`binfer_model_load`] and released with
//! [`binfer_model_free`]. No function panics across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use binfer::archmodel::{self, PlanOptions, ResourceBudget};
use binfer::bitcore::{xnor_dot, BitSlice, FixedTensor};
use binfer::fold::{fold_binary_layer, fold_first_layer, BatchNormParams};
use binfer::formats::{self, ModelFile};
use binfer::layers::{run_network, Model};
use binfer::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinferStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    InvalidModel = 5,
    Infeasible = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct BinferModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Fail(BinferStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => BinferStatus::Io,
            Error::Format(_) => BinferStatus::Format,
            Error::Infeasible(_) => BinferStatus::Infeasible,
            Error::InvalidNetwork(_) | Error::Layer { .. } => BinferStatus::InvalidModel,
            _ => BinferStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: BinferStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, records its error message and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BinferStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BinferStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BinferStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(BinferStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            BinferStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(m: *const BinferModel) -> Result<&'a Model, Fail> {
    non_null(m, "model")?;
    Ok(&(*m).model)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn binfer_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a model from its TOML description, weight file and threshold file.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn binfer_model_load(
    model_path: *const c_char,
    weights_path: *const c_char,
    thresholds_path: *const c_char,
    out: *mut *mut BinferModel,
) -> BinferStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let m = path_arg(model_path, "model_path")?;
        let w = path_arg(weights_path, "weights_path")?;
        let t = path_arg(thresholds_path, "thresholds_path")?;
        let model = formats::load_model(&m, &w, &t)?;
        *out = Box::into_raw(Box::new(BinferModel { model }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `binfer_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn binfer_model_free(model: *mut BinferModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, height and depth, and the number of output classes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn binfer_model_shape(
    model: *const BinferModel,
    width: *mut usize,
    height: *mut usize,
    depth: *mut usize,
    classes: *mut usize,
) -> BinferStatus {
    guard(|| {
        let m = model_arg(model)?;
        for (p, name) in [
            (width, "width"),
            (height, "height"),
            (depth, "depth"),
            (classes, "classes"),
        ] {
            non_null(p, name)?;
        }
        let d = m.spec().input;
        *width = d.width;
        *height = d.height;
        *depth = d.depth;
        *classes = m.spec().output_classes();
        Ok(())
    })
}

/// Classifies one image of fixed-point values in `[-31, 31]`, `(h, w, d)` order.
///
/// Writes the predicted class and, if `scores` is not null, `scores_len`
/// (at least the class count) output scores.
///
/// # Safety
/// `input` must hold `input_len` values; `scores` must be null or hold `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn binfer_model_classify(
    model: *const BinferModel,
    input: *const i8,
    input_len: usize,
    scores: *mut f64,
    scores_len: usize,
    class_out: *mut usize,
) -> BinferStatus {
    guard(|| {
        let m = model_arg(model)?;
        non_null(class_out, "class_out")?;
        let d = m.spec().input;
        let values = slice_arg(input, input_len, "input")?.to_vec();
        let x = FixedTensor::new(d.width, d.height, d.depth, values)?;
        let pred = run_network(m, &x)?;
        if !scores.is_null() {
            if scores_len < pred.scores.len() {
                return Err(fail(
                    BinferStatus::BufferTooSmall,
                    format!(
                        "scores buffer holds {scores_len}, need {}",
                        pred.scores.len()
                    ),
                ));
            }
            ptr::copy_nonoverlapping(pred.scores.as_ptr(), scores, pred.scores.len());
        }
        *class_out = pred.class;
        Ok(())
    })
}

/// Classifies one 32x32x3 channel-major byte image (CIFAR-10 pixel layout).
///
/// # Safety
/// `pixels` must hold `len` bytes; `class_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn binfer_model_classify_pixels(
    model: *const BinferModel,
    pixels: *const u8,
    len: usize,
    class_out: *mut usize,
) -> BinferStatus {
    guard(|| {
        let m = model_arg(model)?;
        non_null(class_out, "class_out")?;
        let x = formats::images::pixels_to_tensor(slice_arg(pixels, len, "pixels")?)?;
        *class_out = run_network(m, &x)?.class;
        Ok(())
    })
}

/// Matching-bit count of two packed vectors of `len_bits` bits each.
///
/// # Safety
/// `a` and `w` must each hold `ceil(len_bits / 32)` words.
#[no_mangle]
pub unsafe extern "C" fn binfer_xnor_dot(
    a: *const u32,
    w: *const u32,
    len_bits: usize,
    out: *mut u32,
) -> BinferStatus {
    guard(|| {
        non_null(out, "out")?;
        let n = len_bits.div_ceil(32);
        let a = BitSlice::new(len_bits, slice_arg(a, n, "a")?)?;
        let w = BitSlice::new(len_bits, slice_arg(w, n, "w")?)?;
        *out = xnor_dot(a, w)?;
        Ok(())
    })
}

/// Folds one channel's batch-norm parameters into an integer threshold.
///
/// `first_layer` selects the fixed-point input layer rule (`cnum` is then
/// ignored). `direction_out` receives 0 = GE, 1 = LE, 2 = always one,
/// 3 = always zero.
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn binfer_fold_threshold(
    mu: f64,
    sigma2: f64,
    gamma: f64,
    beta: f64,
    epsilon: f64,
    cnum: u32,
    first_layer: bool,
    c_out: *mut i32,
    direction_out: *mut u8,
) -> BinferStatus {
    guard(|| {
        non_null(c_out, "c_out")?;
        non_null(direction_out, "direction_out")?;
        let p = BatchNormParams::new(mu, sigma2, gamma, beta, epsilon)?;
        let t = if first_layer {
            fold_first_layer(&p)?
        } else {
            fold_binary_layer(&p, cnum)?
        };
        *c_out = t.c;
        *direction_out = t.direction.code();
        Ok(())
    })
}

/// Estimated cycles of one layer: `ceil(cycle_conv / (uf * p)) * ii`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn binfer_cycle_est(
    cycle_conv: u64,
    uf: u64,
    p: u64,
    ii: u64,
    out: *mut u64,
) -> BinferStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = archmodel::cycle_est(cycle_conv, uf, p, ii)?;
        Ok(())
    })
}

/// Frames per second of a layer pipeline at `freq_hz`, and the bottleneck layer index.
///
/// # Safety
/// `cycles` must hold `n` values; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn binfer_system_fps(
    cycles: *const u64,
    n: usize,
    freq_hz: f64,
    fps_out: *mut f64,
    bottleneck_out: *mut usize,
) -> BinferStatus {
    guard(|| {
        non_null(fps_out, "fps_out")?;
        non_null(bottleneck_out, "bottleneck_out")?;
        let t = archmodel::system_throughput(slice_arg(cycles, n, "cycles")?, freq_hz)?;
        *fps_out = t.fps;
        *bottleneck_out = t.bottleneck;
        Ok(())
    })
}

/// Plans per-layer UF and P for the conv layers of a model under a LUT budget.
///
/// `lut_overhead <= 0` selects the calibrated overhead. On success
/// `n_layers_out` holds the planned layer count; `uf_out` and `p_out` must
/// hold at least that many entries (`capacity`), otherwise
/// `BufferTooSmall` is returned with `n_layers_out` set.
///
/// # Safety
/// `model_path` must be a NUL-terminated string; arrays must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn binfer_plan(
    model_path: *const c_char,
    luts: u64,
    lut_overhead: f64,
    freq_hz: f64,
    full_space: bool,
    uf_out: *mut u64,
    p_out: *mut u64,
    capacity: usize,
    n_layers_out: *mut usize,
    max_cycles_out: *mut u64,
) -> BinferStatus {
    guard(|| {
        non_null(n_layers_out, "n_layers_out")?;
        non_null(max_cycles_out, "max_cycles_out")?;
        let mf = ModelFile::load(&path_arg(model_path, "model_path")?)?;
        let base = ResourceBudget::virtex7_690t();
        let overhead = if lut_overhead > 0.0 {
            lut_overhead
        } else {
            archmodel::calibrated_lut_overhead()
        };
        let budget = ResourceBudget::new(luts, base.brams, base.dsps).with_overhead(overhead);
        let plan = archmodel::plan(&mf.spec, &budget, freq_hz, PlanOptions { full_space })?;
        let layers = &plan.arch.layers;
        *n_layers_out = layers.len();
        if capacity < layers.len() {
            return Err(fail(
                BinferStatus::BufferTooSmall,
                format!("capacity {capacity}, plan has {} layers", layers.len()),
            ));
        }
        non_null(uf_out, "uf_out")?;
        non_null(p_out, "p_out")?;
        for (i, l) in layers.iter().enumerate() {
            *uf_out.add(i) = l.uf;
            *p_out.add(i) = l.p;
        }
        *max_cycles_out = plan.max_cycles;
        Ok(())
    })
}
