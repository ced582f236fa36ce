//! C ABI over the `paaconv` library.
//!
//! Every function returns a [`PaaStatus`]. On failure a message describing
//! the error is kept per thread and can be read with
//! [`paa_last_error_message`]. Objects are opaque handles created by
//! `*_new`/`*_load` functions and released with the matching `*_free`.
//! Arrays are passed as pointer plus length; point data is row-major
//! `double`, three values per position.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use paaconv::geometry::PointCloud;
use paaconv::metrics::ConfusionMatrix;
use paaconv::network::{argmax_rows, Network, NetworkConfig};
use paaconv::normals::estimate_normals;
use paaconv::{Error, Tensor2D};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvalidArgument = 3,
    Shape = 4,
    Config = 5,
    Io = 6,
    Format = 7,
    UndefinedMetric = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

/// Opaque network handle.
pub struct PaaNetwork(Network);

/// Opaque confusion-matrix handle.
pub struct PaaConfusionMatrix(ConfusionMatrix);

/// Settings for [`paa_network_new`]. Stride and width arrays may be null
/// (with zero length) to keep the built-in topology.
#[repr(C)]
pub struct PaaNetworkConfig {
    pub in_channels: usize,
    pub class_count: usize,
    pub cell_size: f64,
    pub seed: u64,
    pub cascade_strides: *const usize,
    pub cascade_widths: *const usize,
    pub cascade_len: usize,
    pub parallel_strides: *const usize,
    pub parallel_widths: *const usize,
    pub parallel_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PaaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::DegenerateNeighborhood(_) => PaaStatus::InvalidInput,
            Error::InvalidArgument(_) => PaaStatus::InvalidArgument,
            Error::Shape(_) => PaaStatus::Shape,
            Error::Config(_) => PaaStatus::Config,
            Error::Io { .. } => PaaStatus::Io,
            Error::Parse { .. } | Error::Format(_) => PaaStatus::Format,
            Error::UndefinedMetric(_) => PaaStatus::UndefinedMetric,
            Error::State(_) => PaaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PaaStatus::NullPointer, format!("{what} is null"))
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PaaStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PaaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PaaStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PaaStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn paa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fills `out` with the built-in configuration (12 input channels,
/// 13 classes, default topology, seed 0).
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn paa_network_config_default(out: *mut PaaNetworkConfig) -> PaaStatus {
    guard(|| {
        let d = NetworkConfig::default();
        write_out(
            out,
            PaaNetworkConfig {
                in_channels: d.in_channels,
                class_count: d.class_count,
                cell_size: d.cell_size,
                seed: d.seed,
                cascade_strides: ptr::null(),
                cascade_widths: ptr::null(),
                cascade_len: 0,
                parallel_strides: ptr::null(),
                parallel_widths: ptr::null(),
                parallel_len: 0,
            },
            "out",
        )
    })
}

/// Creates a freshly initialized network.
///
/// # Safety
/// `config` must point to a valid config whose arrays hold the stated
/// lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn paa_network_new(
    config: *const PaaNetworkConfig,
    out: *mut *mut PaaNetwork,
) -> PaaStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let mut cfg = NetworkConfig {
            in_channels: c.in_channels,
            class_count: c.class_count,
            cell_size: c.cell_size,
            seed: c.seed,
            ..NetworkConfig::default()
        };
        if c.cascade_len > 0 {
            cfg.cascade_strides =
                slice(c.cascade_strides, c.cascade_len, "cascade_strides")?.to_vec();
            cfg.cascade_widths = slice(c.cascade_widths, c.cascade_len, "cascade_widths")?.to_vec();
        }
        if c.parallel_len > 0 {
            cfg.parallel_strides =
                slice(c.parallel_strides, c.parallel_len, "parallel_strides")?.to_vec();
            cfg.parallel_widths =
                slice(c.parallel_widths, c.parallel_len, "parallel_widths")?.to_vec();
        }
        let net = Network::new(cfg)?;
        write_out(out, Box::into_raw(Box::new(PaaNetwork(net))), "out")
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn paa_network_load(
    path: *const c_char,
    out: *mut *mut PaaNetwork,
) -> PaaStatus {
    guard(|| {
        let net = Network::load(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(PaaNetwork(net))), "out")
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn paa_network_save(
    net: *const PaaNetwork,
    path: *const c_char,
) -> PaaStatus {
    guard(|| {
        let net = handle(net, "network")?;
        Ok(net.0.save(path_arg(path)?)?)
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn paa_network_free(net: *mut PaaNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input channels, class count and total parameter count of a network.
///
/// # Safety
/// `net` must be valid; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn paa_network_shape(
    net: *const PaaNetwork,
    in_channels: *mut usize,
    class_count: *mut usize,
    param_count: *mut usize,
) -> PaaStatus {
    guard(|| {
        let net = &handle(net, "network")?.0;
        for (out, v) in [
            (in_channels, net.config().in_channels),
            (class_count, net.config().class_count),
            (param_count, net.param_count()),
        ] {
            if !out.is_null() {
                out.write(v);
            }
        }
        Ok(())
    })
}

unsafe fn cloud_arg(
    positions: *const f64,
    features: *const f64,
    n: usize,
    channels: usize,
) -> Result<PointCloud, Failure> {
    let pos = slice(positions, n * 3, "positions")?;
    let feats = slice(features, n * channels, "features")?;
    let positions = pos.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    let features = Tensor2D::from_vec(n, channels, feats.to_vec())?;
    Ok(PointCloud::new(positions, features, vec![None; n])?)
}

/// Per-point class logits, row-major `n x class_count`, in input order.
/// `out_len` must be at least `n * class_count`.
///
/// # Safety
/// `positions` holds `3 n` doubles, `features` `n channels`, `out`
/// `out_len`.
#[no_mangle]
pub unsafe extern "C" fn paa_network_logits(
    net: *const PaaNetwork,
    positions: *const f64,
    features: *const f64,
    n: usize,
    channels: usize,
    out: *mut f64,
    out_len: usize,
) -> PaaStatus {
    guard(|| {
        let net = &handle(net, "network")?.0;
        let needed = n * net.config().class_count;
        if out_len < needed {
            return Err(Failure(
                PaaStatus::BufferTooSmall,
                format!("logits need {needed} values, buffer has {out_len}"),
            ));
        }
        let logits = net.forward(&cloud_arg(positions, features, n, channels)?)?;
        slice_mut(out, needed, "out")?.copy_from_slice(logits.as_slice());
        Ok(())
    })
}

/// Predicted class per point (`n` entries), in input order.
///
/// # Safety
/// As [`paa_network_logits`]; `out` holds `n` entries.
#[no_mangle]
pub unsafe extern "C" fn paa_network_predict(
    net: *const PaaNetwork,
    positions: *const f64,
    features: *const f64,
    n: usize,
    channels: usize,
    out: *mut u32,
) -> PaaStatus {
    guard(|| {
        let net = &handle(net, "network")?.0;
        let logits = net.forward(&cloud_arg(positions, features, n, channels)?)?;
        let out = slice_mut(out, n, "out")?;
        for (o, p) in out.iter_mut().zip(argmax_rows(&logits)) {
            *o = p as u32;
        }
        Ok(())
    })
}

/// Oriented unit normals (`3 n` doubles) from the `k` nearest neighbors,
/// oriented toward `center` (3 doubles). `fallbacks` (nullable) receives
/// the number of degenerate neighborhoods.
///
/// # Safety
/// `positions` and `out` hold `3 n` doubles; `center` holds 3.
#[no_mangle]
pub unsafe extern "C" fn paa_estimate_normals(
    positions: *const f64,
    n: usize,
    k: usize,
    center: *const f64,
    out: *mut f64,
    fallbacks: *mut usize,
) -> PaaStatus {
    guard(|| {
        let pos: Vec<[f64; 3]> = slice(positions, n * 3, "positions")?
            .chunks_exact(3)
            .map(|p| [p[0], p[1], p[2]])
            .collect();
        let c = slice(center, 3, "center")?;
        let est = estimate_normals(&pos, k, [c[0], c[1], c[2]])?;
        let out = slice_mut(out, n * 3, "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(&est.normals) {
            o.copy_from_slice(v);
        }
        if !fallbacks.is_null() {
            fallbacks.write(est.fallbacks);
        }
        Ok(())
    })
}

/// Creates an empty `classes x classes` confusion matrix.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_new(
    classes: usize,
    out: *mut *mut PaaConfusionMatrix,
) -> PaaStatus {
    guard(|| {
        if classes == 0 {
            return Err(Failure(
                PaaStatus::InvalidArgument,
                "class count must be positive".into(),
            ));
        }
        write_out(
            out,
            Box::into_raw(Box::new(PaaConfusionMatrix(ConfusionMatrix::new(classes)))),
            "out",
        )
    })
}

/// Releases a confusion matrix. Null is ignored.
///
/// # Safety
/// `cm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_free(cm: *mut PaaConfusionMatrix) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

/// Adds `n` (truth, prediction) pairs. Truth `-1` marks an unlabeled point
/// and is skipped. The matrix is unchanged on error.
///
/// # Safety
/// `truth` and `pred` hold `n` entries; `cm` must be valid.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_accumulate(
    cm: *mut PaaConfusionMatrix,
    truth: *const i32,
    pred: *const u32,
    n: usize,
) -> PaaStatus {
    guard(|| {
        let cm = cm.as_mut().ok_or_else(|| null("confusion matrix"))?;
        let truth: Vec<Option<usize>> = slice(truth, n, "truth")?
            .iter()
            .enumerate()
            .map(|(i, &t)| match t {
                -1 => Ok(None),
                t if t >= 0 => Ok(Some(t as usize)),
                t => Err(Failure(
                    PaaStatus::InvalidInput,
                    format!("point {i}: truth label {t}"),
                )),
            })
            .collect::<Result<_, _>>()?;
        let pred: Vec<usize> = slice(pred, n, "pred")?
            .iter()
            .map(|&p| p as usize)
            .collect();
        Ok(cm.0.accumulate(&truth, &pred)?)
    })
}

/// Count of points with truth `t` predicted as `p`.
///
/// # Safety
/// `cm` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_get(
    cm: *const PaaConfusionMatrix,
    t: usize,
    p: usize,
    out: *mut u64,
) -> PaaStatus {
    guard(|| {
        let cm = &handle(cm, "confusion matrix")?.0;
        if t >= cm.classes() || p >= cm.classes() {
            return Err(Failure(
                PaaStatus::InvalidArgument,
                format!("({t}, {p}) outside {} classes", cm.classes()),
            ));
        }
        write_out(out, cm.get(t, p), "out")
    })
}

/// Overall accuracy.
///
/// # Safety
/// `cm` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_overall_accuracy(
    cm: *const PaaConfusionMatrix,
    out: *mut f64,
) -> PaaStatus {
    guard(|| {
        write_out(
            out,
            handle(cm, "confusion matrix")?.0.overall_accuracy()?,
            "out",
        )
    })
}

/// Mean accuracy over classes present in ground truth; `excluded`
/// (nullable) receives the number of absent classes.
///
/// # Safety
/// `cm` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_mean_class_accuracy(
    cm: *const PaaConfusionMatrix,
    out: *mut f64,
    excluded: *mut usize,
) -> PaaStatus {
    guard(|| {
        let m = handle(cm, "confusion matrix")?.0.mean_class_accuracy()?;
        if !excluded.is_null() {
            excluded.write(m.excluded);
        }
        write_out(out, m.value, "out")
    })
}

/// Mean IoU over classes with a non-empty union; `excluded` (nullable)
/// receives the number of skipped classes.
///
/// # Safety
/// `cm` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paa_confusion_mean_iou(
    cm: *const PaaConfusionMatrix,
    out: *mut f64,
    excluded: *mut usize,
) -> PaaStatus {
    guard(|| {
        let m = handle(cm, "confusion matrix")?.0.mean_iou()?;
        if !excluded.is_null() {
            excluded.write(m.excluded);
        }
        write_out(out, m.value, "out")
    })
}
