//! C ABI over the polychain core.
//!
//! Every function returns a [`PcStatus`]; on failure the message is
//! available from [`pc_last_error_message`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned by
//! the library are released with [`pc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use polychain::augment::chain_repeat;
use polychain::model::{forward, ModelParams};
use polychain::smiles::{canonical_text, parse_repeat_unit, RepeatUnit};
use polychain::theory::{prim_mst, tree_weight, verify_grad_sum, WeightedGraph};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Model = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Parsed repeat unit.
pub struct PcRepeatUnit {
    inner: RepeatUnit,
}

/// Loaded model checkpoint.
pub struct PcModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PcStatus, msg: impl Into<String>) -> PcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PcStatus) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == PcStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(PcStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, PcStatus> {
    if s.is_null() {
        return Err(fail(PcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PcStatus::InvalidUtf8, "string is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(PcStatus::NullPointer, concat!("null argument: ", stringify!($p)));
        })+
    };
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a repeat unit with exactly two `*` anchors.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_repeat_unit_parse(
    text: *const c_char,
    out: *mut *mut PcRepeatUnit,
) -> PcStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_repeat_unit(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PcRepeatUnit { inner }));
                PcStatus::Ok
            }
            Err(e) => fail(PcStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `unit` must come from [`pc_repeat_unit_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pc_repeat_unit_free(unit: *mut PcRepeatUnit) {
    if !unit.is_null() {
        drop(Box::from_raw(unit));
    }
}

/// Atom count of the unit, anchors included.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_repeat_unit_atom_count(
    unit: *const PcRepeatUnit,
    out: *mut usize,
) -> PcStatus {
    guard(|| {
        non_null!(unit, out);
        *out = (*unit).inner.len();
        PcStatus::Ok
    })
}

/// Canonical text; release with [`pc_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_repeat_unit_canonical(
    unit: *const PcRepeatUnit,
    out: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        non_null!(unit, out);
        *out = ptr::null_mut();
        match CString::new(canonical_text(&(*unit).inner)) {
            Ok(s) => {
                *out = s.into_raw();
                PcStatus::Ok
            }
            Err(_) => fail(PcStatus::InvalidArgument, "canonical text contains NUL"),
        }
    })
}

/// Node and edge counts of the unit chained `n` times.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_chain_size(
    unit: *const PcRepeatUnit,
    n: usize,
    out_nodes: *mut usize,
    out_edges: *mut usize,
) -> PcStatus {
    guard(|| {
        non_null!(unit, out_nodes, out_edges);
        if n == 0 {
            return fail(PcStatus::InvalidArgument, "repeat count must be positive");
        }
        let g = chain_repeat(&(*unit).inner, n);
        *out_nodes = g.num_nodes();
        *out_edges = g.num_edges();
        PcStatus::Ok
    })
}

fn finish_model(parsed: Result<ModelParams, String>, out: *mut *mut PcModel) -> PcStatus {
    match parsed {
        Ok(inner) => {
            // SAFETY: callers check `out` before parsing.
            unsafe { *out = Box::into_raw(Box::new(PcModel { inner })) };
            PcStatus::Ok
        }
        Err(e) => fail(PcStatus::Model, e),
    }
}

/// Loads a JSON checkpoint from a file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_model_load(path: *const c_char, out: *mut *mut PcModel) -> PcStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(PcStatus::Io, format!("{path}: {e}")),
        };
        finish_model(ModelParams::from_json(&text).map_err(|e| e.to_string()), out)
    })
}

/// Loads a checkpoint from an in-memory JSON string.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_model_load_json(json: *const c_char, out: *mut *mut PcModel) -> PcStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let json = match read_str(json) {
            Ok(j) => j,
            Err(s) => return s,
        };
        finish_model(ModelParams::from_json(json).map_err(|e| e.to_string()), out)
    })
}

/// # Safety
/// `model` must come from a `pc_model_load*` call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pc_model_free(model: *mut PcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Prediction for the unit chained `n` times.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pc_model_predict(
    model: *const PcModel,
    unit: *const PcRepeatUnit,
    n: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        non_null!(model, unit, out);
        if n == 0 {
            return fail(PcStatus::InvalidArgument, "repeat count must be positive");
        }
        let params = &(*model).inner;
        let g = chain_repeat(&(*unit).inner, n);
        match forward(&g, params, params.config.aggregator) {
            Ok(e) => {
                *out = e.prediction;
                PcStatus::Ok
            }
            Err(e) => fail(PcStatus::Model, e.to_string()),
        }
    })
}

/// Back-propagated gradient sum on a chain of `n` units with contraction
/// `lipschitz`, and its closed form.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_grad_sum(
    n: usize,
    lipschitz: f64,
    delta: f64,
    out_measured: *mut f64,
    out_closed_form: *mut f64,
) -> PcStatus {
    guard(|| {
        non_null!(out_measured, out_closed_form);
        match verify_grad_sum(n, lipschitz, delta) {
            Ok(r) => {
                *out_measured = r.measured;
                *out_closed_form = r.closed_form;
                PcStatus::Ok
            }
            Err(e) => fail(PcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Weight of the maximum spanning tree of an edge list.
///
/// # Safety
/// `us`, `vs` and `ws` must each hold `num_edges` elements.
#[no_mangle]
pub unsafe extern "C" fn pc_mst_weight(
    num_nodes: usize,
    us: *const usize,
    vs: *const usize,
    ws: *const f64,
    num_edges: usize,
    start: usize,
    out_weight: *mut f64,
) -> PcStatus {
    guard(|| {
        non_null!(out_weight);
        if num_edges > 0 {
            non_null!(us, vs, ws);
        }
        let edges: Vec<(usize, usize, f64)> = (0..num_edges)
            .map(|i| (*us.add(i), *vs.add(i), *ws.add(i)))
            .collect();
        let result = WeightedGraph::new(num_nodes, &edges).and_then(|g| {
            let tree = prim_mst(&g, start)?;
            Ok(tree_weight(&g, &tree))
        });
        match result {
            Ok(w) => {
                *out_weight = w;
                PcStatus::Ok
            }
            Err(e) => fail(PcStatus::InvalidArgument, e.to_string()),
        }
    })
}
