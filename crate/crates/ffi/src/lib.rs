//! C ABI over the verifier.
//!
//! Networks and properties cross the boundary as opaque handles created from
//! JSON and released with the matching `_free` function. Every fallible call
//! returns an [`NnbStatus`]; on failure [`nnb_last_error`] describes the
//! problem for the calling thread. Panics never unwind into C: they are
//! caught and reported as [`NnbStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Duration;

use nnbound::bab::{bab_run, BabConfig, Decision};
use nnbound::experiments::{method_bound, Method};
use nnbound::network::{load_network, Network, VerificationProperty};
use nnbound::propagation::{intermediate_bounds, IbStrategy};
use nnbound::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Shape = 4,
    Dimension = 5,
    Io = 6,
    Unsupported = 7,
    Internal = 8,
}

/// Bounding method for `nnb_bound`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnbMethod {
    Ibp = 0,
    Wk = 1,
    Crown = 2,
    DsgPlus = 3,
    DecDsgPlus = 4,
    Supergradient = 5,
    Proximal = 6,
    Simplex = 7,
}

/// Branch-and-bound configuration for `nnb_verify`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnbPreset {
    /// Proximal bounding, iteration ladder, filtered smart branching.
    Badnb = 0,
    /// Exact LP bounding with score-based branching.
    Babsr = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnbDecision {
    Verified = 0,
    Falsified = 1,
    Timeout = 2,
}

/// Summary of one verification run.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnbVerifyResult {
    pub decision: NnbDecision,
    /// Subproblems bounded over all functionals.
    pub subproblems: usize,
    pub global_lb: f64,
    pub global_ub: f64,
    /// Nonzero when the counterexample buffer was filled.
    pub has_counterexample: i32,
}

/// Opaque network handle.
pub struct NnbNetwork(Network);

/// Opaque property handle.
pub struct NnbProperty(VerificationProperty);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

struct Failure(NnbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => NnbStatus::Io,
            Error::Parse(_) | Error::UnknownId { .. } | Error::InvalidInterval(_) => NnbStatus::Parse,
            Error::Shape { .. } => NnbStatus::Shape,
            Error::Dimension { .. } => NnbStatus::Dimension,
            Error::Unsupported(_) | Error::TooManyAmbiguous { .. } => NnbStatus::Unsupported,
            Error::Lp(_) | Error::Csv(_) => NnbStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NnbStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NnbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NnbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NnbStatus::Internal
        }
    }
}

/// # Safety
/// `p` is null or a nul-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NnbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a live handle from this library.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` is null or valid for `len` reads.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(null(what)) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, by the caller's contract, writable.
    unsafe { out.write(value) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nnb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a model from JSON text.
///
/// # Safety
/// `json` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_network_from_json(json: *const c_char, out: *mut *mut NnbNetwork) -> NnbStatus {
    guard(|| {
        let net = Network::from_json(read_str(json, "json")?)?;
        put(out, Box::into_raw(Box::new(NnbNetwork(net))), "out")
    })
}

/// Reads a model file.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_network_load(path: *const c_char, out: *mut *mut NnbNetwork) -> NnbStatus {
    guard(|| {
        let net = load_network(Path::new(read_str(path, "path")?))?;
        put(out, Box::into_raw(Box::new(NnbNetwork(net))), "out")
    })
}

/// Releases a network; null is ignored.
///
/// # Safety
/// `net` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nnb_network_free(net: *mut NnbNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input and output sizes of a network.
///
/// # Safety
/// `net` is a live handle; the outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_network_dims(
    net: *const NnbNetwork,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> NnbStatus {
    guard(|| {
        let net = &deref(net, "net")?.0;
        put(input_dim, net.input_dim(), "input_dim")?;
        put(output_dim, net.output_dim(), "output_dim")
    })
}

/// Forward pass; `out` must hold `output_dim` values.
///
/// # Safety
/// `x` is readable for `x_len` values and `out` writable for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn nnb_network_forward(
    net: *const NnbNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> NnbStatus {
    guard(|| {
        let net = &deref(net, "net")?.0;
        let y = net.forward(slice(x, x_len, "x")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: out_len,
            }
            .into());
        }
        std::slice::from_raw_parts_mut(out, y.len()).copy_from_slice(&y);
        Ok(())
    })
}

/// Parses one property from JSON text.
///
/// # Safety
/// `json` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_property_from_json(json: *const c_char, out: *mut *mut NnbProperty) -> NnbStatus {
    guard(|| {
        let mut props = VerificationProperty::list_from_json(read_str(json, "json")?)?;
        if props.len() != 1 {
            return Err(Failure(
                NnbStatus::Parse,
                format!("expected one property, found {}", props.len()),
            ));
        }
        put(out, Box::into_raw(Box::new(NnbProperty(props.remove(0)))), "out")
    })
}

/// Releases a property; null is ignored.
///
/// # Safety
/// `prop` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nnb_property_free(prop: *mut NnbProperty) {
    if !prop.is_null() {
        drop(Box::from_raw(prop));
    }
}

fn method_of(m: NnbMethod) -> Method {
    match m {
        NnbMethod::Ibp => Method::Ibp,
        NnbMethod::Wk => Method::Wk,
        NnbMethod::Crown => Method::Crown,
        NnbMethod::DsgPlus => Method::DsgPlus,
        NnbMethod::DecDsgPlus => Method::DecDsgPlus,
        NnbMethod::Supergradient => Method::Supergradient,
        NnbMethod::Proximal => Method::Proximal,
        NnbMethod::Simplex => Method::Simplex,
    }
}

/// Lower bound on `min_x cᵀf(x) + d` over the property's domain, taking the
/// smallest value over its functionals. A non-negative bound proves the
/// property. `budget` is the iteration count of iterative methods.
///
/// # Safety
/// `net` and `prop` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nnb_bound(
    net: *const NnbNetwork,
    prop: *const NnbProperty,
    method: NnbMethod,
    budget: usize,
    out: *mut f64,
) -> NnbStatus {
    guard(|| {
        let net = &deref(net, "net")?.0;
        let prop = &deref(prop, "prop")?.0;
        prop.check(net)?;
        let mut worst = f64::INFINITY;
        for canon in prop.canonical_networks(net)? {
            let bounds = intermediate_bounds(&canon, &prop.input, IbStrategy::WkCrown, None)?;
            worst = worst.min(method_bound(method_of(method), &canon, &prop.input, &bounds, budget)?);
        }
        put(out, worst, "out")
    })
}

/// Decides the property with branch and bound. `timeout_s ≤ 0` or NaN means
/// no limit. When the property is falsified and `counterexample` is non-null,
/// an input of length `input_dim` violating it is written there.
///
/// # Safety
/// `net` and `prop` are live handles; `result` is writable; `counterexample`
/// is null or writable for `cex_len` values.
#[no_mangle]
pub unsafe extern "C" fn nnb_verify(
    net: *const NnbNetwork,
    prop: *const NnbProperty,
    preset: NnbPreset,
    timeout_s: f64,
    result: *mut NnbVerifyResult,
    counterexample: *mut f64,
    cex_len: usize,
) -> NnbStatus {
    guard(|| {
        let net = &deref(net, "net")?.0;
        let prop = &deref(prop, "prop")?.0;
        if result.is_null() {
            return Err(null("result"));
        }
        prop.check(net)?;
        let mut cfg = match preset {
            NnbPreset::Badnb => BabConfig::badnb(),
            NnbPreset::Babsr => BabConfig::babsr(),
        };
        if timeout_s > 0.0 {
            cfg.timeout = Some(Duration::try_from_secs_f64(timeout_s).unwrap_or(Duration::MAX));
        }
        let mut summary = NnbVerifyResult {
            decision: NnbDecision::Verified,
            subproblems: 0,
            global_lb: f64::INFINITY,
            global_ub: f64::INFINITY,
            has_counterexample: 0,
        };
        for canon in prop.canonical_networks(net)? {
            let r = bab_run(&canon, &prop.input, &cfg)?;
            summary.subproblems += r.subproblems;
            summary.global_lb = summary.global_lb.min(r.global_lb);
            summary.global_ub = summary.global_ub.min(r.global_ub);
            match r.decision {
                Decision::Verified => continue,
                Decision::Timeout => summary.decision = NnbDecision::Timeout,
                Decision::Falsified => {
                    summary.decision = NnbDecision::Falsified;
                    if let Some(x) = r.counterexample.filter(|_| !counterexample.is_null()) {
                        if cex_len < x.len() {
                            return Err(Error::Dimension {
                                expected: x.len(),
                                got: cex_len,
                            }
                            .into());
                        }
                        std::slice::from_raw_parts_mut(counterexample, x.len()).copy_from_slice(&x);
                        summary.has_counterexample = 1;
                    }
                }
            }
            break;
        }
        put(result, summary, "result")
    })
}
