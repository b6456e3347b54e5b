//! The C entry points, called from Rust and from a small C program.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use nnbound_ffi::*;

const MODEL: &str = r#"{"layers":[
    {"type":"dense","weight":[[1.0]],"bias":[0.5]},
    {"type":"relu"},
    {"type":"dense","weight":[[-1.0]],"bias":[1.0]}]}"#;

/// `min -relu(x + 0.5) + 1 + d` over `[-1, 1]` is `d - 0.5`, attained at `x = 1`.
fn property(d: f64) -> CString {
    CString::new(format!(
        r#"{{"id":"p","input":{{"type":"box","lower":[-1],"upper":[1]}},"out":{{"c":[1],"d":{d}}}}}"#
    ))
    .unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nnb_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Handles {
    net: *mut NnbNetwork,
    prop: *mut NnbProperty,
}

impl Handles {
    fn new(d: f64) -> Self {
        let model = CString::new(MODEL).unwrap();
        let mut net = ptr::null_mut();
        let mut prop = ptr::null_mut();
        unsafe {
            assert_eq!(nnb_network_from_json(model.as_ptr(), &mut net), NnbStatus::Ok);
            assert_eq!(nnb_property_from_json(property(d).as_ptr(), &mut prop), NnbStatus::Ok);
        }
        Self { net, prop }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            nnb_property_free(self.prop);
            nnb_network_free(self.net);
        }
    }
}

#[test]
fn dims_and_forward() {
    let h = Handles::new(0.0);
    let (mut i, mut o) = (0usize, 0usize);
    let mut y = [0.0];
    unsafe {
        assert_eq!(nnb_network_dims(h.net, &mut i, &mut o), NnbStatus::Ok);
        assert_eq!((i, o), (1, 1));
        assert_eq!(
            nnb_network_forward(h.net, [0.5].as_ptr(), 1, y.as_mut_ptr(), 1),
            NnbStatus::Ok
        );
        assert_eq!(y[0], 0.0);
        assert_eq!(
            nnb_network_forward(h.net, [0.5, 1.0].as_ptr(), 2, y.as_mut_ptr(), 1),
            NnbStatus::Dimension
        );
        assert_eq!(
            nnb_network_forward(h.net, [0.5].as_ptr(), 1, y.as_mut_ptr(), 0),
            NnbStatus::Dimension
        );
    }
}

#[test]
fn bounds_are_sound_and_tight_here() {
    let h = Handles::new(0.6);
    for method in [
        NnbMethod::Ibp,
        NnbMethod::Wk,
        NnbMethod::Crown,
        NnbMethod::Proximal,
        NnbMethod::Simplex,
    ] {
        let mut b = f64::NAN;
        assert_eq!(unsafe { nnb_bound(h.net, h.prop, method, 10, &mut b) }, NnbStatus::Ok);
        assert!((b - 0.1).abs() < 1e-9, "{method:?}: {b}");
    }
}

#[test]
fn verify_reports_counterexamples() {
    let h = Handles::new(0.3);
    let mut res = NnbVerifyResult {
        decision: NnbDecision::Timeout,
        subproblems: 0,
        global_lb: 0.0,
        global_ub: 0.0,
        has_counterexample: 0,
    };
    let mut x = [f64::NAN];
    let status = unsafe { nnb_verify(h.net, h.prop, NnbPreset::Badnb, 0.0, &mut res, x.as_mut_ptr(), 1) };
    assert_eq!(status, NnbStatus::Ok);
    assert_eq!(res.decision, NnbDecision::Falsified);
    assert_eq!(res.has_counterexample, 1);
    assert!(x[0] > 0.3 - 1e-9 && x[0] <= 1.0, "x = {}", x[0]);

    let h = Handles::new(0.6);
    let status = unsafe { nnb_verify(h.net, h.prop, NnbPreset::Babsr, 10.0, &mut res, ptr::null_mut(), 0) };
    assert_eq!(status, NnbStatus::Ok);
    assert_eq!(res.decision, NnbDecision::Verified);
    assert!(res.global_lb >= 0.0);
}

#[test]
fn errors_map_to_status_codes() {
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(nnb_network_from_json(ptr::null(), &mut net), NnbStatus::NullPointer);
        assert!(last_error().contains("json"));
        let bad = CString::new("{\"layers\": 3}").unwrap();
        assert_eq!(nnb_network_from_json(bad.as_ptr(), &mut net), NnbStatus::Parse);
        let shape = CString::new(r#"{"layers":[{"type":"relu"}]}"#).unwrap();
        assert_eq!(nnb_network_from_json(shape.as_ptr(), &mut net), NnbStatus::Shape);
        let utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            nnb_network_from_json(utf8.as_ptr().cast(), &mut net),
            NnbStatus::InvalidUtf8
        );
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(nnb_network_load(missing.as_ptr(), &mut net), NnbStatus::Io);
        assert!(net.is_null());

        let h = Handles::new(0.0);
        let ball = CString::new(r#"{"input":{"type":"l2","center":[0],"eps":0.5},"out":{"c":[1],"d":0}}"#).unwrap();
        let mut prop = ptr::null_mut();
        assert_eq!(nnb_property_from_json(ball.as_ptr(), &mut prop), NnbStatus::Ok);
        let mut b = 0.0;
        assert_eq!(
            nnb_bound(h.net, prop, NnbMethod::Simplex, 0, &mut b),
            NnbStatus::Unsupported
        );
        assert_eq!(nnb_bound(h.net, prop, NnbMethod::Crown, 0, &mut b), NnbStatus::Ok);
        assert!(last_error().is_empty());
        nnb_property_free(prop);
        nnb_network_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/nnbound.h")).unwrap();
    for name in [
        "nnb_last_error",
        "nnb_network_from_json",
        "nnb_network_load",
        "nnb_network_free",
        "nnb_network_dims",
        "nnb_network_forward",
        "nnb_property_from_json",
        "nnb_property_free",
        "nnb_bound",
        "nnb_verify",
        "NNB_STATUS_INTERNAL",
        "typedef struct NnbNetwork NnbNetwork",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Builds `tests/c/smoke.c` against the static library when a C compiler
/// and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let archive = profile_dir.join("libnnbound_ffi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no archive at {} or no cc", archive.display());
        return;
    }
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("nnbound_smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
