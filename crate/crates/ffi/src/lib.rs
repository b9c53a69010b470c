//! C ABI over the peak-function pipeline.
//!
//! Every function returns a [`PkStatus`]; on failure the message is available
//! from [`pk_last_error_message`] on the same thread. Strings handed out by the
//! library are released with [`pk_string_free`], pipelines with
//! [`pk_pipeline_free`]. Complex vectors are passed as interleaved
//! `(re, im)` doubles, `2·n` values for dimension `n`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64 as C64;
use peakfn::config::{parse_config, RunConfig};
use peakfn::domain::{project_to_boundary, ParameterValue};
use peakfn::error::Error;
use peakfn::peak::ConstantsCertificate;
use peakfn::pipeline::{self, certificate_json, sha256_hex, Construction};
use peakfn::verify;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    /// A construction stage aborted.
    Stage = 4,
    OutsideDomain = 5,
    /// Verification ran and the report is FAIL.
    VerifyFailed = 6,
    /// No certificate yet; call `pk_pipeline_certify` or `pk_pipeline_load_certificate`.
    NotCertified = 7,
    Panic = 8,
}

/// Opaque pipeline handle.
pub struct PkPipeline {
    config: RunConfig,
    construction: Option<Construction>,
    certificate_text: Option<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PkStatus {
    let mut inner = e;
    while let Error::Stage { source, .. } = inner {
        inner = source;
    }
    match inner {
        Error::OutsideDomain { .. } => PkStatus::OutsideDomain,
        Error::Config(_) | Error::UnknownFamily(_) | Error::Json(_) => PkStatus::Config,
        _ if e.stage() == Some("config") => PkStatus::Config,
        _ => PkStatus::Stage,
    }
}

/// Runs `f`, turning errors and panics into a status with a message.
fn guard(f: impl FnOnce() -> Result<PkStatus, (PkStatus, String)>) -> PkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("panic inside the peakfn library");
            PkStatus::Panic
        }
    }
}

fn fail(e: Error) -> (PkStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PkStatus, String)> {
    if p.is_null() {
        return Err((PkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PkStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a>(p: *mut PkPipeline) -> Result<&'a mut PkPipeline, (PkStatus, String)> {
    p.as_mut().ok_or((PkStatus::NullPointer, "pipeline handle is null".into()))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), (PkStatus, String)> {
    if out.is_null() {
        return Err((PkStatus::NullPointer, "output pointer is null".into()));
    }
    *out = CString::new(s).map_err(|_| (PkStatus::Panic, "string contains NUL".into()))?.into_raw();
    Ok(())
}

unsafe fn read_point(p: *const f64, n: usize, what: &str) -> Result<Vec<C64>, (PkStatus, String)> {
    if p.is_null() {
        return Err((PkStatus::NullPointer, format!("{what} is null")));
    }
    let v = std::slice::from_raw_parts(p, 2 * n);
    Ok(v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

/// Parses a JSON run configuration into a new pipeline.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_new(config_json: *const c_char, out: *mut *mut PkPipeline) -> PkStatus {
    guard(|| {
        if out.is_null() {
            return Err((PkStatus::NullPointer, "output pointer is null".into()));
        }
        let text = read_str(config_json, "config")?;
        let config = parse_config(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(PkPipeline { config, construction: None, certificate_text: None }));
        Ok(PkStatus::Ok)
    })
}

/// Releases a pipeline. Null is ignored.
///
/// # Safety
/// `p` must come from `pk_pipeline_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_free(p: *mut PkPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Complex dimension of the configured family.
///
/// # Safety
/// `p` must be a live pipeline handle.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_dimension(p: *const PkPipeline) -> usize {
    p.as_ref().map(|p| p.config.family.dimension).unwrap_or(0)
}

/// Runs every construction stage and keeps the certificate.
///
/// # Safety
/// `p` must be a live pipeline handle.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_certify(p: *mut PkPipeline) -> PkStatus {
    guard(|| {
        let p = handle(p)?;
        let c = pipeline::certify(&p.config).map_err(fail)?;
        p.certificate_text = Some(certificate_json(&c.certificate));
        p.construction = Some(c);
        Ok(PkStatus::Ok)
    })
}

/// Uses a stored certificate instead of certifying.
///
/// # Safety
/// `p` must be a live pipeline handle; `certificate_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_load_certificate(p: *mut PkPipeline, certificate_json: *const c_char) -> PkStatus {
    guard(|| {
        let p = handle(p)?;
        let text = read_str(certificate_json, "certificate")?;
        let cert: ConstantsCertificate =
            serde_json::from_str(text).map_err(|e| (PkStatus::Config, format!("certificate: {e}")))?;
        p.construction = Some(pipeline::rebuild(&p.config, &cert).map_err(fail)?);
        p.certificate_text = Some(text.to_string());
        Ok(PkStatus::Ok)
    })
}

/// Certificate JSON; release with `pk_string_free`.
///
/// # Safety
/// `p` must be a live pipeline handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_certificate_json(p: *const PkPipeline, out: *mut *mut c_char) -> PkStatus {
    guard(|| {
        let p = p.as_ref().ok_or((PkStatus::NullPointer, "pipeline handle is null".to_string()))?;
        let text = p.certificate_text.clone().ok_or((PkStatus::NotCertified, "no certificate yet".to_string()))?;
        give_string(out, text)?;
        Ok(PkStatus::Ok)
    })
}

/// `h_t(z; ζ)` with `ζ` projected onto `∂G_t`. `zeta` and `z` hold `2·n` doubles.
///
/// # Safety
/// `p` must be a live certified handle; the arrays must hold `2·n` doubles
/// for the family dimension `n`; `out_re` and `out_im` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_eval(
    p: *mut PkPipeline,
    t: f64,
    zeta: *const f64,
    z: *const f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> PkStatus {
    guard(|| {
        let p = handle(p)?;
        if out_re.is_null() || out_im.is_null() {
            return Err((PkStatus::NullPointer, "output pointer is null".into()));
        }
        let c = p.construction.as_ref().ok_or((PkStatus::NotCertified, "no certificate yet".to_string()))?;
        let n = c.family.dimension();
        let zeta = read_point(zeta, n, "zeta")?;
        let z = read_point(z, n, "z")?;
        let tv = ParameterValue::real(t);
        let projected = project_to_boundary(&c.family, tv, &zeta).map_err(fail)?.into_inner();
        let z = if z == zeta { projected.clone() } else { z };
        let h = c.evaluator_at(tv, &projected).and_then(|ev| ev.eval_h(&z)).map_err(fail)?;
        *out_re = h.re;
        *out_im = h.im;
        Ok(PkStatus::Ok)
    })
}

/// Runs verification; writes the report JSON (release with `pk_string_free`).
/// Returns `Ok` for a PASS report and `VerifyFailed` for a FAIL report.
///
/// # Safety
/// `p` must be a live certified handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_pipeline_verify(p: *mut PkPipeline, out: *mut *mut c_char) -> PkStatus {
    guard(|| {
        let p = handle(p)?;
        let c = p.construction.as_ref().ok_or((PkStatus::NotCertified, "no certificate yet".to_string()))?;
        let hash = sha256_hex(p.certificate_text.as_deref().unwrap_or_default().as_bytes());
        let report = verify::verify(c, &hash).map_err(fail)?;
        give_string(out, report.to_json())?;
        if report.pass {
            Ok(PkStatus::Ok)
        } else {
            let failed: Vec<&str> = report.properties.iter().filter(|p| !p.pass).map(|p| p.name.as_str()).collect();
            set_error(&format!("verification failed at: {}", failed.join(", ")));
            Ok(PkStatus::VerifyFailed)
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread; empty if none. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pk_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    const SMALL: &str = r#"{"family":{"name":"disc","t_points":1},"eta1":0.5,"seed":4,
        "verification":{"zeta_count":4,"sample_budget":500,"local_samples":100,"holomorphy_points":20,"triples_per_delta":3}}"#;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(pk_last_error_message()) }.to_string_lossy().into_owned()
    }

    fn new(cfg: &str) -> (PkStatus, *mut PkPipeline) {
        let c = CString::new(cfg).unwrap();
        let mut p = ptr::null_mut();
        (unsafe { pk_pipeline_new(c.as_ptr(), &mut p) }, p)
    }

    #[test]
    fn null_arguments() {
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { pk_pipeline_new(ptr::null(), &mut p) }, PkStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(unsafe { pk_pipeline_certify(ptr::null_mut()) }, PkStatus::NullPointer);
        unsafe { pk_pipeline_free(ptr::null_mut()) };
        unsafe { pk_string_free(ptr::null_mut()) };
        assert_eq!(unsafe { pk_pipeline_dimension(ptr::null()) }, 0);
    }

    #[test]
    fn bad_config_reports_message() {
        let (s, p) = new(r#"{"family":"torus","seed":1}"#);
        assert_eq!(s, PkStatus::Config);
        assert!(p.is_null());
        assert!(last_error().contains("torus"), "{}", last_error());
    }

    #[test]
    fn eval_requires_certificate() {
        let (s, p) = new(SMALL);
        assert_eq!(s, PkStatus::Ok);
        let zeta = [1.0, 0.0];
        let (mut re, mut im) = (0.0, 0.0);
        assert_eq!(unsafe { pk_pipeline_eval(p, 0.0, zeta.as_ptr(), zeta.as_ptr(), &mut re, &mut im) }, PkStatus::NotCertified);
        unsafe { pk_pipeline_free(p) };
    }

    #[test]
    fn certify_eval_verify() {
        let (_, p) = new(SMALL);
        assert_eq!(unsafe { pk_pipeline_dimension(p) }, 1);
        assert_eq!(unsafe { pk_pipeline_certify(p) }, PkStatus::Ok, "{}", last_error());
        let zeta = [0.6, 0.8];
        let (mut re, mut im) = (0.0, 0.0);
        assert_eq!(unsafe { pk_pipeline_eval(p, 0.0, zeta.as_ptr(), zeta.as_ptr(), &mut re, &mut im) }, PkStatus::Ok);
        assert!((re - 1.0).abs() <= 1e-8 && im.abs() <= 1e-8);
        let far = [5.0, 0.0];
        assert_eq!(unsafe { pk_pipeline_eval(p, 0.0, zeta.as_ptr(), far.as_ptr(), &mut re, &mut im) }, PkStatus::OutsideDomain);

        let mut cert = ptr::null_mut();
        assert_eq!(unsafe { pk_pipeline_certificate_json(p, &mut cert) }, PkStatus::Ok);
        let text = unsafe { CStr::from_ptr(cert) }.to_str().unwrap().to_string();
        unsafe { pk_string_free(cert) };

        let mut report = ptr::null_mut();
        assert_eq!(unsafe { pk_pipeline_verify(p, &mut report) }, PkStatus::Ok, "{}", last_error());
        let rep: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(report) }.to_str().unwrap()).unwrap();
        unsafe { pk_string_free(report) };
        assert_eq!(rep["certificate"], serde_json::Value::String(sha256_hex(text.as_bytes())));

        // a second handle from the stored certificate, with d2 halved
        let mut cert: ConstantsCertificate = serde_json::from_str(&text).unwrap();
        cert.d2 *= 0.5;
        let tampered = CString::new(certificate_json(&cert)).unwrap();
        let (_, q) = new(SMALL);
        assert_eq!(unsafe { pk_pipeline_load_certificate(q, tampered.as_ptr()) }, PkStatus::Ok, "{}", last_error());
        let mut report = ptr::null_mut();
        assert_eq!(unsafe { pk_pipeline_verify(q, &mut report) }, PkStatus::VerifyFailed);
        assert!(last_error().contains("away_bound"));
        unsafe {
            pk_string_free(report);
            pk_pipeline_free(p);
            pk_pipeline_free(q);
        }
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(pk_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
