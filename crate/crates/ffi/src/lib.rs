//! C ABI over `mvslab`.
//!
//! Objects are opaque handles created by the `mvs_model_*`, `mvs_lyapunov_*`,
//! `mvs_simulate` and `mvs_ensemble_read` constructors and released with the
//! matching `mvs_*_free`. Every call returns an
//! [`MvsStatus`]; on failure `mvs_last_error` returns a message for the
//! calling thread. Panics never cross the boundary.
//!
//! Structured inputs (simulation settings, certificates, model and
//! functional sections) are JSON strings in the command-line config schema.
//! Output arrays are caller-allocated; a short buffer yields
//! `MVS_STATUS_BUFFER_TOO_SMALL` and nothing is written.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mvslab::cli::config::{LyapunovSection, ModelSection};
use mvslab::diagnostics::{bound_check, moment_curve};
use mvslab::lyapunov::{
    check_certificate_with, default_certificate_measures, default_pointwise_grid, CertificateMode, GeneratorContext,
    LyapunovSpec, StabilityCertificate,
};
use mvslab::measure::{wasserstein1, EmpiricalMeasure, MeasureView, DEFAULT_PROJECTIONS};
use mvslab::model::ModelSpec;
use mvslab::simulate::{read_ensemble, run_ensemble, write_ensemble, EnsembleFormat, PathEnsemble, SimConfig, PACKED_MAGIC};
use mvslab::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad argument, malformed JSON or invalid configuration.
    InvalidArgument = 2,
    /// A model or functional could not be built or evaluated.
    Model = 3,
    /// Non-finite or out-of-domain values.
    Numeric = 4,
    /// Every replica of a simulation failed.
    Integration = 5,
    /// Too few points for a fit.
    Fit = 6,
    /// Dimension or shape mismatch.
    Structural = 7,
    Io = 8,
    /// An output buffer is shorter than required.
    BufferTooSmall = 9,
    /// An internal panic was caught.
    Panic = 10,
}

/// Ensemble file encodings.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvsFormat {
    Csv = 0,
    Packed = 1,
}

/// A drift and diffusion pair.
pub struct MvsModel {
    inner: ModelSpec,
    label: CString,
}

/// A Lyapunov functional.
pub struct MvsLyapunov {
    inner: LyapunovSpec,
}

/// Recorded paths of a simulation.
pub struct MvsEnsemble {
    inner: PathEnsemble,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MvsEnsembleShape {
    pub dim: usize,
    pub n_particles: usize,
    pub n_paths: usize,
    /// Recorded times of a completed replica.
    pub n_times: usize,
    pub n_failed: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MvsCertificateResult {
    pub pass: bool,
    pub vacuous: bool,
    /// Largest generator left-hand side over the audit set.
    pub worst_margin: f64,
    /// Largest `lhs - rhs` over every audited inequality.
    pub worst_excess: f64,
    pub n_samples: usize,
    pub violations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MvsEnvelopeResult {
    pub pass: bool,
    pub vacuous: bool,
    /// Smallest `envelope - estimate + 3 SE`.
    pub worst_slack: f64,
    pub worst_time: f64,
    pub min_margin: f64,
    pub n_violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MvsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Usage(_) | Error::Config { .. } | Error::Parse { .. } | Error::Json(_) => MvsStatus::InvalidArgument,
            Error::Model { .. } => MvsStatus::Model,
            Error::Numeric { .. } => MvsStatus::Numeric,
            Error::Integration { .. } => MvsStatus::Integration,
            Error::Fit(_) => MvsStatus::Fit,
            Error::Structural(_) => MvsStatus::Structural,
            Error::Io(_) => MvsStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(MvsStatus::InvalidArgument, format!("invalid JSON: {e}"))
    }
}

type Res<T> = Result<T, Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res<()>) -> MvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MvsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MvsStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(MvsStatus::NullPointer, format!("{name} is null"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MvsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn input<'a>(p: *const f64, len: usize, name: &str) -> Res<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Res<()> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into a caller buffer of capacity `cap`.
unsafe fn copy_out(src: &[f64], dst: *mut f64, cap: usize, name: &str) -> Res<()> {
    if cap < src.len() {
        return Err(Failure(
            MvsStatus::BufferTooSmall,
            format!("{name} holds {cap} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null(name));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn uniform_measure(dim: usize, atoms: *const f64, n_atoms: usize, name: &str) -> Res<EmpiricalMeasure> {
    if dim == 0 {
        return Err(Failure(MvsStatus::InvalidArgument, "dim must be positive".into()));
    }
    let len = n_atoms
        .checked_mul(dim)
        .ok_or_else(|| Failure(MvsStatus::InvalidArgument, "atom count overflows".into()))?;
    Ok(EmpiricalMeasure::uniform(dim, input(atoms, len, name)?.to_vec())?)
}

fn model_handle(inner: ModelSpec) -> *mut MvsModel {
    let label = CString::new(inner.label().replace('\0', " ")).expect("interior nul removed");
    boxed(MvsModel { inner, label })
}

/// Version string of the library, static storage.
#[no_mangle]
pub extern "C" fn mvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mvs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mvs_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// The example model with coupling `m` and `l` noise components.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_example61(m: f64, l: usize, out: *mut *mut MvsModel) -> MvsStatus {
    guard(|| {
        if !m.is_finite() || l == 0 {
            return Err(Failure(MvsStatus::InvalidArgument, "m must be finite and l positive".into()));
        }
        put(out, model_handle(ModelSpec::example61(m, l)), "out")
    })
}

/// Mean-field Ornstein-Uhlenbeck: drift `-x + m E[X]`, diffusion `s I`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_meanfield_ou(m: f64, s: f64, dim: usize, out: *mut *mut MvsModel) -> MvsStatus {
    guard(|| {
        if dim == 0 || !m.is_finite() || !s.is_finite() {
            return Err(Failure(MvsStatus::InvalidArgument, "finite parameters and positive dim required".into()));
        }
        put(out, model_handle(ModelSpec::meanfield_ou_dim(m, s, dim)), "out")
    })
}

/// Drift `-x`, diffusion `eps sin(x)` per coordinate.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_contractive(eps: f64, dim: usize, out: *mut *mut MvsModel) -> MvsStatus {
    guard(|| {
        if dim == 0 || !eps.is_finite() {
            return Err(Failure(MvsStatus::InvalidArgument, "finite eps and positive dim required".into()));
        }
        put(out, model_handle(ModelSpec::contractive_dim(eps, dim)), "out")
    })
}

/// A model from a JSON model section, e.g.
/// `{"expr_drift": "-x", "expr_diffusion": "0.5"}`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_from_json(json: *const c_char, out: *mut *mut MvsModel) -> MvsStatus {
    guard(|| {
        let section: ModelSection = serde_json::from_str(text(json, "json")?)?;
        put(out, model_handle(section.build()?), "out")
    })
}

/// State dimension of a model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_dim(model: *const MvsModel, out: *mut usize) -> MvsStatus {
    guard(|| put(out, handle(model, "model")?.inner.dim_state(), "out"))
}

/// Label of a model, owned by the handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_label(model: *const MvsModel) -> *const c_char {
    model.as_ref().map_or(std::ptr::null(), |m| m.label.as_ptr())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvs_model_free(model: *mut MvsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `v(x, mu) = |x|^2`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_lyapunov_quad(dim: usize, out: *mut *mut MvsLyapunov) -> MvsStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(MvsStatus::InvalidArgument, "dim must be positive".into()));
        }
        put(out, boxed(MvsLyapunov { inner: LyapunovSpec::quad_dim(dim) }), "out")
    })
}

/// `v(x, mu) = |x - m mean(mu)|^2`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_lyapunov_mean_centered(m: f64, dim: usize, out: *mut *mut MvsLyapunov) -> MvsStatus {
    guard(|| {
        if dim == 0 || !m.is_finite() {
            return Err(Failure(MvsStatus::InvalidArgument, "finite m and positive dim required".into()));
        }
        put(out, boxed(MvsLyapunov { inner: LyapunovSpec::mean_centered_dim(m, dim) }), "out")
    })
}

/// A functional from a JSON section, e.g. `{"builtin": "spread", "c": 1}`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvs_lyapunov_from_json(json: *const c_char, dim: usize, out: *mut *mut MvsLyapunov) -> MvsStatus {
    guard(|| {
        let section: LyapunovSection = serde_json::from_str(text(json, "json")?)?;
        if dim == 0 {
            return Err(Failure(MvsStatus::InvalidArgument, "dim must be positive".into()));
        }
        put(out, boxed(MvsLyapunov { inner: section.build(dim)? }), "out")
    })
}

/// # Safety
/// `v` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvs_lyapunov_free(v: *mut MvsLyapunov) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// `v(x, mu)` for the uniform measure on `n_atoms` points (row-major,
/// `n_atoms * dim` values).
///
/// # Safety
/// `x` holds `dim` values, `atoms` holds `n_atoms * dim`, `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_lyapunov_value(
    v: *const MvsLyapunov,
    x: *const f64,
    atoms: *const f64,
    n_atoms: usize,
    out: *mut f64,
) -> MvsStatus {
    guard(|| {
        let v = handle(v, "v")?;
        let dim = v.inner.dim();
        let mu = uniform_measure(dim, atoms, n_atoms, "atoms")?;
        put(out, v.inner.value(input(x, dim, "x")?, &mu)?, "out")
    })
}

/// The generator `L^mu v(x, mu)` for the uniform measure on `atoms`.
///
/// # Safety
/// As for [`mvs_lyapunov_value`]; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvs_generator(
    v: *const MvsLyapunov,
    model: *const MvsModel,
    x: *const f64,
    atoms: *const f64,
    n_atoms: usize,
    out: *mut f64,
) -> MvsStatus {
    guard(|| {
        let v = handle(v, "v")?;
        let model = handle(model, "model")?;
        let dim = v.inner.dim();
        let mu = uniform_measure(dim, atoms, n_atoms, "atoms")?;
        let ctx = GeneratorContext::from_view(&v.inner, &model.inner, MeasureView::new(&mu))?;
        put(out, ctx.generator(&v.inner, &model.inner, input(x, dim, "x")?)?, "out")
    })
}

/// Audits a certificate (JSON, `{"mode": "H22", "alpha": ..}`) on
/// `n_measures` sampled measures drawn with `seed`.
///
/// # Safety
/// Handles must be live, `cert_json` nul-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_check_certificate(
    v: *const MvsLyapunov,
    model: *const MvsModel,
    cert_json: *const c_char,
    n_measures: usize,
    seed: u64,
    out: *mut MvsCertificateResult,
) -> MvsStatus {
    guard(|| {
        let v = handle(v, "v")?;
        let model = handle(model, "model")?;
        let cert: StabilityCertificate = serde_json::from_str(text(cert_json, "cert_json")?)?;
        let dim = model.inner.dim_state();
        let measures = default_certificate_measures(dim, n_measures, seed);
        let grid = (cert.mode == CertificateMode::H23).then(|| default_pointwise_grid(dim, 200, seed));
        let r = check_certificate_with(&v.inner, &model.inner, &cert, &measures, grid.as_deref(), Some(seed))?;
        put(
            out,
            MvsCertificateResult {
                pass: r.pass,
                vacuous: r.vacuous,
                worst_margin: r.worst_margin,
                worst_excess: r.worst_excess,
                n_samples: r.n_samples,
                violations: r.violations,
            },
            "out",
        )
    })
}

/// Simulates `model` with settings given as a JSON sim section. Replicas
/// that blow up are recorded as failed; only a run in which all fail is an
/// error.
///
/// # Safety
/// `model` must be live, `sim_json` nul-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_simulate(
    model: *const MvsModel,
    sim_json: *const c_char,
    out: *mut *mut MvsEnsemble,
) -> MvsStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let cfg: SimConfig = serde_json::from_str(text(sim_json, "sim_json")?)?;
        cfg.validate(model.inner.dim_state())?;
        let ens = run_ensemble(&model.inner, &cfg)?;
        put(out, boxed(MvsEnsemble { inner: ens }), "out")
    })
}

/// # Safety
/// `ens` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_shape(ens: *const MvsEnsemble, out: *mut MvsEnsembleShape) -> MvsStatus {
    guard(|| {
        let e = &handle(ens, "ens")?.inner;
        put(
            out,
            MvsEnsembleShape {
                dim: e.dim(),
                n_particles: e.n_particles(),
                n_paths: e.n_paths(),
                n_times: e.times().len(),
                n_failed: e.failures().len(),
            },
            "out",
        )
    })
}

/// Copies the recorded times.
///
/// # Safety
/// `ens` must be live and `buf` hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_times(ens: *const MvsEnsemble, buf: *mut f64, cap: usize) -> MvsStatus {
    guard(|| copy_out(handle(ens, "ens")?.inner.times(), buf, cap, "buf"))
}

/// Copies frame `k` of `replica`, `n_particles * dim` values row-major.
/// Failed replicas have fewer frames than `n_times`.
///
/// # Safety
/// `ens` must be live and `buf` hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_frame(
    ens: *const MvsEnsemble,
    replica: usize,
    k: usize,
    buf: *mut f64,
    cap: usize,
) -> MvsStatus {
    guard(|| {
        let e = &handle(ens, "ens")?.inner;
        if replica >= e.n_paths() || k >= e.n_frames(replica) {
            return Err(Failure(
                MvsStatus::InvalidArgument,
                format!("replica {replica} has no frame {k}"),
            ));
        }
        copy_out(e.frame(replica, k), buf, cap, "buf")
    })
}

/// Writes the ensemble to `path`.
///
/// # Safety
/// `ens` must be live and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_write(ens: *const MvsEnsemble, path: *const c_char, format: MvsFormat) -> MvsStatus {
    guard(|| {
        let e = &handle(ens, "ens")?.inner;
        let path = text(path, "path")?;
        let format = match format {
            MvsFormat::Csv => EnsembleFormat::Csv,
            MvsFormat::Packed => EnsembleFormat::Packed,
        };
        let file = std::fs::File::create(path).map_err(Error::from)?;
        Ok(write_ensemble(e, format, std::io::BufWriter::new(file))?)
    })
}

/// Reads an ensemble file in either encoding.
///
/// # Safety
/// `path` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_read(path: *const c_char, out: *mut *mut MvsEnsemble) -> MvsStatus {
    guard(|| {
        let path = text(path, "path")?;
        let bytes = std::fs::read(Path::new(path)).map_err(Error::from)?;
        let format = if bytes.starts_with(PACKED_MAGIC) {
            EnsembleFormat::Packed
        } else {
            EnsembleFormat::Csv
        };
        let ens = read_ensemble(format, bytes.as_slice())?;
        put(out, boxed(MvsEnsemble { inner: ens }), "out")
    })
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvs_ensemble_free(ens: *mut MvsEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// Estimated `E|X_t|^p` at each recorded time with standard errors across
/// replicas. `se` may be null; it is filled with NaN when fewer than two
/// replicas completed.
///
/// # Safety
/// `ens` must be live; `values` and `se` (if non-null) hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mvs_moment_curve(
    ens: *const MvsEnsemble,
    p: u32,
    values: *mut f64,
    se: *mut f64,
    cap: usize,
) -> MvsStatus {
    guard(|| {
        let curve = moment_curve(&handle(ens, "ens")?.inner, p)?;
        copy_out(&curve.values, values, cap, "values")?;
        if !se.is_null() {
            let s = curve.se.unwrap_or_else(|| vec![f64::NAN; curve.values.len()]);
            copy_out(&s, se, cap, "se")?;
        }
        Ok(())
    })
}

/// Checks the estimated second moment against the certificate envelope,
/// starting from the estimate at the first recorded time.
///
/// # Safety
/// `ens` must be live, `cert_json` nul-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_envelope_check(
    ens: *const MvsEnsemble,
    cert_json: *const c_char,
    out: *mut MvsEnvelopeResult,
) -> MvsStatus {
    guard(|| {
        let e = &handle(ens, "ens")?.inner;
        let cert: StabilityCertificate = serde_json::from_str(text(cert_json, "cert_json")?)?;
        cert.validate()?;
        let curve = moment_curve(e, 2)?;
        let v = bound_check(&curve, &cert, curve.values[0])?;
        put(
            out,
            MvsEnvelopeResult {
                pass: v.pass,
                vacuous: v.vacuous,
                worst_slack: v.worst_slack,
                worst_time: v.times[v.worst_index],
                min_margin: v.min_margin,
                n_violations: v.n_violations,
            },
            "out",
        )
    })
}

/// `W1` between uniform measures on `a` (`na` atoms) and `b` (`nb` atoms).
/// Exact in one dimension; the sliced estimate, a lower bound, otherwise.
///
/// # Safety
/// `a` and `b` hold `na * dim` and `nb * dim` values, `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn mvs_wasserstein1(
    dim: usize,
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> MvsStatus {
    guard(|| {
        let mu = uniform_measure(dim, a, na, "a")?;
        let nu = uniform_measure(dim, b, nb, "b")?;
        put(out, wasserstein1(&mu, &nu, DEFAULT_PROJECTIONS)?, "out")
    })
}

/// Runs the command-line front end in process; returns its exit code.
/// `argv[0]` is the program name.
///
/// # Safety
/// `argv` holds `argc` nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mvs_run_command(argc: c_int, argv: *const *const c_char) -> c_int {
    let mut code = 2;
    let status = guard(|| {
        if argc < 1 {
            return Err(Failure(MvsStatus::InvalidArgument, "argv needs the program name".into()));
        }
        if argv.is_null() {
            return Err(null("argv"));
        }
        let args = std::slice::from_raw_parts(argv, argc as usize)
            .iter()
            .map(|&p| text(p, "argv").map(str::to_string))
            .collect::<Res<Vec<_>>>()?;
        code = mvslab::cli::run_command(args);
        Ok(())
    });
    if status == MvsStatus::Ok {
        code
    } else {
        2
    }
}
