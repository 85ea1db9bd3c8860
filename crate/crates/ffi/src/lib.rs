//! C ABI over the `paraprec` library.
//!
//! Objects are opaque handles created by `pp_*_new`/builder calls and released
//! with the matching `pp_*_free`. Every fallible call returns a [`PpStatus`];
//! the message of the last failure on the calling thread is available through
//! [`pp_last_error_message`]. Panics never cross the boundary.

use paraprec::bench::{assemble_adr, shepard_weights, BenchmarkProblem};
use paraprec::greedy::{greedy_frob, GreedyOptions, Preconditioner};
use paraprec::operators::LinearMap;
use paraprec::precond::ConstraintMode;
use paraprec::sketch::{min_sketch_columns, SketchKind, SketchMatrix};
use paraprec::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    SingularOperator = 4,
    SketchTooSmall = 5,
    KappaTooSmall = 6,
    ConvergenceFailure = 7,
    Numerical = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpSketchKind {
    RescaledPartialHadamard = 0,
    RescaledRademacher = 1,
    Psrht = 2,
}

impl From<PpSketchKind> for SketchKind {
    fn from(k: PpSketchKind) -> Self {
        match k {
            PpSketchKind::RescaledPartialHadamard => SketchKind::RescaledPartialHadamard,
            PpSketchKind::RescaledRademacher => SketchKind::RescaledRademacher,
            PpSketchKind::Psrht => SketchKind::Psrht,
        }
    }
}

/// Opaque parametric problem.
pub struct PpProblem(BenchmarkProblem);

/// Opaque interpolated-inverse preconditioner.
pub struct PpPreconditioner(Preconditioner);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PpStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidSize(_) | Error::Config { .. } | Error::Parse { .. } => PpStatus::InvalidArgument,
        Error::Dimension { .. } => PpStatus::Dimension,
        Error::SingularOperator { .. } => PpStatus::SingularOperator,
        Error::SketchTooSmall { .. } => PpStatus::SketchTooSmall,
        Error::KappaTooSmall { .. } => PpStatus::KappaTooSmall,
        Error::ConvergenceFailure { .. } => PpStatus::ConvergenceFailure,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => PpStatus::Io,
        _ => PpStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PpStatus, String)>) -> PpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PpStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PpStatus, String) {
    (status_of(&e), format!("{}: {e}", e.name()))
}

fn null(what: &str) -> (PpStatus, String) {
    (PpStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (PpStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (PpStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn parse_mode(s: *const c_char) -> Result<ConstraintMode, (PpStatus, String)> {
    if s.is_null() {
        return Ok(ConstraintMode::Unconstrained);
    }
    let s = unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| (PpStatus::InvalidArgument, "constraint is not UTF-8".to_string()))?;
    s.parse().map_err(lib)
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn pp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Minimal K for the given sketch distribution.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pp_sketch_min_columns(kind: PpSketchKind, n: usize, m: usize, ratio: f64, delta: f64, out: *mut u64) -> PpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = min_sketch_columns(kind.into(), n, m, ratio, delta).map_err(lib)?;
        Ok(())
    })
}

/// Advection-diffusion-reaction benchmark on a periodic `mesh_side`² grid.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pp_problem_adr_new(mesh_side: usize, advection: f64, out: *mut *mut PpProblem) -> PpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = assemble_adr(mesh_side, advection).map_err(lib)?;
        *out = Box::into_raw(Box::new(PpProblem(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `pp_problem_adr_new` (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pp_problem_free(p: *mut PpProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live problem handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pp_problem_dim(p: *const PpProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// # Safety
/// `p` must be a live problem handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pp_problem_param_dim(p: *const PpProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.op.param_dim())
}

/// Number of points of the problem's training grid.
///
/// # Safety
/// `p` must be a live problem handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pp_problem_grid_len(p: *const PpProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.grid.len())
}

unsafe fn make_sketch(p: &PpProblem, kind: PpSketchKind, columns: usize, seed: u64) -> Result<SketchMatrix, (PpStatus, String)> {
    SketchMatrix::new(kind.into(), p.0.dim(), columns, seed).map_err(lib)
}

/// Greedy preconditioner with `m` points. `seed_point` (length param_dim) may be NULL.
/// `constraint` is "none", "nonneg", "kappa:<value>" or NULL (= none).
///
/// # Safety
/// Pointers must be valid; `seed_point` must hold `param_dim` values when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_greedy(
    problem: *const PpProblem,
    kind: PpSketchKind,
    columns: usize,
    sketch_seed: u64,
    constraint: *const c_char,
    m: usize,
    seed_point: *const f64,
    out: *mut *mut PpPreconditioner,
) -> PpStatus {
    guard(|| {
        let prob = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = parse_mode(constraint)?;
        let v = make_sketch(prob, kind, columns, sketch_seed)?;
        let opts = GreedyOptions {
            seed_point: (!seed_point.is_null()).then(|| slice(seed_point, prob.0.op.param_dim(), "seed_point").map(<[f64]>::to_vec)).transpose()?,
            ..Default::default()
        };
        let p = greedy_frob(&prob.0.op, &prob.0.grid, v, m, mode, &opts).map_err(lib)?;
        *out = Box::into_raw(Box::new(PpPreconditioner(p)));
        Ok(())
    })
}

/// Preconditioner from `count` fixed points stored row-wise in `points` (count × param_dim).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_from_points(
    problem: *const PpProblem,
    kind: PpSketchKind,
    columns: usize,
    sketch_seed: u64,
    constraint: *const c_char,
    points: *const f64,
    count: usize,
    out: *mut *mut PpPreconditioner,
) -> PpStatus {
    guard(|| {
        let prob = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = parse_mode(constraint)?;
        let d = prob.0.op.param_dim();
        let flat = slice(points, count * d, "points")?;
        let pts: Vec<Vec<f64>> = flat.chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        let v = make_sketch(prob, kind, columns, sketch_seed)?;
        let p = Preconditioner::from_points(&prob.0.op, v, &prob.0.grid, mode, &pts).map_err(lib)?;
        *out = Box::into_raw(Box::new(PpPreconditioner(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from a preconditioner constructor (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_free(p: *mut PpPreconditioner) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of interpolation points.
///
/// # Safety
/// `p` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn pp_precond_len(p: *const PpPreconditioner) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// Copies the interpolation points (len × param_dim, row-wise) into `out`.
///
/// # Safety
/// `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_points(p: *const PpPreconditioner, out: *mut f64, capacity: usize) -> PpStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("preconditioner"))?;
        let flat: Vec<f64> = p.0.points().iter().flatten().copied().collect();
        if capacity < flat.len() {
            return Err((PpStatus::Dimension, format!("need {} values, capacity {capacity}", flat.len())));
        }
        slice_mut(out, flat.len(), "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Interpolation weights λ(ξ) (length = number of points).
///
/// # Safety
/// `xi` must hold param_dim values, `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_weights(p: *const PpPreconditioner, xi: *const f64, out: *mut f64, len: usize) -> PpStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("preconditioner"))?;
        if len != p.0.len() {
            return Err((PpStatus::Dimension, format!("expected {} weights, got {len}", p.0.len())));
        }
        let xi = slice(xi, p.0.operator().param_dim(), "xi")?;
        let sol = p.0.coefficients(xi).map_err(lib)?;
        slice_mut(out, len, "out")?.copy_from_slice(&sol.lambda);
        Ok(())
    })
}

/// y = P(ξ)x, or P(ξ)ᵀx when `transpose` is nonzero.
///
/// # Safety
/// `xi` holds param_dim values; `x` and `y` hold `n` values each.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_apply(p: *const PpPreconditioner, xi: *const f64, x: *const f64, y: *mut f64, n: usize, transpose: i32) -> PpStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("preconditioner"))?;
        if n != p.0.dim() {
            return Err((PpStatus::Dimension, format!("expected length {}, got {n}", p.0.dim())));
        }
        let xi = slice(xi, p.0.operator().param_dim(), "xi")?;
        let x = slice(x, n, "x")?;
        let y = slice_mut(y, n, "y")?;
        let map = p.0.map_at(xi).map_err(lib)?;
        let mut work = vec![0.0; n];
        map.apply_into(x, y, transpose != 0, &mut work);
        Ok(())
    })
}

/// Sketched residual ‖(I − P(ξ)A(ξ))V‖_F.
///
/// # Safety
/// `xi` holds param_dim values; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pp_precond_residual(p: *const PpPreconditioner, xi: *const f64, out: *mut f64) -> PpStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("preconditioner"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let xi = slice(xi, p.0.operator().param_dim(), "xi")?;
        *out = p.0.sketched_residual(xi).map_err(lib)?;
        Ok(())
    })
}

/// Shepard inverse-distance weights of `xi` w.r.t. `count` points (row-wise, `d` each).
///
/// # Safety
/// `points` holds count·d values, `xi` holds d values, `out` holds count values.
#[no_mangle]
pub unsafe extern "C" fn pp_shepard_weights(xi: *const f64, points: *const f64, count: usize, d: usize, s: f64, out: *mut f64) -> PpStatus {
    guard(|| {
        if d == 0 {
            return Err((PpStatus::InvalidArgument, "d must be positive".into()));
        }
        let xi = slice(xi, d, "xi")?;
        let pts: Vec<Vec<f64>> = slice(points, count * d, "points")?.chunks(d).map(<[f64]>::to_vec).collect();
        let w = shepard_weights(xi, &pts, s).map_err(lib)?;
        slice_mut(out, count, "out")?.copy_from_slice(&w);
        Ok(())
    })
}
