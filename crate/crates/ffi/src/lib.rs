//! C ABI over `grkan`: an opaque rational-activation handle, forward and
//! backward in f32/f64, access-count predictions and cost-table FLOPs.
//!
//! Every fallible call returns a [`GrkanStatus`]. On failure the message is
//! kept per thread and read with [`grkan_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use grkan::access::{predict_accesses_blocked, predict_accesses_naive};
use grkan::backward::{backward, ExecutionPlan};
use grkan::bench::{cmd_flops, FlopsRow};
use grkan::{
    forward_tensor, ActivationTensor, FlopsConfig, GrkanError, GroupLayout, GroupRationalParams, Real, Shape3, Strategy,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrkanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LayoutMismatch = 3,
    NonFiniteInput = 4,
    GridGeometryInvalid = 5,
    CountOverflow = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrkanStrategy {
    NaiveAtomic = 0,
    BlockedReduction = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrkanLayerKind {
    Mlp = 0,
    Kan = 1,
    Grkan = 2,
}

/// Inputs of the cost table. Fields a row does not use are ignored.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GrkanFlopsConfig {
    pub d_in: u64,
    pub d_out: u64,
    pub func_flops: u64,
    pub spline_order: u64,
    pub intervals: u64,
    pub m: u64,
    pub n: u64,
    pub groups: u64,
}

/// Group-rational activation with its coefficients held in both precisions.
pub struct GrkanRational {
    layout: GroupLayout,
    params64: GroupRationalParams<f64>,
    params32: GroupRationalParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GrkanStatus, String);

impl From<GrkanError> for Failure {
    fn from(e: GrkanError) -> Self {
        let status = match &e {
            GrkanError::LayoutMismatch(_) => GrkanStatus::LayoutMismatch,
            GrkanError::NonFiniteInput(_) => GrkanStatus::NonFiniteInput,
            GrkanError::GridGeometryInvalid(_) | GrkanError::TailNotCovered(_) => GrkanStatus::GridGeometryInvalid,
            GrkanError::CountOverflow(_) | GrkanError::AccumulationOverflow(_) => GrkanStatus::CountOverflow,
            GrkanError::InvalidConfig(_) => GrkanStatus::InvalidArgument,
            _ => GrkanStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GrkanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrkanStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            GrkanStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GrkanStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(GrkanStatus::InvalidArgument, msg)
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a>(h: *const GrkanRational) -> Result<&'a GrkanRational, Failure> {
    h.as_ref().ok_or_else(|| null("handle"))
}

fn element_count(h: &GrkanRational, batch: usize, seq: usize) -> Result<(Shape3, usize), Failure> {
    let shape = Shape3::new(batch, seq, h.layout.feature_dim());
    batch
        .checked_mul(seq)
        .and_then(|r| r.checked_mul(h.layout.feature_dim()))
        .map(|n| (shape, n))
        .ok_or_else(|| Failure(GrkanStatus::CountOverflow, "tensor size overflows".into()))
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn grkan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated name of a status code.
#[no_mangle]
pub extern "C" fn grkan_status_name(status: GrkanStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        GrkanStatus::Ok => b"ok\0",
        GrkanStatus::NullPointer => b"null pointer\0",
        GrkanStatus::InvalidArgument => b"invalid argument\0",
        GrkanStatus::LayoutMismatch => b"layout mismatch\0",
        GrkanStatus::NonFiniteInput => b"non-finite input\0",
        GrkanStatus::GridGeometryInvalid => b"grid geometry invalid\0",
        GrkanStatus::CountOverflow => b"count overflow\0",
        GrkanStatus::Internal => b"internal error\0",
        GrkanStatus::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}

/// Creates a handle for `num_groups` groups over `feature_dim` channels.
///
/// `numerator` holds `num_groups * num_coeffs` values and `denominator`
/// `num_groups * den_coeffs`, both row-major by group.
///
/// # Safety
/// The coefficient pointers must be valid for the stated lengths and `out`
/// must be writable. Release the handle with [`grkan_rational_free`].
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_new(
    feature_dim: usize,
    num_groups: usize,
    num_coeffs: usize,
    den_coeffs: usize,
    numerator: *const f64,
    denominator: *const f64,
    out: *mut *mut GrkanRational,
) -> GrkanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let nlen = num_groups.checked_mul(num_coeffs).ok_or_else(|| invalid("numerator size overflows".into()))?;
        let dlen = num_groups.checked_mul(den_coeffs).ok_or_else(|| invalid("denominator size overflows".into()))?;
        let num = input(numerator, nlen, "numerator")?.to_vec();
        let den = input(denominator, dlen, "denominator")?.to_vec();
        let layout = GroupLayout::new(feature_dim, num_groups)?;
        let params64 = GroupRationalParams::new(num_groups, num_coeffs, den_coeffs, num, den)?;
        let params32 = params64.cast::<f32>();
        *out = Box::into_raw(Box::new(GrkanRational { layout, params64, params32 }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`grkan_rational_new`] and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_free(h: *mut GrkanRational) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn forward_in<T: Real>(
    h: *const GrkanRational,
    params: impl Fn(&GrkanRational) -> &GroupRationalParams<T>,
    x: *const T,
    batch: usize,
    seq: usize,
    y: *mut T,
) -> GrkanStatus {
    guard(|| {
        let h = handle(h)?;
        let (shape, n) = element_count(h, batch, seq)?;
        let xt = ActivationTensor::new(shape, input(x, n, "x")?.to_vec())?;
        let out = forward_tensor(&xt, params(h), &h.layout)?;
        output(y, n, "y")?.copy_from_slice(out.data());
        Ok(())
    })
}

/// `y = F(x)` over a `batch × seq × feature_dim` row-major tensor.
///
/// # Safety
/// `h` must be a live handle; `x` and `y` must each hold
/// `batch * seq * feature_dim` values.
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_forward_f32(
    h: *const GrkanRational,
    x: *const f32,
    batch: usize,
    seq: usize,
    y: *mut f32,
) -> GrkanStatus {
    forward_in(h, |h| &h.params32, x, batch, seq, y)
}

/// # Safety
/// As [`grkan_rational_forward_f32`].
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_forward_f64(
    h: *const GrkanRational,
    x: *const f64,
    batch: usize,
    seq: usize,
    y: *mut f64,
) -> GrkanStatus {
    forward_in(h, |h| &h.params64, x, batch, seq, y)
}

#[allow(clippy::too_many_arguments)]
unsafe fn backward_in<T: Real>(
    h: *const GrkanRational,
    params: impl Fn(&GrkanRational) -> &GroupRationalParams<T>,
    x: *const T,
    upstream: *const T,
    batch: usize,
    seq: usize,
    strategy: GrkanStrategy,
    block_size: usize,
    workers: usize,
    d_x: *mut T,
    d_a: *mut T,
    d_b: *mut T,
) -> GrkanStatus {
    guard(|| {
        let h = handle(h)?;
        let p = params(h);
        let (shape, n) = element_count(h, batch, seq)?;
        let xt = ActivationTensor::new(shape, input(x, n, "x")?.to_vec())?;
        let ut = ActivationTensor::new(shape, input(upstream, n, "upstream")?.to_vec())?;
        let strategy = match strategy {
            GrkanStrategy::NaiveAtomic => Strategy::NaiveAtomic,
            GrkanStrategy::BlockedReduction => Strategy::BlockedReduction,
        };
        let plan = ExecutionPlan::for_strategy(strategy, shape, h.layout, block_size)?
            .with_workers((workers > 0).then_some(workers));
        let g = backward(&xt, &ut, p, &plan)?;
        output(d_x, n, "d_x")?.copy_from_slice(g.d_x.data());
        output(d_a, p.num_groups() * p.num_coeffs(), "d_a")?.copy_from_slice(g.d_a.data());
        output(d_b, p.num_groups() * p.den_coeffs(), "d_b")?.copy_from_slice(g.d_b.data());
        Ok(())
    })
}

/// Backward pass. Writes the input gradient (`batch * seq * feature_dim`)
/// and the coefficient gradients (`num_groups * num_coeffs` and
/// `num_groups * den_coeffs`). `workers == 0` uses the default pool.
///
/// # Safety
/// `h` must be a live handle and every pointer valid for its length.
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_backward_f32(
    h: *const GrkanRational,
    x: *const f32,
    upstream: *const f32,
    batch: usize,
    seq: usize,
    strategy: GrkanStrategy,
    block_size: usize,
    workers: usize,
    d_x: *mut f32,
    d_a: *mut f32,
    d_b: *mut f32,
) -> GrkanStatus {
    backward_in(h, |h| &h.params32, x, upstream, batch, seq, strategy, block_size, workers, d_x, d_a, d_b)
}

/// # Safety
/// As [`grkan_rational_backward_f32`].
#[no_mangle]
pub unsafe extern "C" fn grkan_rational_backward_f64(
    h: *const GrkanRational,
    x: *const f64,
    upstream: *const f64,
    batch: usize,
    seq: usize,
    strategy: GrkanStrategy,
    block_size: usize,
    workers: usize,
    d_x: *mut f64,
    d_a: *mut f64,
    d_b: *mut f64,
) -> GrkanStatus {
    backward_in(h, |h| &h.params64, x, upstream, batch, seq, strategy, block_size, workers, d_x, d_a, d_b)
}

/// Predicted global accesses of the naive strategy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grkan_predict_accesses_naive(
    batch: u64,
    seq: u64,
    dim: u64,
    coeffs: u64,
    out: *mut u64,
) -> GrkanStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = predict_accesses_naive(batch, seq, dim, coeffs)?;
        Ok(())
    })
}

/// Predicted global accesses of the blocked strategy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grkan_predict_accesses_blocked(
    batch: u64,
    seq: u64,
    dim: u64,
    block_size: u64,
    group_width: u64,
    coeffs: u64,
    out: *mut u64,
) -> GrkanStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = predict_accesses_blocked(batch, seq, dim, block_size, group_width, coeffs)?;
        Ok(())
    })
}

/// Parameter count and FLOPs of one cost-table row.
///
/// # Safety
/// `cfg` must be readable; `params` and `flops` writable.
#[no_mangle]
pub unsafe extern "C" fn grkan_flops(
    kind: GrkanLayerKind,
    cfg: *const GrkanFlopsConfig,
    params: *mut u64,
    flops: *mut u64,
) -> GrkanStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let params = params.as_mut().ok_or_else(|| null("params"))?;
        let flops = flops.as_mut().ok_or_else(|| null("flops"))?;
        let row = match kind {
            GrkanLayerKind::Mlp => FlopsRow::Mlp,
            GrkanLayerKind::Kan => FlopsRow::Kan,
            GrkanLayerKind::Grkan => FlopsRow::Grkan,
        };
        let fc = FlopsConfig {
            d_in: c.d_in,
            d_out: c.d_out,
            func_flops: c.func_flops,
            spline_order: c.spline_order,
            intervals: c.intervals,
            m: c.m,
            n: c.n,
            groups: c.groups,
        };
        let counts = cmd_flops(row, &fc)?;
        *params = counts.params;
        *flops = counts.flops;
        Ok(())
    })
}
