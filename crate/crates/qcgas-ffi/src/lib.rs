//! C ABI for the qcgas toolkit.
//!
//! Handles are opaque pointers owned by this library; every constructor has
//! a matching `_free`. Functions return [`QcgStatus`]; on any non-OK status
//! the thread-local message from [`qcg_last_error`] describes the failure.
//! No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use qcgas::convergence::epsilon1;
use qcgas::ensemble::{
    correlation, dilute_correlation, dilute_partition_function, partition_function,
    EnsembleParams, MethodPolicy,
};
use qcgas::error::Error;
use qcgas::geometry::{Configuration, CubePartition, SimBox};
use qcgas::potential::{EnergyModel, IdealGas, PairPotential};

/// Status codes: 0 success, 1 invalid input, 2 numerical rejection,
/// 3 null argument, 4 internal panic.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcgStatus {
    Ok = 0,
    Invalid = 1,
    Numerical = 2,
    NullArgument = 3,
    Panic = 4,
}

/// Superstability constants at one cube edge.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcgStabilityConstants {
    pub edge: f64,
    /// In-cube repulsion infimum b(a) (NaN when not derived via pairs).
    pub b: f64,
    /// Upper bound on the lattice attraction sum (NaN when not applicable).
    pub upsilon0: f64,
    pub big_a: f64,
    pub big_b: f64,
    pub m: u32,
}

/// Opaque two-body potential handle.
pub struct QcgPotential {
    inner: PairPotential,
}

/// Opaque ensemble handle: box, fugacity, temperature, energy model.
pub struct QcgEnsemble {
    params: EnsembleParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> QcgStatus {
    match err {
        Error::Invalid(_) => QcgStatus::Invalid,
        Error::Numerical(_) => QcgStatus::Numerical,
    }
}

/// Runs a fallible body, translating errors and panics into status codes.
fn guarded<F>(body: F) -> QcgStatus
where
    F: FnOnce() -> Result<(), (QcgStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => QcgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QcgStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (QcgStatus, String) {
    (status_of(&e), e.to_string())
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qcg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (QcgStatus, String)> {
    if out.is_null() {
        return Err((QcgStatus::NullArgument, "output pointer is null".into()));
    }
    unsafe { out.write(value) };
    Ok(())
}

fn make_potential(
    out: *mut *mut QcgPotential,
    build: impl FnOnce() -> qcgas::Result<PairPotential>,
) -> QcgStatus {
    guarded(|| {
        if out.is_null() {
            return Err((QcgStatus::NullArgument, "output pointer is null".into()));
        }
        let pot = build().map_err(lib_err)?;
        let handle = Box::into_raw(Box::new(QcgPotential { inner: pot }));
        unsafe { out.write(handle) };
        Ok(())
    })
}

/// `φ(r) = φ₀ / r^s`, purely repulsive.
#[no_mangle]
pub extern "C" fn qcg_potential_inverse_power(
    dim: usize,
    phi0: f64,
    s: f64,
    out: *mut *mut QcgPotential,
) -> QcgStatus {
    make_potential(out, || PairPotential::inverse_power(dim, phi0, s))
}

/// `+∞` below the diameter `sigma`, 0 beyond.
#[no_mangle]
pub extern "C" fn qcg_potential_hard_core(
    dim: usize,
    sigma: f64,
    out: *mut *mut QcgPotential,
) -> QcgStatus {
    make_potential(out, || PairPotential::hard_core(dim, sigma))
}

/// Hard core of diameter `sigma` with a square well of the given depth out
/// to `range`.
#[no_mangle]
pub extern "C" fn qcg_potential_hard_core_plus_well(
    dim: usize,
    sigma: f64,
    depth: f64,
    range: f64,
    out: *mut *mut QcgPotential,
) -> QcgStatus {
    make_potential(out, || PairPotential::hard_core_plus_well(dim, sigma, depth, range))
}

/// `φ(r) = φ₀/r^s − φ₁ e^{−κ r}`.
#[no_mangle]
pub extern "C" fn qcg_potential_power_core_exp_tail(
    dim: usize,
    phi0: f64,
    s: f64,
    phi1: f64,
    kappa: f64,
    out: *mut *mut QcgPotential,
) -> QcgStatus {
    make_potential(out, || PairPotential::power_core_exp_tail(dim, phi0, s, phi1, kappa))
}

/// Frees a potential handle; a null pointer is a no-op.
///
/// # Safety
/// `pot` must be a pointer previously returned by a `qcg_potential_*`
/// constructor and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qcg_potential_free(pot: *mut QcgPotential) {
    if !pot.is_null() {
        drop(unsafe { Box::from_raw(pot) });
    }
}

/// φ(r), with `+∞` encoding the hard core.
///
/// # Safety
/// `pot` must be a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_phi(pot: *const QcgPotential, r: f64, out: *mut f64) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        unsafe { write_out(out, pot.inner.phi(r)) }
    })
}

/// In-cube repulsion infimum b(a).
///
/// # Safety
/// `pot` must be a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_b_of_a(
    pot: *const QcgPotential,
    a: f64,
    out: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        let b = pot.inner.b_of_a(a).map_err(lib_err)?;
        unsafe { write_out(out, b) }
    })
}

/// Truncated attraction lattice sum υ_ε(a) and its tail bound.
///
/// # Safety
/// `pot` must be a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_upsilon_eps(
    pot: *const QcgPotential,
    a: f64,
    eps: f64,
    cutoff: usize,
    value: *mut f64,
    error: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        let est = pot.inner.upsilon_eps(a, eps, cutoff).map_err(lib_err)?;
        unsafe { write_out(value, est.value)? };
        unsafe { write_out(error, est.error) }
    })
}

/// Strong-superstability constants A(a) = (b − 2υ₀)/4, B(a) = υ₀/2, m = 2.
///
/// # Safety
/// `pot` must be a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_sss_constants(
    pot: *const QcgPotential,
    a: f64,
    out: *mut QcgStabilityConstants,
) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        let c = pot.inner.sss_constants(a).map_err(lib_err)?;
        unsafe {
            write_out(
                out,
                QcgStabilityConstants {
                    edge: c.edge,
                    b: c.b.unwrap_or(f64::NAN),
                    upsilon0: c.upsilon0.unwrap_or(f64::NAN),
                    big_a: c.big_a,
                    big_b: c.big_b,
                    m: c.m,
                },
            )
        }
    })
}

/// Smallest root of `δ·b(a)/4 − υ₀(a)/2 = 0`.
///
/// # Safety
/// `pot` must be a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_find_a_star(
    pot: *const QcgPotential,
    delta: f64,
    out: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        let a = pot.inner.find_a_star(delta).map_err(lib_err)?;
        unsafe { write_out(out, a) }
    })
}

/// Pair energy of `n_points` points packed as `dim`-major coordinates.
///
/// # Safety
/// `pot` must be a live handle and `coords` must point to
/// `n_points * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn qcg_pair_energy(
    pot: *const QcgPotential,
    coords: *const f64,
    n_points: usize,
    out: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let pot = unsafe { pot.as_ref() }
            .ok_or((QcgStatus::NullArgument, "potential handle is null".to_string()))?;
        if coords.is_null() && n_points > 0 {
            return Err((QcgStatus::NullArgument, "coordinate pointer is null".into()));
        }
        let dim = pot.inner.dim();
        let slice = unsafe { std::slice::from_raw_parts(coords, n_points * dim) };
        unsafe { write_out(out, pot.inner.energy_flat(dim, slice)) }
    })
}

/// Builds an ensemble over the box `Π [0, sides_i)`. A null potential means
/// the ideal gas. `stability_b` is the constant in `U ≥ −B|γ|` used by the
/// truncation tails (0 is valid for nonnegative interactions).
///
/// # Safety
/// `sides` must point to `dim` doubles; `pot`, when non-null, must be a
/// live potential handle (it is copied, not consumed).
#[no_mangle]
pub unsafe extern "C" fn qcg_ensemble_new(
    pot: *const QcgPotential,
    dim: usize,
    sides: *const f64,
    z: f64,
    beta: f64,
    stability_b: f64,
    out: *mut *mut QcgEnsemble,
) -> QcgStatus {
    guarded(|| {
        if sides.is_null() {
            return Err((QcgStatus::NullArgument, "sides pointer is null".into()));
        }
        if out.is_null() {
            return Err((QcgStatus::NullArgument, "output pointer is null".into()));
        }
        let sides = unsafe { std::slice::from_raw_parts(sides, dim) }.to_vec();
        let sim_box = SimBox::new(sides).map_err(lib_err)?;
        let model: Arc<dyn EnergyModel> = match unsafe { pot.as_ref() } {
            Some(p) => {
                if p.inner.dim() != dim {
                    return Err((
                        QcgStatus::Invalid,
                        format!(
                            "potential dimension {} does not match the box dimension {dim}",
                            p.inner.dim()
                        ),
                    ));
                }
                Arc::new(p.inner.clone())
            }
            None => Arc::new(IdealGas),
        };
        let params =
            EnsembleParams::new(z, beta, sim_box, model, stability_b).map_err(lib_err)?;
        let handle = Box::into_raw(Box::new(QcgEnsemble { params }));
        unsafe { out.write(handle) };
        Ok(())
    })
}

/// Frees an ensemble handle; a null pointer is a no-op.
///
/// # Safety
/// `ens` must be a pointer previously returned by [`qcg_ensemble_new`] and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qcg_ensemble_free(ens: *mut QcgEnsemble) {
    if !ens.is_null() {
        drop(unsafe { Box::from_raw(ens) });
    }
}

fn policy_for(tolerance: f64) -> MethodPolicy {
    MethodPolicy { tolerance, ..Default::default() }
}

/// Z (when `a_dilute <= 0`) or the dilute Z⁻ at cube edge `a_dilute`, with
/// the total error bound (discretization plus truncation tail).
///
/// # Safety
/// `ens` must be a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_partition_function(
    ens: *const QcgEnsemble,
    a_dilute: f64,
    seed: u64,
    tolerance: f64,
    value: *mut f64,
    error: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let ens = unsafe { ens.as_ref() }
            .ok_or((QcgStatus::NullArgument, "ensemble handle is null".to_string()))?;
        let policy = policy_for(tolerance);
        let est = if a_dilute > 0.0 {
            let part =
                CubePartition::new(ens.params.sim_box.clone(), a_dilute).map_err(lib_err)?;
            dilute_partition_function(&ens.params, &part, &policy, seed).map_err(lib_err)?
        } else {
            partition_function(&ens.params, &policy, seed).map_err(lib_err)?
        };
        unsafe { write_out(value, est.value)? };
        unsafe { write_out(error, est.error) }
    })
}

/// ρ(η) (when `a_dilute <= 0`) or ρ⁻(η) at cube edge `a_dilute`, for η
/// given as `n_eta` points of `dim` coordinates each.
///
/// # Safety
/// `ens` must be a live ensemble handle and `eta` must point to
/// `n_eta * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn qcg_correlation(
    ens: *const QcgEnsemble,
    eta: *const f64,
    n_eta: usize,
    a_dilute: f64,
    seed: u64,
    tolerance: f64,
    value: *mut f64,
    error: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let ens = unsafe { ens.as_ref() }
            .ok_or((QcgStatus::NullArgument, "ensemble handle is null".to_string()))?;
        if eta.is_null() && n_eta > 0 {
            return Err((QcgStatus::NullArgument, "eta pointer is null".into()));
        }
        let dim = ens.params.sim_box.dim();
        let eta = if n_eta == 0 {
            Configuration::empty(dim)
        } else {
            let coords = unsafe { std::slice::from_raw_parts(eta, n_eta * dim) }.to_vec();
            Configuration::new(dim, coords).map_err(lib_err)?
        };
        let policy = policy_for(tolerance);
        let est = if a_dilute > 0.0 {
            let part =
                CubePartition::new(ens.params.sim_box.clone(), a_dilute).map_err(lib_err)?;
            dilute_correlation(&ens.params, &eta, &part, &policy, seed).map_err(lib_err)?
        } else {
            correlation(&ens.params, &eta, &policy, seed).map_err(lib_err)?
        };
        unsafe { write_out(value, est.value)? };
        unsafe { write_out(error, est.error) }
    })
}

/// The per-cube multiple-occupancy series ε₁(a) with the model's own edge
/// constants, plus its tail bound.
///
/// # Safety
/// `ens` must be a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn qcg_epsilon1(
    ens: *const QcgEnsemble,
    a: f64,
    cutoff: usize,
    value: *mut f64,
    error: *mut f64,
) -> QcgStatus {
    guarded(|| {
        let ens = unsafe { ens.as_ref() }
            .ok_or((QcgStatus::NullArgument, "ensemble handle is null".to_string()))?;
        let edge = ens.params.model.edge_constants(a, cutoff).map_err(lib_err)?;
        let est = epsilon1(
            ens.params.sim_box.dim(),
            a,
            ens.params.z,
            ens.params.beta,
            &edge.constants,
            edge.upsilon_star,
            32,
        )
        .map_err(lib_err)?;
        unsafe { write_out(value, est.value)? };
        unsafe { write_out(error, est.error) }
    })
}
