//! C ABI over the `sambo` core.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`SamboStatus`]; on failure the message is kept per thread and can be read
//! with [`sambo_last_error`]. Arrays are row-major with explicit lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sambo::env::{build_grid, make_biased_model, BiasKind, BiasSpec, GridSpec, Placement};
use sambo::mdp::{
    expected_return, kl_policies, occupancy, optimal_deterministic, policy_evaluate,
    DEFAULT_TRUNCATION_TOL,
};
use sambo::sar::{translate_reward, SarConfig};
use sambo::verify::check_theorem1;
use sambo::{Error, Kernel, SoftmaxPolicy, TabularMdp};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    SupportViolation = 4,
    EnumerationTooLarge = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
    Other = 9,
}

/// Direction of a biased grid model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamboBias {
    Overestimating = 0,
    Underestimating = 1,
}

/// Finite discounted MDP.
pub struct SamboMdp {
    inner: TabularMdp,
}

/// Transition kernel, e.g. a learned or biased model.
pub struct SamboKernel {
    inner: Kernel,
}

/// Tabular softmax policy.
pub struct SamboPolicy {
    inner: SoftmaxPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SamboStatus {
    match err {
        Error::InvalidInput(_) | Error::EmptyDataset(_) => SamboStatus::InvalidInput,
        Error::Shape(_) => SamboStatus::ShapeMismatch,
        Error::SupportViolation { .. } => SamboStatus::SupportViolation,
        Error::EnumerationTooLarge { .. } => SamboStatus::EnumerationTooLarge,
        Error::Config(_) | Error::Schema(_) => SamboStatus::Config,
        Error::Io { .. } => SamboStatus::Io,
        _ => SamboStatus::Other,
    }
}

struct Fail(SamboStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SamboStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SamboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SamboStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic inside sambo".into());
            SamboStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            SamboStatus::ShapeMismatch,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sambo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build an MDP from a `[S][A][S]` kernel, `[S][A]` reward and `[S]` start law.
///
/// # Safety
/// Each array must hold the stated number of readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_mdp_new(
    n_states: usize,
    n_actions: usize,
    kernel: *const f64,
    reward: *const f64,
    mu0: *const f64,
    gamma: f64,
    out: *mut *mut SamboMdp,
) -> SamboStatus {
    guard(|| {
        let n = n_states
            .checked_mul(n_actions)
            .ok_or_else(|| Fail(SamboStatus::InvalidInput, "table size overflows".into()))?;
        let k = Kernel::new(n_states, n_actions, slice(kernel, n * n_states, "kernel")?.to_vec())?;
        let mdp = TabularMdp::new(
            k,
            slice(reward, n, "reward")?.to_vec(),
            slice(mu0, n_states, "mu0")?.to_vec(),
            gamma,
        )?;
        write(out, Box::into_raw(Box::new(SamboMdp { inner: mdp })), "out")
    })
}

/// The default 5-cell grid world.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_grid_default(out: *mut *mut SamboMdp) -> SamboStatus {
    guard(|| {
        let mdp = build_grid(&GridSpec::default())?;
        write(out, Box::into_raw(Box::new(SamboMdp { inner: mdp })), "out")
    })
}

/// A custom grid: `n_placements` reward sites given as parallel arrays.
///
/// # Safety
/// `states` and `rewards` must hold `n_placements` entries; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_grid_new(
    n_cells: usize,
    base_reward: f64,
    gamma: f64,
    states: *const usize,
    rewards: *const f64,
    n_placements: usize,
    out: *mut *mut SamboMdp,
) -> SamboStatus {
    guard(|| {
        let rs = slice(rewards, n_placements, "rewards")?;
        let ss: &[usize] = if n_placements == 0 {
            &[]
        } else if states.is_null() {
            return Err(null("states"));
        } else {
            std::slice::from_raw_parts(states, n_placements)
        };
        let spec = GridSpec {
            n_cells,
            placements: ss
                .iter()
                .zip(rs)
                .map(|(&state, &reward)| Placement { state, reward })
                .collect(),
            base_reward,
            gamma,
        };
        let mdp = build_grid(&spec)?;
        write(out, Box::into_raw(Box::new(SamboMdp { inner: mdp })), "out")
    })
}

/// # Safety
/// `mdp` must come from a `sambo_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sambo_mdp_free(mdp: *mut SamboMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `mdp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sambo_mdp_n_states(mdp: *const SamboMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.inner.n_states())
}

/// Number of actions, or 0 for a null handle.
///
/// # Safety
/// `mdp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sambo_mdp_n_actions(mdp: *const SamboMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.inner.n_actions())
}

/// # Safety
/// `probs` must hold `S*A*S` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_kernel_new(
    n_states: usize,
    n_actions: usize,
    probs: *const f64,
    out: *mut *mut SamboKernel,
) -> SamboStatus {
    guard(|| {
        let n = n_states
            .checked_mul(n_actions)
            .and_then(|n| n.checked_mul(n_states))
            .ok_or_else(|| Fail(SamboStatus::InvalidInput, "table size overflows".into()))?;
        let k = Kernel::new(n_states, n_actions, slice(probs, n, "probs")?.to_vec())?;
        write(out, Box::into_raw(Box::new(SamboKernel { inner: k })), "out")
    })
}

/// Copy of the MDP's true kernel.
///
/// # Safety
/// `mdp` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_mdp_kernel(mdp: *const SamboMdp, out: *mut *mut SamboKernel) -> SamboStatus {
    guard(|| {
        let k = handle(mdp, "mdp")?.inner.kernel().clone();
        write(out, Box::into_raw(Box::new(SamboKernel { inner: k })), "out")
    })
}

/// The MDP's kernel mixed toward an over- or undershooting successor.
///
/// # Safety
/// `mdp` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_biased_model(
    mdp: *const SamboMdp,
    target: usize,
    kind: SamboBias,
    epsilon: f64,
    out: *mut *mut SamboKernel,
) -> SamboStatus {
    guard(|| {
        let spec = BiasSpec {
            kind: match kind {
                SamboBias::Overestimating => BiasKind::Overestimating,
                SamboBias::Underestimating => BiasKind::Underestimating,
            },
            epsilon,
        };
        let k = make_biased_model(handle(mdp, "mdp")?.inner.kernel(), &spec, target)?;
        write(out, Box::into_raw(Box::new(SamboKernel { inner: k })), "out")
    })
}

/// # Safety
/// `kernel` must come from a `sambo_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sambo_kernel_free(kernel: *mut SamboKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Softmax policy from `[S][A]` logits.
///
/// # Safety
/// `logits` must hold `S*A` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_policy_new(
    n_states: usize,
    n_actions: usize,
    logits: *const f64,
    out: *mut *mut SamboPolicy,
) -> SamboStatus {
    guard(|| {
        let n = n_states
            .checked_mul(n_actions)
            .ok_or_else(|| Fail(SamboStatus::InvalidInput, "table size overflows".into()))?;
        let p = SoftmaxPolicy::new(n_states, n_actions, slice(logits, n, "logits")?.to_vec())?;
        write(out, Box::into_raw(Box::new(SamboPolicy { inner: p })), "out")
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_policy_uniform(
    n_states: usize,
    n_actions: usize,
    out: *mut *mut SamboPolicy,
) -> SamboStatus {
    guard(|| {
        if n_states == 0 || n_actions == 0 {
            return Err(Fail(SamboStatus::InvalidInput, "empty policy table".into()));
        }
        let p = SoftmaxPolicy::uniform(n_states, n_actions);
        write(out, Box::into_raw(Box::new(SamboPolicy { inner: p })), "out")
    })
}

/// # Safety
/// `policy` must come from a `sambo_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sambo_policy_free(policy: *mut SamboPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Action probabilities as an `[S][A]` table.
///
/// # Safety
/// `policy` must be live; `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sambo_policy_probs(policy: *const SamboPolicy, out: *mut f64, len: usize) -> SamboStatus {
    guard(|| {
        let p = &handle(policy, "policy")?.inner;
        let na = p.n_actions();
        let dst = out_slice(out, len, p.n_states() * na, "out")?;
        for s in 0..p.n_states() {
            dst[s * na..(s + 1) * na].copy_from_slice(p.probs(s));
        }
        Ok(())
    })
}

/// `V` into `values` (`S` entries) and `Q` into `q` (`S*A` entries). Either
/// output may be null to skip it.
///
/// # Safety
/// Handles must be live; non-null outputs must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sambo_policy_evaluate(
    mdp: *const SamboMdp,
    policy: *const SamboPolicy,
    tol: f64,
    values: *mut f64,
    values_len: usize,
    q: *mut f64,
    q_len: usize,
) -> SamboStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        let ev = policy_evaluate(m, &handle(policy, "policy")?.inner, tol)?;
        if !values.is_null() {
            out_slice(values, values_len, ev.values.len(), "values")?.copy_from_slice(&ev.values);
        }
        if !q.is_null() {
            out_slice(q, q_len, ev.q.len(), "q")?.copy_from_slice(&ev.q);
        }
        Ok(())
    })
}

/// Expected discounted return from the start law.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_expected_return(
    mdp: *const SamboMdp,
    policy: *const SamboPolicy,
    out: *mut f64,
) -> SamboStatus {
    guard(|| {
        let v = expected_return(&handle(mdp, "mdp")?.inner, &handle(policy, "policy")?.inner)?;
        write(out, v, "out")
    })
}

/// Normalized discounted state-action occupancy, `[S][A]`.
///
/// # Safety
/// Handles must be live; `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sambo_occupancy(
    mdp: *const SamboMdp,
    policy: *const SamboPolicy,
    out: *mut f64,
    len: usize,
) -> SamboStatus {
    guard(|| {
        let d = occupancy(
            &handle(mdp, "mdp")?.inner,
            &handle(policy, "policy")?.inner,
            DEFAULT_TRUNCATION_TOL,
        )?;
        out_slice(out, len, d.len(), "out")?.copy_from_slice(&d);
        Ok(())
    })
}

/// Return of the best deterministic policy; its actions go to `actions`
/// when non-null.
///
/// # Safety
/// `mdp` must be live; `out` writable; `actions`, if non-null, holds `len`
/// writable entries.
#[no_mangle]
pub unsafe extern "C" fn sambo_optimal_return(
    mdp: *const SamboMdp,
    out: *mut f64,
    actions: *mut usize,
    len: usize,
) -> SamboStatus {
    guard(|| {
        let (acts, v) = optimal_deterministic(&handle(mdp, "mdp")?.inner)?;
        if !actions.is_null() {
            if len < acts.len() {
                return Err(Fail(SamboStatus::ShapeMismatch, "actions buffer too short".into()));
            }
            std::slice::from_raw_parts_mut(actions, acts.len()).copy_from_slice(&acts);
        }
        write(out, v, "out")
    })
}

/// `Σ_s w(s) KL(π(·|s) ‖ π_b(·|s))`.
///
/// # Safety
/// Handles must be live; `weights` holds `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_kl_policies(
    pi: *const SamboPolicy,
    pi_b: *const SamboPolicy,
    weights: *const f64,
    len: usize,
    out: *mut f64,
) -> SamboStatus {
    guard(|| {
        let v = kl_policies(
            &handle(pi, "pi")?.inner,
            &handle(pi_b, "pi_b")?.inner,
            slice(weights, len, "weights")?,
        )?;
        write(out, v, "out")
    })
}

/// Translated reward `max(floor, r - c (r_max - r_min) + 1e-8)`.
#[no_mangle]
pub extern "C" fn sambo_translate_reward(r: f64, r_max: f64, r_min: f64, c: f64, floor: f64) -> f64 {
    let cfg = SarConfig {
        c,
        floor,
        ..SarConfig::default()
    };
    translate_reward(r, r_max, r_min, &cfg)
}

/// Lower-bound check at horizon `horizon`: writes `lhs - rhs` to `margin`
/// and whether it clears `-tol` to `passed`.
///
/// # Safety
/// Handles must be live; `margin` and `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sambo_check_theorem1(
    mdp: *const SamboMdp,
    q: *const SamboKernel,
    pi: *const SamboPolicy,
    pi_c: *const SamboPolicy,
    horizon: usize,
    tol: f64,
    margin: *mut f64,
    passed: *mut bool,
) -> SamboStatus {
    guard(|| {
        let rep = check_theorem1(
            &handle(mdp, "mdp")?.inner,
            &handle(q, "q")?.inner,
            &handle(pi, "pi")?.inner,
            &handle(pi_c, "pi_c")?.inner,
            horizon,
            tol,
        )?;
        write(margin, rep.worst_margin, "margin")?;
        write(passed, rep.passed, "passed")
    })
}
