//! C ABI for natsched.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load`/`*_from_json`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns a [`NatStatus`]; on failure a message for the calling
//! thread is available from [`nat_last_error`]. Panics never cross the
//! boundary and are reported as `NAT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, size_t};
use natsched::predictor::{OraclePredictor, Predictor, TrainableModel};
use natsched::rng::{self, label};
use natsched::sampler::{generate, SelectionPolicy};
use natsched::strategy::{
    beta_density, deserialize_schedule, heuristic_schedule, project_schedule, serialize_schedule, GenerationSchedule,
    HeuristicParams, TrainingStrategy,
};
use natsched::toyworld::{exact_conditional, joint_prob_full, make_chain, GroundTruthChain};
use natsched::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Panic = 5,
}

/// Ground-truth Markov chain.
pub struct NatChain(GroundTruthChain);

/// Generation schedule.
pub struct NatSchedule(GenerationSchedule);

/// Trained predictor.
pub struct NatModel(TrainableModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NatStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            e if e.is_config_error() => NatStatus::Config,
            Error::InvalidArgument(_)
            | Error::TokenOutOfRange { .. }
            | Error::ClassOutOfRange { .. }
            | Error::ShapeMismatch(_)
            | Error::NotMasked(_)
            | Error::MaskedInput
            | Error::ScheduleMismatch { .. }
            | Error::EnumerationGuard { .. } => NatStatus::InvalidArgument,
            _ => NatStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NatStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> NatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NatStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NatStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(NatStatus::InvalidArgument, format!("{what}: {e}")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from a natsched function returning an owned string, or be null.
#[no_mangle]
pub unsafe extern "C" fn nat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the class-conditional chain with `k` tokens, length `n` and `c`
/// classes from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nat_chain_new(k: size_t, n: size_t, c: size_t, seed: u64, out: *mut *mut NatChain) -> NatStatus {
    guard(|| put(out, NatChain(make_chain(k, n, c, seed)?)))
}

/// # Safety
/// `chain` must come from [`nat_chain_new`] and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn nat_chain_free(chain: *mut NatChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Probability of the complete sequence `tokens[0..len]` under `class`.
///
/// # Safety
/// `chain` must be a live handle, `tokens` must point to `len` values and
/// `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn nat_chain_joint_prob(
    chain: *const NatChain,
    class: size_t,
    tokens: *const size_t,
    len: size_t,
    out: *mut f64,
) -> NatStatus {
    guard(|| {
        let chain = &deref(chain, "chain")?.0;
        if tokens.is_null() || out.is_null() {
            return Err(null("tokens or out"));
        }
        let seq = std::slice::from_raw_parts(tokens, len);
        *out = joint_prob_full(chain, class, seq)?;
        Ok(())
    })
}

/// Exact conditional distribution of position `pos` given the observed
/// entries of `tokens` (negative values are masks). Writes `K` probabilities.
///
/// # Safety
/// `chain` must be a live handle, `tokens` must point to `len` values and
/// `out_probs` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nat_chain_exact_conditional(
    chain: *const NatChain,
    class: size_t,
    tokens: *const i64,
    len: size_t,
    pos: size_t,
    out_probs: *mut f64,
    out_len: size_t,
) -> NatStatus {
    guard(|| {
        let chain = &deref(chain, "chain")?.0;
        if tokens.is_null() || out_probs.is_null() {
            return Err(null("tokens or out_probs"));
        }
        if out_len < chain.k {
            return Err(Failure(NatStatus::InvalidArgument, format!("output holds {out_len} values, need {}", chain.k)));
        }
        let partial: Vec<Option<usize>> =
            std::slice::from_raw_parts(tokens, len).iter().map(|&t| usize::try_from(t).ok()).collect();
        let probs = exact_conditional(chain, class, &partial, pos)?;
        std::slice::from_raw_parts_mut(out_probs, chain.k).copy_from_slice(&probs);
        Ok(())
    })
}

/// Heuristic schedule with `steps` steps for sequences of length `n`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_heuristic(
    steps: size_t,
    n: size_t,
    lambda: f64,
    k: f64,
    out: *mut *mut NatSchedule,
) -> NatStatus {
    guard(|| {
        let params = HeuristicParams { lambda, k };
        params.validate()?;
        put(out, NatSchedule(heuristic_schedule(steps, n, params)?))
    })
}

/// Parses and validates a schedule JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_from_json(json: *const c_char, out: *mut *mut NatSchedule) -> NatStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        put(out, NatSchedule(deserialize_schedule(text)?))
    })
}

/// Serializes a schedule; free the result with [`nat_string_free`].
///
/// # Safety
/// `sched` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_to_json(sched: *const NatSchedule, out: *mut *mut c_char) -> NatStatus {
    guard(|| {
        let sched = &deref(sched, "schedule")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = serialize_schedule(sched)?;
        *out = CString::new(text).map_err(|e| Failure(NatStatus::Runtime, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Number of decoding steps of a schedule.
///
/// # Safety
/// `sched` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_steps(sched: *const NatSchedule, out: *mut size_t) -> NatStatus {
    guard(|| {
        let sched = &deref(sched, "schedule")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = sched.steps;
        Ok(())
    })
}

/// Projects a schedule onto the valid set for length `n` as a new handle.
///
/// # Safety
/// `sched` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_project(sched: *const NatSchedule, n: size_t, out: *mut *mut NatSchedule) -> NatStatus {
    guard(|| {
        let sched = &deref(sched, "schedule")?.0;
        if n < sched.steps {
            return Err(Failure(NatStatus::InvalidArgument, format!("{} steps cannot fit length {n}", sched.steps)));
        }
        put(out, NatSchedule(project_schedule(sched, n)))
    })
}

/// # Safety
/// `sched` must come from a natsched constructor and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn nat_schedule_free(sched: *mut NatSchedule) {
    if !sched.is_null() {
        drop(Box::from_raw(sched));
    }
}

/// Loads a binary checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nat_model_load(path: *const c_char, out: *mut *mut NatModel) -> NatStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, NatModel(TrainableModel::load(Path::new(path), None)?))
    })
}

/// # Safety
/// `model` must come from [`nat_model_load`] and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn nat_model_free(model: *mut NatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn generate_into<P: Predictor + ?Sized>(
    predictor: &P,
    sched: *const NatSchedule,
    class: i64,
    seed: u64,
    out_tokens: *mut size_t,
    len: size_t,
) -> Result<(), Failure> {
    let sched = &deref(sched, "schedule")?.0;
    if out_tokens.is_null() {
        return Err(null("out_tokens"));
    }
    if len != predictor.seq_len() {
        return Err(Failure(NatStatus::InvalidArgument, format!("buffer holds {len} tokens, sequences have {}", predictor.seq_len())));
    }
    let mut g = rng::stream(seed, &[label::GENERATE]);
    let class = usize::try_from(class).ok();
    let seq = generate(predictor, sched, class, &SelectionPolicy::Confidence, &mut g)?;
    std::slice::from_raw_parts_mut(out_tokens, len).copy_from_slice(&seq);
    Ok(())
}

/// Decodes one sequence with the exact oracle of `chain`; a negative `class`
/// selects the unconditional mixture.
///
/// # Safety
/// Handles must be live and `out_tokens` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn nat_generate_oracle(
    chain: *const NatChain,
    sched: *const NatSchedule,
    class: i64,
    seed: u64,
    out_tokens: *mut size_t,
    len: size_t,
) -> NatStatus {
    guard(|| {
        let oracle = OraclePredictor::new(deref(chain, "chain")?.0.clone());
        generate_into(&oracle, sched, class, seed, out_tokens, len)
    })
}

/// Decodes one sequence with a trained model; a negative `class` selects the
/// null class.
///
/// # Safety
/// Handles must be live and `out_tokens` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn nat_generate_model(
    model: *const NatModel,
    sched: *const NatSchedule,
    class: i64,
    seed: u64,
    out_tokens: *mut size_t,
    len: size_t,
) -> NatStatus {
    guard(|| generate_into(&deref(model, "model")?.0, sched, class, seed, out_tokens, len))
}

/// Beta(`alpha`, `beta`) density at `r`.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn nat_beta_density(r: f64, alpha: f64, beta: f64, out: *mut f64) -> NatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = beta_density(r, TrainingStrategy { alpha, beta })?;
        Ok(())
    })
}
