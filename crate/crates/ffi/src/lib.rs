//! C ABI over the `surgplan` crate.
//!
//! Every fallible function returns an [`SpStatus`]; on failure a message is
//! kept per thread and can be read with [`sp_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use surgplan::envs::{Action, EnvKind, SurgEnv, OBS_CHANNELS, OBS_SIZE};
use surgplan::harness::{evaluate, gradcheck, EvalSpec, Layouts};
use surgplan::nets::{ActorCritic, Checkpoint};
use surgplan::tokens::TokenProvider;
use surgplan::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Checkpoint = 5,
    EpisodeDone = 6,
    Numeric = 7,
    GradCheckFailed = 8,
    Internal = 9,
    Panic = 10,
}

/// Outcome of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpStepResult {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Tool column after the step.
    pub tool_x: u32,
    /// Tool row after the step.
    pub tool_y: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpEvalReport {
    pub episodes: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_episode_length: f64,
}

/// An environment instance.
pub struct SpEnv {
    env: SurgEnv,
}

/// A policy loaded from a checkpoint.
pub struct SpPolicy {
    checkpoint: Checkpoint,
    model: ActorCritic,
    hash: String,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => SpStatus::Io,
            Error::Checkpoint { .. } | Error::Json(_) => SpStatus::Checkpoint,
            Error::EpisodeDone => SpStatus::EpisodeDone,
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => SpStatus::Numeric,
            Error::GradCheck { .. } => SpStatus::GradCheckFailed,
            Error::Config(_)
            | Error::UnknownName { .. }
            | Error::Shape { .. }
            | Error::UnknownParameter(_) => SpStatus::InvalidArgument,
            _ => SpStatus::Internal,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: SpStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn call(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SpStatus::Ok, String::new()),
        Ok(Err(Failure(code, msg))) => (code, msg),
        Err(_) => (SpStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(SpStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn arg_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(SpStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SpStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SpStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    want: usize,
    name: &str,
) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(fail(SpStatus::NullArgument, format!("`{name}` is null")));
    }
    if len < want {
        return Err(fail(
            SpStatus::BufferTooSmall,
            format!("`{name}` holds {len}, need {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

/// Copies `s` plus a NUL into `buf` (truncating); returns the full size needed.
unsafe fn write_c_string(s: &str, buf: *mut c_char, cap: usize) -> usize {
    let bytes = s.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len() + 1
}

/// Number of `f64` values in one rendered observation (channels × height × width).
#[no_mangle]
pub extern "C" fn sp_observation_len() -> usize {
    OBS_CHANNELS * OBS_SIZE * OBS_SIZE
}

/// Number of discrete actions; action ids are `0..sp_action_count()`.
#[no_mangle]
pub extern "C" fn sp_action_count() -> u32 {
    Action::COUNT as u32
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the buffer size needed including the terminating NUL; a return of
/// 1 means no error is recorded.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| write_c_string(&e.borrow(), buf, cap))
}

/// Creates an environment by name (`deflect`, `reach`, `cut`, `thread`, `place`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_env_new(
    name: *const c_char,
    shaping: bool,
    out: *mut *mut SpEnv,
) -> SpStatus {
    call(|| {
        let out = arg_mut(out, "out")?;
        let kind: EnvKind = text(name, "name")?.parse()?;
        *out = Box::into_raw(Box::new(SpEnv {
            env: SurgEnv::new(kind, shaping),
        }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must be null or come from [`sp_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_env_free(env: *mut SpEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts an episode and writes the first observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_env_reset(
    env: *mut SpEnv,
    seed: u64,
    obs: *mut f64,
    obs_len: usize,
) -> SpStatus {
    call(|| {
        let env = arg_mut(env, "env")?;
        let dst = out_slice(obs, obs_len, sp_observation_len(), "obs")?;
        let (o, _) = env.env.reset(seed);
        dst.copy_from_slice(o.data());
        Ok(())
    })
}

/// Writes the current episode's target sequence (object indices in order).
///
/// # Safety
/// `env` must be a live handle; `targets` valid for `cap` values; `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_env_targets(
    env: *const SpEnv,
    targets: *mut u32,
    cap: usize,
    len: *mut usize,
) -> SpStatus {
    call(|| {
        let env = arg(env, "env")?;
        let len = arg_mut(len, "len")?;
        if !env.env.has_episode() {
            return Err(fail(
                SpStatus::InvalidArgument,
                "no episode; call sp_env_reset first",
            ));
        }
        let seq = &env.env.instruction().target_sequence;
        *len = seq.len();
        if targets.is_null() {
            return Err(fail(SpStatus::NullArgument, "`targets` is null"));
        }
        if cap < seq.len() {
            return Err(fail(
                SpStatus::BufferTooSmall,
                format!("`targets` holds {cap}, need {}", seq.len()),
            ));
        }
        for (i, &t) in seq.iter().enumerate() {
            *targets.add(i) = t as u32;
        }
        Ok(())
    })
}

/// Applies one action and writes the next observation.
///
/// # Safety
/// `env` must be a live handle; `obs` valid for `obs_len` doubles; `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_env_step(
    env: *mut SpEnv,
    action: u32,
    obs: *mut f64,
    obs_len: usize,
    result: *mut SpStepResult,
) -> SpStatus {
    call(|| {
        let env = arg_mut(env, "env")?;
        let result = arg_mut(result, "result")?;
        let dst = out_slice(obs, obs_len, sp_observation_len(), "obs")?;
        let action = Action::from_index(action as usize).ok_or_else(|| {
            fail(
                SpStatus::InvalidArgument,
                format!("action {action} out of range"),
            )
        })?;
        if !env.env.has_episode() {
            return Err(fail(
                SpStatus::InvalidArgument,
                "no episode; call sp_env_reset first",
            ));
        }
        let r = env.env.step(action)?;
        dst.copy_from_slice(r.observation.data());
        *result = SpStepResult {
            reward: r.reward,
            done: r.done,
            success: r.success,
            tool_x: r.info.tool_cell.x as u32,
            tool_y: r.info.tool_cell.y as u32,
        };
        Ok(())
    })
}

/// Loads and validates a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_policy_load(path: *const c_char, out: *mut *mut SpPolicy) -> SpStatus {
    call(|| {
        let out = arg_mut(out, "out")?;
        let checkpoint = Checkpoint::load(Path::new(text(path, "path")?))?;
        let model = checkpoint.to_model()?;
        let hash = checkpoint.hash();
        *out = Box::into_raw(Box::new(SpPolicy {
            checkpoint,
            model,
            hash,
        }));
        Ok(())
    })
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must be null or come from [`sp_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_policy_free(policy: *mut SpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Copies the checkpoint's content hash (64 hex digits) into `buf`.
///
/// # Safety
/// `policy` must be a live handle; `buf` valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sp_policy_hash(
    policy: *const SpPolicy,
    buf: *mut c_char,
    cap: usize,
) -> SpStatus {
    call(|| {
        let policy = arg(policy, "policy")?;
        if buf.is_null() {
            return Err(fail(SpStatus::NullArgument, "`buf` is null"));
        }
        let need = write_c_string(&policy.hash, buf, cap);
        if need > cap {
            return Err(fail(
                SpStatus::BufferTooSmall,
                format!("`buf` holds {cap}, need {need}"),
            ));
        }
        Ok(())
    })
}

/// Writes the action distribution for one observation and token vector.
///
/// # Safety
/// `policy` must be a live handle; `obs` valid for `obs_len`, `tokens` for
/// `tokens_len` and `probs` for `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_policy_action_probs(
    policy: *const SpPolicy,
    obs: *const f64,
    obs_len: usize,
    tokens: *const f64,
    tokens_len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> SpStatus {
    call(|| {
        let policy = arg(policy, "policy")?;
        let cfg = policy.model.config();
        if obs.is_null() || tokens.is_null() {
            return Err(fail(SpStatus::NullArgument, "`obs` or `tokens` is null"));
        }
        if obs_len != cfg.obs_len() || tokens_len != cfg.token_dim {
            return Err(fail(
                SpStatus::InvalidArgument,
                format!(
                    "expected {} observation and {} token values",
                    cfg.obs_len(),
                    cfg.token_dim
                ),
            ));
        }
        let dst = out_slice(probs, probs_len, cfg.num_actions, "probs")?;
        let o = surgplan::mathcore::Tensor::from_vec(
            &[cfg.obs_channels, cfg.obs_size, cfg.obs_size],
            std::slice::from_raw_parts(obs, obs_len).to_vec(),
        )?;
        let embedding = policy.model.encode(&o)?;
        let state = surgplan::nets::concat_state(
            std::slice::from_raw_parts(tokens, tokens_len),
            &embedding,
            cfg,
        )?;
        let (_, log_probs) = policy.model.actor_forward(&state)?;
        for (d, l) in dst.iter_mut().zip(log_probs) {
            *d = l.exp();
        }
        Ok(())
    })
}

/// Evaluates the policy on its training task and token provider with sampled
/// actions on the evaluation stream `seed`.
///
/// # Safety
/// `policy` must be a live handle; `report` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_policy_evaluate(
    policy: *const SpPolicy,
    episodes: usize,
    seed: u64,
    report: *mut SpEvalReport,
) -> SpStatus {
    call(|| {
        let policy = arg(policy, "policy")?;
        let report = arg_mut(report, "report")?;
        let cfg = &policy.checkpoint.config;
        let provider = TokenProvider::new(cfg.tokens.clone(), cfg.net.token_dim)?;
        let spec = EvalSpec {
            env: cfg.env,
            shaping: cfg.shaping,
            episodes,
            seed,
            layouts: Layouts::Varied,
        };
        let r = evaluate(&policy.model, &spec, &provider)?;
        *report = SpEvalReport {
            episodes: r.episodes as u64,
            successes: r.successes as u64,
            success_rate: r.success_rate,
            mean_return: r.mean_return,
            mean_episode_length: r.mean_episode_length,
        };
        Ok(())
    })
}

/// Runs the finite-difference gradient check. Returns `SP_STATUS_OK` on pass
/// and `SP_STATUS_GRAD_CHECK_FAILED` otherwise; `max_rel_err` is written either way.
///
/// # Safety
/// `max_rel_err` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_gradcheck(seed: u64, max_rel_err: *mut f64) -> SpStatus {
    call(|| {
        let out = arg_mut(max_rel_err, "max_rel_err")?;
        let report = gradcheck(seed)?;
        *out = report.max_rel_err();
        report.into_result().map(|_| ()).map_err(Failure::from)
    })
}
