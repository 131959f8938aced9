//! C ABI over `cors-core`.
//!
//! Every function returns a status code (`CORS_OK` on success) and writes
//! results through out-pointers. Handles are opaque and owned by the caller
//! once returned; release them with the matching `_free`. After an error,
//! `cors_last_error` describes it for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cors_core::env::{self, Action, GridMap, Scenario, WorldState};
use cors_core::iql::{QStore, Snapshot};
use cors_core::shaping::{shape_transition, Metric, ShapingConfig};
use cors_core::Error;

pub const CORS_OK: i32 = 0;
pub const CORS_ERR_NULL: i32 = 1;
pub const CORS_ERR_PARAM: i32 = 2;
pub const CORS_ERR_GENERATION: i32 = 3;
pub const CORS_ERR_STATE: i32 = 4;
pub const CORS_ERR_FORMAT: i32 = 5;
pub const CORS_ERR_IO: i32 = 6;
pub const CORS_ERR_BUFFER: i32 = 7;
pub const CORS_ERR_PANIC: i32 = 8;
pub const CORS_ERR_OTHER: i32 = 9;

pub const CORS_ACTION_UP: u8 = 0;
pub const CORS_ACTION_DOWN: u8 = 1;
pub const CORS_ACTION_LEFT: u8 = 2;
pub const CORS_ACTION_RIGHT: u8 = 3;
pub const CORS_ACTION_STOP: u8 = 4;

pub const CORS_METRIC_MEAN_ALL: u8 = 0;
pub const CORS_METRIC_EXACT_MAX: u8 = 1;
pub const CORS_METRIC_NEIGHBOR_FACTORED_MAX: u8 = 2;

/// A map with its initial and current world state.
pub struct CorsEnv {
    map: GridMap,
    start: WorldState,
    state: WorldState,
}

/// A greedy policy loaded from a snapshot.
pub struct CorsPolicy {
    q: QStore,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code(e: &Error) -> i32 {
    match e {
        Error::Parameter { .. } | Error::Config(_) => CORS_ERR_PARAM,
        Error::Generation { .. } => CORS_ERR_GENERATION,
        Error::InvalidState(_) => CORS_ERR_STATE,
        Error::MapFormat { .. } | Error::SnapshotFormat(_) | Error::Json(_) | Error::Csv(_) => CORS_ERR_FORMAT,
        Error::Io { .. } => CORS_ERR_IO,
        _ => CORS_ERR_OTHER,
    }
}

fn fail(status: i32, msg: impl Into<String>) -> i32 {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CORS_OK,
        Ok(Err((c, m))) => fail(c, m),
        Err(_) => fail(CORS_ERR_PANIC, "panic inside cors"),
    }
}

trait OrStatus<T> {
    fn status(self) -> Result<T, (i32, String)>;
}

impl<T> OrStatus<T> for Result<T, Error> {
    fn status(self) -> Result<T, (i32, String)> {
        self.map_err(|e| (code(&e), e.to_string()))
    }
}

fn null(what: &str) -> (i32, String) {
    (CORS_ERR_NULL, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (i32, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CORS_ERR_PARAM, format!("{what} is not UTF-8")))
}

unsafe fn actions(p: *const u8, n: usize, expected: usize) -> Result<Vec<Action>, (i32, String)> {
    if p.is_null() {
        return Err(null("actions"));
    }
    if n != expected {
        return Err((CORS_ERR_PARAM, format!("{n} actions for {expected} agents")));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&a| Action::from_index(a as usize).ok_or((CORS_ERR_PARAM, format!("action code {a}"))))
        .collect()
}

fn boxed_env(map: GridMap, state: WorldState, out: *mut *mut CorsEnv) {
    let h = Box::new(CorsEnv {
        map,
        start: state.clone(),
        state,
    });
    // SAFETY: callers check `out` before building the env.
    unsafe { *out = Box::into_raw(h) };
}

/// Builds an environment from scenario JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cors_env_from_scenario_json(json: *const c_char, out: *mut *mut CorsEnv) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sc = Scenario::from_json(text(json, "json")?).status()?;
        let (map, state) = sc.instantiate().status()?;
        boxed_env(map, state, out);
        Ok(())
    })
}

/// Generates a random map with agents placed on it.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cors_env_generate(
    width: u32,
    height: u32,
    density: f64,
    n_agents: u32,
    seed: u64,
    out: *mut *mut CorsEnv,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (w, h) = (width as usize, height as usize);
        let sc = env::generate_scenario(w, h, density, n_agents as usize, seed, env::default_step_limit(w, h)).status()?;
        let (map, state) = sc.instantiate().status()?;
        boxed_env(map, state, out);
        Ok(())
    })
}

/// # Safety
/// `env` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cors_env_free(env: *mut CorsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cors_env_n_agents(env: *const CorsEnv, out: *mut u32) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = env.state.n_agents() as u32;
        Ok(())
    })
}

/// Writes `x0, y0, x1, y1, ...` into `xy`, which holds `len` values.
///
/// # Safety
/// `xy` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn cors_env_positions(env: *const CorsEnv, xy: *mut i32, len: usize) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let pos = env.state.positions();
        if len < 2 * pos.len() {
            return Err((CORS_ERR_BUFFER, format!("need {} values, got {len}", 2 * pos.len())));
        }
        let buf = std::slice::from_raw_parts_mut(xy, len);
        for (i, c) in pos.iter().enumerate() {
            buf[2 * i] = c.x;
            buf[2 * i + 1] = c.y;
        }
        Ok(())
    })
}

/// Steps the joint action. `rewards` receives one base reward per agent;
/// `done` is set to 1 once every agent is on its goal or the step limit is hit.
///
/// # Safety
/// `actions_ptr` holds `n` codes, `rewards` has room for `n` values, `done` is valid.
#[no_mangle]
pub unsafe extern "C" fn cors_env_step(
    env: *mut CorsEnv,
    actions_ptr: *const u8,
    n: usize,
    rewards: *mut f64,
    done: *mut i32,
) -> i32 {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if rewards.is_null() || done.is_null() {
            return Err(null("rewards or done"));
        }
        if env.state.done() {
            return Err((CORS_ERR_STATE, "episode is over; reset first".into()));
        }
        let joint = actions(actions_ptr, n, env.state.n_agents())?;
        let out = env::step(&env.map, &env.state, &joint);
        std::slice::from_raw_parts_mut(rewards, n).copy_from_slice(&out.base_rewards);
        env.state = out.next_state;
        *done = env.state.done() as i32;
        Ok(())
    })
}

/// Shaped rewards for `actions` from the current state, without stepping.
///
/// # Safety
/// As for [`cors_env_step`].
#[no_mangle]
pub unsafe extern "C" fn cors_env_shaped_rewards(
    env: *const CorsEnv,
    actions_ptr: *const u8,
    n: usize,
    alpha: f64,
    metric: u8,
    rewards: *mut f64,
) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if rewards.is_null() {
            return Err(null("rewards"));
        }
        let joint = actions(actions_ptr, n, env.state.n_agents())?;
        let metric = match metric {
            CORS_METRIC_MEAN_ALL => Metric::MeanAll,
            CORS_METRIC_EXACT_MAX => Metric::ExactMax,
            CORS_METRIC_NEIGHBOR_FACTORED_MAX => Metric::NeighborFactoredMax,
            m => return Err((CORS_ERR_PARAM, format!("metric code {m}"))),
        };
        let cfg = ShapingConfig {
            metric,
            ..ShapingConfig::default().with_alpha(alpha)
        };
        cfg.validate().status()?;
        let base = env::step(&env.map, &env.state, &joint).base_rewards;
        let s = shape_transition(&env.map, &env.state, &joint, &base, &cfg).status()?;
        std::slice::from_raw_parts_mut(rewards, n).copy_from_slice(&s.shaped);
        Ok(())
    })
}

/// Returns the environment to its initial state.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cors_env_reset(env: *mut CorsEnv) -> i32 {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        env.state = env.start.clone();
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cors_policy_load(path: *const c_char, out: *mut *mut CorsPolicy) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let snap = Snapshot::load(Path::new(text(path, "path")?)).status()?;
        *out = Box::into_raw(Box::new(CorsPolicy { q: snap.q }));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cors_policy_free(policy: *mut CorsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Greedy action codes for every agent in the current state.
///
/// # Safety
/// `actions_out` must have room for `n` codes.
#[no_mangle]
pub unsafe extern "C" fn cors_policy_act(
    policy: *const CorsPolicy,
    env: *const CorsEnv,
    actions_out: *mut u8,
    n: usize,
) -> i32 {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if actions_out.is_null() {
            return Err(null("actions_out"));
        }
        let k = env.state.n_agents();
        if n < k {
            return Err((CORS_ERR_BUFFER, format!("need {k} slots, got {n}")));
        }
        let out = std::slice::from_raw_parts_mut(actions_out, n);
        for (i, slot) in out.iter_mut().take(k).enumerate() {
            *slot = p.q.greedy(p.q.key_for(&env.map, &env.state, i)).index() as u8;
        }
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len` 0.
#[no_mangle]
pub unsafe extern "C" fn cors_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cors_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
