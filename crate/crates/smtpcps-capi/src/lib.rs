//! C ABI over the simulator: opaque handles, integer status codes, and
//! caller-owned output buffers.
//!
//! Conventions:
//! - Every constructor hands back an owned pointer; release it with the
//!   matching `*_free`. Strings returned through `char **` are released
//!   with [`smtpcps_string_free`]. Freeing null is a no-op.
//! - Functions returning [`SmtpcpsStatus`] write their outputs only on
//!   `Ok`; on any failure the thread-local message from
//!   [`smtpcps_last_error`] describes what happened.
//! - Handles are plain data with no interior synchronization: share them
//!   across threads only behind the caller's own lock.
//! - Panics never unwind across the boundary; they surface as
//!   `SMTPCPS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use smtpcps::config::{parse_config, RunConfig};
use smtpcps::controller::{load_family, write_family, ControllableFamily};
use smtpcps::error::Error;
use smtpcps::harness::{
    default_x0_list, episode_seed, results_csv, run_episode, run_sweep, summarize, summary_csv,
    EpisodeConfig, EpisodeSetup, SweepConfig,
};

/// Outcome of a fallible call. Zero is success; everything else names the
/// failure class, with detail in `smtpcps_last_error`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmtpcpsStatus {
    SmtpcpsOk = 0,
    /// A required pointer argument was null.
    SmtpcpsNullArgument = 1,
    /// A string argument was not valid UTF-8.
    SmtpcpsInvalidUtf8 = 2,
    /// Malformed input text (configuration or cache).
    SmtpcpsParse = 3,
    /// Semantically invalid configuration.
    SmtpcpsConfig = 4,
    /// Set arithmetic could not produce a usable result for these inputs.
    SmtpcpsDomain = 5,
    /// A state outside the controllable region.
    SmtpcpsInfeasible = 6,
    /// The two protocol endpoints lost agreement.
    SmtpcpsProtocol = 7,
    /// An internal invariant failed; indicates a bug or corrupt data.
    SmtpcpsInternal = 8,
    /// Underlying I/O failure.
    SmtpcpsIo = 9,
    /// A panic was caught at the boundary.
    SmtpcpsPanic = 10,
}

/// Opaque run configuration.
pub struct SmtpcpsConfig {
    inner: RunConfig,
}

/// Opaque controllable-set family.
pub struct SmtpcpsFamily {
    inner: ControllableFamily,
}

/// Per-episode metrics. Accuracy fields are -1 when the episode
/// transmitted no bits to score.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SmtpcpsEpisodeStats {
    pub steps: u64,
    pub key_events: u64,
    pub decoded_bits: u64,
    pub bit_errors: u64,
    pub desyncs: u64,
    pub rate_bps: f64,
    pub acc_random: f64,
    pub acc_reach_025: f64,
    pub acc_reach_050: f64,
    pub acc_reach_075: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).expect("nul bytes were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn fail(e: &Error) -> SmtpcpsStatus {
    set_error(&e.to_string());
    match e {
        Error::Parse { .. } => SmtpcpsStatus::SmtpcpsParse,
        Error::Config(_) => SmtpcpsStatus::SmtpcpsConfig,
        Error::EmptySet(_)
        | Error::UnboundedSet(_)
        | Error::Unsupported(_)
        | Error::NonContractive { .. }
        | Error::InvarianceCheckFailed
        | Error::ErosionEmpty => SmtpcpsStatus::SmtpcpsDomain,
        Error::Infeasible => SmtpcpsStatus::SmtpcpsInfeasible,
        Error::ProtocolDesync(_) => SmtpcpsStatus::SmtpcpsProtocol,
        Error::InternalInconsistency(_) => SmtpcpsStatus::SmtpcpsInternal,
        Error::Io(_) => SmtpcpsStatus::SmtpcpsIo,
    }
}

/// Run a closure with panics converted to a status at the boundary.
fn guarded(f: impl FnOnce() -> SmtpcpsStatus) -> SmtpcpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic reached the C boundary");
            SmtpcpsStatus::SmtpcpsPanic
        }
    }
}

fn null_arg(name: &str) -> SmtpcpsStatus {
    set_error(&format!("required argument {name} was null"));
    SmtpcpsStatus::SmtpcpsNullArgument
}

/// # Safety
/// `text` must be a valid nul-terminated string.
unsafe fn read_str<'a>(text: *const c_char) -> Result<&'a str, SmtpcpsStatus> {
    CStr::from_ptr(text).to_str().map_err(|_| {
        set_error("input text was not valid UTF-8");
        SmtpcpsStatus::SmtpcpsInvalidUtf8
    })
}

fn give_string(text: String, out: *mut *mut c_char) -> SmtpcpsStatus {
    let owned = CString::new(text.replace('\0', " ")).expect("nul bytes were replaced");
    unsafe { *out = owned.into_raw() };
    SmtpcpsStatus::SmtpcpsOk
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn smtpcps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Detail message for the most recent failure on this thread. Valid until
/// the next failing call on the same thread; never freed by the caller.
#[no_mangle]
pub extern "C" fn smtpcps_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// The reference configuration (every key at its default).
#[no_mangle]
pub extern "C" fn smtpcps_config_default() -> *mut SmtpcpsConfig {
    Box::into_raw(Box::new(SmtpcpsConfig {
        inner: RunConfig::default(),
    }))
}

/// Parse and validate a configuration document.
///
/// # Safety
/// `text` must be nul-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_config_parse(
    text: *const c_char,
    out: *mut *mut SmtpcpsConfig,
) -> SmtpcpsStatus {
    guarded(|| {
        if text.is_null() {
            return null_arg("text");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match parse_config(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(SmtpcpsConfig { inner: cfg }));
                SmtpcpsStatus::SmtpcpsOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a configuration handle.
///
/// # Safety
/// `cfg` must be null or a pointer produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_config_free(cfg: *mut SmtpcpsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Build the controllable family described by a configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_family_build(
    cfg: *const SmtpcpsConfig,
    out: *mut *mut SmtpcpsFamily,
) -> SmtpcpsStatus {
    guarded(|| {
        if cfg.is_null() {
            return null_arg("cfg");
        }
        if out.is_null() {
            return null_arg("out");
        }
        match (*cfg).inner.build_family() {
            Ok(fam) => {
                *out = Box::into_raw(Box::new(SmtpcpsFamily { inner: fam }));
                SmtpcpsStatus::SmtpcpsOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Family depth N (the family holds N + 1 nested sets); 0 for null.
///
/// # Safety
/// `fam` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_family_depth(fam: *const SmtpcpsFamily) -> u64 {
    if fam.is_null() {
        0
    } else {
        (*fam).inner.n_sets() as u64
    }
}

/// Serialize a family to its checksummed cache text.
///
/// # Safety
/// `fam` must be a live handle; `out` must be a valid pointer. The string
/// is released with [`smtpcps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn smtpcps_family_write(
    fam: *const SmtpcpsFamily,
    out: *mut *mut c_char,
) -> SmtpcpsStatus {
    guarded(|| {
        if fam.is_null() {
            return null_arg("fam");
        }
        if out.is_null() {
            return null_arg("out");
        }
        give_string(write_family(&(*fam).inner), out)
    })
}

/// Parse a family cache and re-verify all of its certificates against the
/// configuration's controller model.
///
/// # Safety
/// `text` must be nul-terminated; `cfg` must be a live handle; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_family_load(
    text: *const c_char,
    cfg: *const SmtpcpsConfig,
    out: *mut *mut SmtpcpsFamily,
) -> SmtpcpsStatus {
    guarded(|| {
        if text.is_null() {
            return null_arg("text");
        }
        if cfg.is_null() {
            return null_arg("cfg");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let mc = match (*cfg).inner.controller_model() {
            Ok(mc) => mc,
            Err(e) => return fail(&e),
        };
        match load_family(text, &mc) {
            Ok(fam) => {
                *out = Box::into_raw(Box::new(SmtpcpsFamily { inner: fam }));
                SmtpcpsStatus::SmtpcpsOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a family handle.
///
/// # Safety
/// `fam` must be null or a pointer produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_family_free(fam: *mut SmtpcpsFamily) {
    if !fam.is_null() {
        drop(Box::from_raw(fam));
    }
}

/// Run one episode from the outermost default initial state.
///
/// `alpha` is the eavesdropper coarseness ratio; pass 0 or less to use the
/// configured value. `base_seed` selects the episode's random streams.
///
/// # Safety
/// `cfg` and `fam` must be live handles; `stats` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_episode_run(
    cfg: *const SmtpcpsConfig,
    fam: *const SmtpcpsFamily,
    alpha: f64,
    base_seed: u64,
    stats: *mut SmtpcpsEpisodeStats,
) -> SmtpcpsStatus {
    guarded(|| {
        if cfg.is_null() {
            return null_arg("cfg");
        }
        if fam.is_null() {
            return null_arg("fam");
        }
        if stats.is_null() {
            return null_arg("stats");
        }
        let cfg = &(*cfg).inner;
        let fam = &(*fam).inner;
        let alpha = if alpha > 0.0 { alpha } else { cfg.dist.alpha };
        let run = || {
            let mc = cfg.controller_model()?;
            let me = cfg.eavesdropper_model(alpha)?;
            let noise = cfg.true_disturbance()?;
            let x0 = default_x0_list(fam)?
                .into_iter()
                .next()
                .expect("default list holds at least one state");
            let seed = episode_seed(base_seed, 0, 0, 0);
            let episode = EpisodeConfig {
                x0,
                steps: cfg.sim.steps,
                message: cfg.message_spec()?.resolve(&seed),
                seed,
                want_trace: false,
            };
            let setup = EpisodeSetup {
                fam,
                mc: &mc,
                me: &me,
                true_disturbance: &noise,
                eps: cfg.tol.geom_eps,
            };
            run_episode(&setup, &episode)
        };
        match run() {
            Ok(r) => {
                let acc = |a: Option<f64>| a.unwrap_or(-1.0);
                *stats = SmtpcpsEpisodeStats {
                    steps: r.steps as u64,
                    key_events: r.key_events as u64,
                    decoded_bits: r.decoded_bits as u64,
                    bit_errors: r.bit_errors as u64,
                    desyncs: r.desyncs as u64,
                    rate_bps: r.rate_bps,
                    acc_random: acc(r.acc_random),
                    acc_reach_025: acc(r.acc_reach[0]),
                    acc_reach_050: acc(r.acc_reach[1]),
                    acc_reach_075: acc(r.acc_reach[2]),
                };
                if let Some(msg) = &r.error {
                    set_error(&format!("episode aborted: {msg}"));
                    return SmtpcpsStatus::SmtpcpsProtocol;
                }
                SmtpcpsStatus::SmtpcpsOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run the configured sweep; hand back the results table and the per-level
/// summary as CSV text.
///
/// # Safety
/// `cfg` and `fam` must be live handles; `results_out` and `summary_out`
/// must be valid pointers. Both strings are released with
/// [`smtpcps_string_free`].
#[no_mangle]
pub unsafe extern "C" fn smtpcps_sweep_csv(
    cfg: *const SmtpcpsConfig,
    fam: *const SmtpcpsFamily,
    results_out: *mut *mut c_char,
    summary_out: *mut *mut c_char,
) -> SmtpcpsStatus {
    guarded(|| {
        if cfg.is_null() {
            return null_arg("cfg");
        }
        if fam.is_null() {
            return null_arg("fam");
        }
        if results_out.is_null() {
            return null_arg("results_out");
        }
        if summary_out.is_null() {
            return null_arg("summary_out");
        }
        let cfg = &(*cfg).inner;
        let fam = &(*fam).inner;
        let run = || {
            let mc = cfg.controller_model()?;
            let noise = cfg.true_disturbance()?;
            let sweep = SweepConfig {
                alphas: cfg.sweep.alphas.clone(),
                x0_list: default_x0_list(fam)?,
                reps: cfg.sim.reps,
                steps: cfg.sim.steps,
                base_seed: cfg.sim.base_seed,
                message: cfg.message_spec()?,
            };
            let rows = run_sweep(fam, &mc, &noise, cfg.tol.geom_eps, &sweep)?;
            let summary = summarize(&rows)?;
            Ok::<_, Error>((results_csv(&rows), summary_csv(&summary)))
        };
        match run() {
            Ok((results, summary)) => {
                let status = give_string(results, results_out);
                if status != SmtpcpsStatus::SmtpcpsOk {
                    return status;
                }
                let status = give_string(summary, summary_out);
                if status != SmtpcpsStatus::SmtpcpsOk {
                    // give back the first string rather than leaking it
                    smtpcps_string_free(*results_out);
                    *results_out = ptr::null_mut();
                }
                status
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a string produced by this library.
///
/// # Safety
/// `s` must be null or a string produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smtpcps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
