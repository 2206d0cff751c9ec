//! C ABI over `lobmm`.
//!
//! Every fallible call returns a [`LobmmStatus`]; on failure the message is
//! available from [`lobmm_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lobmm::backtest::{self, Mode, MonteCarlo, SessionSpec, Strategy};
use lobmm::config::RunConfig;
use lobmm::error::{BacktestError, IoError, SolverError};
use lobmm::sim::DirectionNoise;
use lobmm::solver::{self, ActionTable, Operator, SideThresholds, Solution};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobmmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    /// The solver diverged.
    Numerical = 5,
    /// The optimal strategy was asked for without a solution.
    PolicyMissing = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobmmStrategy {
    Unconstrained = 0,
    Optimal = 1,
}

/// Inventory thresholds for one side; infinities mean "never".
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LobmmSideThresholds {
    pub q_off: f64,
    pub q_imp: f64,
    pub q_action: f64,
    pub q_on: f64,
    pub anchor: f64,
    pub impulse: f64,
}

/// Moments of terminal wealth. Undefined moments are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LobmmSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub ir: f64,
}

pub struct LobmmConfig(RunConfig);

pub struct LobmmSolution(Solution);

pub struct LobmmResults(MonteCarlo);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(LobmmStatus, String);

impl From<IoError> for Fail {
    fn from(e: IoError) -> Self {
        let status = if matches!(e, IoError::Io { .. }) { LobmmStatus::Io } else { LobmmStatus::Config };
        Fail(status, e.to_string())
    }
}

impl From<SolverError> for Fail {
    fn from(e: SolverError) -> Self {
        let status =
            if matches!(e, SolverError::Divergence { .. }) { LobmmStatus::Numerical } else { LobmmStatus::Config };
        Fail(status, e.to_string())
    }
}

impl From<BacktestError> for Fail {
    fn from(e: BacktestError) -> Self {
        let status =
            if matches!(e, BacktestError::PolicyMissing) { LobmmStatus::PolicyMissing } else { LobmmStatus::Config };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LobmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LobmmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LobmmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LobmmStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LobmmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn lobmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn lobmm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn lobmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `name` is `base` or `base-derived`.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_config_preset(name: *const c_char, out: *mut *mut LobmmConfig) -> LobmmStatus {
    guard(|| {
        let name = text(name, "name")?;
        let cfg = RunConfig::preset(name)
            .ok_or_else(|| Fail(LobmmStatus::InvalidArgument, format!("unknown preset `{name}`")))?;
        put(out, LobmmConfig(cfg))
    })
}

/// Parses a JSON run configuration; absent fields take base-case values.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_config_from_json(json: *const c_char, out: *mut *mut LobmmConfig) -> LobmmStatus {
    guard(|| {
        let cfg = RunConfig::from_json(text(json, "json")?, "<json>")?;
        put(out, LobmmConfig(cfg))
    })
}

/// Writes the configuration as JSON; free the result with `lobmm_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_config_to_json(cfg: *const LobmmConfig, out: *mut *mut c_char) -> LobmmStatus {
    guard(|| {
        let cfg = deref(cfg, "config")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = CString::new(cfg.0.to_json()).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn lobmm_config_free(cfg: *mut LobmmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solves the control problem for `cfg` on `workers` threads (0 picks one
/// per core).
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_solve(cfg: *const LobmmConfig, workers: usize, out: *mut *mut LobmmSolution) -> LobmmStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0;
        let sol = solver::solve(&c.mm, &c.market, &c.exchange, &c.grid, worker_count(workers))?;
        put(out, LobmmSolution(sol))
    })
}

fn worker_count(w: usize) -> usize {
    if w == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        w
    }
}

/// # Safety
/// `sol` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn lobmm_solution_free(sol: *mut LobmmSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

fn side(t: &SideThresholds) -> LobmmSideThresholds {
    LobmmSideThresholds {
        q_off: t.q_off,
        q_imp: t.q_imp,
        q_action: t.q_action,
        q_on: t.q_on,
        anchor: t.anchor,
        impulse: t.impulse,
    }
}

/// Thresholds at the stored time nearest `t_remaining` for spread
/// `spread_ticks` (1 to the grid's largest spread).
///
/// # Safety
/// `sol` must be a live handle; `bid` and `ask` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_solution_thresholds(
    sol: *const LobmmSolution,
    t_remaining: f64,
    spread_ticks: u32,
    bid: *mut LobmmSideThresholds,
    ask: *mut LobmmSideThresholds,
) -> LobmmStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.0;
        check_spread(spread_ticks, sol.values.grid.n_s)?;
        if bid.is_null() || ask.is_null() {
            return Err(null("output pointer"));
        }
        let row = sol.policy.row_at(t_remaining, spread_ticks as usize);
        *bid = side(&row.bid);
        *ask = side(&row.ask);
        Ok(())
    })
}

fn check_spread(s: u32, n_s: usize) -> Result<(), Fail> {
    if s == 0 || s as usize > n_s {
        return Err(Fail(LobmmStatus::InvalidArgument, format!("spread {s} outside 1..={n_s}")));
    }
    Ok(())
}

/// Value function at the stored time nearest `t_remaining` and the inventory
/// node nearest `q`; `regime_bid` and `regime_ask` are 0 (off) or 1 (on).
///
/// # Safety
/// `sol` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_solution_value(
    sol: *const LobmmSolution,
    t_remaining: f64,
    q: f64,
    spread_ticks: u32,
    regime_bid: u8,
    regime_ask: u8,
    out: *mut f64,
) -> LobmmStatus {
    guard(|| {
        let v = &deref(sol, "solution")?.0.values;
        check_spread(spread_ticks, v.grid.n_s)?;
        if regime_bid > 1 || regime_ask > 1 {
            return Err(Fail(LobmmStatus::InvalidArgument, "regimes are 0 or 1".into()));
        }
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let k = v.slice_for(t_remaining);
        *out = v.slices[k].get(v.grid.nearest_q(q), spread_ticks as usize, regime_bid, regime_ask);
        Ok(())
    })
}

/// Writes `value_grid.bin`, `policy.json` and `thresholds.csv` into `dir`.
///
/// # Safety
/// `sol` must be a live handle; `dir` a nul-terminated existing directory.
#[no_mangle]
pub unsafe extern "C" fn lobmm_solution_save(sol: *const LobmmSolution, dir: *const c_char) -> LobmmStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.0;
        let dir = Path::new(text(dir, "dir")?);
        sol.values.save(&dir.join("value_grid.bin"))?;
        sol.policy.save_json(&dir.join("policy.json"))?;
        let csv = dir.join("thresholds.csv");
        let f = std::fs::File::create(&csv).map_err(|e| IoError::Io { path: csv.display().to_string(), source: e })?;
        sol.policy.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    })
}

/// Runs `n` backtest sessions. `solution` may be null for the unconstrained
/// strategy; `noise` is null for a consistent book or one of `lob1`, `lob2`,
/// `lob3`. The optimal strategy follows the full action lookup of the solution.
///
/// # Safety
/// Handles must be live or null as described; `noise` null or nul-terminated;
/// `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lobmm_backtest(
    cfg: *const LobmmConfig,
    solution: *const LobmmSolution,
    strategy: LobmmStrategy,
    noise: *const c_char,
    n_sessions: usize,
    seed: u64,
    workers: usize,
    out: *mut *mut LobmmResults,
) -> LobmmStatus {
    guard(|| {
        let c = &deref(cfg, "config")?.0;
        let mode = if noise.is_null() {
            Mode::Consistent
        } else {
            let name = text(noise, "noise")?;
            Mode::Inconsistent(
                DirectionNoise::preset(name)
                    .ok_or_else(|| Fail(LobmmStatus::InvalidArgument, format!("unknown noise preset `{name}`")))?,
            )
        };
        let table = match solution.as_ref() {
            Some(s) => {
                let op = Operator::new(&c.mm, &c.market, &c.exchange, &s.0.values.grid)?;
                Some(ActionTable::build(&s.0.values, &op)?)
            }
            None => None,
        };
        let spec = SessionSpec {
            market: &c.market,
            exchange: &c.exchange,
            mm: &c.mm,
            strategy: match strategy {
                LobmmStrategy::Unconstrained => Strategy::Unconstrained,
                LobmmStrategy::Optimal => Strategy::Optimal,
            },
            policy: table.as_ref().map(|t| t as &dyn solver::Policy),
            horizon: c.backtest.horizon,
            mode,
        };
        let mc = backtest::run_monte_carlo(&spec, n_sessions, seed, worker_count(workers))?;
        put(out, LobmmResults(mc))
    })
}

/// Number of sessions in `res`, 0 for null.
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lobmm_results_len(res: *const LobmmResults) -> usize {
    res.as_ref().map_or(0, |r| r.0.sessions.len())
}

/// # Safety
/// `res` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmm_results_summary(res: *const LobmmResults, out: *mut LobmmSummary) -> LobmmStatus {
    guard(|| {
        let s = &deref(res, "results")?.0.summary;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = LobmmSummary {
            n: s.n,
            mean: s.mean,
            sd: s.sd,
            skewness: s.skewness.unwrap_or(f64::NAN),
            kurtosis: s.kurtosis.unwrap_or(f64::NAN),
            ir: s.ir.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Copies up to `len` terminal wealths, in session order, into `buf`.
/// Returns the number copied.
///
/// # Safety
/// `res` must be a live handle or null; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lobmm_results_wealth(res: *const LobmmResults, buf: *mut f64, len: usize) -> usize {
    let (Some(r), false) = (res.as_ref(), buf.is_null()) else { return 0 };
    let n = len.min(r.0.sessions.len());
    let dst = std::slice::from_raw_parts_mut(buf, n);
    for (d, s) in dst.iter_mut().zip(&r.0.sessions) {
        *d = s.terminal_wealth;
    }
    n
}

/// # Safety
/// `res` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn lobmm_results_free(res: *mut LobmmResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
