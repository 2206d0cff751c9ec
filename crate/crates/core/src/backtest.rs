//! Market-making sessions on simulated flow, and Monte Carlo statistics.
//!
//! The maker starts at book (100.00, 100.01) with both sides quoted, flat and
//! with no cash. Market orders fill a fraction of their size against the
//! maker's quote before the book moves; the strategy is consulted after every
//! event, and the position is liquidated across the spread at the close.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BacktestError, IoError};
use crate::lob::{BookSide, BookState, OrderType, Side};
use crate::sim::{session_rngs, DirectionNoise, FlowGenerator, MarketParams};
use crate::solver::{ExchangeParams, MMParams, Policy};

/// Trading-day length in seconds.
pub const SESSION_SECONDS: f64 = 23_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MMState {
    pub cash: f64,
    pub inventory: f64,
    pub regime_bid: u8,
    pub regime_ask: u8,
    /// Shares still ahead of a freshly posted quote.
    pub priority_bid: f64,
    pub priority_ask: f64,
}

impl MMState {
    /// Flat, both sides quoting with nothing ahead.
    pub fn initial() -> Self {
        MMState { cash: 0.0, inventory: 0.0, regime_bid: 1, regime_ask: 1, priority_bid: 0.0, priority_ask: 0.0 }
    }

    pub fn regimes(&self) -> (u8, u8) {
        (self.regime_bid, self.regime_ask)
    }
}

/// Shares of a market order of size `volume` that execute against the
/// maker's quote on `side`, updating the queue ahead of it.
pub fn fill_volume(state: &mut MMState, side: BookSide, volume: f64, mm: &MMParams) -> f64 {
    let (on, priority) = match side {
        BookSide::Bid => (state.regime_bid == 1, &mut state.priority_bid),
        BookSide::Ask => (state.regime_ask == 1, &mut state.priority_ask),
    };
    if on {
        let filled = mm.participation * (volume - *priority).max(0.0);
        *priority = (*priority - volume).max(0.0);
        filled
    } else {
        mm.participation * (volume - mm.queue_ahead(side)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Always quote both sides, never trade actively.
    Unconstrained,
    /// Follow a solved policy.
    Optimal,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unconstrained" => Ok(Strategy::Unconstrained),
            "optimal" => Ok(Strategy::Optimal),
            _ => Err(format!("unknown strategy `{s}` (expected unconstrained or optimal)")),
        }
    }
}

/// Book dynamics of a session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Consistent,
    Inconsistent(DirectionNoise),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub terminal_wealth: f64,
    pub fill_count: u64,
    pub impulse_count: u64,
    pub switch_count: u64,
    pub max_abs_inventory: f64,
}

/// One cash movement of the maker, for audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub time: f64,
    pub kind: TradeKind,
    /// Signed inventory change.
    pub shares: f64,
    /// Best quote the trade is benchmarked against: the bid for sells to the
    /// maker and maker sells, the ask for buys.
    pub quote: f64,
    pub cash: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeKind {
    Fill,
    Impulse,
    Liquidation,
}

pub struct SessionSpec<'a> {
    pub market: &'a MarketParams,
    pub exchange: &'a ExchangeParams,
    pub mm: &'a MMParams,
    pub strategy: Strategy,
    pub policy: Option<&'a dyn Policy>,
    pub horizon: f64,
    pub mode: Mode,
}

impl SessionSpec<'_> {
    fn validate(&self) -> Result<(), BacktestError> {
        if self.strategy == Strategy::Optimal && self.policy.is_none() {
            return Err(BacktestError::PolicyMissing);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(BacktestError::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        self.mm.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
        self.exchange.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
        self.market.validate()?;
        Ok(())
    }
}

struct Session<'a, 'b> {
    spec: &'b SessionSpec<'a>,
    state: MMState,
    result: SessionResult,
    trades: Option<Vec<Trade>>,
}

impl Session<'_, '_> {
    fn record(&mut self, time: f64, kind: TradeKind, shares: f64, quote: f64, cash: f64) {
        self.state.cash += cash;
        self.state.inventory += shares;
        self.result.max_abs_inventory = self.result.max_abs_inventory.max(self.state.inventory.abs());
        if let Some(t) = &mut self.trades {
            t.push(Trade { time, kind, shares, quote, cash });
        }
    }

    fn fill(&mut self, time: f64, code: u8, volume: f64, book: &BookState) {
        let side = match OrderType::new(code as u32).expect("valid code").side() {
            // buy orders lift the ask
            Side::Buy => BookSide::Ask,
            Side::Sell => BookSide::Bid,
        };
        let x = fill_volume(&mut self.state, side, volume, self.spec.mm);
        if x <= 0.0 {
            return;
        }
        self.result.fill_count += 1;
        let rebate = self.spec.exchange.rebate;
        match side {
            BookSide::Bid => {
                let q = book.bid_price();
                self.record(time, TradeKind::Fill, x, q, -x * (q - rebate));
            }
            BookSide::Ask => {
                let q = book.ask_price();
                self.record(time, TradeKind::Fill, -x, q, x * (q + rebate));
            }
        }
    }

    fn trade_at_market(&mut self, time: f64, kind: TradeKind, zeta: f64, book: &BookState) {
        let fee = self.spec.exchange.fee;
        if zeta > 0.0 {
            let q = book.ask_price();
            self.record(time, kind, zeta, q, -zeta * (q + fee));
        } else if zeta < 0.0 {
            let q = book.bid_price();
            self.record(time, kind, zeta, q, -zeta * (q - fee));
        }
    }

    fn consult(&mut self, time: f64, book: &BookState) {
        let Some(policy) = self.spec.policy.filter(|_| self.spec.strategy == Strategy::Optimal) else {
            return;
        };
        let t_rem = (self.spec.horizon - time).min(policy.horizon());
        let Some(d) = policy.decide(t_rem, self.state.inventory, book.spread_ticks(), self.state.regimes()) else {
            return;
        };
        let (rb, ra) = d.regimes;
        if rb != self.state.regime_bid {
            self.result.switch_count += 1;
            if rb == 1 {
                self.state.priority_bid = self.spec.mm.queue_ahead_bid;
            }
            self.state.regime_bid = rb;
        }
        if ra != self.state.regime_ask {
            self.result.switch_count += 1;
            if ra == 1 {
                self.state.priority_ask = self.spec.mm.queue_ahead_ask;
            }
            self.state.regime_ask = ra;
        }
        if d.zeta != 0.0 {
            self.result.impulse_count += 1;
            self.trade_at_market(time, TradeKind::Impulse, d.zeta, book);
        }
    }
}

fn initial_book(tick: f64) -> BookState {
    let bid = (100.0 / tick).round() as i64;
    BookState { bid, ask: bid + 1, tick }
}

/// Runs one session on flow streams `session` of `seed`.
pub fn run_session(spec: &SessionSpec<'_>, seed: u64, session: u64) -> Result<SessionResult, BacktestError> {
    run_session_traced(spec, seed, session, false).map(|r| r.0)
}

/// As [`run_session`], also returning every trade when `trace` is set.
pub fn run_session_traced(
    spec: &SessionSpec<'_>,
    seed: u64,
    session: u64,
    trace: bool,
) -> Result<(SessionResult, Vec<Trade>), BacktestError> {
    spec.validate()?;
    let book0 = initial_book(spec.market.tick);
    let noise = match spec.mode {
        Mode::Consistent => None,
        Mode::Inconsistent(n) => Some(n),
    };
    let flow = FlowGenerator::new(spec.market, spec.horizon, book0, noise, session_rngs(seed, session));
    let mut s = Session {
        spec,
        state: MMState::initial(),
        result: SessionResult::default(),
        trades: trace.then(Vec::new),
    };

    // Decision times when nothing arrives: the policy's own time grid over
    // the final stretch it covers, in increasing session time.
    let mut checks: Vec<f64> = match (spec.strategy, spec.policy) {
        (Strategy::Optimal, Some(p)) => p
            .check_times()
            .into_iter()
            .filter(|&r| r > 0.0 && r <= spec.horizon)
            .map(|r| spec.horizon - r)
            .collect(),
        _ => Vec::new(),
    };
    checks.sort_by(f64::total_cmp);
    let mut next_check = 0;
    let mut book = book0;
    s.consult(0.0, &book);
    for step in flow {
        let step = step?;
        let t = step.event.time;
        while next_check < checks.len() && checks[next_check] < t {
            s.consult(checks[next_check], &book);
            next_check += 1;
        }
        let code = step.event.order_type.code();
        if matches!(code, 1 | 2 | 7 | 8) {
            s.fill(t, code, step.event.volume as f64, &step.before);
        }
        book = step.after;
        s.consult(t, &book);
    }
    while next_check < checks.len() {
        s.consult(checks[next_check], &book);
        next_check += 1;
    }
    let q = s.state.inventory;
    s.trade_at_market(spec.horizon, TradeKind::Liquidation, -q, &book);
    // liquidation leaves exactly zero shares
    s.state.inventory = 0.0;
    s.result.terminal_wealth = s.state.cash;
    Ok((s.result, s.trades.unwrap_or_default()))
}

/// Wealth statistics in the layout of a backtest summary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub ir: Option<f64>,
}

/// Mean, unbiased standard deviation, population skewness and raw kurtosis,
/// and mean over sd. Shape statistics are `None` when every value is equal.
pub fn summarize(values: &[f64]) -> Result<StatsSummary, BacktestError> {
    let n = values.len();
    if n < 2 {
        return Err(BacktestError::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let sd = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let shaped = m2 > 0.0;
    Ok(StatsSummary {
        n,
        mean,
        sd,
        skewness: shaped.then(|| m3 / m2.powf(1.5)),
        kurtosis: shaped.then(|| m4 / (m2 * m2)),
        ir: shaped.then(|| mean / sd),
    })
}

pub struct MonteCarlo {
    pub summary: StatsSummary,
    pub sessions: Vec<SessionResult>,
}

/// Runs sessions `0..n` of `seed` on `workers` threads. Session `i` always
/// uses stream `i`, and statistics are reduced in session order, so the
/// output does not depend on the worker count.
pub fn run_monte_carlo(spec: &SessionSpec<'_>, n: usize, seed: u64, workers: usize) -> Result<MonteCarlo, BacktestError> {
    if n == 0 {
        return Err(BacktestError::InsufficientData { needed: 1, got: 0 });
    }
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BacktestError::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
    let sessions: Vec<SessionResult> =
        pool.install(|| (0..n as u64).into_par_iter().map(|i| run_session(spec, seed, i)).collect::<Result<_, _>>())?;
    let wealth: Vec<f64> = sessions.iter().map(|s| s.terminal_wealth).collect();
    let summary = if n == 1 {
        StatsSummary { n: 1, mean: wealth[0], sd: 0.0, skewness: None, kurtosis: None, ir: None }
    } else {
        summarize(&wealth)?
    };
    Ok(MonteCarlo { summary, sessions })
}

/// `mean_inconsistent / mean_consistent - 1`.
pub fn overstatement(consistent: &StatsSummary, inconsistent: &StatsSummary) -> f64 {
    inconsistent.mean / consistent.mean - 1.0
}

pub fn write_results_csv<W: Write>(sessions: &[SessionResult], w: W) -> Result<(), IoError> {
    let e = |e: csv::Error| IoError::Other(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["session", "wealth", "fills", "impulses", "switches", "max_abs_q"]).map_err(e)?;
    for (i, s) in sessions.iter().enumerate() {
        out.write_record([
            i.to_string(),
            s.terminal_wealth.to_string(),
            s.fill_count.to_string(),
            s.impulse_count.to_string(),
            s.switch_count.to_string(),
            s.max_abs_inventory.to_string(),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|e| IoError::Other(e.to_string()))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SessionResult>, IoError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IoError::Other(format!("{name}: {e}")))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| IoError::Parse { path: name.clone(), line, message: e.to_string() })?;
        let bad = |m: String| IoError::Parse { path: name.clone(), line, message: m };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", rec.len())));
        }
        let f = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("field {k}: {e}")));
        let u = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(format!("field {k}: {e}")));
        out.push(SessionResult {
            terminal_wealth: f(1)?,
            fill_count: u(2)?,
            impulse_count: u(3)?,
            switch_count: u(4)?,
            max_abs_inventory: f(5)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::NUM_TYPES;

    fn no_flow() -> MarketParams {
        let mut m = MarketParams::base_case();
        m.lambda = [0.0; NUM_TYPES];
        m
    }

    fn spec<'a>(market: &'a MarketParams, ex: &'a ExchangeParams, mm: &'a MMParams) -> SessionSpec<'a> {
        SessionSpec {
            market,
            exchange: ex,
            mm,
            strategy: Strategy::Unconstrained,
            policy: None,
            horizon: SESSION_SECONDS,
            mode: Mode::Consistent,
        }
    }

    #[test]
    fn fill_rules() {
        let mm = MMParams::base_case();
        let mut s = MMState::initial();
        assert!((fill_volume(&mut s, BookSide::Bid, 1000.0, &mm) - 100.0).abs() < 1e-12);
        s.regime_bid = 0;
        assert!((fill_volume(&mut s, BookSide::Bid, 4000.0, &mm) - 25.0).abs() < 1e-12);
        s.regime_ask = 1;
        s.priority_ask = 3750.0;
        assert_eq!(fill_volume(&mut s, BookSide::Ask, 1000.0, &mm), 0.0);
        assert_eq!(s.priority_ask, 2750.0);
        assert!((fill_volume(&mut s, BookSide::Ask, 3000.0, &mm) - 25.0).abs() < 1e-12);
        assert_eq!(s.priority_ask, 0.0);
    }

    #[test]
    fn empty_stream_ends_flat() {
        let (m, ex, mm) = (no_flow(), ExchangeParams::default(), MMParams::base_case());
        let r = run_session(&spec(&m, &ex, &mm), 1, 0).unwrap();
        assert_eq!(r.terminal_wealth, 0.0);
        assert_eq!(r.fill_count, 0);
        let mc = run_monte_carlo(&spec(&m, &ex, &mm), 1, 1, 1).unwrap();
        assert_eq!((mc.summary.mean, mc.summary.sd, mc.summary.ir), (0.0, 0.0, None));
    }

    #[test]
    fn single_passive_sell_order() {
        // a 1000-share sell order: buy 100 at 99.998, liquidate at 99.997
        let (m, ex, mm) = (no_flow(), ExchangeParams::default(), MMParams::base_case());
        let sp = spec(&m, &ex, &mm);
        let mut s = Session { spec: &sp, state: MMState::initial(), result: SessionResult::default(), trades: None };
        let book = initial_book(0.01);
        s.fill(0.5, 8, 1000.0, &book);
        assert!((s.state.cash + 9999.8).abs() < 1e-9);
        assert_eq!(s.state.inventory, 100.0);
        s.trade_at_market(1.0, TradeKind::Liquidation, -100.0, &book);
        assert!((s.state.cash + 0.1).abs() < 1e-9, "{}", s.state.cash);
    }

    #[test]
    fn optimal_needs_policy() {
        let (m, ex, mm) = (MarketParams::base_case(), ExchangeParams::default(), MMParams::base_case());
        let sp = SessionSpec { strategy: Strategy::Optimal, ..spec(&m, &ex, &mm) };
        assert!(matches!(run_session(&sp, 1, 0), Err(BacktestError::PolicyMissing)));
    }

    #[test]
    fn bookkeeping_closes() {
        let (m, ex, mm) = (MarketParams::base_case(), ExchangeParams::default(), MMParams::base_case());
        let sp = SessionSpec { horizon: 3600.0, ..spec(&m, &ex, &mm) };
        let (r, trades) = run_session_traced(&sp, 9, 3, true).unwrap();
        assert!(r.fill_count > 100);
        let mut wealth = 0.0;
        let mut q = 0.0;
        for t in &trades {
            // cash plus quote-valued shares equals the rebate earned or fee paid
            let expected = match t.kind {
                TradeKind::Fill => ex.rebate * t.shares.abs(),
                _ => -ex.fee * t.shares.abs(),
            };
            assert!((t.cash + t.quote * t.shares - expected).abs() < 1e-9);
            wealth += t.cash;
            q += t.shares;
        }
        assert!(q.abs() < 1e-9);
        assert!((wealth - r.terminal_wealth).abs() < 1e-6);
    }

    #[test]
    fn consistent_equals_plus_one_noise() {
        let (m, ex, mm) = (MarketParams::base_case(), ExchangeParams::default(), MMParams::base_case());
        let a = SessionSpec { horizon: 2000.0, ..spec(&m, &ex, &mm) };
        let b = SessionSpec { mode: Mode::Inconsistent(DirectionNoise::consistent()), ..a };
        for i in 0..3 {
            assert_eq!(run_session(&a, 4, i).unwrap(), run_session(&b, 4, i).unwrap());
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd), (2.0, 1.0));
        assert!(s.skewness.unwrap().abs() < 1e-15);
        assert!((s.kurtosis.unwrap() - 1.5).abs() < 1e-15);
        assert!((s.ir.unwrap() - 2.0).abs() < 1e-15);
        let c = summarize(&[4.0; 5]).unwrap();
        assert_eq!((c.sd, c.skewness, c.kurtosis, c.ir), (0.0, None, None, None));
        assert!(matches!(summarize(&[1.0]), Err(BacktestError::InsufficientData { .. })));
    }

    #[test]
    fn monte_carlo_independent_of_workers() {
        let (m, ex, mm) = (MarketParams::base_case(), ExchangeParams::default(), MMParams::base_case());
        let sp = SessionSpec { horizon: 600.0, ..spec(&m, &ex, &mm) };
        let a = run_monte_carlo(&sp, 12, 5, 1).unwrap();
        let b = run_monte_carlo(&sp, 12, 5, 3).unwrap();
        assert_eq!(a.sessions, b.sessions);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn results_csv_round_trip() {
        let (m, ex, mm) = (MarketParams::base_case(), ExchangeParams::default(), MMParams::base_case());
        let sp = SessionSpec { horizon: 300.0, ..spec(&m, &ex, &mm) };
        let mc = run_monte_carlo(&sp, 4, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results_csv(&mc.sessions, std::fs::File::create(&path).unwrap()).unwrap();
        assert_eq!(read_results_csv(&path).unwrap(), mc.sessions);
    }
}
