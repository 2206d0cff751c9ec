//! Level-one book primitives: the twelve-type order classification, the
//! deterministic price-update rule, and the direction/timing consistency
//! checker.
//!
//! Prices are carried as integer tick counts. Currency values only appear at
//! the I/O boundary (see [`crate::io`]).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::LobError;

/// Number of order types in the classification.
pub const NUM_TYPES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Market,
    Limit,
    Cancellation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// Which quote of the book an effect or a market-maker regime refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BookSide {
    Bid,
    Ask,
}

impl fmt::Display for BookSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BookSide::Bid => f.write_str("bid"),
            BookSide::Ask => f.write_str("ask"),
        }
    }
}

/// One of the twelve top-of-book order types, identified by its code 1..=12.
///
/// Codes 1..=6 are aggressive (they move a best quote), 7..=12 are not. Within
/// each half the order is market buy, market sell, limit buy, limit sell,
/// limit buy cancellation, limit sell cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct OrderType(u8);

const CATEGORY_SIDE: [(Category, Side); 6] = [
    (Category::Market, Side::Buy),
    (Category::Market, Side::Sell),
    (Category::Limit, Side::Buy),
    (Category::Limit, Side::Sell),
    (Category::Cancellation, Side::Buy),
    (Category::Cancellation, Side::Sell),
];

// (bid direction, ask direction) for the aggressive codes 1..=6.
const AGGRESSIVE_EFFECT: [(i8, i8); 6] = [(0, 1), (-1, 0), (1, 0), (0, -1), (-1, 0), (0, 1)];

impl OrderType {
    pub fn new(code: u32) -> Result<Self, LobError> {
        if (1..=NUM_TYPES as u32).contains(&code) {
            Ok(OrderType(code as u8))
        } else {
            Err(LobError::InvalidCode(code))
        }
    }

    pub fn from_parts(category: Category, side: Side, aggressive: bool) -> Self {
        let pos = CATEGORY_SIDE
            .iter()
            .position(|&cs| cs == (category, side))
            .expect("every (category, side) pair is classified") as u8;
        OrderType(if aggressive { pos + 1 } else { pos + 7 })
    }

    /// All twelve types in code order.
    pub fn all() -> impl Iterator<Item = OrderType> {
        (1..=NUM_TYPES as u8).map(OrderType)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    /// Zero-based index, convenient for per-type arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn category(self) -> Category {
        CATEGORY_SIDE[(self.0 as usize - 1) % 6].0
    }

    pub fn side(self) -> Side {
        CATEGORY_SIDE[(self.0 as usize - 1) % 6].1
    }

    pub fn aggressive(self) -> bool {
        self.0 <= 6
    }

    pub fn is_market(self) -> bool {
        self.category() == Category::Market
    }

    /// Signed direction of the (bid, ask) move this type causes.
    pub fn effect(self) -> (i8, i8) {
        classify_effect(self)
    }

    pub fn description(self) -> String {
        let aggr = if self.aggressive() { "aggressive" } else { "non-aggressive" };
        let side = match self.side() {
            Side::Buy => "buy",
            Side::Sell => "sell",
        };
        match self.category() {
            Category::Market => format!("{aggr} market {side}"),
            Category::Limit => format!("{aggr} limit {side}"),
            Category::Cancellation => format!("{aggr} limit {side} cancellation"),
        }
    }
}

impl TryFrom<u32> for OrderType {
    type Error = LobError;
    fn try_from(code: u32) -> Result<Self, LobError> {
        OrderType::new(code)
    }
}

impl From<OrderType> for u32 {
    fn from(t: OrderType) -> u32 {
        t.0 as u32
    }
}

impl fmt::Display for OrderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Signed direction row of the classification table: +1 up, -1 down, 0 unchanged.
pub fn classify_effect(order_type: OrderType) -> (i8, i8) {
    if order_type.aggressive() {
        AGGRESSIVE_EFFECT[order_type.index()]
    } else {
        (0, 0)
    }
}

/// One order arrival: time in seconds, volume in shares, jump in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderEvent {
    pub time: f64,
    pub order_type: OrderType,
    pub volume: u64,
    pub jump: u32,
}

impl OrderEvent {
    pub fn new(time: f64, code: u32, volume: u64, jump: u32) -> Result<Self, LobError> {
        let ev = OrderEvent { time, order_type: OrderType::new(code)?, volume, jump };
        ev.validate()?;
        Ok(ev)
    }

    /// Checks the mark invariants: aggressive types jump at least one tick,
    /// the others never jump, and market/limit orders carry a volume.
    pub fn validate(&self) -> Result<(), LobError> {
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(LobError::InvalidEvent(format!("time {} must be finite and >= 0", self.time)));
        }
        let t = self.order_type;
        if t.aggressive() && self.jump == 0 {
            return Err(LobError::InvalidEvent(format!("type {t} is aggressive but has jump 0")));
        }
        if !t.aggressive() && self.jump != 0 {
            return Err(LobError::InvalidEvent(format!("type {t} is non-aggressive but has jump {}", self.jump)));
        }
        if t.category() != Category::Cancellation && self.volume == 0 {
            return Err(LobError::InvalidEvent(format!("type {t} requires a positive volume")));
        }
        Ok(())
    }
}

/// Best bid and ask as tick counts on a grid of size `tick`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookState {
    pub bid: i64,
    pub ask: i64,
    pub tick: f64,
}

/// Converts a currency price to a tick count, rejecting off-grid prices.
pub fn price_to_ticks(price: f64, tick: f64) -> Result<i64, LobError> {
    let x = price / tick;
    let r = x.round();
    if !x.is_finite() || (x - r).abs() > 1e-6 {
        return Err(LobError::GridViolation { price, tick });
    }
    Ok(r as i64)
}

impl BookState {
    pub fn new(bid: i64, ask: i64, tick: f64) -> Result<Self, LobError> {
        if !(tick.is_finite() && tick > 0.0) {
            return Err(LobError::InvalidEvent(format!("tick {tick} must be positive")));
        }
        if ask - bid < 1 {
            return Err(LobError::SpreadViolation { code: 0, jump: 0, spread: ask - bid });
        }
        Ok(BookState { bid, ask, tick })
    }

    /// Builds a book from currency prices, which must lie on the tick grid.
    pub fn from_prices(bid: f64, ask: f64, tick: f64) -> Result<Self, LobError> {
        if !(tick.is_finite() && tick > 0.0) {
            return Err(LobError::InvalidEvent(format!("tick {tick} must be positive")));
        }
        BookState::new(price_to_ticks(bid, tick)?, price_to_ticks(ask, tick)?, tick)
    }

    pub fn spread_ticks(&self) -> i64 {
        self.ask - self.bid
    }

    pub fn bid_price(&self) -> f64 {
        self.bid as f64 * self.tick
    }

    pub fn ask_price(&self) -> f64 {
        self.ask as f64 * self.tick
    }

    pub fn spread(&self) -> f64 {
        self.spread_ticks() as f64 * self.tick
    }

    pub fn mid_price(&self) -> f64 {
        0.5 * (self.bid_price() + self.ask_price())
    }
}

/// Advances the book by one event: the affected quote moves `jump` ticks in
/// the classified direction, the other quote stays put.
pub fn apply_event(book: &BookState, event: &OrderEvent) -> Result<BookState, LobError> {
    event.validate()?;
    let code = event.order_type.code();
    let jump = event.jump as i64;
    if matches!(code, 3 | 4) && jump >= book.spread_ticks() {
        return Err(LobError::SpreadViolation { code, jump: event.jump, spread: book.spread_ticks() });
    }
    let (db, da) = classify_effect(event.order_type);
    Ok(BookState { bid: book.bid + db as i64 * jump, ask: book.ask + da as i64 * jump, tick: book.tick })
}

/// A recorded book state, prices in ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub time: f64,
    pub bid: i64,
    pub ask: i64,
}

impl PathPoint {
    pub fn from_book(time: f64, book: &BookState) -> Self {
        PathPoint { time, bid: book.bid, ask: book.ask }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Direction,
    Timing,
    SpreadFloor,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::Direction => "direction",
            ViolationKind::Timing => "timing",
            ViolationKind::SpreadFloor => "spread-floor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
    /// Number of aggressive (code 1..=6) events examined.
    pub aggressive_events: usize,
    pub events_checked: usize,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    /// Fraction of aggressive events that carried a direction violation.
    pub fn direction_violation_fraction(&self) -> f64 {
        if self.aggressive_events == 0 {
            return 0.0;
        }
        self.count(ViolationKind::Direction) as f64 / self.aggressive_events as f64
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} violations ({} direction, {} timing, {} spread-floor) over {} events ({} aggressive)",
            self.violations.len(),
            self.count(ViolationKind::Direction),
            self.count(ViolationKind::Timing),
            self.count(ViolationKind::SpreadFloor),
            self.events_checked,
            self.aggressive_events,
        )?;
        for v in &self.violations {
            writeln!(f, "  t={} {}: {}", v.time, v.kind, v.detail)?;
        }
        Ok(())
    }
}

fn check_sorted<T>(items: &[T], time: impl Fn(&T) -> f64, what: &'static str) -> Result<(), LobError> {
    for (i, w) in items.windows(2).enumerate() {
        if !(time(&w[1]) > time(&w[0])) {
            return Err(LobError::UnsortedInput { what, index: i + 1 });
        }
    }
    Ok(())
}

fn sign(x: i64) -> i8 {
    x.signum() as i8
}

/// Validates an event stream against a recorded book path.
///
/// The first path point is the book before any event. A price change at an
/// event time must match the classified direction of that event (a
/// direction violation otherwise, at most one per event); a change at a time
/// with no event is a timing violation; every recorded spread below one tick
/// is a spread-floor violation. Changes between two recorded points are not
/// observable.
pub fn check_consistency(events: &[OrderEvent], path: &[PathPoint]) -> Result<ConsistencyReport, LobError> {
    check_sorted(events, |e| e.time, "event stream")?;
    check_sorted(path, |p| p.time, "book path")?;
    let first = path.first().ok_or(LobError::EmptyPath)?;

    let mut report = ConsistencyReport { events_checked: events.len(), ..Default::default() };
    let spread_check = |p: &PathPoint, report: &mut ConsistencyReport| {
        if p.ask - p.bid < 1 {
            report.violations.push(Violation {
                time: p.time,
                kind: ViolationKind::SpreadFloor,
                detail: format!("spread of {} ticks (bid {}, ask {})", p.ask - p.bid, p.bid, p.ask),
            });
        }
    };
    spread_check(first, &mut report);

    let mut current = *first;
    let mut next = 1usize;
    // Consumes path points strictly before `until` as event-free changes.
    let drain_until = |until: f64, next: &mut usize, current: &mut PathPoint, report: &mut ConsistencyReport| {
        while *next < path.len() && path[*next].time < until {
            let p = path[*next];
            spread_check(&p, report);
            if p.bid != current.bid || p.ask != current.ask {
                report.violations.push(Violation {
                    time: p.time,
                    kind: ViolationKind::Timing,
                    detail: format!(
                        "quotes moved from ({}, {}) to ({}, {}) with no order event",
                        current.bid, current.ask, p.bid, p.ask
                    ),
                });
            }
            *current = p;
            *next += 1;
        }
    };

    for ev in events {
        if ev.time < first.time {
            return Err(LobError::InvalidEvent(format!(
                "event at t={} precedes the first book-path point at t={}",
                ev.time, first.time
            )));
        }
        drain_until(ev.time, &mut next, &mut current, &mut report);
        let before = current;
        if next < path.len() && path[next].time == ev.time {
            let p = path[next];
            spread_check(&p, &mut report);
            current = p;
            next += 1;
        }
        if ev.order_type.aggressive() {
            report.aggressive_events += 1;
        }
        let (eb, ea) = classify_effect(ev.order_type);
        let (db, da) = (sign(current.bid - before.bid), sign(current.ask - before.ask));
        if (db, da) != (eb, ea) {
            report.violations.push(Violation {
                time: ev.time,
                kind: ViolationKind::Direction,
                detail: format!(
                    "type {} expects (bid {:+}, ask {:+}) but quotes moved ({:+}, {:+}) ticks",
                    ev.order_type,
                    eb,
                    ea,
                    current.bid - before.bid,
                    current.ask - before.ask
                ),
            });
        }
    }
    drain_until(f64::INFINITY, &mut next, &mut current, &mut report);
    Ok(report)
}
