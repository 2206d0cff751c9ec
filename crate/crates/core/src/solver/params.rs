use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::lob::BookSide;
use crate::sim::MarketParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeParams {
    pub tick: f64,
    /// Maker rebate per filled share.
    pub rebate: f64,
    /// Taker fee per share.
    pub fee: f64,
}

impl Default for ExchangeParams {
    fn default() -> Self {
        ExchangeParams { tick: 0.01, rebate: 0.002, fee: 0.003 }
    }
}

impl ExchangeParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return Err(SolverError::InvalidParams(format!("tick must be positive, got {}", self.tick)));
        }
        if !(self.rebate.is_finite() && self.rebate >= 0.0 && self.fee.is_finite() && self.fee >= 0.0) {
            return Err(SolverError::InvalidParams("rebate and fee must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MMParams {
    /// theta, per share squared per second.
    pub risk_aversion: f64,
    /// rho, the fraction of each market order filled against the market maker.
    pub participation: f64,
    pub queue_ahead_bid: f64,
    pub queue_ahead_ask: f64,
    /// alpha in the switch-on cost.
    pub switch_discount: f64,
    /// beta in the impulse overhead.
    pub impulse_discount: f64,
    /// Mean order size used in the impulse overhead. `None` takes the largest
    /// mean volume of types 1, 2, 7 and 8 from the market parameters.
    #[serde(default)]
    pub v_bar_max: Option<f64>,
}

impl MMParams {
    /// Base case with the 1000-share order size behind the $0.1 impulse overhead.
    pub fn base_case() -> Self {
        MMParams {
            risk_aversion: 1e-7,
            participation: 0.1,
            queue_ahead_bid: 3750.0,
            queue_ahead_ask: 3750.0,
            switch_discount: 0.3,
            impulse_discount: 0.1,
            v_bar_max: Some(1000.0),
        }
    }

    /// Base case with `v_bar_max` derived from the volume laws.
    pub fn base_case_derived() -> Self {
        MMParams { v_bar_max: None, ..Self::base_case() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidParams(m.into()));
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must lie in (0, 1]");
        }
        if !(self.risk_aversion.is_finite() && self.risk_aversion >= 0.0) {
            return bad("risk aversion must be non-negative");
        }
        if !(self.queue_ahead_bid >= 0.0 && self.queue_ahead_ask >= 0.0)
            || !self.queue_ahead_bid.is_finite()
            || !self.queue_ahead_ask.is_finite()
        {
            return bad("queue-ahead sizes must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.switch_discount) || !(0.0..=1.0).contains(&self.impulse_discount) {
            return bad("switch and impulse discounts must lie in [0, 1]");
        }
        if let Some(v) = self.v_bar_max {
            if !(v.is_finite() && v >= 0.0) {
                return bad("v_bar_max must be non-negative");
            }
        }
        Ok(())
    }

    pub fn queue_ahead(&self, side: BookSide) -> f64 {
        match side {
            BookSide::Bid => self.queue_ahead_bid,
            BookSide::Ask => self.queue_ahead_ask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub horizon: f64,
    pub dt: f64,
    pub dq: f64,
    /// Odd number of inventory nodes, centred on zero.
    pub n_q: usize,
    /// Largest spread in ticks.
    pub n_s: usize,
    pub dv: f64,
    pub dzeta: f64,
    /// gamma in the penalty term.
    pub penalty: f64,
    pub volume_cutoff_sigmas: f64,
    /// Keep every `store_stride`-th time slice; the terminal slice is always kept.
    pub store_stride: usize,
    /// Largest impulse searched, in shares. `None` searches the whole grid.
    pub max_impulse: Option<f64>,
    pub divergence_bound: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            horizon: 300.0,
            dt: 0.1,
            dq: 10.0,
            n_q: 2001,
            n_s: 8,
            dv: 100.0,
            dzeta: 10.0,
            penalty: 0.1,
            volume_cutoff_sigmas: 2.0,
            store_stride: 10,
            max_impulse: None,
            divergence_bound: 1e6,
        }
    }
}

impl GridSpec {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn center(&self) -> usize {
        (self.n_q - 1) / 2
    }

    /// Inventory at node `iq`; exactly antisymmetric about the centre.
    pub fn q_at(&self, iq: usize) -> f64 {
        (iq as i64 - self.center() as i64) as f64 * self.dq
    }

    /// Nearest inventory node, clamped to the grid.
    pub fn nearest_q(&self, q: f64) -> usize {
        let k = (q / self.dq).round() as i64 + self.center() as i64;
        k.clamp(0, self.n_q as i64 - 1) as usize
    }

    /// Impulse step in inventory nodes.
    pub fn zeta_stride(&self) -> usize {
        (self.dzeta / self.dq).round() as usize
    }

    pub fn cells(&self) -> usize {
        self.n_q * self.n_s * 4
    }

    /// Remaining time at step `n`.
    pub fn remaining(&self, n: usize) -> f64 {
        (self.n_steps() - n) as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidParams(m));
        if !(self.horizon.is_finite() && self.horizon > 0.0 && self.dt.is_finite() && self.dt > 0.0) {
            return bad("horizon and dt must be positive".into());
        }
        let n = self.horizon / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
            return bad(format!("horizon {} is not a whole number of steps of {}", self.horizon, self.dt));
        }
        if self.n_q.is_multiple_of(2) || self.n_q < 3 {
            return bad(format!("n_q must be odd and at least 3, got {}", self.n_q));
        }
        if self.n_s < 1 {
            return bad("n_s must be at least 1".into());
        }
        if !(self.dq > 0.0 && self.dv > 0.0 && self.dzeta > 0.0 && self.penalty > 0.0) {
            return bad("dq, dv, dzeta and penalty must be positive".into());
        }
        let m = self.dzeta / self.dq;
        if (m - m.round()).abs() > 1e-9 || m.round() < 1.0 {
            return bad(format!("dzeta {} is not a multiple of dq {}", self.dzeta, self.dq));
        }
        if !(self.volume_cutoff_sigmas > 0.0) {
            return bad("volume cutoff must be positive".into());
        }
        if self.store_stride == 0 {
            return bad("store_stride must be positive".into());
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence bound must be positive".into());
        }
        if let Some(m) = self.max_impulse {
            if !(m >= 0.0) {
                return bad("max_impulse must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Market-order flow in shares per second that fills the given side.
pub fn side_flow(side: BookSide, market: &MarketParams) -> f64 {
    let (a, b) = match side {
        BookSide::Bid => (2, 8),
        BookSide::Ask => (1, 7),
    };
    market.lambda[a - 1] * market.mean_volume(a as u8) + market.lambda[b - 1] * market.mean_volume(b as u8)
}

/// Cost of changing one side's regime. Switching off is free; switching on
/// costs the spread capture given up while the queue ahead is consumed,
/// prorated when less time remains than that.
#[allow(clippy::too_many_arguments)]
pub fn switching_cost(
    side: BookSide,
    from: u8,
    to: u8,
    t_remaining: f64,
    spread: f64,
    mm: &MMParams,
    market: &MarketParams,
    exchange: &ExchangeParams,
) -> f64 {
    if !(from == 0 && to == 1) {
        return 0.0;
    }
    switch_on_cost(mm.switch_discount, mm.queue_ahead(side), mm.participation, exchange.rebate, side_flow(side, market), t_remaining, spread)
}

fn switch_on_cost(alpha: f64, qbar: f64, rho: f64, rebate: f64, flow: f64, t_remaining: f64, spread: f64) -> f64 {
    let factor = if flow <= 0.0 {
        0.0
    } else {
        let drain = qbar / flow;
        if drain == 0.0 {
            1.0
        } else {
            (t_remaining.max(0.0) / drain).min(1.0)
        }
    };
    alpha * qbar * rho * (spread / 2.0 + rebate) * factor
}

pub fn v_bar_max(mm: &MMParams, market: &MarketParams) -> f64 {
    mm.v_bar_max.unwrap_or_else(|| [1u8, 2, 7, 8].iter().map(|&c| market.mean_volume(c)).fold(0.0, f64::max))
}

/// Fixed overhead of one impulse.
pub fn impulse_cost(mm: &MMParams, market: &MarketParams, exchange: &ExchangeParams) -> f64 {
    mm.impulse_discount * exchange.tick * mm.participation * v_bar_max(mm, market)
}

/// Everything the intervention operator needs about costs, precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub tick: f64,
    pub rebate: f64,
    pub fee: f64,
    pub impulse: f64,
    pub switch_discount: f64,
    pub participation: f64,
    pub queue_ahead_bid: f64,
    pub queue_ahead_ask: f64,
    pub flow_bid: f64,
    pub flow_ask: f64,
}

impl CostModel {
    pub fn new(mm: &MMParams, market: &MarketParams, exchange: &ExchangeParams) -> Self {
        CostModel {
            tick: exchange.tick,
            rebate: exchange.rebate,
            fee: exchange.fee,
            impulse: impulse_cost(mm, market, exchange),
            switch_discount: mm.switch_discount,
            participation: mm.participation,
            queue_ahead_bid: mm.queue_ahead_bid,
            queue_ahead_ask: mm.queue_ahead_ask,
            flow_bid: side_flow(BookSide::Bid, market),
            flow_ask: side_flow(BookSide::Ask, market),
        }
    }

    pub fn spread(&self, s_ticks: usize) -> f64 {
        s_ticks as f64 * self.tick
    }

    /// Per-share cost of crossing from the mid, `s/2 + eta`.
    pub fn crossing(&self, s_ticks: usize) -> f64 {
        self.spread(s_ticks) / 2.0 + self.fee
    }

    pub fn switch_on(&self, side: BookSide, t_remaining: f64, s_ticks: usize) -> f64 {
        let (qbar, flow) = match side {
            BookSide::Bid => (self.queue_ahead_bid, self.flow_bid),
            BookSide::Ask => (self.queue_ahead_ask, self.flow_ask),
        };
        switch_on_cost(self.switch_discount, qbar, self.participation, self.rebate, flow, t_remaining, self.spread(s_ticks))
    }

    /// Total switching cost `c^b + c^a` from regimes `from` to `to`.
    pub fn regime_change(&self, from: (u8, u8), to: (u8, u8), t_remaining: f64, s_ticks: usize) -> f64 {
        let cb = if from.0 == 0 && to.0 == 1 { self.switch_on(BookSide::Bid, t_remaining, s_ticks) } else { 0.0 };
        let ca = if from.1 == 0 && to.1 == 1 { self.switch_on(BookSide::Ask, t_remaining, s_ticks) } else { 0.0 };
        cb + ca
    }
}

/// Terminal value `-(s/2 + eta)|q|`: liquidation across half the spread plus the fee.
pub fn terminal_value(q: f64, spread: f64, fee: f64) -> f64 {
    -(spread / 2.0 + fee) * q.abs()
}
