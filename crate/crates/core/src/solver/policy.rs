//! Action thresholds, the full action lookup, and the policies the backtester consults.

use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{IoError, SolverError};

use super::operator::{impulse_sweeps, Action, Operator, Slice};
use super::params::{CostModel, GridSpec};
use super::ValueGrid;

// JSON has no infinities; thresholds that never trigger are written as "inf" / "-inf".
mod extended_float {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
            },
        }
    }
}

/// Thresholds on one side at one (time, spread). Infinite values mean the
/// action is never taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideThresholds {
    #[serde(with = "extended_float")]
    pub q_off: f64,
    #[serde(with = "extended_float")]
    pub q_imp: f64,
    #[serde(with = "extended_float")]
    pub q_action: f64,
    #[serde(with = "extended_float")]
    pub q_on: f64,
    /// Inventory the impulse at `q_imp` returns to.
    #[serde(with = "extended_float")]
    pub anchor: f64,
    /// Size of the optimal impulse at `q_imp`, zero when there is none.
    pub impulse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub t_remaining: f64,
    pub spread_ticks: usize,
    pub bid: SideThresholds,
    pub ask: SideThresholds,
}

fn first_hit(range: impl Iterator<Item = usize>, mut pred: impl FnMut(usize) -> bool) -> Option<usize> {
    range.into_iter().find(|&i| pred(i))
}

// Whether a sell (left) or buy (right) impulse in the same regime weakly improves Phi.
fn impulse_gain(row: &[f64], q: &[f64], target: usize, i: usize, k: f64, ci: f64) -> bool {
    target != usize::MAX && (row[target] - k * (q[i] - q[target]).abs()) - ci >= row[i]
}

fn bid_side(slice: &Slice, grid: &GridSpec, q: &[f64], s: usize, t_rem: f64, costs: &CostModel) -> SideThresholds {
    let n = grid.n_q;
    let on = slice.row(s, 1, 1);
    let off = slice.row(s, 0, 1);
    let k = costs.crossing(s);
    let ci = costs.impulse;
    let m = grid.zeta_stride();
    let (mut l_on, mut r_on) = (vec![0; n], vec![0; n]);
    let (mut l_off, mut r_off) = (vec![0; n], vec![0; n]);
    impulse_sweeps(on, q, k, m, &mut l_on, &mut r_on);
    impulse_sweeps(off, q, k, m, &mut l_off, &mut r_off);

    // switching the bid off is free
    let off_idx = first_hit(0..n, |i| off[i] - 0.0 >= on[i]);
    let q_off = off_idx.map_or(f64::INFINITY, |i| q[i]);
    let imp_off = off_idx.and_then(|s0| first_hit(s0..n, |i| impulse_gain(off, q, l_off[i], i, k, ci)));
    let imp_on = first_hit(0..n, |i| impulse_gain(on, q, l_on[i], i, k, ci));
    let (q_imp, impulse) = match (imp_on, imp_off) {
        (Some(a), Some(b)) if q[b] < q[a] => (q[b], q[b] - q[l_off[b]]),
        (Some(a), _) => (q[a], q[a] - q[l_on[a]]),
        (None, Some(b)) => (q[b], q[b] - q[l_off[b]]),
        (None, None) => (f64::INFINITY, 0.0),
    };
    let q_on = match off_idx {
        None => f64::INFINITY,
        Some(s0) => {
            let c = costs.switch_on(crate::lob::BookSide::Bid, t_rem, s);
            (0..=s0).rev().find(|&i| on[i] - c >= off[i]).map_or(f64::NEG_INFINITY, |i| q[i])
        }
    };
    SideThresholds { q_off, q_imp, q_action: q_off.min(q_imp), q_on, anchor: q_imp - impulse, impulse }
}

fn ask_side(slice: &Slice, grid: &GridSpec, q: &[f64], s: usize, t_rem: f64, costs: &CostModel) -> SideThresholds {
    let n = grid.n_q;
    let on = slice.row(s, 1, 1);
    let off = slice.row(s, 1, 0);
    let k = costs.crossing(s);
    let ci = costs.impulse;
    let m = grid.zeta_stride();
    let (mut l_on, mut r_on) = (vec![0; n], vec![0; n]);
    let (mut l_off, mut r_off) = (vec![0; n], vec![0; n]);
    impulse_sweeps(on, q, k, m, &mut l_on, &mut r_on);
    impulse_sweeps(off, q, k, m, &mut l_off, &mut r_off);

    let off_idx = first_hit((0..n).rev(), |i| off[i] - 0.0 >= on[i]);
    let q_off = off_idx.map_or(f64::NEG_INFINITY, |i| q[i]);
    let imp_off = off_idx.and_then(|s0| first_hit((0..=s0).rev(), |i| impulse_gain(off, q, r_off[i], i, k, ci)));
    let imp_on = first_hit((0..n).rev(), |i| impulse_gain(on, q, r_on[i], i, k, ci));
    let (q_imp, impulse) = match (imp_on, imp_off) {
        (Some(a), Some(b)) if q[b] > q[a] => (q[b], q[r_off[b]] - q[b]),
        (Some(a), _) => (q[a], q[r_on[a]] - q[a]),
        (None, Some(b)) => (q[b], q[r_off[b]] - q[b]),
        (None, None) => (f64::NEG_INFINITY, 0.0),
    };
    let q_on = match off_idx {
        None => f64::NEG_INFINITY,
        Some(s0) => {
            let c = costs.switch_on(crate::lob::BookSide::Ask, t_rem, s);
            (s0..n).find(|&i| on[i] - c >= off[i]).map_or(f64::INFINITY, |i| q[i])
        }
    };
    SideThresholds { q_off, q_imp, q_action: q_off.max(q_imp), q_on, anchor: q_imp + impulse, impulse }
}

/// Thresholds for every stored slice and spread.
///
/// Bid side: `q_off` is the lowest inventory where dropping the bid is at
/// least as good as quoting both sides; `q_imp` the lowest inventory where a
/// sell impulse at least pays for itself, in the bid-off regime (above
/// `q_off`) or with both sides on; `q_on` the highest inventory up to `q_off`
/// where switching the bid back on pays its cost. The ask side mirrors this.
pub fn extract_thresholds(values: &ValueGrid, costs: &CostModel) -> Vec<ThresholdRow> {
    let grid = &values.grid;
    let q: Vec<f64> = (0..grid.n_q).map(|i| grid.q_at(i)).collect();
    let mut rows = Vec::with_capacity(values.slices.len() * grid.n_s);
    for (k, slice) in values.slices.iter().enumerate() {
        let t_rem = values.remaining(k);
        for s in 1..=grid.n_s {
            rows.push(ThresholdRow {
                t_remaining: t_rem,
                spread_ticks: s,
                bid: bid_side(slice, grid, &q, s, t_rem, costs),
                ask: ask_side(slice, grid, &q, s, t_rem, costs),
            });
        }
    }
    rows
}

/// A regime change and/or impulse (in shares, positive buys).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub regimes: (u8, u8),
    pub zeta: f64,
}

/// Something the backtester can ask what to do.
pub trait Policy: Send + Sync {
    /// Horizon the policy was solved over.
    fn horizon(&self) -> f64;
    /// Remaining times, within the horizon, at which decisions may change
    /// without any order arriving.
    fn check_times(&self) -> Vec<f64>;
    fn decide(&self, t_remaining: f64, q: f64, s_ticks: i64, regimes: (u8, u8)) -> Option<Decision>;
}

pub(crate) fn slice_index(grid: &GridSpec, steps: &[usize], t_remaining: f64) -> usize {
    let step = ((grid.horizon - t_remaining) / grid.dt).clamp(0.0, grid.n_steps() as f64);
    let k = steps.partition_point(|&s| (s as f64) < step);
    if k == 0 {
        0
    } else if k == steps.len() || step - steps[k - 1] as f64 <= steps[k] as f64 - step {
        k - 1
    } else {
        k
    }
}

const ACT_FLAG: u32 = 1 << 31;
const ZETA_BIAS: i64 = 1 << 27;

fn pack(act: bool, a: Action) -> u32 {
    let z = (a.zeta_steps as i64 + ZETA_BIAS) as u32;
    (if act { ACT_FLAG } else { 0 }) | (z << 2) | ((a.regimes.0 as u32) << 1) | a.regimes.1 as u32
}

fn unpack(p: u32) -> (bool, Action) {
    let z = ((p & !ACT_FLAG) >> 2) as i64 - ZETA_BIAS;
    (p & ACT_FLAG != 0, Action { regimes: (((p >> 1) & 1) as u8, (p & 1) as u8), zeta_steps: z as i32 })
}

/// The intervention decision at every stored (time, state): act when
/// `M Phi >= Phi`, taking the maximizing regimes and impulse.
#[derive(Debug, Clone)]
pub struct ActionTable {
    grid: GridSpec,
    steps: Vec<usize>,
    packed: Vec<Vec<u32>>,
}

impl ActionTable {
    pub fn build(values: &ValueGrid, op: &Operator) -> Result<Self, SolverError> {
        if op.grid.n_q != values.grid.n_q || op.grid.n_s != values.grid.n_s {
            return Err(SolverError::GridMismatch { expected: op.grid.cells(), got: values.grid.cells() });
        }
        let mut packed = Vec::with_capacity(values.slices.len());
        for (k, slice) in values.slices.iter().enumerate() {
            let (m, acts) = op.intervention(slice, values.remaining(k))?;
            packed.push(
                slice.data().iter().zip(m.data()).zip(&acts).map(|((p, mv), a)| pack(*mv >= *p, *a)).collect(),
            );
        }
        Ok(ActionTable { grid: values.grid.clone(), steps: values.steps.clone(), packed })
    }

    /// Raw lookup at a grid state of stored slice `k`.
    pub fn at(&self, k: usize, iq: usize, s_ticks: usize, rb: u8, ra: u8) -> (bool, Action) {
        let idx = (((s_ticks - 1) * 2 + rb as usize) * 2 + ra as usize) * self.grid.n_q + iq;
        unpack(self.packed[k][idx])
    }

    pub fn slices(&self) -> usize {
        self.packed.len()
    }
}

impl Policy for ActionTable {
    fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    fn check_times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| self.grid.remaining(s)).collect()
    }

    fn decide(&self, t_remaining: f64, q: f64, s_ticks: i64, regimes: (u8, u8)) -> Option<Decision> {
        let k = slice_index(&self.grid, &self.steps, t_remaining);
        let s = s_ticks.clamp(1, self.grid.n_s as i64) as usize;
        let (act, a) = self.at(k, self.grid.nearest_q(q), s, regimes.0, regimes.1);
        act.then_some(Decision { regimes: a.regimes, zeta: a.zeta_steps as f64 * self.grid.dq })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyTable {
    pub version: u32,
    pub grid: GridSpec,
    pub impulse_cost: f64,
    pub steps: Vec<usize>,
    pub rows: Vec<ThresholdRow>,
    #[serde(skip)]
    pub actions: Option<ActionTable>,
}

impl PolicyTable {
    pub fn from_solution(values: &ValueGrid, op: &Operator) -> Result<Self, SolverError> {
        Ok(PolicyTable {
            version: 1,
            grid: values.grid.clone(),
            impulse_cost: op.costs.impulse,
            steps: values.steps.clone(),
            rows: extract_thresholds(values, &op.costs),
            actions: Some(ActionTable::build(values, op)?),
        })
    }

    /// Row for stored slice `k` and spread `s_ticks`.
    pub fn row(&self, k: usize, s_ticks: usize) -> &ThresholdRow {
        &self.rows[k * self.grid.n_s + (s_ticks - 1)]
    }

    /// Row governing remaining time `t_remaining`.
    pub fn row_at(&self, t_remaining: f64, s_ticks: usize) -> &ThresholdRow {
        self.row(slice_index(&self.grid, &self.steps, t_remaining), s_ticks.clamp(1, self.grid.n_s))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IoError> {
        let mut out = csv::Writer::from_writer(w);
        let e = |e: csv::Error| IoError::Other(e.to_string());
        out.write_record(["t_remaining", "spread_ticks", "side", "q_off", "q_imp", "q_action", "q_on", "anchor"])
            .map_err(e)?;
        for r in &self.rows {
            for (side, t) in [("bid", &r.bid), ("ask", &r.ask)] {
                out.write_record([
                    r.t_remaining.to_string(),
                    r.spread_ticks.to_string(),
                    side.to_string(),
                    t.q_off.to_string(),
                    t.q_imp.to_string(),
                    t.q_action.to_string(),
                    t.q_on.to_string(),
                    t.anchor.to_string(),
                ])
                .map_err(e)?;
            }
        }
        out.flush().map_err(|e| IoError::Other(e.to_string()))
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), IoError> {
        let s = serde_json::to_string_pretty(self).map_err(|e| IoError::Other(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, IoError> {
        let s = std::fs::read_to_string(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&s).map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

/// Trades on the extracted thresholds alone: impulse back to the anchor past
/// `q_imp`, drop a side past `q_off`, restore it inside `q_on`.
#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    pub table: PolicyTable,
}

impl Policy for ThresholdPolicy {
    fn horizon(&self) -> f64 {
        self.table.grid.horizon
    }

    fn check_times(&self) -> Vec<f64> {
        self.table.steps.iter().map(|&s| self.table.grid.remaining(s)).collect()
    }

    fn decide(&self, t_remaining: f64, q: f64, s_ticks: i64, regimes: (u8, u8)) -> Option<Decision> {
        let row = self.table.row_at(t_remaining, s_ticks.clamp(1, self.table.grid.n_s as i64) as usize);
        let (b, a) = (&row.bid, &row.ask);
        let mut zeta = 0.0;
        if q >= b.q_imp {
            zeta = b.anchor - q;
        } else if q <= a.q_imp {
            zeta = a.anchor - q;
        }
        let q_after = q + zeta;
        let (mut rb, mut ra) = regimes;
        if rb == 1 && q_after >= b.q_off {
            rb = 0;
        } else if rb == 0 && q_after <= b.q_on {
            rb = 1;
        }
        if ra == 1 && q_after <= a.q_off {
            ra = 0;
        } else if ra == 0 && q_after >= a.q_on {
            ra = 1;
        }
        (zeta != 0.0 || (rb, ra) != regimes).then_some(Decision { regimes: (rb, ra), zeta })
    }
}
