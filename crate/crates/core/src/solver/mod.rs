//! Backward solution of the market maker's quasi-variational inequality.
//!
//! Phi(t, q, s, r^b, r^a) is stepped back from the terminal liquidation value
//! with the explicit penalty scheme
//! `Phi_n = Phi + dt (L Phi - theta q^2) + (dt / gamma) (M Phi - Phi)^+`.

mod operator;
mod params;
mod policy;
mod quadrature;

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{IoError, SolverError};
use crate::sim::MarketParams;

pub use operator::{impulse_sweeps, Action, Operator, Slice, REGIMES};
pub use params::{
    impulse_cost, side_flow, switching_cost, terminal_value, v_bar_max, CostModel, ExchangeParams, GridSpec, MMParams,
};
pub use policy::{
    extract_thresholds, ActionTable, Decision, Policy, PolicyTable, SideThresholds, ThresholdPolicy, ThresholdRow,
};
pub use quadrature::{fill_offset, jump_atoms, volume_nodes};

/// Stored slices of Phi. Slice `k` is at step `steps[k]`, remaining time
/// `horizon - steps[k] * dt`; the last slice is the terminal one.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grid: GridSpec,
    pub tick: f64,
    pub fee: f64,
    pub steps: Vec<usize>,
    pub slices: Vec<Slice>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    grid: GridSpec,
    tick: f64,
    fee: f64,
}

const MAGIC: &[u8; 8] = b"LOBMMVG1";
const FORMAT_VERSION: u32 = 1;

impl ValueGrid {
    pub fn remaining(&self, k: usize) -> f64 {
        self.grid.remaining(self.steps[k])
    }

    pub fn terminal(&self) -> &Slice {
        self.slices.last().expect("a value grid always holds the terminal slice")
    }

    /// Index of the stored slice nearest to remaining time `t_remaining`,
    /// the earlier one on ties. Times outside the horizon clamp.
    pub fn slice_for(&self, t_remaining: f64) -> usize {
        policy::slice_index(&self.grid, &self.steps, t_remaining)
    }

    /// Binary layout, all integers and floats little-endian:
    /// magic `LOBMMVG1`; u32 format version; u32 header length and a JSON
    /// header holding the grid spec, tick and fee; u64 slice count and that
    /// many u64 step indices; then f64 values in row-major order
    /// `[slice][q][spread][r^b][r^a]`.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&Header { grid: self.grid.clone(), tick: self.tick, fee: self.fee })
            .map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.steps.len() as u64).to_le_bytes())?;
        for &s in &self.steps {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        let (nq, ns) = (self.grid.n_q, self.grid.n_s);
        let mut buf = Vec::with_capacity(nq * ns * 4 * 8);
        for slice in &self.slices {
            buf.clear();
            for iq in 0..nq {
                for st in 1..=ns {
                    for (rb, ra) in REGIMES {
                        buf.extend_from_slice(&slice.get(iq, st, rb, ra).to_le_bytes());
                    }
                }
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SolverError> {
        let fmt = |m: String| SolverError::Format(m);
        let io = |e: std::io::Error| SolverError::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt("not a value grid file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(fmt(format!("unsupported format version {version}")));
        }
        r.read_exact(&mut b4).map_err(io)?;
        let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| fmt(e.to_string()))?;
        header.grid.validate()?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let count = u64::from_le_bytes(b8) as usize;
        if count == 0 || count > header.grid.n_steps() + 1 {
            return Err(fmt(format!("bad slice count {count}")));
        }
        let mut steps = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(io)?;
            steps.push(u64::from_le_bytes(b8) as usize);
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) || *steps.last().unwrap() != header.grid.n_steps() {
            return Err(fmt("step indices must increase and end at the terminal step".into()));
        }
        let (nq, ns) = (header.grid.n_q, header.grid.n_s);
        let mut raw = vec![0u8; nq * ns * 4 * 8];
        let mut slices = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut raw).map_err(io)?;
            let mut vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let mut slice = Slice::zeros(nq, ns);
            for iq in 0..nq {
                for st in 1..=ns {
                    for (rb, ra) in REGIMES {
                        slice.set(iq, st, rb, ra, vals.next().unwrap());
                    }
                }
            }
            slices.push(slice);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(io)? != 0 {
            return Err(fmt("trailing bytes after payload".into()));
        }
        Ok(ValueGrid { grid: header.grid, tick: header.tick, fee: header.fee, steps, slices })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let f = std::fs::File::create(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })?;
        self.write_to(std::io::BufWriter::new(f)).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let f = std::fs::File::open(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })?;
        ValueGrid::read_from(std::io::BufReader::new(f)).map_err(|e| IoError::Other(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub steps: usize,
    pub stored: usize,
    pub stability_factor: f64,
    /// Smallest `Phi - M Phi` over the first slice.
    pub obstacle_gap_min: f64,
    /// `10 gamma dt max|L Phi - theta q^2|` on the first slice.
    pub obstacle_tolerance: f64,
    pub max_abs_phi: f64,
    pub elapsed_secs: f64,
    pub impulse_cost: f64,
}

pub struct Solution {
    pub values: ValueGrid,
    pub policy: PolicyTable,
    pub report: SolveReport,
}

/// Phi one time step earlier.
pub fn backward_step(op: &Operator, phi_next: &Slice, t_remaining_next: f64) -> Result<Slice, SolverError> {
    op.step(phi_next, t_remaining_next)
}

pub fn generator_apply(
    phi: &Slice,
    mm: &MMParams,
    market: &MarketParams,
    exchange: &ExchangeParams,
    grid: &GridSpec,
) -> Result<Slice, SolverError> {
    Operator::new(mm, market, exchange, grid)?.generator(phi)
}

pub fn intervention_apply(
    phi: &Slice,
    t_remaining: f64,
    mm: &MMParams,
    market: &MarketParams,
    exchange: &ExchangeParams,
    grid: &GridSpec,
) -> Result<(Slice, Vec<Action>), SolverError> {
    Operator::new(mm, market, exchange, grid)?.intervention(phi, t_remaining)
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, SolverError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SolverError::InvalidParams(format!("cannot start {workers} workers: {e}")))
}

/// Solves back from the terminal condition and extracts the policy.
pub fn solve(
    mm: &MMParams,
    market: &MarketParams,
    exchange: &ExchangeParams,
    grid: &GridSpec,
    workers: usize,
) -> Result<Solution, SolverError> {
    let op = Operator::new(mm, market, exchange, grid)?;
    let pool = thread_pool(workers)?;
    pool.install(|| solve_with(&op))
}

/// Solves with an existing operator on the current rayon pool.
pub fn solve_with(op: &Operator) -> Result<Solution, SolverError> {
    let start = Instant::now();
    let grid = &op.grid;
    let n = grid.n_steps();
    let stored = |k: usize| k.is_multiple_of(grid.store_stride) || k == n;
    let mut phi = Slice::terminal(grid, op.costs.tick, op.costs.fee);
    let mut steps = vec![n];
    let mut slices = vec![phi.clone()];
    for k in (0..n).rev() {
        let next = op.step(&phi, grid.remaining(k + 1))?;
        let bound = grid.divergence_bound;
        if let Some(bad) = next.data().iter().find(|v| !v.is_finite() || v.abs() > bound) {
            return Err(SolverError::Divergence { step: k, value: bad.abs(), bound });
        }
        phi = next;
        if stored(k) {
            steps.push(k);
            slices.push(phi.clone());
        }
        if k % (n / 10).max(1) == 0 {
            log::info!("solver: {} of {n} steps done", n - k);
        }
    }
    steps.reverse();
    slices.reverse();
    let values = ValueGrid { grid: grid.clone(), tick: op.costs.tick, fee: op.costs.fee, steps, slices };

    let first = &values.slices[0];
    let (mvals, _) = op.intervention(first, grid.remaining(values.steps[0]))?;
    let lphi = op.generator(first)?;
    let mut gap = f64::INFINITY;
    let mut scale: f64 = 0.0;
    for st in 1..=grid.n_s {
        for (rb, ra) in REGIMES {
            for iq in 0..grid.n_q {
                let q = grid.q_at(iq);
                gap = gap.min(first.get(iq, st, rb, ra) - mvals.get(iq, st, rb, ra));
                scale = scale.max((lphi.get(iq, st, rb, ra) - op.theta() * q * q).abs());
            }
        }
    }
    let tolerance = 10.0 * grid.penalty * grid.dt * scale;
    if gap < -tolerance {
        log::warn!("obstacle gap {gap:.3e} is below the tolerance -{tolerance:.3e}");
    }
    let policy = PolicyTable::from_solution(&values, op)?;
    let report = SolveReport {
        steps: n,
        stored: values.steps.len(),
        stability_factor: op.stability_factor(),
        obstacle_gap_min: gap,
        obstacle_tolerance: tolerance,
        max_abs_phi: values.slices.iter().map(|s| s.max_abs()).fold(0.0, f64::max),
        elapsed_secs: start.elapsed().as_secs_f64(),
        impulse_cost: op.costs.impulse,
    };
    Ok(Solution { values, policy, report })
}
