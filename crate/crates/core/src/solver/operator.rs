//! Discrete generator, intervention operator and the explicit penalty step.
//!
//! A [`Slice`] holds Phi at one time over (q, s, r^b, r^a). Inventory is the
//! innermost axis, so the volume integrals become shifted sums over
//! contiguous rows. Terms are added in buy/sell pairs, with cash terms
//! written so that mirroring q to -q and swapping sides reproduces every
//! intermediate bit for bit.

use rayon::prelude::*;

use crate::error::SolverError;
use crate::lob::BookSide;
use crate::sim::MarketParams;

use super::params::{terminal_value, CostModel, ExchangeParams, GridSpec, MMParams};
use super::quadrature::{fill_offset, jump_atoms, volume_nodes};

pub const REGIMES: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

fn regime_index(r: (u8, u8)) -> usize {
    (r.0 as usize) * 2 + r.1 as usize
}

/// Phi over (q, s, r^b, r^a) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    n_q: usize,
    n_s: usize,
    data: Vec<f64>,
}

impl Slice {
    pub fn zeros(n_q: usize, n_s: usize) -> Self {
        Slice { n_q, n_s, data: vec![0.0; n_q * n_s * 4] }
    }

    pub fn from_fn(n_q: usize, n_s: usize, mut f: impl FnMut(usize, usize, u8, u8) -> f64) -> Self {
        let mut s = Slice::zeros(n_q, n_s);
        for st in 1..=n_s {
            for (rb, ra) in REGIMES {
                for iq in 0..n_q {
                    let i = s.idx(iq, st, rb, ra);
                    s.data[i] = f(iq, st, rb, ra);
                }
            }
        }
        s
    }

    /// Terminal slice `-(s/2 + eta)|q|`.
    pub fn terminal(grid: &GridSpec, tick: f64, fee: f64) -> Self {
        Slice::from_fn(grid.n_q, grid.n_s, |iq, st, _, _| terminal_value(grid.q_at(iq), st as f64 * tick, fee))
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    /// Flat index; `s_ticks` runs from 1 to `n_s`.
    #[inline]
    pub fn idx(&self, iq: usize, s_ticks: usize, rb: u8, ra: u8) -> usize {
        (((s_ticks - 1) * 2 + rb as usize) * 2 + ra as usize) * self.n_q + iq
    }

    #[inline]
    pub fn get(&self, iq: usize, s_ticks: usize, rb: u8, ra: u8) -> f64 {
        self.data[self.idx(iq, s_ticks, rb, ra)]
    }

    pub fn set(&mut self, iq: usize, s_ticks: usize, rb: u8, ra: u8, v: f64) {
        let i = self.idx(iq, s_ticks, rb, ra);
        self.data[i] = v;
    }

    /// Row of Phi over inventory at fixed spread and regimes.
    pub fn row(&self, s_ticks: usize, rb: u8, ra: u8) -> &[f64] {
        let start = self.idx(0, s_ticks, rb, ra);
        &self.data[start..start + self.n_q]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_data(n_q: usize, n_s: usize, data: Vec<f64>) -> Result<Self, SolverError> {
        if data.len() != n_q * n_s * 4 {
            return Err(SolverError::GridMismatch { expected: n_q * n_s * 4, got: data.len() });
        }
        Ok(Slice { n_q, n_s, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// A regime change and impulse chosen by the intervention operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub regimes: (u8, u8),
    /// Impulse in inventory nodes; positive buys.
    pub zeta_steps: i32,
}

impl Action {
    fn changes(&self, from: (u8, u8)) -> u8 {
        (self.regimes.0 != from.0) as u8 + (self.regimes.1 != from.1) as u8
    }
}

// Tie-breaking: higher value, then smaller impulse, then fewer regime changes.
#[derive(Clone, Copy)]
struct Best {
    value: f64,
    action: Action,
    key: (u32, u8),
}

impl Best {
    fn none() -> Self {
        Best { value: f64::NEG_INFINITY, action: Action { regimes: (0, 0), zeta_steps: 0 }, key: (u32::MAX, u8::MAX) }
    }

    #[inline]
    fn offer(&mut self, value: f64, action: Action, from: (u8, u8)) {
        let key = (action.zeta_steps.unsigned_abs(), action.changes(from));
        if value > self.value || (value == self.value && key < self.key) {
            *self = Best { value, action, key };
        }
    }
}

#[derive(Debug, Clone)]
struct MarketAtom {
    xi: usize,
    p: f64,
    /// (grid offset of the fill, quadrature weight)
    offsets: Vec<(usize, f64)>,
    mass: f64,
    /// Sum of weight times volume.
    mean_v: f64,
}

#[derive(Debug, Clone)]
struct MarketTerm {
    lambda: f64,
    atoms: Vec<MarketAtom>,
}

#[derive(Debug, Clone)]
struct JumpTerm {
    lambda: f64,
    atoms: Vec<(usize, f64)>,
}

/// Precomputed discrete operators for one parameter set.
#[derive(Debug, Clone)]
pub struct Operator {
    pub grid: GridSpec,
    pub costs: CostModel,
    rho: f64,
    theta: f64,
    q: Vec<f64>,
    // codes 1, 2, 7, 8
    market: [MarketTerm; 4],
    // codes 3, 4, 5, 6
    jumps: [JumpTerm; 4],
}

fn market_term(market: &MarketParams, code: u8, rho: f64, grid: &GridSpec) -> MarketTerm {
    let i = code as usize - 1;
    let marks = &market.marks[i];
    let jumps: Vec<(u32, f64)> = if matches!(code, 1 | 2) { jump_atoms(&marks.jump) } else { vec![(0, 1.0)] };
    let atoms = jumps
        .into_iter()
        .map(|(xi, p)| {
            let nodes = volume_nodes(marks.volume_given_jump(xi), grid.dv, grid.volume_cutoff_sigmas);
            let mut offsets: Vec<(usize, f64)> = Vec::new();
            for &(v, w) in &nodes {
                let off = fill_offset(rho, v, grid.dq);
                match offsets.last_mut() {
                    Some(last) if last.0 == off => last.1 += w,
                    _ => offsets.push((off, w)),
                }
            }
            MarketAtom {
                xi: xi as usize,
                p,
                offsets,
                mass: nodes.iter().map(|n| n.1).sum(),
                mean_v: nodes.iter().map(|n| n.1 * n.0).sum(),
            }
        })
        .collect();
    MarketTerm { lambda: market.lambda[i], atoms }
}

fn jump_term(market: &MarketParams, code: u8) -> JumpTerm {
    let i = code as usize - 1;
    JumpTerm {
        lambda: market.lambda[i],
        atoms: jump_atoms(&market.marks[i].jump).into_iter().map(|(k, p)| (k as usize, p)).collect(),
    }
}

/// `acc[iq] += w * src[clamp(iq - off)]` over all offsets (a fill that lowers inventory).
fn shifted_sum_down(src: &[f64], offsets: &[(usize, f64)], acc: &mut [f64]) {
    let n = src.len();
    for &(off, w) in offsets {
        let off = off.min(n);
        for a in &mut acc[..off] {
            *a += w * src[0];
        }
        for (a, s) in acc[off..].iter_mut().zip(&src[..n - off]) {
            *a += w * *s;
        }
    }
}

/// `acc[iq] += w * src[clamp(iq + off)]` (a fill that raises inventory).
fn shifted_sum_up(src: &[f64], offsets: &[(usize, f64)], acc: &mut [f64]) {
    let n = src.len();
    for &(off, w) in offsets {
        let off = off.min(n);
        for (a, s) in acc[..n - off].iter_mut().zip(&src[off..]) {
            *a += w * *s;
        }
        for a in &mut acc[n - off..] {
            *a += w * src[n - 1];
        }
    }
}

/// For each node `i`, the best sell target `left[i]` (maximizing
/// `row[j] - k |q_i - q_j|` over `j < i` stepping by `m`) and the best buy
/// target `right[i]`. Ties go to the nearer node; `usize::MAX` marks none.
pub fn impulse_sweeps(row: &[f64], q: &[f64], k: f64, m: usize, left: &mut [usize], right: &mut [usize]) {
    let n = row.len();
    let lv = |j: usize| row[j] + k * q[j];
    let rv = |j: usize| row[j] - k * q[j];
    for i in 0..n {
        left[i] = if i < m {
            usize::MAX
        } else {
            let a = i - m;
            let b = left[a];
            if b == usize::MAX || lv(a) >= lv(b) {
                a
            } else {
                b
            }
        };
    }
    for i in (0..n).rev() {
        right[i] = if i + m >= n {
            usize::MAX
        } else {
            let a = i + m;
            let b = right[a];
            if b == usize::MAX || rv(a) >= rv(b) {
                a
            } else {
                b
            }
        };
    }
}

struct Scratch {
    terms: [Vec<f64>; 8],
    g: Vec<f64>,
    conv: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { terms: std::array::from_fn(|_| vec![0.0; n]), g: vec![0.0; n], conv: vec![0.0; n] }
    }
}

impl Operator {
    pub fn new(mm: &MMParams, market: &MarketParams, exchange: &ExchangeParams, grid: &GridSpec) -> Result<Self, SolverError> {
        grid.validate()?;
        mm.validate()?;
        exchange.validate()?;
        market.validate().map_err(|e| SolverError::InvalidParams(e.to_string()))?;
        if (market.tick - exchange.tick).abs() > 1e-12 * exchange.tick {
            return Err(SolverError::InvalidParams(format!(
                "market tick {} differs from exchange tick {}",
                market.tick, exchange.tick
            )));
        }
        let rho = mm.participation;
        let total: f64 = market.lambda[..8].iter().sum();
        let stability = grid.dt * (total + 1.0 / grid.penalty);
        if stability > 1.0 {
            log::warn!("dt * (sum of intensities + 1/gamma) = {stability:.4} exceeds 1; the explicit scheme may lose monotonicity");
        }
        Ok(Operator {
            grid: grid.clone(),
            costs: CostModel::new(mm, market, exchange),
            rho,
            theta: mm.risk_aversion,
            q: (0..grid.n_q).map(|i| grid.q_at(i)).collect(),
            market: [1u8, 2, 7, 8].map(|c| market_term(market, c, rho, grid)),
            jumps: [3u8, 4, 5, 6].map(|c| jump_term(market, c)),
        })
    }

    /// `dt * (sum of lambda_1..8 + 1/gamma)`; above one the scheme is not monotone.
    pub fn stability_factor(&self) -> f64 {
        let total: f64 = self.market.iter().map(|m| m.lambda).sum::<f64>() + self.jumps.iter().map(|j| j.lambda).sum::<f64>();
        self.grid.dt * (total + 1.0 / self.grid.penalty)
    }

    fn check(&self, phi: &Slice) -> Result<(), SolverError> {
        let expected = self.grid.cells();
        if phi.n_q != self.grid.n_q || phi.n_s != self.grid.n_s || phi.data.len() != expected {
            return Err(SolverError::GridMismatch { expected, got: phi.data.len() });
        }
        Ok(())
    }

    fn blank(&self) -> Slice {
        Slice::zeros(self.grid.n_q, self.grid.n_s)
    }

    // One market-order term: `down` fills lower inventory (ask side, codes 1 and 7).
    #[allow(clippy::too_many_arguments)]
    fn market_block(
        &self,
        phi: &Slice,
        term: &MarketTerm,
        s_ticks: usize,
        rb: u8,
        ra: u8,
        down: bool,
        sc_g: &mut [f64],
        sc_conv: &mut [f64],
        out: &mut [f64],
    ) {
        let n = self.grid.n_q;
        if term.lambda == 0.0 {
            out.fill(0.0);
            return;
        }
        let r = if down { ra } else { rb };
        let tick = self.costs.tick;
        let h = self.costs.spread(s_ticks) / 2.0 + self.costs.rebate;
        let phi0 = phi.row(s_ticks, rb, ra);
        sc_g.fill(0.0);
        let mut mass = 0.0;
        for atom in &term.atoms {
            let target = (s_ticks + atom.xi).min(self.grid.n_s);
            let src = phi.row(target, rb, ra);
            if r == 1 {
                sc_conv.fill(0.0);
                if down {
                    shifted_sum_down(src, &atom.offsets, sc_conv);
                } else {
                    shifted_sum_up(src, &atom.offsets, sc_conv);
                }
                for (g, c) in sc_g.iter_mut().zip(sc_conv.iter()) {
                    *g += atom.p * *c;
                }
                mass += atom.p * atom.mass;
            } else {
                for (g, s) in sc_g.iter_mut().zip(src) {
                    *g += atom.p * *s;
                }
                mass += atom.p;
            }
        }
        for iq in 0..n {
            let q = self.q[iq];
            let mut cash = 0.0;
            for atom in &term.atoms {
                let xd = atom.xi as f64 * tick;
                let c = if r == 1 {
                    let rv = self.rho * atom.mean_v;
                    let fill = rv * h;
                    if down {
                        let a = q * atom.mass - rv;
                        (xd * a) * 0.5 + fill
                    } else {
                        let b = q * atom.mass + rv;
                        -((xd * b) * 0.5) + fill
                    }
                } else if down {
                    (xd * q) * 0.5
                } else {
                    -((xd * q) * 0.5)
                };
                cash += atom.p * c;
            }
            out[iq] = term.lambda * ((sc_g[iq] - mass * phi0[iq]) + cash);
        }
    }

    // Jump-only terms. `narrow` for codes 3 and 4; `sign` is the sign of the mid-price move.
    #[allow(clippy::too_many_arguments)]
    fn jump_block(&self, phi: &Slice, term: &JumpTerm, s_ticks: usize, rb: u8, ra: u8, narrow: bool, up: bool, out: &mut [f64]) {
        out.fill(0.0);
        if term.lambda == 0.0 {
            return;
        }
        let tick = self.costs.tick;
        let phi0 = phi.row(s_ticks, rb, ra);
        let mut mass = 0.0;
        let mut any = false;
        for &(xi, p) in &term.atoms {
            let target = if narrow {
                if xi >= s_ticks {
                    continue;
                }
                s_ticks - xi
            } else {
                (s_ticks + xi).min(self.grid.n_s)
            };
            any = true;
            mass += p;
            let src = phi.row(target, rb, ra);
            let xd = xi as f64 * tick;
            for iq in 0..out.len() {
                let half = (xd * self.q[iq]) * 0.5;
                let cash = if up { half } else { -half };
                out[iq] += p * (src[iq] + cash);
            }
        }
        if !any {
            return;
        }
        // out now holds the sum of p (Phi' + cash)
        for iq in 0..out.len() {
            out[iq] = term.lambda * (out[iq] - mass * phi0[iq]);
        }
    }

    fn generator_rows(&self, phi: &Slice, s_ticks: usize, rb: u8, ra: u8, sc: &mut Scratch, out: &mut [f64]) {
        let Scratch { terms, g, conv } = sc;
        let [t1, t2, t3, t4, t5, t6, t7, t8] = terms;
        self.market_block(phi, &self.market[0], s_ticks, rb, ra, true, g, conv, t1);
        self.market_block(phi, &self.market[1], s_ticks, rb, ra, false, g, conv, t2);
        self.jump_block(phi, &self.jumps[0], s_ticks, rb, ra, true, true, t3);
        self.jump_block(phi, &self.jumps[1], s_ticks, rb, ra, true, false, t4);
        self.jump_block(phi, &self.jumps[2], s_ticks, rb, ra, false, false, t5);
        self.jump_block(phi, &self.jumps[3], s_ticks, rb, ra, false, true, t6);
        self.market_block_passive(phi, &self.market[2], s_ticks, rb, ra, true, g, conv, t7);
        self.market_block_passive(phi, &self.market[3], s_ticks, rb, ra, false, g, conv, t8);
        for iq in 0..out.len() {
            out[iq] = ((t1[iq] + t2[iq]) + (t3[iq] + t4[iq])) + ((t5[iq] + t6[iq]) + (t7[iq] + t8[iq]));
        }
    }

    // Codes 7 and 8: no price move, so nothing happens unless the side is on.
    #[allow(clippy::too_many_arguments)]
    fn market_block_passive(
        &self,
        phi: &Slice,
        term: &MarketTerm,
        s_ticks: usize,
        rb: u8,
        ra: u8,
        down: bool,
        sc_g: &mut [f64],
        sc_conv: &mut [f64],
        out: &mut [f64],
    ) {
        let r = if down { ra } else { rb };
        if r == 0 || term.lambda == 0.0 {
            out.fill(0.0);
            return;
        }
        self.market_block(phi, term, s_ticks, rb, ra, down, sc_g, sc_conv, out);
    }

    /// The generator applied to a slice.
    pub fn generator(&self, phi: &Slice) -> Result<Slice, SolverError> {
        self.check(phi)?;
        let mut out = self.blank();
        let n = self.grid.n_q;
        let mut sc = Scratch::new(n);
        for (b, chunk) in out.data.chunks_mut(n).enumerate() {
            let (s_ticks, rb, ra) = (b / 4 + 1, ((b / 2) % 2) as u8, (b % 2) as u8);
            self.generator_rows(phi, s_ticks, rb, ra, &mut sc, chunk);
        }
        Ok(out)
    }

    /// Switching costs `c^b + c^a` for every (from, to) regime pair, plus `c^i`.
    fn cost_table(&self, t_remaining: f64, s_ticks: usize) -> [[f64; 4]; 4] {
        let mut c = [[0.0; 4]; 4];
        for from in REGIMES {
            for to in REGIMES {
                c[regime_index(from)][regime_index(to)] = self.costs.regime_change(from, to, t_remaining, s_ticks);
            }
        }
        c
    }

    // Intervention over the four regime rows at one spread.
    fn intervention_rows(
        &self,
        phi: &Slice,
        t_remaining: f64,
        s_ticks: usize,
        mut emit: impl FnMut(usize, usize, f64, Action),
    ) {
        let n = self.grid.n_q;
        let k = self.costs.crossing(s_ticks);
        let costs = self.cost_table(t_remaining, s_ticks);
        let ci = self.costs.impulse;
        let rows: [&[f64]; 4] = REGIMES.map(|(b, a)| phi.row(s_ticks, b, a));
        let brute = self.grid.max_impulse.is_some();
        let mut left = vec![vec![usize::MAX; n]; 4];
        let mut right = vec![vec![usize::MAX; n]; 4];
        if !brute {
            for t in 0..4 {
                impulse_sweeps(rows[t], &self.q, k, self.grid.zeta_stride(), &mut left[t], &mut right[t]);
            }
        }
        let m = self.grid.zeta_stride();
        let max_steps = self.grid.max_impulse.map(|z| (z / self.grid.dq + 1e-9).floor() as usize);
        for (fi, from) in REGIMES.into_iter().enumerate() {
            for i in 0..n {
                let mut best = Best::none();
                for (ti, to) in REGIMES.into_iter().enumerate() {
                    let c = costs[fi][ti];
                    let row = rows[ti];
                    if ti != fi {
                        best.offer(row[i] - c, Action { regimes: to, zeta_steps: 0 }, from);
                    }
                    let ct = c + ci;
                    let offer_j = |j: usize, best: &mut Best| {
                        let d = (self.q[i] - self.q[j]).abs();
                        best.offer((row[j] - k * d) - ct, Action { regimes: to, zeta_steps: j as i32 - i as i32 }, from);
                    };
                    if brute {
                        let lim = max_steps.unwrap();
                        let mut j = i;
                        while j >= m && i - (j - m) <= lim {
                            j -= m;
                            offer_j(j, &mut best);
                        }
                        let mut j = i;
                        while j + m < n && (j + m) - i <= lim {
                            j += m;
                            offer_j(j, &mut best);
                        }
                    } else {
                        if left[ti][i] != usize::MAX {
                            offer_j(left[ti][i], &mut best);
                        }
                        if right[ti][i] != usize::MAX {
                            offer_j(right[ti][i], &mut best);
                        }
                    }
                }
                emit(fi, i, best.value, best.action);
            }
        }
    }

    /// Intervention operator: value and maximizing action at every cell.
    pub fn intervention(&self, phi: &Slice, t_remaining: f64) -> Result<(Slice, Vec<Action>), SolverError> {
        self.check(phi)?;
        let mut vals = self.blank();
        let mut acts = vec![Action { regimes: (0, 0), zeta_steps: 0 }; self.grid.cells()];
        for s_ticks in 1..=self.grid.n_s {
            self.intervention_rows(phi, t_remaining, s_ticks, |fi, i, v, a| {
                let (rb, ra) = REGIMES[fi];
                let idx = vals.idx(i, s_ticks, rb, ra);
                vals.data[idx] = v;
                acts[idx] = a;
            });
        }
        Ok((vals, acts))
    }

    /// Exhaustive intervention over every admissible impulse; the reference for the sweeps.
    pub fn intervention_brute(&self, phi: &Slice, t_remaining: f64) -> Result<(Slice, Vec<Action>), SolverError> {
        let mut op = self.clone();
        op.grid.max_impulse = Some(self.grid.max_impulse.unwrap_or(self.grid.dq * self.grid.n_q as f64));
        op.intervention(phi, t_remaining)
    }

    fn step_rows(&self, phi: &Slice, t_remaining: f64, s_ticks: usize, sc: &mut Scratch, out: &mut [f64]) {
        let n = self.grid.n_q;
        let dt = self.grid.dt;
        let pen = dt / self.grid.penalty;
        for (b, block) in out.chunks_mut(n).enumerate() {
            let (rb, ra) = REGIMES[b];
            self.generator_rows(phi, s_ticks, rb, ra, sc, block);
        }
        let mut mvals = vec![0.0; 4 * n];
        self.intervention_rows(phi, t_remaining, s_ticks, |fi, i, v, _| mvals[fi * n + i] = v);
        for (b, block) in out.chunks_mut(n).enumerate() {
            let (rb, ra) = REGIMES[b];
            let row = phi.row(s_ticks, rb, ra);
            for iq in 0..n {
                let q = self.q[iq];
                let l = block[iq];
                let p = row[iq];
                block[iq] = p + dt * (l - self.theta * (q * q)) + pen * (mvals[b * n + iq] - p).max(0.0);
            }
        }
    }

    /// One explicit step from the slice at remaining time `t_remaining` to the
    /// slice `dt` earlier. Spreads are processed in parallel on the current pool.
    pub fn step(&self, phi: &Slice, t_remaining: f64) -> Result<Slice, SolverError> {
        self.check(phi)?;
        let mut out = self.blank();
        let n = self.grid.n_q;
        out.data.par_chunks_mut(4 * n).enumerate().for_each_init(
            || Scratch::new(n),
            |sc, (is, chunk)| self.step_rows(phi, t_remaining, is + 1, sc, chunk),
        );
        Ok(out)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn q(&self, iq: usize) -> f64 {
        self.q[iq]
    }

    pub fn side_flow(&self, side: BookSide) -> f64 {
        match side {
            BookSide::Bid => self.costs.flow_bid,
            BookSide::Ask => self.costs.flow_ask,
        }
    }
}
