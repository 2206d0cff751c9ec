//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! A failed criterion is reported, not hidden: the process exits 0 unless a
//! check could not run at all, or `ACCEPTANCE_STRICT=1` is set and a
//! criterion failed. `ACCEPTANCE_SESSIONS` overrides the Monte Carlo size
//! (10 000 by default) for quick local runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lobmm::backtest::{self, Mode, SessionSpec, StatsSummary, Strategy, SESSION_SECONDS};
use lobmm::config::RunConfig;
use lobmm::estimation::{calibrate, CalibrationOptions};
use lobmm::lob::{check_consistency, BookState, NUM_TYPES};
use lobmm::sim::{
    simulate_stream, simulate_stream_inconsistent, DirectionNoise, JumpLaw, MarkDistribution, MarketParams, VolumeLaw,
};
use lobmm::solver::{
    self, generator_apply, terminal_value, ActionTable, ExchangeParams, GridSpec, MMParams, Operator, Policy, Slice,
    Solution, REGIMES,
};

type Check = Result<(bool, String), String>;

struct Solved {
    cfg: RunConfig,
    sol: Solution,
    table: ActionTable,
    secs: f64,
}

fn solve_preset(name: &str) -> Result<Solved, String> {
    let cfg = RunConfig::preset(name).ok_or("missing preset")?;
    let start = Instant::now();
    let sol = solver::solve(&cfg.mm, &cfg.market, &cfg.exchange, &cfg.grid, workers()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let op = Operator::new(&cfg.mm, &cfg.market, &cfg.exchange, &cfg.grid).map_err(|e| e.to_string())?;
    let table = ActionTable::build(&sol.values, &op).map_err(|e| e.to_string())?;
    Ok(Solved { cfg, sol, table, secs })
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn sessions() -> usize {
    std::env::var("ACCEPTANCE_SESSIONS").ok().and_then(|v| v.parse().ok()).unwrap_or(10_000)
}

const SEED: u64 = 42;

fn monte_carlo(s: &Solved, strategy: Strategy, mode: Mode) -> Result<StatsSummary, String> {
    let spec = SessionSpec {
        market: &s.cfg.market,
        exchange: &s.cfg.exchange,
        mm: &s.cfg.mm,
        strategy,
        policy: Some(&s.table as &dyn Policy),
        horizon: SESSION_SECONDS,
        mode,
    };
    backtest::run_monte_carlo(&spec, sessions(), SEED, workers()).map(|m| m.summary).map_err(|e| e.to_string())
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn c1_terminal(base: &Solved) -> Check {
    let v = &base.sol.values;
    let g = &v.grid;
    let mut bad = 0usize;
    for s in 1..=g.n_s {
        for (rb, ra) in REGIMES {
            for iq in 0..g.n_q {
                let want = terminal_value(g.q_at(iq), s as f64 * v.tick, v.fee);
                if v.terminal().get(iq, s, rb, ra).to_bits() != want.to_bits() {
                    bad += 1;
                }
            }
        }
    }
    let cells = g.n_q * g.n_s * 4;
    Ok((bad == 0, format!("{bad} of {cells} cells differ from -(s/2 + eta)|q| at the bit level")))
}

// Atomic mark laws: every expectation is a finite sum.
fn atomic_market() -> MarketParams {
    let mk = |volume, jump| MarkDistribution { volume, jump, conditional_volume: None };
    let cat = |pairs: &[(u32, f64)]| JumpLaw::Categorical { pmf: pairs.iter().copied().collect::<BTreeMap<_, _>>() };
    let mut marks: [MarkDistribution; NUM_TYPES] = std::array::from_fn(|_| MarkDistribution::none());
    marks[0] = mk(VolumeLaw::Empirical { values: vec![100.0, 400.0, 900.0] }, cat(&[(1, 0.8), (2, 0.2)]));
    marks[1] = mk(VolumeLaw::Degenerate { value: 250.0 }, cat(&[(1, 0.5), (2, 0.5)]));
    marks[2] = mk(VolumeLaw::Degenerate { value: 100.0 }, cat(&[(1, 0.6), (2, 0.4)]));
    marks[3] = mk(VolumeLaw::Degenerate { value: 100.0 }, JumpLaw::Degenerate { ticks: 1 });
    marks[4] = mk(VolumeLaw::None, cat(&[(1, 0.7), (2, 0.3)]));
    marks[5] = mk(VolumeLaw::None, JumpLaw::Degenerate { ticks: 2 });
    marks[6] = mk(VolumeLaw::Empirical { values: vec![50.0, 150.0] }, JumpLaw::None);
    marks[7] = mk(VolumeLaw::Degenerate { value: 300.0 }, JumpLaw::None);
    let mut lambda = [0.0; NUM_TYPES];
    lambda[..8].copy_from_slice(&[0.06, 0.05, 0.22, 0.27, 0.08, 0.07, 0.11, 0.09]);
    MarketParams { tick: 0.01, lambda, marks }
}

fn atoms(law: &VolumeLaw) -> Vec<(f64, f64)> {
    match law {
        VolumeLaw::Empirical { values } => values.iter().map(|&v| (v, 1.0 / values.len() as f64)).collect(),
        VolumeLaw::Degenerate { value } => vec![(*value, 1.0)],
        VolumeLaw::None => vec![(0.0, 1.0)],
        VolumeLaw::Lognormal { .. } => panic!("oracle takes atomic laws only"),
    }
}

/// Expected instantaneous change of Phi at one cell, enumerating every
/// atom of every event type. Returns the value and the sum of term sizes.
#[allow(clippy::too_many_arguments)]
fn oracle_cell(
    phi: &Slice,
    m: &MarketParams,
    mm: &MMParams,
    ex: &ExchangeParams,
    g: &GridSpec,
    iq: usize,
    s: usize,
    rb: u8,
    ra: u8,
) -> (f64, f64) {
    let q = g.q_at(iq);
    let d = ex.tick;
    let half = s as f64 * d / 2.0 + ex.rebate;
    let rho = mm.participation;
    let here = phi.get(iq, s, rb, ra);
    let at = |j: i64, s2: usize| phi.get(j.clamp(0, g.n_q as i64 - 1) as usize, s2.min(g.n_s), rb, ra);
    let (mut total, mut scale) = (0.0, 0.0);
    let mut add = |x: f64| {
        total += x;
        scale += x.abs();
    };
    // Aggressive market orders: a buy lifts the ask (our sell fill), a sell hits the bid.
    for (code, on, sign) in [(1usize, ra, -1.0), (2, rb, 1.0)] {
        let marks = &m.marks[code - 1];
        for (xi, p) in marks.jump.atoms() {
            for (v, w) in atoms(&marks.volume) {
                let fill = on as f64 * rho * v;
                let j = iq as i64 + (sign * (fill / g.dq).round()) as i64;
                let mid_move = -sign * xi as f64 * d * (q + sign * fill) / 2.0;
                add(m.lambda[code - 1] * p * w * (at(j, s + xi as usize) - here + mid_move + fill * half));
            }
        }
    }
    // Limit orders inside the spread narrow it and move the mid.
    for (code, dir) in [(3usize, 1.0), (4, -1.0)] {
        for (xi, p) in m.marks[code - 1].jump.atoms() {
            let xi = xi as usize;
            if xi < s {
                add(m.lambda[code - 1] * p * (at(iq as i64, s - xi) - here + dir * xi as f64 * d * q / 2.0));
            }
        }
    }
    // Cancellations widen it.
    for (code, dir) in [(5usize, -1.0), (6, 1.0)] {
        for (xi, p) in m.marks[code - 1].jump.atoms() {
            add(m.lambda[code - 1] * p * (at(iq as i64, s + xi as usize) - here + dir * xi as f64 * d * q / 2.0));
        }
    }
    // Passive market orders fill without moving prices.
    for (code, on, sign) in [(7usize, ra, -1.0), (8, rb, 1.0)] {
        if on == 1 {
            for (v, w) in atoms(&m.marks[code - 1].volume) {
                let j = iq as i64 + (sign * (rho * v / g.dq).round()) as i64;
                add(m.lambda[code - 1] * w * (at(j, s) - here + rho * v * half));
            }
        }
    }
    (total, scale)
}

fn c2_generator() -> Check {
    let market = atomic_market();
    let mm = MMParams::base_case();
    let ex = ExchangeParams::default();
    let g = GridSpec { horizon: 1.0, dt: 0.1, n_q: 21, n_s: 3, store_stride: 1, ..GridSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let phi = Slice::from_fn(g.n_q, g.n_s, |_, _, _, _| rng.random_range(-1e3..1e3));
        let l = generator_apply(&phi, &mm, &market, &ex, &g).map_err(|e| e.to_string())?;
        for s in 1..=g.n_s {
            for (rb, ra) in REGIMES {
                for iq in 0..g.n_q {
                    let (want, scale) = oracle_cell(&phi, &market, &mm, &ex, &g, iq, s, rb, ra);
                    worst = worst.max((l.get(iq, s, rb, ra) - want).abs() / scale.max(want.abs()));
                }
            }
        }
    }
    Ok((worst <= 1e-12, format!("100 random slices on 21 x 3, worst relative error {worst:.2e} (limit 1e-12)")))
}

struct Equilibrium {
    threshold: (f64, f64),
    anchor: (f64, f64),
    impulse: (f64, f64),
    ok: bool,
}

// Bid and mirrored ask thresholds at spread 1 over every stored time with
// at least 120 s remaining.
fn equilibrium(s: &Solved) -> Equilibrium {
    let g = &s.sol.values.grid;
    let (hq, hm) = (g.dq, g.dq * g.zeta_stride() as f64);
    let widen = |r: (f64, f64), x: f64| (r.0.min(x), r.1.max(x));
    let mut e = Equilibrium {
        threshold: (f64::INFINITY, f64::NEG_INFINITY),
        anchor: (f64::INFINITY, f64::NEG_INFINITY),
        impulse: (f64::INFINITY, f64::NEG_INFINITY),
        ok: true,
    };
    for k in 0..s.sol.values.steps.len() {
        if s.sol.values.remaining(k) < 120.0 - 1e-9 {
            continue;
        }
        let row = s.sol.policy.row(k, 1);
        for (q_imp, anchor, size) in [
            (row.bid.q_imp, row.bid.anchor, row.bid.impulse),
            (-row.ask.q_imp, -row.ask.anchor, row.ask.impulse.abs()),
        ] {
            e.threshold = widen(e.threshold, q_imp);
            e.anchor = widen(e.anchor, anchor);
            e.impulse = widen(e.impulse, size);
            e.ok &= (q_imp - 750.0).abs() <= 2.0 * hq
                && (anchor - 520.0).abs() <= 2.0 * hq
                && (size - 230.0).abs() <= 2.0 * hm;
        }
    }
    e
}

fn describe(e: &Equilibrium) -> String {
    let r = |x: (f64, f64)| if x.0 == x.1 { format!("{}", x.0) } else { format!("{}..{}", x.0, x.1) };
    format!("threshold {}, anchor {}, impulse {}", r(e.threshold), r(e.anchor), r(e.impulse))
}

fn c3_policy(base: &Solved, derived: &Solved) -> Check {
    let (b, d) = (equilibrium(base), equilibrium(derived));
    Ok((
        b.ok,
        format!(
            "v_bar_max = 1000 (c_i = {:.4}): {}; solved in {:.0} s on {} worker(s). \
             Order size from the volume laws (c_i = {:.4}): {} [{}]",
            base.sol.report.impulse_cost,
            describe(&b),
            base.secs,
            workers(),
            derived.sol.report.impulse_cost,
            describe(&d),
            if d.ok { "within tolerance" } else { "outside tolerance" }
        ),
    ))
}

fn bid_off_horizon(s: &Solved) -> (Option<f64>, bool) {
    let v = &s.sol.values;
    let finite: Vec<(f64, bool)> =
        (0..v.steps.len()).map(|k| (v.remaining(k), s.sol.policy.row(k, 1).bid.q_off.is_finite())).collect();
    let last = finite.iter().filter(|x| x.1).map(|x| x.0).fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let contiguous = last.is_some_and(|t| finite.iter().all(|&(r, f)| f == (r <= t + 1e-9)));
    (last, contiguous)
}

fn c4_bid_off(base: &Solved, derived: &Solved) -> Check {
    let (b, b_contig) = bid_off_horizon(base);
    let (d, _) = bid_off_horizon(derived);
    let ok = b.is_some_and(|t| (t - 26.0).abs() <= 5.0);
    let show = |t: Option<f64>| t.map_or("never".into(), |t| format!("<= {t} s"));
    Ok((
        ok,
        format!(
            "q_off^b at spread 1 finite for remaining time {} ({}); alternate preset {}",
            show(b),
            if b_contig { "and for every shorter time" } else { "with gaps" },
            show(d)
        ),
    ))
}

fn c5_symmetry(base: &Solved) -> Check {
    let v = &base.sol.values;
    let g = &v.grid;
    let mut worst: f64 = 0.0;
    for slice in &v.slices {
        for s in 1..=g.n_s {
            for (rb, ra) in REGIMES {
                for iq in 0..g.n_q {
                    let a = slice.get(iq, s, rb, ra);
                    let b = slice.get(g.n_q - 1 - iq, s, ra, rb);
                    if a != b {
                        worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
                    }
                }
            }
        }
    }
    let mut mismatched = 0;
    for row in &base.sol.policy.rows {
        let (b, a) = (&row.bid, &row.ask);
        if a.q_imp != -b.q_imp || a.q_off != -b.q_off || a.q_on != -b.q_on || a.anchor != -b.anchor || a.q_action != -b.q_action
        {
            mismatched += 1;
        }
    }
    Ok((
        worst <= 1e-10 && mismatched == 0,
        format!(
            "base market is symmetric; worst relative mirror error {worst:.2e} over {} slices; \
             {mismatched} of {} threshold rows not exact negations",
            v.slices.len(),
            base.sol.policy.rows.len()
        ),
    ))
}

fn c6_spread(base: &Solved) -> Check {
    let v = &base.sol.values;
    let n_s = v.grid.n_s;
    let mut bad_times = Vec::new();
    // The terminal slice is skipped: liquidation replaces every action there,
    // so all thresholds are infinite.
    let decision_times = v.steps.len() - 1;
    for k in 0..decision_times {
        let bid: Vec<f64> = (1..=n_s).map(|s| base.sol.policy.row(k, s).bid.q_imp).collect();
        let ask: Vec<f64> = (1..=n_s).map(|s| -base.sol.policy.row(k, s).ask.q_imp).collect();
        let ok = [&bid, &ask].iter().all(|t| t.windows(2).all(|w| w[1] >= w[0]) && t[1] > t[0]);
        if !ok {
            bad_times.push(v.remaining(k));
        }
    }
    let first: Vec<String> = (1..=n_s).map(|s| fmt_q(base.sol.policy.row(0, s).bid.q_imp)).collect();
    let detail = format!(
        "bid impulse thresholds at {} s by spread: {}; {} of {} decision times before expiry violate{}",
        v.remaining(0),
        first.join(" "),
        bad_times.len(),
        decision_times,
        if bad_times.is_empty() {
            String::new()
        } else {
            format!(" (remaining times {}..{} s)", bad_times.iter().cloned().fold(f64::INFINITY, f64::min), bad_times.iter().cloned().fold(0.0, f64::max))
        }
    );
    Ok((bad_times.is_empty(), detail))
}

fn fmt_q(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "inf".into()
    }
}

struct Desk {
    opt: StatsSummary,
    unc: StatsSummary,
}

fn desk_checks(d: &Desk) -> (bool, String) {
    let ratio = match (d.opt.ir, d.unc.ir) {
        (Some(a), Some(b)) if b > 0.0 => a / b,
        _ => f64::NAN,
    };
    let k = d.opt.kurtosis.unwrap_or(f64::NAN);
    let sk = d.opt.skewness.unwrap_or(f64::NAN);
    let ok = within(d.opt.mean, 6471.0, 0.05)
        && within(d.opt.sd, 516.0, 0.15)
        && within(d.unc.mean, 8224.0, 0.05)
        && within(d.unc.sd, 10_258.0, 0.20)
        && (2.8..=3.8).contains(&k)
        && (-0.1..=0.3).contains(&sk)
        && ratio >= 10.0;
    let s = |x: &StatsSummary| {
        format!("mean {:.0} sd {:.0} skew {} kurt {} IR {}", x.mean, x.sd, fmt_opt(x.skewness), fmt_opt(x.kurtosis), fmt_opt(x.ir))
    };
    (ok, format!("optimal {}; unconstrained {}; IR ratio {ratio:.1}", s(&d.opt), s(&d.unc)))
}

fn c7_desk(base: &Desk, derived_opt: &StatsSummary) -> Check {
    let (ok, detail) = desk_checks(base);
    let alt = Desk { opt: *derived_opt, unc: base.unc };
    let (alt_ok, _) = desk_checks(&alt);
    Ok((
        ok || alt_ok,
        format!(
            "n = {}, v_bar_max = 1000: {detail}{}. Alternate preset, optimal: mean {:.0} sd {:.0} skew {} kurt {} IR {}{}",
            base.opt.n,
            if ok { " [within tolerance]" } else { " [outside tolerance]" },
            derived_opt.mean,
            derived_opt.sd,
            fmt_opt(derived_opt.skewness),
            fmt_opt(derived_opt.kurtosis),
            fmt_opt(derived_opt.ir),
            if alt_ok { " [within tolerance]" } else { " [outside tolerance]" }
        ),
    ))
}

fn c8_inconsistency(base: &Solved, desk: &Desk) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, lo, hi) in [("lob1", 0.40, 0.70), ("lob2", 0.40, 0.70), ("lob3", 0.12, 0.33)] {
        let noise = DirectionNoise::preset(name).ok_or("missing noise preset")?;
        for (strategy, cons) in [(Strategy::Optimal, &desk.opt), (Strategy::Unconstrained, &desk.unc)] {
            let noisy = monte_carlo(base, strategy, Mode::Inconsistent(noise))?;
            let over = backtest::overstatement(cons, &noisy);
            let pass = (lo..=hi).contains(&over);
            ok &= pass;
            parts.push(format!(
                "{name} {}: {:.1}%{}",
                if strategy == Strategy::Optimal { "optimal" } else { "unconstrained" },
                100.0 * over,
                if pass { "" } else { " (out of range)" }
            ));
        }
    }
    Ok((ok, format!("n = {}; {} (ranges 40..70% for LOB 1/2, 12..33% for LOB 3)", sessions(), parts.join(", "))))
}

fn book0(tick: f64) -> Result<BookState, String> {
    BookState::from_prices(100.0, 100.0 + tick, tick).map_err(|e| e.to_string())
}

fn c9_checker() -> Check {
    let m = MarketParams::base_case();
    let (mut violations, mut events) = (0usize, 0usize);
    let (mut direction, mut aggressive) = (0usize, 0usize);
    for seed in 0..100u64 {
        let (ev, path) = simulate_stream(&m, SESSION_SECONDS, book0(m.tick)?, seed).map_err(|e| e.to_string())?;
        let r = check_consistency(&ev, &path).map_err(|e| e.to_string())?;
        violations += r.violations.len();
        events += ev.len();
        let (ev, path) = simulate_stream_inconsistent(&m, SESSION_SECONDS, book0(m.tick)?, DirectionNoise::lob1(), seed)
            .map_err(|e| e.to_string())?;
        let r = check_consistency(&ev, &path).map_err(|e| e.to_string())?;
        direction += (r.direction_violation_fraction() * r.aggressive_events as f64).round() as usize;
        aggressive += r.aggressive_events as usize;
    }
    let frac = direction as f64 / aggressive as f64;
    Ok((
        violations == 0 && (frac - 0.5).abs() <= 0.03,
        format!(
            "100 consistent sessions: {violations} violations over {events} events; \
             100 LOB 1 sessions: direction violations on {frac:.4} of {aggressive} aggressive events"
        ),
    ))
}

fn c10_estimation() -> Check {
    let m = MarketParams::base_case();
    let (ev, path) = simulate_stream(&m, SESSION_SECONDS, book0(m.tick)?, 7).map_err(|e| e.to_string())?;
    let r = calibrate(&ev, &path, SESSION_SECONDS, m.tick, &CalibrationOptions::default()).map_err(|e| e.to_string())?;
    let mut worst_lambda: f64 = 0.0;
    let mut worst_vol: f64 = 0.0;
    let mut misses = Vec::new();
    for i in 0..NUM_TYPES {
        if m.lambda[i] <= 0.0 {
            continue;
        }
        let z = (r.params.lambda[i] - m.lambda[i]).abs() / r.std_err[i];
        worst_lambda = worst_lambda.max(z);
        if z > 3.0 {
            misses.push(format!("lambda_{}", i + 1));
        }
        if let (VolumeLaw::Lognormal { mu, sigma }, VolumeLaw::Lognormal { mu: mu_hat, sigma: s_hat }) =
            (&m.marks[i].volume, &r.params.marks[i].volume)
        {
            // Maximum-likelihood standard errors for n observations.
            let n = r.counts[i] as f64;
            let zm = (mu_hat - mu).abs() / (s_hat / n.sqrt());
            let zs = (s_hat - sigma).abs() / (s_hat / (2.0 * n).sqrt());
            worst_vol = worst_vol.max(zm).max(zs);
            if zm.max(zs) > 3.0 {
                misses.push(format!("volume_{}", i + 1));
            }
        }
    }
    let naive = [2, 3].map(|i| r.counts[i] as f64 / SESSION_SECONDS);
    let gated = [r.params.lambda[2], r.params.lambda[3]];
    let gated_ok = naive[0] < gated[0] && naive[1] < gated[1];
    Ok((
        misses.is_empty() && gated_ok,
        format!(
            "one 6.5 h session, {} events: worst lambda error {worst_lambda:.2} s.e., worst lognormal error \
             {worst_vol:.2} s.e.{}; codes 3/4 gated {:.4}/{:.4} vs naive {:.4}/{:.4}",
            ev.len(),
            if misses.is_empty() { String::new() } else { format!(" (beyond 3 s.e.: {})", misses.join(", ")) },
            gated[0],
            gated[1],
            naive[0],
            naive[1]
        ),
    ))
}

fn c11_determinism() -> Check {
    let cfg = RunConfig::default();
    let grid = GridSpec { horizon: 20.0, ..cfg.grid.clone() };
    let run = |w| solver::solve(&cfg.mm, &cfg.market, &cfg.exchange, &grid, w).map_err(|e| e.to_string());
    let (a, b) = (run(1)?, run(4)?);
    let solver_same = a.values == b.values
        && a.values.slices.iter().zip(&b.values.slices).all(|(x, y)| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
        && a.policy.rows == b.policy.rows;

    let op = Operator::new(&cfg.mm, &cfg.market, &cfg.exchange, &grid).map_err(|e| e.to_string())?;
    let table = ActionTable::build(&a.values, &op).map_err(|e| e.to_string())?;
    let spec = SessionSpec {
        market: &cfg.market,
        exchange: &cfg.exchange,
        mm: &cfg.mm,
        strategy: Strategy::Optimal,
        policy: Some(&table as &dyn Policy),
        horizon: 3600.0,
        mode: Mode::Consistent,
    };
    let mc = |w| backtest::run_monte_carlo(&spec, 64, SEED, w).map_err(|e| e.to_string());
    let (x, y) = (mc(1)?, mc(4)?);
    let bits = |s: &StatsSummary| {
        [Some(s.mean), Some(s.sd), s.skewness, s.kurtosis, s.ir].map(|v| v.map(f64::to_bits))
    };
    let backtest_same = bits(&x.summary) == bits(&y.summary) && x.sessions == y.sessions;
    Ok((
        solver_same && backtest_same,
        format!(
            "20 s solve on 1 vs 4 workers {}; 64 one-hour sessions on 1 vs 4 workers {}",
            if solver_same { "bitwise identical" } else { "DIFFER" },
            if backtest_same { "bitwise identical" } else { "DIFFER" }
        ),
    ))
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut broken = 0;
    let mut report = |id: u32, name: &str, c: Check| {
        match c {
            Ok((true, d)) => println!("PASS  {id:>2} {name}: {d}"),
            Ok((false, d)) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: {d}");
            }
            Err(e) => {
                broken += 1;
                println!("FAIL  {id:>2} {name}: could not run: {e}");
            }
        }
    };

    let base = solve_preset("base");
    let derived = solve_preset("base-derived");
    let (base, derived) = match (base, derived) {
        (Ok(b), Ok(d)) => (b, d),
        (b, d) => {
            let e = b.err().or(d.err()).unwrap_or_default();
            for (id, name) in [(1, "terminal condition"), (3, "base-case policy"), (4, "bid-off divergence")] {
                report(id, name, Err(e.clone()));
            }
            std::process::exit(1);
        }
    };

    report(1, "terminal condition", c1_terminal(&base));
    report(2, "generator oracle", c2_generator());
    report(3, "base-case policy", c3_policy(&base, &derived));
    report(4, "bid-off divergence", c4_bid_off(&base, &derived));
    report(5, "symmetry", c5_symmetry(&base));
    report(6, "spread monotonicity", c6_spread(&base));

    let desk = (|| -> Result<(Desk, StatsSummary), String> {
        let opt = monte_carlo(&base, Strategy::Optimal, Mode::Consistent)?;
        let unc = monte_carlo(&base, Strategy::Unconstrained, Mode::Consistent)?;
        let alt = monte_carlo(&derived, Strategy::Optimal, Mode::Consistent)?;
        Ok((Desk { opt, unc }, alt))
    })();
    match &desk {
        Ok((d, alt)) => {
            report(7, "desk-scale backtest", c7_desk(d, alt));
            report(8, "inconsistency overstatement", c8_inconsistency(&base, d));
        }
        Err(e) => {
            report(7, "desk-scale backtest", Err(e.clone()));
            report(8, "inconsistency overstatement", Err(e.clone()));
        }
    }
    report(9, "consistency checker", c9_checker());
    report(10, "estimation round trip", c10_estimation());
    report(11, "determinism", c11_determinism());

    println!(
        "{} of 11 criteria passed in {:.0} s",
        11 - failed - broken,
        start.elapsed().as_secs_f64()
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
