//! The `lobmm` command line.
//!
//! Exit codes: 0 ok, 1 consistency violations found, 2 bad configuration or
//! input, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backtest::{self, Mode, MonteCarlo, SessionSpec, StatsSummary, Strategy};
use crate::config::RunConfig;
use crate::error::{BacktestError, EstimationError, IoError, LobError, SimError, SolverError};
use crate::estimation::{calibrate, CalibrationOptions, VolumeFit};
use crate::io;
use crate::lob::{check_consistency, BookState};
use crate::sim::{simulate_stream, simulate_stream_inconsistent, DirectionNoise};
use crate::solver::{self, ActionTable, Operator, Policy, PolicyTable, ThresholdPolicy, ValueGrid};

#[derive(Debug, Parser)]
#[command(name = "lobmm", version, about = "Market making on a weakly consistent level-one order book")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON run configuration; defaults to the base case.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named configuration: `base` or `base-derived`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the solver and backtests.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the value function and extract the policy.
    Solve,
    /// Simulate an event stream and book path.
    Simulate {
        /// Seconds to simulate; defaults to the backtest horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Direction-noise preset: lob1, lob2 or lob3.
        #[arg(long)]
        inconsistent: Option<String>,
    },
    /// Calibrate market parameters from an event log and book path.
    Estimate {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        path: PathBuf,
        /// Observation window in seconds; defaults to the backtest horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Keep observed volumes instead of fitting lognormals.
        #[arg(long)]
        empirical: bool,
    },
    /// Run Monte Carlo market-making sessions.
    Backtest {
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Number of sessions.
        #[arg(long)]
        n: Option<usize>,
        /// `policy.json` (threshold rules) or `value_grid.bin` (full action lookup).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Direction-noise preset for the simulated book.
        #[arg(long, conflicts_with = "compare_inconsistent")]
        inconsistent: Option<String>,
        /// Compare against the three inconsistent books.
        #[arg(long)]
        compare_inconsistent: bool,
    },
    /// Check an event log and book path for consistency.
    Check {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        path: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(m: impl std::fmt::Display) -> Self {
        CliError { code: 2, message: m.to_string() }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::input(e)
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let code = if matches!(e, SolverError::Divergence { .. }) { 3 } else { 2 };
        CliError { code, message: e.to_string() }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::input(e)
    }
}

impl From<LobError> for CliError {
    fn from(e: LobError) -> Self {
        CliError::input(e)
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        CliError::input(e)
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        CliError::input(e)
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
}

impl Ctx {
    fn new(g: &GlobalOpts) -> Result<Self, CliError> {
        let cfg = match (&g.config, &g.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(name)) => RunConfig::preset(name)
                .ok_or_else(|| CliError::input(format!("unknown preset `{name}` (base, base-derived)")))?,
            (None, None) => RunConfig::default(),
        };
        let workers =
            g.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1);
        Ok(Ctx {
            seed: g.seed.unwrap_or(cfg.backtest.seed),
            out_dir: g.out_dir.clone().unwrap_or_else(|| cfg.io.out_dir.clone()),
            cfg,
            workers,
        })
    }

    fn out(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", self.out_dir.display())))?;
        Ok(self.out_dir.join(name))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn noise_preset(name: &str) -> Result<DirectionNoise, CliError> {
    DirectionNoise::preset(name).ok_or_else(|| CliError::input(format!("unknown inconsistency preset `{name}` (lob1, lob2, lob3)")))
}

fn fmt_q(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "+inf".into()
    } else {
        "-inf".into()
    }
}

fn cmd_solve(ctx: &Ctx) -> Result<String, CliError> {
    let c = &ctx.cfg;
    let sol = solver::solve(&c.mm, &c.market, &c.exchange, &c.grid, ctx.workers)?;
    let values = ctx.out("value_grid.bin")?;
    sol.values.save(&values)?;
    let csv = ctx.out("thresholds.csv")?;
    sol.policy.write_csv(std::io::BufWriter::new(create(&csv)?))?;
    let json = ctx.out("policy.json")?;
    sol.policy.save_json(&json)?;
    let report = ctx.out("solve_report.json")?;
    write_file(&report, &serde_json::to_string_pretty(&sol.report).expect("report serializes"))?;

    let mut out = String::new();
    let r = &sol.report;
    let _ = writeln!(
        out,
        "solved {} steps in {:.1} s; impulse overhead {}; obstacle gap {:.3e} (tolerance {:.3e})",
        r.steps, r.elapsed_secs, r.impulse_cost, r.obstacle_gap_min, r.obstacle_tolerance
    );
    let _ = writeln!(out, "thresholds at {} s remaining:", sol.values.remaining(0));
    for s in 1..=c.grid.n_s {
        let row = sol.policy.row(0, s);
        let _ = writeln!(
            out,
            "  spread {s}: bid q_imp {} anchor {} q_off {} | ask q_imp {} anchor {} q_off {}",
            fmt_q(row.bid.q_imp),
            fmt_q(row.bid.anchor),
            fmt_q(row.bid.q_off),
            fmt_q(row.ask.q_imp),
            fmt_q(row.ask.anchor),
            fmt_q(row.ask.q_off)
        );
    }
    for p in [&values, &csv, &json, &report] {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

fn book0(tick: f64) -> Result<BookState, CliError> {
    Ok(BookState::from_prices(100.0, 100.0 + tick, tick)?)
}

fn cmd_simulate(ctx: &Ctx, horizon: Option<f64>, inconsistent: Option<&str>) -> Result<String, CliError> {
    let m = &ctx.cfg.market;
    let horizon = horizon.unwrap_or(ctx.cfg.backtest.horizon);
    let (events, path) = match inconsistent {
        Some(name) => simulate_stream_inconsistent(m, horizon, book0(m.tick)?, noise_preset(name)?, ctx.seed)?,
        None => simulate_stream(m, horizon, book0(m.tick)?, ctx.seed)?,
    };
    let ev = ctx.out("events.csv")?;
    let pa = ctx.out("path.csv")?;
    io::save_events(&ev, &events)?;
    io::save_path(&pa, &path, m.tick)?;
    Ok(format!("simulated {} events over {horizon} s\nwrote {}\nwrote {}\n", events.len(), ev.display(), pa.display()))
}

fn cmd_estimate(ctx: &Ctx, events: &Path, path: &Path, horizon: Option<f64>, empirical: bool) -> Result<String, CliError> {
    let tick = ctx.cfg.market.tick;
    let ev = io::load_events(events)?;
    let pa = io::load_path(path, tick)?;
    let opts = CalibrationOptions {
        volume_fit: if empirical { VolumeFit::Empirical } else { VolumeFit::Lognormal },
        ..CalibrationOptions::default()
    };
    let result = calibrate(&ev, &pa, horizon.unwrap_or(ctx.cfg.backtest.horizon), tick, &opts)?;
    let params = ctx.out("market_params.json")?;
    write_file(&params, &serde_json::to_string_pretty(&result.params).expect("params serialize"))?;
    let report = result.report();
    let rep = ctx.out("calibration.txt")?;
    write_file(&rep, &report)?;
    Ok(format!("{report}wrote {}\nwrote {}\n", params.display(), rep.display()))
}

/// Loads a policy: a value grid gets the full action lookup, JSON the threshold rules.
pub fn load_policy(path: &Path, cfg: &RunConfig) -> Result<Box<dyn Policy>, CliError> {
    let mut head = [0u8; 8];
    let is_grid = fs::File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
        .map(|_| &head == b"LOBMMVG1")
        .unwrap_or(false);
    if is_grid {
        let values = ValueGrid::load(path)?;
        let op = Operator::new(&cfg.mm, &cfg.market, &cfg.exchange, &values.grid)?;
        Ok(Box::new(ActionTable::build(&values, &op)?))
    } else {
        Ok(Box::new(ThresholdPolicy { table: PolicyTable::load_json(path)? }))
    }
}

#[derive(Serialize)]
struct ComparisonRow {
    strategy: Strategy,
    consistent: StatsSummary,
    lob1: StatsSummary,
    lob2: StatsSummary,
    lob3: StatsSummary,
    overstatement: [f64; 3],
}

fn cmd_backtest(
    ctx: &Ctx,
    strategy: Option<Strategy>,
    n: Option<usize>,
    policy: Option<&Path>,
    inconsistent: Option<&str>,
    compare: bool,
) -> Result<String, CliError> {
    let c = &ctx.cfg;
    let strategy = strategy.unwrap_or(c.backtest.strategy);
    let n = n.unwrap_or(c.backtest.n_sessions);
    let loaded = policy.map(|p| load_policy(p, c)).transpose()?;
    if strategy == Strategy::Optimal && loaded.is_none() {
        return Err(CliError::input("the optimal strategy needs --policy (policy.json or value_grid.bin)"));
    }
    let mode = match (inconsistent, &c.backtest.noise) {
        (Some(name), _) => Mode::Inconsistent(noise_preset(name)?),
        (None, Some(spec)) => Mode::Inconsistent(spec.resolve().map_err(CliError::input)?),
        (None, None) => Mode::Consistent,
    };
    let spec = |strategy, mode| SessionSpec {
        market: &c.market,
        exchange: &c.exchange,
        mm: &c.mm,
        strategy,
        policy: loaded.as_deref(),
        horizon: c.backtest.horizon,
        mode,
    };
    let run = |s: &SessionSpec<'_>| -> Result<MonteCarlo, CliError> {
        Ok(backtest::run_monte_carlo(s, n, ctx.seed, ctx.workers)?)
    };
    let mut out = String::new();
    if !compare {
        let mc = run(&spec(strategy, mode))?;
        let results = ctx.out("results.csv")?;
        backtest::write_results_csv(&mc.sessions, std::io::BufWriter::new(create(&results)?))?;
        let summary = ctx.out("summary.json")?;
        write_file(&summary, &serde_json::to_string_pretty(&mc.summary).expect("summary serializes"))?;
        let _ = writeln!(out, "{:?} strategy, {n} sessions", strategy);
        let _ = writeln!(out, "{}", summary_line(&mc.summary));
        let _ = writeln!(out, "wrote {}\nwrote {}", results.display(), summary.display());
        return Ok(out);
    }
    let mut strategies = vec![Strategy::Unconstrained];
    if loaded.is_some() {
        strategies.push(Strategy::Optimal);
    }
    let mut rows = Vec::new();
    for s in strategies {
        let base = run(&spec(s, Mode::Consistent))?.summary;
        let mut noisy = Vec::new();
        for name in ["lob1", "lob2", "lob3"] {
            noisy.push(run(&spec(s, Mode::Inconsistent(noise_preset(name)?)))?.summary);
        }
        rows.push(ComparisonRow {
            strategy: s,
            consistent: base,
            lob1: noisy[0],
            lob2: noisy[1],
            lob3: noisy[2],
            overstatement: [0, 1, 2].map(|i| backtest::overstatement(&base, &noisy[i])),
        });
    }
    let _ = writeln!(out, "overstatement of mean profit, {n} sessions");
    let _ = writeln!(out, "{:<14} {:>12} {:>12} {:>12} {:>12}", "strategy", "consistent", "LOB 1", "LOB 2", "LOB 3");
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<14} {:>12.1} {:>12.1} {:>12.1} {:>12.1}",
            format!("{:?}", r.strategy),
            r.consistent.mean,
            r.lob1.mean,
            r.lob2.mean,
            r.lob3.mean
        );
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>11.1}% {:>11.1}% {:>11.1}%",
            "  overstated",
            "",
            100.0 * r.overstatement[0],
            100.0 * r.overstatement[1],
            100.0 * r.overstatement[2]
        );
    }
    let path = ctx.out("comparison.json")?;
    write_file(&path, &serde_json::to_string_pretty(&rows).expect("comparison serializes"))?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("null".into(), |x| format!("{x:.4}"))
}

fn summary_line(s: &StatsSummary) -> String {
    format!(
        "mean {:.2} sd {:.2} skewness {} kurtosis {} IR {}",
        s.mean,
        s.sd,
        opt(s.skewness),
        opt(s.kurtosis),
        opt(s.ir)
    )
}

const SHOWN_VIOLATIONS: usize = 20;

fn cmd_check(ctx: &Ctx, events: &Path, path: &Path) -> Result<(String, bool), CliError> {
    let ev = io::load_events(events)?;
    let pa = io::load_path(path, ctx.cfg.market.tick)?;
    let report = check_consistency(&ev, &pa)?;
    let full = report.to_string();
    let mut lines = full.lines();
    let mut out = format!("{}\n", lines.next().unwrap_or_default());
    for l in lines.by_ref().take(SHOWN_VIOLATIONS) {
        let _ = writeln!(out, "{l}");
    }
    let rest = report.violations.len().saturating_sub(SHOWN_VIOLATIONS);
    if rest > 0 {
        let _ = writeln!(out, "  ... and {rest} more");
    }
    Ok((out, report.is_clean()))
}

/// Runs a parsed command, returning its standard output and exit code.
pub fn run(cli: &Cli) -> Result<(String, i32), CliError> {
    let ctx = Ctx::new(&cli.global)?;
    match &cli.command {
        Command::Solve => Ok((cmd_solve(&ctx)?, 0)),
        Command::Simulate { horizon, inconsistent } => Ok((cmd_simulate(&ctx, *horizon, inconsistent.as_deref())?, 0)),
        Command::Estimate { events, path, horizon, empirical } => {
            Ok((cmd_estimate(&ctx, events, path, *horizon, *empirical)?, 0))
        }
        Command::Backtest { strategy, n, policy, inconsistent, compare_inconsistent } => Ok((
            cmd_backtest(&ctx, *strategy, *n, policy.as_deref(), inconsistent.as_deref(), *compare_inconsistent)?,
            0,
        )),
        Command::Check { events, path } => {
            let (out, clean) = cmd_check(&ctx, events, path)?;
            Ok((out, if clean { 0 } else { 1 }))
        }
    }
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok((out, code)) => {
            print!("{out}");
            code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
