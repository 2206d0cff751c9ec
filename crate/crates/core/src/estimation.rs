//! Calibration of [`MarketParams`] from an observed event log and book path.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::lob::{OrderEvent, OrderType, PathPoint, NUM_TYPES};
use crate::sim::{JumpLaw, MarkDistribution, MarketParams, VolumeLaw};

/// How volume laws are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFit {
    #[default]
    Lognormal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub volume_fit: VolumeFit,
    /// Fit volume laws conditional on the jump size for aggressive market orders.
    pub joint: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { volume_fit: VolumeFit::Lognormal, joint: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    pub counts: [u64; NUM_TYPES],
    pub lambda: [f64; NUM_TYPES],
    pub std_err: [f64; NUM_TYPES],
    /// Time each type could arrive: the horizon, or the active time for 3 and 4.
    pub exposure: [f64; NUM_TYPES],
    pub active_time: f64,
}

/// Time in `[0, horizon]` during which the spread is at least two ticks.
pub fn active_time(path: &[PathPoint], horizon: f64) -> Result<f64, EstimationError> {
    check_path(path, horizon)?;
    let mut total = 0.0;
    for (i, p) in path.iter().enumerate() {
        let start = p.time.max(0.0);
        let end = path.get(i + 1).map_or(horizon, |n| n.time).min(horizon);
        if end > start && p.ask - p.bid >= 2 {
            total += end - start;
        }
    }
    Ok(total)
}

fn check_path(path: &[PathPoint], horizon: f64) -> Result<(), EstimationError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(EstimationError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let first = path.first().ok_or(EstimationError::Lob(crate::error::LobError::EmptyPath))?;
    if first.time > 0.0 {
        return Err(EstimationError::InvalidInput(format!("book path starts at {} and does not cover time 0", first.time)));
    }
    if let Some(i) = path.windows(2).position(|w| w[1].time <= w[0].time) {
        return Err(crate::error::LobError::UnsortedInput { what: "book path", index: i + 1 }.into());
    }
    Ok(())
}

/// Poisson maximum-likelihood intensities. Types 3 and 4 can only arrive
/// when the spread exceeds one tick, so their counts are divided by that
/// active time rather than the horizon.
pub fn estimate_intensity(
    events: &[OrderEvent],
    path: &[PathPoint],
    horizon: f64,
) -> Result<IntensityEstimate, EstimationError> {
    let active = active_time(path, horizon)?;
    let mut counts = [0u64; NUM_TYPES];
    for e in events {
        if !(0.0..=horizon).contains(&e.time) {
            return Err(EstimationError::InvalidInput(format!("event at {} lies outside [0, {horizon}]", e.time)));
        }
        counts[e.order_type.index()] += 1;
    }
    let mut lambda = [0.0; NUM_TYPES];
    let mut std_err = [0.0; NUM_TYPES];
    let mut exposure = [horizon; NUM_TYPES];
    for t in OrderType::all() {
        let i = t.index();
        if matches!(t.code(), 3 | 4) {
            exposure[i] = active;
            if active == 0.0 {
                if counts[i] > 0 {
                    return Err(EstimationError::ZeroActiveTime { code: t.code(), count: counts[i] });
                }
                continue;
            }
        }
        lambda[i] = counts[i] as f64 / exposure[i];
        std_err[i] = (counts[i] as f64).sqrt() / exposure[i];
    }
    Ok(IntensityEstimate { counts, lambda, std_err, exposure, active_time: active })
}

/// Empirical jump pmf of one code. A single observed value gives a degenerate law.
pub fn estimate_jump_pmf(events: &[OrderEvent], code: u8) -> Result<JumpLaw, EstimationError> {
    let mut tally: BTreeMap<u32, u64> = BTreeMap::new();
    for e in events.iter().filter(|e| e.order_type.code() == code) {
        *tally.entry(e.jump).or_default() += 1;
    }
    let n: u64 = tally.values().sum();
    if n == 0 {
        return Err(EstimationError::NoObservations { code });
    }
    if tally.len() == 1 {
        return Ok(JumpLaw::Degenerate { ticks: *tally.keys().next().unwrap() });
    }
    Ok(JumpLaw::Categorical { pmf: tally.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect() })
}

/// Mean and unbiased variance of `log(v)`.
pub fn estimate_lognormal(volumes: &[f64]) -> Result<(f64, f64), EstimationError> {
    if let Some(&v) = volumes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(EstimationError::NonPositiveVolume(v));
    }
    if volumes.len() < 2 {
        return Err(EstimationError::InsufficientData { needed: 2, got: volumes.len() });
    }
    let n = volumes.len() as f64;
    let logs: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / (n - 1.0);
    Ok((mu, var))
}

/// Fits a volume law. One observation, or identical observations, give a
/// degenerate law since a lognormal needs positive dispersion.
pub fn fit_volume(volumes: &[f64], fit: VolumeFit) -> Result<VolumeLaw, EstimationError> {
    if volumes.is_empty() {
        return Err(EstimationError::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(&v) = volumes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(EstimationError::NonPositiveVolume(v));
    }
    if volumes.iter().all(|&v| v == volumes[0]) {
        return Ok(VolumeLaw::Degenerate { value: volumes[0] });
    }
    Ok(match fit {
        VolumeFit::Lognormal => {
            let (mu, var) = estimate_lognormal(volumes)?;
            VolumeLaw::Lognormal { mu, sigma: var.sqrt() }
        }
        VolumeFit::Empirical => {
            let mut values = volumes.to_vec();
            values.sort_by(f64::total_cmp);
            VolumeLaw::Empirical { values }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub jump: JumpLaw,
    pub unconditional: VolumeLaw,
    /// Volume law per observed jump. Sparse bins hold the unconditional law.
    pub conditional: BTreeMap<u32, VolumeLaw>,
    /// Jump values with fewer than two observations.
    pub sparse: Vec<u32>,
}

/// Jump pmf and volume laws conditional on the jump, for aggressive market orders.
pub fn estimate_joint(events: &[OrderEvent], code: u8, fit: VolumeFit) -> Result<JointEstimate, EstimationError> {
    if !matches!(code, 1 | 2) {
        return Err(EstimationError::InvalidInput(format!("joint marks are fitted for types 1 and 2, not {code}")));
    }
    let jump = estimate_jump_pmf(events, code)?;
    let mut by_jump: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for e in events.iter().filter(|e| e.order_type.code() == code) {
        by_jump.entry(e.jump).or_default().push(e.volume as f64);
        all.push(e.volume as f64);
    }
    let unconditional = fit_volume(&all, fit)?;
    let mut conditional = BTreeMap::new();
    let mut sparse = Vec::new();
    for (k, vols) in by_jump {
        let law = if vols.len() < 2 {
            log::warn!("type {code}: only {} observation(s) with jump {k}; using the unconditional volume law", vols.len());
            sparse.push(k);
            unconditional.clone()
        } else {
            fit_volume(&vols, fit)?
        };
        conditional.insert(k, law);
    }
    Ok(JointEstimate { jump, unconditional, conditional, sparse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: MarketParams,
    pub horizon: f64,
    pub active_time_3_4: f64,
    pub counts: [u64; NUM_TYPES],
    pub std_err: [f64; NUM_TYPES],
    pub mean_volume: [Option<f64>; NUM_TYPES],
    pub mean_jump: [Option<f64>; NUM_TYPES],
    /// (code, jump) bins whose conditional volume law fell back to the unconditional one.
    pub sparse_bins: Vec<(u8, u32)>,
}

/// Calibrates all twelve types. The market maker's fills come from types
/// 1, 2, 7 and 8, so each of them must be observed at least once.
pub fn calibrate(
    events: &[OrderEvent],
    path: &[PathPoint],
    horizon: f64,
    tick: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult, EstimationError> {
    let intensity = estimate_intensity(events, path, horizon)?;
    if let Some(code) = [1u8, 2, 7, 8].into_iter().find(|&c| intensity.counts[c as usize - 1] == 0) {
        return Err(EstimationError::NoObservations { code });
    }
    let mut marks: [MarkDistribution; NUM_TYPES] = std::array::from_fn(|_| MarkDistribution::none());
    let mut mean_volume = [None; NUM_TYPES];
    let mut mean_jump = [None; NUM_TYPES];
    let mut sparse_bins = Vec::new();
    for t in OrderType::all() {
        let i = t.index();
        let code = t.code();
        if intensity.counts[i] == 0 {
            continue;
        }
        let vols: Vec<f64> = events.iter().filter(|e| e.order_type == t).map(|e| e.volume as f64).collect();
        mean_volume[i] = Some(vols.iter().sum::<f64>() / vols.len() as f64);
        let cancellation = matches!(t.category(), crate::lob::Category::Cancellation);
        // cancellation volumes never enter the model; fit them only when usable
        let volume = if cancellation && vols.iter().any(|&v| v <= 0.0) {
            VolumeLaw::None
        } else {
            fit_volume(&vols, opts.volume_fit)?
        };
        let mut m = MarkDistribution { volume, jump: JumpLaw::None, conditional_volume: None };
        if t.aggressive() {
            m.jump = estimate_jump_pmf(events, code)?;
            let jumps: Vec<f64> = events.iter().filter(|e| e.order_type == t).map(|e| e.jump as f64).collect();
            mean_jump[i] = Some(jumps.iter().sum::<f64>() / jumps.len() as f64);
            if opts.joint && t.is_market() {
                let j = estimate_joint(events, code, opts.volume_fit)?;
                if j.conditional.len() > 1 {
                    m.conditional_volume = Some(j.conditional);
                }
                sparse_bins.extend(j.sparse.into_iter().map(|k| (code, k)));
            }
        }
        marks[i] = m;
    }
    let params = MarketParams { tick, lambda: intensity.lambda, marks };
    params.validate()?;
    Ok(CalibrationResult {
        params,
        horizon,
        active_time_3_4: intensity.active_time,
        counts: intensity.counts,
        std_err: intensity.std_err,
        mean_volume,
        mean_jump,
        sparse_bins,
    })
}

fn thousands(n: f64) -> String {
    let digits = format!("{:.0}", n);
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl CalibrationResult {
    /// Type-level statistics as a plain-text table.
    pub fn report(&self) -> String {
        let total: u64 = self.counts.iter().sum();
        let mut s = String::new();
        let _ = writeln!(s, "horizon {:.1} s, spread above one tick for {:.1} s", self.horizon, self.active_time_3_4);
        let _ = writeln!(
            s,
            "{:<4} {:<40} {:>9} {:>8} {:>10} {:>10} {:>8} {:>7}",
            "Type", "Description", "Count", "% Count", "lambda/s", "s.e.", "v_bar", "xi_bar"
        );
        for t in OrderType::all() {
            let i = t.index();
            let pct = if total > 0 { 100.0 * self.counts[i] as f64 / total as f64 } else { 0.0 };
            let v = self.mean_volume[i].map_or("NA".to_string(), thousands);
            let xi = self.mean_jump[i].map_or("NA".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                s,
                "{:<4} {:<40} {:>9} {:>7.2}% {:>10.4} {:>10.4} {:>8} {:>7}",
                t.code(),
                t.description(),
                thousands(self.counts[i] as f64),
                pct,
                self.params.lambda[i],
                self.std_err[i],
                v,
                xi
            );
        }
        for (code, k) in &self.sparse_bins {
            let _ = writeln!(s, "note: type {code} jump {k} has too few observations; unconditional volume law used");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::BookState;
    use crate::sim::simulate_stream;
    use proptest::prelude::*;

    fn ev(time: f64, code: u32, volume: u64, jump: u32) -> OrderEvent {
        OrderEvent::new(time, code, volume, jump).unwrap()
    }

    fn flat_path(spread: i64) -> Vec<PathPoint> {
        vec![PathPoint { time: 0.0, bid: 10_000, ask: 10_000 + spread }]
    }

    #[test]
    fn direct_intensity() {
        let events: Vec<_> = (0..350).map(|i| ev(i as f64 * 0.2, 7, 100, 0)).collect();
        let r = estimate_intensity(&events, &flat_path(1), 100.0).unwrap();
        assert!((r.lambda[6] - 3.5).abs() < 1e-12);
        assert!((r.std_err[6] - 350f64.sqrt() / 100.0).abs() < 1e-12);
    }

    #[test]
    fn gated_intensity() {
        // spread two ticks on [0, 50), one tick on [50, 100)
        let path = vec![
            PathPoint { time: 0.0, bid: 10_000, ask: 10_002 },
            PathPoint { time: 50.0, bid: 10_001, ask: 10_002 },
        ];
        let events: Vec<_> = (0..10).map(|i| ev(i as f64 * 4.0 + 1.0, 3, 100, 1)).collect();
        let r = estimate_intensity(&events, &path, 100.0).unwrap();
        assert_eq!(r.active_time, 50.0);
        assert!((r.lambda[2] - 0.2).abs() < 1e-12);
        assert!(r.lambda[2] > 10.0 / 100.0);
    }

    #[test]
    fn zero_active_time_with_gated_events() {
        let events = vec![ev(1.0, 4, 100, 1)];
        assert!(matches!(
            estimate_intensity(&events, &flat_path(1), 10.0),
            Err(EstimationError::ZeroActiveTime { code: 4, count: 1 })
        ));
    }

    #[test]
    fn jump_pmf_counts() {
        let events = vec![ev(0.1, 1, 5, 1), ev(0.2, 1, 5, 1), ev(0.3, 1, 5, 2), ev(0.4, 1, 5, 1)];
        assert_eq!(
            estimate_jump_pmf(&events, 1).unwrap(),
            JumpLaw::Categorical { pmf: BTreeMap::from([(1, 0.75), (2, 0.25)]) }
        );
        let ones = vec![ev(0.1, 5, 0, 1), ev(0.2, 5, 0, 1)];
        assert_eq!(estimate_jump_pmf(&ones, 5).unwrap(), JumpLaw::Degenerate { ticks: 1 });
        assert!(matches!(estimate_jump_pmf(&ones, 6), Err(EstimationError::NoObservations { code: 6 })));
    }

    #[test]
    fn lognormal_examples() {
        let e = std::f64::consts::E;
        let (mu, var) = estimate_lognormal(&[e, e, e]).unwrap();
        assert!((mu - 1.0).abs() < 1e-12 && var.abs() < 1e-24);
        let (mu, var) = estimate_lognormal(&[1.0, e * e]).unwrap();
        assert!((mu - 1.0).abs() < 1e-12 && (var - 2.0).abs() < 1e-12);
        assert!(matches!(estimate_lognormal(&[1.0, 0.0]), Err(EstimationError::NonPositiveVolume(_))));
        assert!(matches!(estimate_lognormal(&[3.0]), Err(EstimationError::InsufficientData { needed: 2, got: 1 })));
    }

    #[test]
    fn lognormal_recovers_parameters() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, LogNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = LogNormal::new(6.5, 1.35).unwrap();
        let v: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        let (mu, var) = estimate_lognormal(&v).unwrap();
        assert!((mu - 6.5).abs() < 0.02, "{mu}");
        assert!((var.sqrt() - 1.35).abs() < 0.02, "{var}");
    }

    #[test]
    fn jump_pmf_recovers_bernoulli_marks() {
        let p = MarketParams::base_case();
        let mut rng = crate::sim::session_rngs(4, 0).0;
        let events: Vec<_> = (0..100_000)
            .map(|i| {
                let (v, j) = crate::sim::sample_marks(&p, 1, 1, &mut rng).unwrap();
                ev(i as f64, 1, v, j)
            })
            .collect();
        let JumpLaw::Categorical { pmf } = estimate_jump_pmf(&events, 1).unwrap() else { panic!() };
        assert!((pmf[&1] - 0.95).abs() < 0.005);
    }

    #[test]
    fn joint_single_jump_uses_unconditional_fit() {
        let events: Vec<_> = (1..=20).map(|i| ev(i as f64, 2, 10 * i, 1)).collect();
        let j = estimate_joint(&events, 2, VolumeFit::Lognormal).unwrap();
        assert_eq!(j.jump, JumpLaw::Degenerate { ticks: 1 });
        assert_eq!(j.conditional[&1], j.unconditional);
        assert!(j.sparse.is_empty());
    }

    #[test]
    fn joint_conditional_tables() {
        let mut events = Vec::new();
        for i in 0..30 {
            events.push(ev(i as f64, 1, 100, 1));
            events.push(ev(i as f64 + 0.5, 1, 500, 2));
        }
        let j = estimate_joint(&events, 1, VolumeFit::Lognormal).unwrap();
        assert_eq!(j.conditional[&1], VolumeLaw::Degenerate { value: 100.0 });
        assert_eq!(j.conditional[&2], VolumeLaw::Degenerate { value: 500.0 });
    }

    #[test]
    fn joint_sparse_bin_falls_back() {
        let mut events: Vec<_> = (0..10).map(|i| ev(i as f64, 1, 100 + i, 1)).collect();
        events.push(ev(20.0, 1, 900, 3));
        let j = estimate_joint(&events, 1, VolumeFit::Lognormal).unwrap();
        assert_eq!(j.sparse, vec![3]);
        assert_eq!(j.conditional[&3], j.unconditional);
        assert!(estimate_joint(&events, 3, VolumeFit::Lognormal).is_err());
    }

    #[test]
    fn joint_independent_marks_agree() {
        // base-case volumes are independent of the jump
        let p = MarketParams::base_case();
        let mut rng = crate::sim::session_rngs(9, 0).0;
        let events: Vec<_> = (0..40_000)
            .map(|i| {
                let (v, j) = crate::sim::sample_marks(&p, 1, 1, &mut rng).unwrap();
                ev(i as f64, 1, v, j)
            })
            .collect();
        let j = estimate_joint(&events, 1, VolumeFit::Lognormal).unwrap();
        let (VolumeLaw::Lognormal { mu: m1, sigma: s1 }, VolumeLaw::Lognormal { mu: m2, sigma: s2 }) =
            (&j.conditional[&1], &j.conditional[&2])
        else {
            panic!()
        };
        let n1 = events.iter().filter(|e| e.jump == 1).count() as f64;
        let n2 = events.len() as f64 - n1;
        let se = (s1 * s1 / n1 + s2 * s2 / n2).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se, "{m1} vs {m2}, se {se}");
    }

    #[test]
    fn missing_market_type_is_reported() {
        let events = vec![ev(1.0, 1, 10, 1), ev(2.0, 2, 10, 1), ev(3.0, 8, 10, 0)];
        let err = calibrate(&events, &flat_path(1), 10.0, 0.01, &CalibrationOptions::default()).unwrap_err();
        assert_eq!(err, EstimationError::NoObservations { code: 7 });
    }

    #[test]
    fn round_trip_session() {
        let truth = MarketParams::base_case();
        let horizon = 23_400.0;
        let book = BookState::from_prices(100.0, 100.01, 0.01).unwrap();
        let (events, path) = simulate_stream(&truth, horizon, book, 21).unwrap();
        let cal = calibrate(&events, &path, horizon, 0.01, &CalibrationOptions::default()).unwrap();
        for i in 0..8 {
            let d = (cal.params.lambda[i] - truth.lambda[i]).abs();
            assert!(d <= 3.0 * cal.std_err[i], "type {}: {} vs {}", i + 1, cal.params.lambda[i], truth.lambda[i]);
            assert_eq!(cal.counts[i], events.iter().filter(|e| e.order_type.index() == i).count() as u64);
        }
        assert!(cal.active_time_3_4 <= horizon);
        assert!(cal.report().contains("aggressive market buy"));
        let s = serde_json::to_string(&cal.params).unwrap();
        let back: MarketParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cal.params);
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000, swaps in proptest::collection::vec((0usize..200, 0usize..200), 0..50)) {
            let p = MarketParams::base_case();
            let book = BookState::from_prices(100.0, 100.01, 0.01).unwrap();
            let (events, path) = simulate_stream(&p, 400.0, book, seed).unwrap();
            let mut shuffled = events.clone();
            let n = shuffled.len();
            for (a, b) in swaps {
                if n > 0 {
                    shuffled.swap(a % n, b % n);
                }
            }
            let a = estimate_intensity(&events, &path, 400.0).unwrap();
            let b = estimate_intensity(&shuffled, &path, 400.0).unwrap();
            prop_assert_eq!(a, b);
            for code in 1..=6u8 {
                prop_assert_eq!(estimate_jump_pmf(&events, code).ok(), estimate_jump_pmf(&shuffled, code).ok());
            }
        }

        #[test]
        fn gated_not_below_naive(seed in 0u64..1000) {
            let p = MarketParams::base_case();
            let book = BookState::from_prices(100.0, 100.01, 0.01).unwrap();
            let (events, path) = simulate_stream(&p, 600.0, book, seed).unwrap();
            let r = estimate_intensity(&events, &path, 600.0).unwrap();
            for i in [2usize, 3] {
                prop_assert!(r.lambda[i] >= r.counts[i] as f64 / 600.0);
            }
        }
    }
}
