//! Order-flow simulation for the weakly consistent level-one model.
//!
//! Arrivals are drawn from the superposition of the twelve constant-intensity
//! processes: the total active rate depends only on the current spread (types
//! 3 and 4 are switched off at a one-tick spread), the waiting time is
//! exponential at that rate and the type is chosen proportionally to its
//! intensity. Marks are drawn per event.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Session `k` draws its order flow from stream `2k`
//! and its direction noise from stream `2k + 1`, so the flow of a session is
//! the same whatever noise is applied to it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::lob::{apply_event, classify_effect, BookState, Category, OrderEvent, OrderType, PathPoint, NUM_TYPES};

/// Volume law of one order type, in shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum VolumeLaw {
    /// `log(v) ~ N(mu, sigma^2)`.
    Lognormal { mu: f64, sigma: f64 },
    Empirical { values: Vec<f64> },
    Degenerate { value: f64 },
    None,
}

impl VolumeLaw {
    pub fn mean(&self) -> f64 {
        match self {
            VolumeLaw::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            VolumeLaw::Empirical { values } => values.iter().sum::<f64>() / values.len().max(1) as f64,
            VolumeLaw::Degenerate { value } => *value,
            VolumeLaw::None => 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, VolumeLaw::None)
    }

    fn validate(&self, what: &str) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(format!("{what}: {m}")));
        match self {
            VolumeLaw::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma.is_finite() && *sigma > 0.0) {
                    return bad(format!("lognormal needs finite mu and sigma > 0, got ({mu}, {sigma})"));
                }
            }
            VolumeLaw::Empirical { values } => {
                if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return bad("empirical volumes must be a non-empty list of positive values".into());
                }
            }
            VolumeLaw::Degenerate { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("degenerate volume must be positive, got {value}"));
                }
            }
            VolumeLaw::None => {}
        }
        Ok(())
    }
}

/// Jump law of one order type, in ticks (support within 1, 2, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum JumpLaw {
    Degenerate { ticks: u32 },
    Categorical {
        #[serde(with = "tick_keys")]
        pmf: BTreeMap<u32, f64>,
    },
    None,
}

// Internally tagged enums buffer their content, which loses serde_json's
// number-from-string key coercion, so the keys are parsed by hand.
mod tick_keys {
    use std::collections::BTreeMap;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad jump size `{k}`"))))
            .collect()
    }
}

impl JumpLaw {
    /// Support points with positive mass, ascending.
    pub fn atoms(&self) -> Vec<(u32, f64)> {
        match self {
            JumpLaw::Degenerate { ticks } => vec![(*ticks, 1.0)],
            JumpLaw::Categorical { pmf } => pmf.iter().filter(|(_, &p)| p > 0.0).map(|(&k, &p)| (k, p)).collect(),
            JumpLaw::None => Vec::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().iter().map(|&(k, p)| k as f64 * p).sum()
    }

    pub fn is_none(&self) -> bool {
        matches!(self, JumpLaw::None)
    }

    /// Probability of a jump of at most `max_ticks`.
    pub fn mass_up_to(&self, max_ticks: u32) -> f64 {
        self.atoms().iter().filter(|a| a.0 <= max_ticks).map(|a| a.1).sum()
    }

    fn validate(&self, what: &str) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(format!("{what}: {m}")));
        match self {
            JumpLaw::Degenerate { ticks } if *ticks == 0 => bad("degenerate jump must be at least one tick".into()),
            JumpLaw::Categorical { pmf } => {
                if pmf.is_empty() || pmf.keys().any(|&k| k == 0) {
                    return bad("jump support must be a non-empty subset of {1, 2, ...}".into());
                }
                if pmf.values().any(|&p| !(p.is_finite() && p >= 0.0)) {
                    return bad("jump probabilities must be finite and non-negative".into());
                }
                let total: f64 = pmf.values().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("jump pmf sums to {total}, not 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Volume and jump marks of one order type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkDistribution {
    pub volume: VolumeLaw,
    pub jump: JumpLaw,
    /// Volume law conditional on the jump size. Jumps without an entry use
    /// `volume`. Absent means volume and jump are independent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_volume: Option<BTreeMap<u32, VolumeLaw>>,
}

impl MarkDistribution {
    pub fn none() -> Self {
        MarkDistribution { volume: VolumeLaw::None, jump: JumpLaw::None, conditional_volume: None }
    }

    pub fn volume_given_jump(&self, jump: u32) -> &VolumeLaw {
        self.conditional_volume.as_ref().and_then(|m| m.get(&jump)).unwrap_or(&self.volume)
    }

    /// Mean volume, averaging conditional laws over the jump law when present.
    pub fn mean_volume(&self) -> f64 {
        match &self.conditional_volume {
            Some(_) if !self.jump.is_none() => {
                self.jump.atoms().iter().map(|&(k, p)| p * self.volume_given_jump(k).mean()).sum()
            }
            _ => self.volume.mean(),
        }
    }
}

#[derive(Deserialize)]
struct RawMarketParams {
    tick: f64,
    lambda: Vec<f64>,
    marks: Vec<MarkDistribution>,
}

/// Intensities (per second) and mark laws for all twelve types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMarketParams")]
pub struct MarketParams {
    pub tick: f64,
    pub lambda: [f64; NUM_TYPES],
    pub marks: [MarkDistribution; NUM_TYPES],
}

impl TryFrom<RawMarketParams> for MarketParams {
    type Error = SimError;

    // Types 9..=12 may be omitted; they default to zero intensity and no marks.
    fn try_from(raw: RawMarketParams) -> Result<Self, SimError> {
        if !matches!(raw.lambda.len(), 8 | 12) || raw.marks.len() != raw.lambda.len() {
            return Err(SimError::InvalidParams(format!(
                "expected 8 or 12 intensities with as many mark laws, got {} and {}",
                raw.lambda.len(),
                raw.marks.len()
            )));
        }
        let mut lambda = [0.0; NUM_TYPES];
        lambda[..raw.lambda.len()].copy_from_slice(&raw.lambda);
        let mut marks: [MarkDistribution; NUM_TYPES] = std::array::from_fn(|_| MarkDistribution::none());
        for (slot, m) in marks.iter_mut().zip(raw.marks) {
            *slot = m;
        }
        let p = MarketParams { tick: raw.tick, lambda, marks };
        p.validate()?;
        Ok(p)
    }
}

impl MarketParams {
    /// Symmetric base case: aggressive market orders at 0.05/s with
    /// lognormal(6.5, 1.35^2) volumes and a 1-or-2 tick jump (0.95/0.05),
    /// aggressive limit orders at 0.25/s, aggressive cancellations at
    /// 0.075/s, non-aggressive market orders at 0.1/s with lognormal(6,
    /// 1.35^2) volumes, all other jumps one tick, tick 0.01.
    pub fn base_case() -> Self {
        let market_jump = JumpLaw::Categorical { pmf: BTreeMap::from([(1, 0.95), (2, 0.05)]) };
        let aggressive_volume = VolumeLaw::Lognormal { mu: 6.5, sigma: 1.35 };
        let passive_volume = VolumeLaw::Lognormal { mu: 6.0, sigma: 1.35 };
        let one_tick = JumpLaw::Degenerate { ticks: 1 };
        let mk = |volume: VolumeLaw, jump: JumpLaw| MarkDistribution { volume, jump, conditional_volume: None };
        let mut marks: [MarkDistribution; NUM_TYPES] = std::array::from_fn(|_| MarkDistribution::none());
        marks[0] = mk(aggressive_volume.clone(), market_jump.clone());
        marks[1] = mk(aggressive_volume.clone(), market_jump);
        // limit-order volumes never enter the dynamics; they only need to be positive
        marks[2] = mk(aggressive_volume.clone(), one_tick.clone());
        marks[3] = mk(aggressive_volume, one_tick.clone());
        marks[4] = mk(VolumeLaw::None, one_tick.clone());
        marks[5] = mk(VolumeLaw::None, one_tick);
        marks[6] = mk(passive_volume.clone(), JumpLaw::None);
        marks[7] = mk(passive_volume, JumpLaw::None);
        let mut lambda = [0.0; NUM_TYPES];
        lambda[..8].copy_from_slice(&[0.05, 0.05, 0.25, 0.25, 0.075, 0.075, 0.1, 0.1]);
        MarketParams { tick: 0.01, lambda, marks }
    }

    pub fn rate(&self, t: OrderType) -> f64 {
        self.lambda[t.index()]
    }

    pub fn marks_of(&self, t: OrderType) -> &MarkDistribution {
        &self.marks[t.index()]
    }

    pub fn mean_volume(&self, code: u8) -> f64 {
        self.marks[code as usize - 1].mean_volume()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return Err(SimError::InvalidParams(format!("tick must be positive, got {}", self.tick)));
        }
        for t in OrderType::all() {
            let what = format!("type {t}");
            let lam = self.rate(t);
            if !(lam.is_finite() && lam >= 0.0) {
                return Err(SimError::InvalidParams(format!("{what}: intensity must be >= 0, got {lam}")));
            }
            let m = self.marks_of(t);
            m.volume.validate(&what)?;
            m.jump.validate(&what)?;
            if let Some(cond) = &m.conditional_volume {
                for (k, law) in cond {
                    law.validate(&format!("{what} volume given jump {k}"))?;
                }
            }
            if !t.aggressive() && !m.jump.is_none() {
                return Err(SimError::InvalidParams(format!("{what}: non-aggressive types cannot have a jump law")));
            }
            if lam > 0.0 {
                if t.aggressive() && m.jump.is_none() {
                    return Err(SimError::InvalidParams(format!("{what}: aggressive types need a jump law")));
                }
                if t.category() != Category::Cancellation && m.volume.is_none() && m.conditional_volume.is_none() {
                    return Err(SimError::InvalidParams(format!("{what}: market and limit orders need a volume law")));
                }
            }
        }
        Ok(())
    }
}

/// Distribution of the direction multiplier `D` applied in the inconsistent
/// book variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionNoise {
    pub minus: f64,
    pub zero: f64,
    pub plus: f64,
}

impl DirectionNoise {
    pub fn new(minus: f64, zero: f64, plus: f64) -> Result<Self, SimError> {
        let d = DirectionNoise { minus, zero, plus };
        if [minus, zero, plus].iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (minus + zero + plus - 1.0).abs() > 1e-9 {
            return Err(SimError::InvalidParams(format!("direction pmf ({minus}, {zero}, {plus}) must sum to 1")));
        }
        Ok(d)
    }

    pub fn consistent() -> Self {
        DirectionNoise { minus: 0.0, zero: 0.0, plus: 1.0 }
    }

    pub fn lob1() -> Self {
        DirectionNoise { minus: 0.5, zero: 0.0, plus: 0.5 }
    }

    pub fn lob2() -> Self {
        DirectionNoise { minus: 1.0 / 3.0, zero: 1.0 / 3.0, plus: 1.0 / 3.0 }
    }

    pub fn lob3() -> Self {
        DirectionNoise { minus: 0.2, zero: 0.0, plus: 0.8 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "consistent" => Some(Self::consistent()),
            "lob1" => Some(Self::lob1()),
            "lob2" => Some(Self::lob2()),
            "lob3" => Some(Self::lob3()),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        if u < self.minus {
            -1
        } else if u < self.minus + self.zero {
            0
        } else {
            1
        }
    }
}

/// Flow and noise generators for one session.
pub fn session_rngs(seed: u64, session: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut flow = ChaCha8Rng::seed_from_u64(seed);
    flow.set_stream(2 * session);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2 * session + 1);
    (flow, noise)
}

enum VolumeSampler {
    Lognormal(LogNormal<f64>),
    Empirical(Vec<f64>),
    Degenerate(f64),
    None,
}

impl VolumeSampler {
    fn new(law: &VolumeLaw) -> Self {
        match law {
            VolumeLaw::Lognormal { mu, sigma } => {
                VolumeSampler::Lognormal(LogNormal::new(*mu, *sigma).expect("validated lognormal parameters"))
            }
            VolumeLaw::Empirical { values } => VolumeSampler::Empirical(values.clone()),
            VolumeLaw::Degenerate { value } => VolumeSampler::Degenerate(*value),
            VolumeLaw::None => VolumeSampler::None,
        }
    }

    // Volumes are whole shares; positive draws never round below one share.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let v = match self {
            VolumeSampler::Lognormal(d) => d.sample(rng),
            VolumeSampler::Empirical(vals) => vals[rng.random_range(0..vals.len())],
            VolumeSampler::Degenerate(v) => *v,
            VolumeSampler::None => return 0,
        };
        (v.round() as u64).max(1)
    }
}

struct TypeSampler {
    volume: VolumeSampler,
    conditional: BTreeMap<u32, VolumeSampler>,
    jumps: Vec<(u32, f64)>,
}

/// Precomputed samplers for every type of a parameter set.
pub struct MarkSampler {
    types: Vec<TypeSampler>,
}

impl MarkSampler {
    pub fn new(params: &MarketParams) -> Self {
        let types = params
            .marks
            .iter()
            .map(|m| TypeSampler {
                volume: VolumeSampler::new(&m.volume),
                conditional: m
                    .conditional_volume
                    .iter()
                    .flatten()
                    .map(|(&k, law)| (k, VolumeSampler::new(law)))
                    .collect(),
                jumps: m.jump.atoms(),
            })
            .collect();
        MarkSampler { types }
    }

    /// Draws (volume, jump) for `order_type` at the given spread. Jumps of
    /// types 3 and 4 are truncated to at most `spread - 1` ticks and the law
    /// renormalized over the remaining support.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        order_type: OrderType,
        spread_ticks: i64,
        rng: &mut R,
    ) -> Result<(u64, u32), SimError> {
        let ts = &self.types[order_type.index()];
        let code = order_type.code();
        let jump = if !order_type.aggressive() {
            0
        } else {
            let cap = if matches!(code, 3 | 4) {
                if spread_ticks < 2 {
                    return Err(SimError::GateViolation { code, spread: spread_ticks });
                }
                (spread_ticks - 1) as u32
            } else {
                u32::MAX
            };
            let mass: f64 = ts.jumps.iter().filter(|a| a.0 <= cap).map(|a| a.1).sum();
            if ts.jumps.is_empty() || mass <= 0.0 {
                return Err(SimError::GateViolation { code, spread: spread_ticks });
            }
            let u = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut chosen = None;
            for &(k, p) in ts.jumps.iter().filter(|a| a.0 <= cap) {
                acc += p;
                chosen = Some(k);
                if u < acc {
                    break;
                }
            }
            chosen.expect("non-empty truncated support")
        };
        let volume = match ts.conditional.get(&jump) {
            Some(s) => s.sample(rng),
            None => ts.volume.sample(rng),
        };
        Ok((volume, jump))
    }
}

/// Draws marks for a single event. See [`MarkSampler::sample`].
pub fn sample_marks<R: Rng + ?Sized>(
    params: &MarketParams,
    code: u8,
    spread_ticks: i64,
    rng: &mut R,
) -> Result<(u64, u32), SimError> {
    let t = OrderType::new(code as u32)?;
    MarkSampler::new(params).sample(t, spread_ticks, rng)
}

/// One generated event with the book immediately before and after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStep {
    pub event: OrderEvent,
    pub before: BookState,
    pub after: BookState,
}

/// Streaming generator of order events and book updates over `[0, horizon]`.
pub struct FlowGenerator<'a> {
    params: &'a MarketParams,
    marks: MarkSampler,
    horizon: f64,
    time: f64,
    // in the noisy variants the spread still follows the consistent rule
    book: BookState,
    noise: Option<DirectionNoise>,
    flow_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    done: bool,
}

impl<'a> FlowGenerator<'a> {
    pub fn new(
        params: &'a MarketParams,
        horizon: f64,
        initial_book: BookState,
        noise: Option<DirectionNoise>,
        rngs: (ChaCha8Rng, ChaCha8Rng),
    ) -> Self {
        FlowGenerator {
            params,
            marks: MarkSampler::new(params),
            horizon,
            time: 0.0,
            book: initial_book,
            noise,
            flow_rng: rngs.0,
            noise_rng: rngs.1,
            done: !(horizon > 0.0),
        }
    }

    pub fn book(&self) -> BookState {
        self.book
    }

    fn active_rate(&self, idx: usize) -> f64 {
        let lam = self.params.lambda[idx];
        if (idx == 2 || idx == 3) && lam > 0.0 {
            // gated off at a one-tick spread, or when no admissible jump fits
            let spread = self.book.spread_ticks();
            if spread < 2 || self.params.marks[idx].jump.mass_up_to((spread - 1) as u32) <= 0.0 {
                return 0.0;
            }
        }
        lam
    }

    fn step(&mut self) -> Result<Option<FlowStep>, SimError> {
        if self.done {
            return Ok(None);
        }
        let mut rates = [0.0; NUM_TYPES];
        for (i, r) in rates.iter_mut().enumerate() {
            *r = self.active_rate(i);
        }
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            // no flow in this state, and the state cannot change any more
            self.done = true;
            return Ok(None);
        }
        let wait = Exp::new(total).expect("positive rate").sample(&mut self.flow_rng);
        self.time += wait;
        if self.time > self.horizon {
            self.done = true;
            return Ok(None);
        }
        let u = self.flow_rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut idx = NUM_TYPES - 1;
        for (i, &r) in rates.iter().enumerate() {
            acc += r;
            if r > 0.0 && u < acc {
                idx = i;
                break;
            }
        }
        while rates[idx] <= 0.0 {
            idx -= 1;
        }
        let order_type = OrderType::new(idx as u32 + 1)?;
        let (volume, jump) = self.marks.sample(order_type, self.book.spread_ticks(), &mut self.flow_rng)?;
        let event = OrderEvent { time: self.time, order_type, volume, jump };
        let before = self.book;
        let consistent = apply_event(&before, &event)?;
        let after = match self.noise {
            Some(noise) if order_type.aggressive() => {
                let d = noise.sample(&mut self.noise_rng);
                noisy_update(&before, &event, consistent.spread_ticks(), d)
            }
            _ => consistent,
        };
        self.book = after;
        Ok(Some(FlowStep { event, before, after }))
    }
}

impl Iterator for FlowGenerator<'_> {
    type Item = Result<FlowStep, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.step().transpose()
    }
}

// Moves the side an aggressive event acts on by jump * D in its classified
// direction, then rebuilds the other side from the consistently updated spread.
fn noisy_update(before: &BookState, event: &OrderEvent, new_spread: i64, d: i64) -> BookState {
    let (db, da) = classify_effect(event.order_type);
    let jump = event.jump as i64;
    if db != 0 {
        let bid = before.bid + db as i64 * jump * d;
        BookState { bid, ask: bid + new_spread, tick: before.tick }
    } else {
        let ask = before.ask + da as i64 * jump * d;
        BookState { bid: ask - new_spread, ask, tick: before.tick }
    }
}

fn collect(mut generator: FlowGenerator<'_>) -> Result<(Vec<OrderEvent>, Vec<PathPoint>), SimError> {
    let mut events = Vec::new();
    let mut path = vec![PathPoint::from_book(0.0, &generator.book())];
    for step in generator.by_ref() {
        let step = step?;
        events.push(step.event);
        if step.after != step.before {
            path.push(PathPoint::from_book(step.event.time, &step.after));
        }
    }
    Ok((events, path))
}

/// Simulates the consistent model over `[0, horizon]`.
///
/// The path starts with the initial book at time 0 and records every change.
pub fn simulate_stream(
    params: &MarketParams,
    horizon: f64,
    initial_book: BookState,
    seed: u64,
) -> Result<(Vec<OrderEvent>, Vec<PathPoint>), SimError> {
    params.validate()?;
    collect(FlowGenerator::new(params, horizon, initial_book, None, session_rngs(seed, 0)))
}

/// Same arrivals and marks as [`simulate_stream`], but the price move of each
/// aggressive event is multiplied by an independent direction draw.
pub fn simulate_stream_inconsistent(
    params: &MarketParams,
    horizon: f64,
    initial_book: BookState,
    noise: DirectionNoise,
    seed: u64,
) -> Result<(Vec<OrderEvent>, Vec<PathPoint>), SimError> {
    params.validate()?;
    collect(FlowGenerator::new(params, horizon, initial_book, Some(noise), session_rngs(seed, 0)))
}
