//! Run configuration: one JSON document, every field defaulting to the base case.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{Strategy, SESSION_SECONDS};
use crate::error::IoError;
use crate::sim::{DirectionNoise, MarketParams};
use crate::solver::{ExchangeParams, GridSpec, MMParams};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub n_sessions: usize,
    pub horizon: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// Direction noise for inconsistent runs: a preset name (`lob1`, `lob2`,
    /// `lob3`) or an explicit pmf.
    pub noise: Option<NoiseSpec>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            n_sessions: 10_000,
            horizon: SESSION_SECONDS,
            seed: 20_240_601,
            strategy: Strategy::Optimal,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Preset(String),
    Pmf(DirectionNoise),
}

impl NoiseSpec {
    pub fn resolve(&self) -> Result<DirectionNoise, String> {
        match self {
            NoiseSpec::Preset(name) => {
                DirectionNoise::preset(name).ok_or_else(|| format!("unknown noise preset `{name}` (lob1, lob2, lob3)"))
            }
            NoiseSpec::Pmf(n) => DirectionNoise::new(n.minus, n.zero, n.plus).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig { out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub market: MarketParams,
    pub exchange: ExchangeParams,
    pub mm: MMParams,
    pub grid: GridSpec,
    pub backtest: BacktestConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset("base").expect("base preset exists")
    }
}

impl RunConfig {
    /// `base` (impulse overhead from a 1000-share order size) or
    /// `base-derived` (order size taken from the volume laws).
    pub fn preset(name: &str) -> Option<Self> {
        let mm = match name {
            "base" => MMParams::base_case(),
            "base-derived" => MMParams::base_case_derived(),
            _ => return None,
        };
        Some(RunConfig {
            version: CONFIG_VERSION,
            market: MarketParams::base_case(),
            exchange: ExchangeParams::default(),
            mm,
            grid: GridSpec::default(),
            backtest: BacktestConfig::default(),
            io: IoConfig::default(),
        })
    }

    pub fn from_json(text: &str, name: &str) -> Result<Self, IoError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            IoError::Parse {
                path: name.to_string(),
                line: inner.line() as u64,
                message: format!("at `{}`: {inner}", e.path()),
            }
        })?;
        cfg.validate().map_err(|m| IoError::Other(format!("{name}: {m}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section; the message names the offending section.
    pub fn validate(&self) -> Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        self.market.validate().map_err(|e| format!("market: {e}"))?;
        self.exchange.validate().map_err(|e| format!("exchange: {e}"))?;
        self.mm.validate().map_err(|e| format!("mm: {e}"))?;
        self.grid.validate().map_err(|e| format!("grid: {e}"))?;
        if (self.market.tick - self.exchange.tick).abs() > 1e-12 * self.exchange.tick {
            return Err(format!("exchange.tick {} differs from market.tick {}", self.exchange.tick, self.market.tick));
        }
        let b = &self.backtest;
        if b.n_sessions == 0 {
            return Err("backtest.n_sessions must be at least 1".into());
        }
        if !(b.horizon.is_finite() && b.horizon > 0.0) {
            return Err(format!("backtest.horizon must be positive, got {}", b.horizon));
        }
        if let Some(n) = &b.noise {
            n.resolve().map_err(|e| format!("backtest.noise: {e}"))?;
        }
        Ok(())
    }
}
