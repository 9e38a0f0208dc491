//! Flat `key=value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shrink::{AntConfig, FlushConfig, TimerConfig};
use crate::transform::{ChargePolicy, Operator, TransformConfig, TruncationConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Protocol {
    #[default]
    DpTimer,
    DpAnt,
    /// One-time materialization: the view is built once and never updated.
    Otm,
    /// Exhaustive padding: every padded delta goes straight to the view.
    Ep,
    /// No materialization: queries run over the full outsourced data.
    Nm,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dptimer" | "sdptimer" | "timer" => Ok(Self::DpTimer),
            "dpant" | "sdpant" | "ant" => Ok(Self::DpAnt),
            "otm" => Ok(Self::Otm),
            "ep" => Ok(Self::Ep),
            "nm" => Ok(Self::Nm),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DpTimer => "dptimer",
            Self::DpAnt => "dpant",
            Self::Otm => "otm",
            Self::Ep => "ep",
            Self::Nm => "nm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Profile {
    #[default]
    Standard,
    Sparse,
    Burst,
}

impl Profile {
    /// Expected join matches per step.
    pub fn match_rate(self) -> f64 {
        match self {
            Self::Standard => 2.7,
            Self::Sparse => 0.27,
            Self::Burst => 5.4,
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "sparse" => Ok(Self::Sparse),
            "burst" => Ok(Self::Burst),
            _ => Err(format!("unknown profile `{s}`")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Sparse => "sparse",
            Self::Burst => "burst",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub epsilon: f64,
    pub b: u32,
    pub omega: u32,
    /// Timer sync interval `T`.
    pub interval: u64,
    pub theta: f64,
    /// Flush every `f` steps; 0 disables.
    pub flush_interval: u64,
    pub flush_size: usize,
    /// Owner batch size `C_r`.
    pub batch_size: usize,
    pub horizon: u64,
    pub query_interval: u64,
    pub seed: u64,
    pub operator: Operator,
    pub profile: Profile,
    pub left_stream: Option<PathBuf>,
    pub right_stream: Option<PathBuf>,
    /// Defaults to `max_gap` when unset.
    pub join_window: Option<u64>,
    pub filter_bound: u32,
    pub charge_policy: ChargePolicy,
    /// Right records per left record in synthetic data.
    pub multiplicity: u32,
    /// Largest step gap between a left record and its matches.
    pub max_gap: u64,
    pub scan_cache: bool,
    /// Fault injection: sync batches reveal the true counter.
    pub leak_true_count: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::DpTimer,
            epsilon: 1.5,
            b: 10,
            omega: 1,
            interval: 10,
            theta: 30.0,
            flush_interval: 2000,
            flush_size: 15,
            batch_size: 8,
            horizon: 2000,
            query_interval: 1,
            seed: 0,
            operator: Operator::Smj,
            profile: Profile::Standard,
            left_stream: None,
            right_stream: None,
            join_window: None,
            filter_bound: 50,
            charge_policy: ChargePolicy::PerInvocationOmega,
            multiplicity: 1,
            max_gap: 3,
            scan_cache: false,
            leak_true_count: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "protocol",
    "epsilon",
    "b",
    "omega",
    "interval",
    "theta",
    "flush_interval",
    "flush_size",
    "batch_size",
    "horizon",
    "query_interval",
    "seed",
    "operator",
    "profile",
    "left_stream",
    "right_stream",
    "join_window",
    "filter_bound",
    "charge_policy",
    "multiplicity",
    "max_gap",
    "scan_cache",
    "leak_true_count",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "protocol" => self.protocol = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "b" => self.b = parse(key, v)?,
            "omega" => self.omega = parse(key, v)?,
            "interval" | "T" => self.interval = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "flush_interval" | "f" => self.flush_interval = parse(key, v)?,
            "flush_size" | "s" => self.flush_size = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "query_interval" => self.query_interval = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "operator" => self.operator = parse(key, v)?,
            "profile" => self.profile = parse(key, v)?,
            "left_stream" => self.left_stream = (!v.is_empty()).then(|| PathBuf::from(v)),
            "right_stream" => self.right_stream = (!v.is_empty()).then(|| PathBuf::from(v)),
            "join_window" => {
                self.join_window = if v.is_empty() { None } else { Some(parse(key, v)?) }
            }
            "filter_bound" => self.filter_bound = parse(key, v)?,
            "charge_policy" => self.charge_policy = parse(key, v)?,
            "multiplicity" => self.multiplicity = parse(key, v)?,
            "max_gap" => self.max_gap = parse(key, v)?,
            "scan_cache" => self.scan_cache = parse(key, v)?,
            "leak_true_count" => self.leak_true_count = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn effective_join_window(&self) -> u64 {
        self.join_window.unwrap_or(self.max_gap)
    }

    pub fn truncation(&self) -> Result<TruncationConfig, ConfigError> {
        TruncationConfig::new(self.omega, self.b, self.charge_policy)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn transform_config(&self) -> Result<TransformConfig, ConfigError> {
        let cfg = TransformConfig {
            operator: self.operator,
            truncation: self.truncation()?,
            join_window: self.effective_join_window(),
            filter_bound: self.filter_bound,
            batch_size: self.batch_size,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn flush_config(&self) -> FlushConfig {
        FlushConfig {
            interval: self.flush_interval,
            size: self.flush_size,
        }
    }

    pub fn timer_config(&self) -> Result<TimerConfig, ConfigError> {
        let mut t = TimerConfig::new(self.interval, self.epsilon, self.b, self.flush_config())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        t.leak_true_count = self.leak_true_count;
        Ok(t)
    }

    pub fn ant_config(&self) -> Result<AntConfig, ConfigError> {
        let mut a = AntConfig::new(self.theta, self.epsilon, self.b, self.flush_config())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        a.leak_true_count = self.leak_true_count;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        if self.query_interval == 0 {
            return invalid("query_interval must be positive");
        }
        if self.multiplicity == 0 {
            return invalid("multiplicity must be positive");
        }
        if self.right_stream.is_some() && self.left_stream.is_none() {
            return invalid("right_stream given without left_stream");
        }
        if self.operator != Operator::Filter && self.left_stream.is_some() && self.right_stream.is_none() {
            return invalid("join operators need both left_stream and right_stream");
        }
        self.transform_config()?;
        match self.protocol {
            Protocol::DpTimer => {
                self.timer_config()?;
            }
            Protocol::DpAnt => {
                self.ant_config()?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Serializes every field as `key=value` lines in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            self.protocol.to_string(),
            self.epsilon.to_string(),
            self.b.to_string(),
            self.omega.to_string(),
            self.interval.to_string(),
            self.theta.to_string(),
            self.flush_interval.to_string(),
            self.flush_size.to_string(),
            self.batch_size.to_string(),
            self.horizon.to_string(),
            self.query_interval.to_string(),
            self.seed.to_string(),
            self.operator.to_string(),
            self.profile.to_string(),
            path(&self.left_stream),
            path(&self.right_stream),
            self.join_window.map(|w| w.to_string()).unwrap_or_default(),
            self.filter_bound.to_string(),
            self.charge_policy.to_string(),
            self.multiplicity.to_string(),
            self.max_gap.to_string(),
            self.scan_cache.to_string(),
            self.leak_true_count.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
