//! Choosing which KPI(s) the actuator works on in an interval.
//!
//! Simple Sequential walks the priority list and stops at the first KPI
//! whose signal is outside the acceptability band. Smart Sequential scales
//! each signal by `base^(K - p)` and takes the largest magnitude.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlSignal;
use crate::domain::KpiKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    #[serde(rename = "aao")]
    AllAtOnce,
    #[serde(rename = "simple")]
    SimpleSequential,
    #[serde(rename = "smart")]
    SmartSequential,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::AllAtOnce, Method::SimpleSequential, Method::SmartSequential];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::AllAtOnce => "aao",
            Method::SimpleSequential => "simple",
            Method::SmartSequential => "smart",
        }
    }

    pub fn uses_priority(self) -> bool {
        matches!(self, Method::SimpleSequential | Method::SmartSequential)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "aao" | "all-at-once" | "allatonce" => Ok(Method::AllAtOnce),
            "simple" => Ok(Method::SimpleSequential),
            "smart" => Ok(Method::SmartSequential),
            other => Err(SelectorError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectorError {
    #[error("priority {priority} is outside 1..={total}")]
    PriorityOutOfRange { priority: usize, total: usize },
    #[error("no control signal for {0}")]
    MissingSignal(KpiKind),
    #[error("exponential base must be >= 1, got {0}")]
    BaseBelowOne(f64),
    #[error("acceptability threshold must be >= 0, got {0}")]
    NegativeThreshold(f64),
    #[error("unknown method `{0}` (expected baseline, aao, simple or smart)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub method: Method,
    pub acceptability_threshold: f64,
    pub exponential_base: f64,
    /// Highest priority first. Empty means "use the campaign goal order".
    #[serde(default)]
    pub priorities: Vec<KpiKind>,
}

impl SelectorConfig {
    pub const DEFAULT_THRESHOLD: f64 = 0.05;
    pub const DEFAULT_BASE: f64 = 2.0;

    pub fn new(method: Method, priorities: Vec<KpiKind>) -> Self {
        Self { method, acceptability_threshold: Self::DEFAULT_THRESHOLD, exponential_base: Self::DEFAULT_BASE, priorities }
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.acceptability_threshold = t;
        self
    }

    pub fn with_base(mut self, base: f64) -> Self {
        self.exponential_base = base;
        self
    }

    pub fn validate(&self) -> Result<(), SelectorError> {
        if !(self.exponential_base >= 1.0) {
            return Err(SelectorError::BaseBelowOne(self.exponential_base));
        }
        if !(self.acceptability_threshold >= 0.0) {
            return Err(SelectorError::NegativeThreshold(self.acceptability_threshold));
        }
        Ok(())
    }

    fn acceptable(&self, phi: f64) -> bool {
        phi.abs() <= self.acceptability_threshold
    }
}

/// KPIs handed to the actuator this interval, in priority order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Vec<KpiKind>,
}

impl Selection {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(kpi: KpiKind) -> Self {
        Self { chosen: vec![kpi] }
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }
}

/// `base^(total - priority) * phi` with `priority` counted from 1.
pub fn adjusted_signal(phi: f64, priority: usize, total: usize, base: f64) -> Result<f64, SelectorError> {
    if priority < 1 || priority > total {
        return Err(SelectorError::PriorityOutOfRange { priority, total });
    }
    if !(base >= 1.0) {
        return Err(SelectorError::BaseBelowOne(base));
    }
    let exponent = i32::try_from(total - priority).unwrap_or(i32::MAX);
    Ok(base.powi(exponent) * phi)
}

fn signal_for(signals: &[ControlSignal], kpi: KpiKind) -> Result<f64, SelectorError> {
    signals.iter().find(|s| s.kpi == kpi).map(|s| s.phi).ok_or(SelectorError::MissingSignal(kpi))
}

/// Raw signals in priority order.
fn ordered_signals(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Vec<(KpiKind, f64)>, SelectorError> {
    config.priorities.iter().map(|&k| signal_for(signals, k).map(|phi| (k, phi))).collect()
}

pub fn select_simple(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Selection, SelectorError> {
    let ordered = ordered_signals(signals, config)?;
    Ok(ordered
        .into_iter()
        .find(|&(_, phi)| !config.acceptable(phi))
        .map_or_else(Selection::none, |(k, _)| Selection::single(k)))
}

/// Adjusted signals `phi'` in priority order.
pub fn adjusted_signals(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Vec<(KpiKind, f64)>, SelectorError> {
    let total = config.priorities.len();
    ordered_signals(signals, config)?
        .into_iter()
        .enumerate()
        .map(|(idx, (k, phi))| adjusted_signal(phi, idx + 1, total, config.exponential_base).map(|adj| (k, adj)))
        .collect()
}

/// Picks the unacceptable KPI with the largest `|phi'|`; ties go to the
/// higher priority. Empty when every raw signal is within the threshold.
pub fn select_smart(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Selection, SelectorError> {
    config.validate()?;
    let raw = ordered_signals(signals, config)?;
    let adjusted = adjusted_signals(signals, config)?;
    let mut best: Option<(KpiKind, f64)> = None;
    for ((kpi, phi), (_, adj)) in raw.into_iter().zip(adjusted) {
        if config.acceptable(phi) {
            continue;
        }
        if best.is_none_or(|(_, b)| adj.abs() > b) {
            best = Some((kpi, adj.abs()));
        }
    }
    Ok(best.map_or_else(Selection::none, |(k, _)| Selection::single(k)))
}

pub fn select_all_at_once(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Selection, SelectorError> {
    let chosen = ordered_signals(signals, config)?.into_iter().filter(|&(_, phi)| !config.acceptable(phi)).map(|(k, _)| k).collect();
    Ok(Selection { chosen })
}

pub fn select(signals: &[ControlSignal], config: &SelectorConfig) -> Result<Selection, SelectorError> {
    config.validate()?;
    match config.method {
        Method::Baseline => Ok(Selection::none()),
        Method::AllAtOnce => select_all_at_once(signals, config),
        Method::SimpleSequential => select_simple(signals, config),
        Method::SmartSequential => select_smart(signals, config),
    }
}
