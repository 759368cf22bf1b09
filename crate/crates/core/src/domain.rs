//! Core vocabulary shared by every other module: KPIs, levers, goals,
//! campaign configuration, and the impression records the simulator replays.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A campaign KPI that can carry a goal and be controlled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KpiKind {
    Pacing,
    Cpc,
    Cpa,
    Viewability,
}

impl KpiKind {
    pub const ALL: [KpiKind; 4] = [KpiKind::Pacing, KpiKind::Cpc, KpiKind::Cpa, KpiKind::Viewability];

    pub fn as_str(self) -> &'static str {
        match self {
            KpiKind::Pacing => "pacing",
            KpiKind::Cpc => "cpc",
            KpiKind::Cpa => "cpa",
            KpiKind::Viewability => "viewability",
        }
    }

    /// Which side of the goal counts as satisfying it.
    pub fn natural_direction(self) -> GoalDirection {
        match self {
            KpiKind::Cpc | KpiKind::Cpa => GoalDirection::AtMost,
            KpiKind::Pacing | KpiKind::Viewability => GoalDirection::AtLeast,
        }
    }
}

impl fmt::Display for KpiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown KPI `{0}` (expected pacing, cpc, cpa or viewability)")]
pub struct UnknownKpi(pub String);

impl FromStr for KpiKind {
    type Err = UnknownKpi;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pacing" | "spend" => Ok(KpiKind::Pacing),
            "cpc" => Ok(KpiKind::Cpc),
            "cpa" => Ok(KpiKind::Cpa),
            "viewability" => Ok(KpiKind::Viewability),
            other => Err(UnknownKpi(other.to_string())),
        }
    }
}

/// Parses a comma separated priority list such as `viewability,cpa,pacing`.
pub fn parse_priority_list(s: &str) -> Result<Vec<KpiKind>, UnknownKpi> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// Joins a priority list with `-`, the form used in output file names.
pub fn priority_label(order: &[KpiKind]) -> String {
    order.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("-")
}

/// One of the three bidding levers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeverKind {
    Tolerance,
    BidMultiplier,
    ViewabilityThreshold,
}

impl LeverKind {
    pub const ALL: [LeverKind; 3] = [LeverKind::Tolerance, LeverKind::BidMultiplier, LeverKind::ViewabilityThreshold];

    pub fn as_str(self) -> &'static str {
        match self {
            LeverKind::Tolerance => "tolerance",
            LeverKind::BidMultiplier => "bid_multiplier",
            LeverKind::ViewabilityThreshold => "viewability_threshold",
        }
    }
}

impl fmt::Display for LeverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One historical auction opportunity.
///
/// `clearing_price` is quoted in CPM. The outcome flags are counterfactual:
/// they describe what happens if the replay wins the impression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub predicted_ctr: f64,
    pub predicted_view_prob: Option<f64>,
    pub clearing_price: f64,
    pub clicked: bool,
    pub viewable: bool,
    pub converted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("predicted_ctr must lie in [0, 1]")]
    CtrOutOfRange,
    #[error("predicted_view_prob must lie in [0, 1]")]
    ViewProbOutOfRange,
    #[error("clearing_price must be finite and >= 0")]
    NegativeClearingPrice,
}

impl ImpressionRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if !(0.0..=1.0).contains(&self.predicted_ctr) {
            return Err(RecordError::CtrOutOfRange);
        }
        if let Some(p) = self.predicted_view_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(RecordError::ViewProbOutOfRange);
            }
        }
        if !(self.clearing_price.is_finite() && self.clearing_price >= 0.0) {
            return Err(RecordError::NegativeClearingPrice);
        }
        Ok(())
    }

    /// The outcome flag a cost-per-outcome KPI divides by.
    pub fn outcome_for(&self, kpi: KpiKind) -> bool {
        match kpi {
            KpiKind::Cpa => self.converted,
            _ => self.clicked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalDirection {
    AtMost,
    AtLeast,
}

/// Goal value `GV_k` for one KPI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiGoal {
    pub kind: KpiKind,
    pub goal_value: f64,
    pub direction: GoalDirection,
}

impl KpiGoal {
    /// A goal using the KPI's natural direction (CPC/CPA at most, others at least).
    pub fn new(kind: KpiKind, goal_value: f64) -> Self {
        Self { kind, goal_value, direction: kind.natural_direction() }
    }
}

/// Campaign-level settings. `goals` is ordered by priority, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub budget: f64,
    pub value_per_click: f64,
    pub min_bid: f64,
    pub max_bid: f64,
    pub num_intervals: usize,
    pub auctions_per_interval: usize,
    #[serde(default)]
    pub goals: Vec<KpiGoal>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("goal for {0} must be strictly positive")]
    NonPositiveGoal(KpiKind),
    #[error("{0} appears more than once in the priority order")]
    DuplicatePriority(KpiKind),
    #[error("min_bid ({min}) exceeds max_bid ({max})")]
    BidCapInverted { min: f64, max: f64 },
    #[error("no KPI goals configured")]
    EmptyGoalList,
    #[error("budget must be finite and >= 0")]
    NegativeBudget,
    #[error("value_per_click must be finite and > 0")]
    NonPositiveValuePerClick,
    #[error("min_bid must be finite and >= 0")]
    NegativeMinBid,
    #[error("num_intervals must be >= 1")]
    NoIntervals,
    #[error("auctions_per_interval must be >= 1")]
    NoAuctionsPerInterval,
}

/// All the invariants a config violates, in a stable order.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid campaign config: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl ConfigErrors {
    pub fn contains(&self, probe: impl Fn(&ConfigError) -> bool) -> bool {
        self.0.iter().any(probe)
    }
}

impl CampaignConfig {
    /// Returns the config unchanged if every invariant holds, otherwise every violation.
    pub fn validate(self) -> Result<Self, ConfigErrors> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ConfigErrors(errors))
        }
    }

    pub fn violations(&self) -> Vec<ConfigError> {
        let mut errors = Vec::new();
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            errors.push(ConfigError::NegativeBudget);
        }
        if !(self.value_per_click.is_finite() && self.value_per_click > 0.0) {
            errors.push(ConfigError::NonPositiveValuePerClick);
        }
        if !(self.min_bid.is_finite() && self.min_bid >= 0.0) {
            errors.push(ConfigError::NegativeMinBid);
        }
        if self.min_bid > self.max_bid {
            errors.push(ConfigError::BidCapInverted { min: self.min_bid, max: self.max_bid });
        }
        if self.num_intervals == 0 {
            errors.push(ConfigError::NoIntervals);
        }
        if self.auctions_per_interval == 0 {
            errors.push(ConfigError::NoAuctionsPerInterval);
        }
        if self.goals.is_empty() {
            errors.push(ConfigError::EmptyGoalList);
        }
        let mut seen = Vec::with_capacity(self.goals.len());
        for goal in &self.goals {
            if !(goal.goal_value.is_finite() && goal.goal_value > 0.0) {
                errors.push(ConfigError::NonPositiveGoal(goal.kind));
            }
            if seen.contains(&goal.kind) {
                if !errors.contains(&ConfigError::DuplicatePriority(goal.kind)) {
                    errors.push(ConfigError::DuplicatePriority(goal.kind));
                }
            } else {
                seen.push(goal.kind);
            }
        }
        errors
    }

    pub fn priorities(&self) -> Vec<KpiKind> {
        self.goals.iter().map(|g| g.kind).collect()
    }

    pub fn goal(&self, kind: KpiKind) -> Option<&KpiGoal> {
        self.goals.iter().find(|g| g.kind == kind)
    }

    pub fn with_goals(mut self, goals: Vec<KpiGoal>) -> Self {
        self.goals = goals;
        self
    }

    /// Reorders the goals to follow `order`. Kinds not in `order` are dropped.
    pub fn reordered(&self, order: &[KpiKind]) -> Self {
        let goals = order.iter().filter_map(|k| self.goal(*k).copied()).collect();
        Self { goals, ..self.clone() }
    }
}

/// Current value of each lever.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverState {
    pub tolerance: f64,
    pub bid_multiplier: f64,
    pub viewability_threshold: f64,
}

impl LeverState {
    /// Bid multiplier 1.0, tolerance 0, viewability threshold at its minimum.
    pub const INITIAL: LeverState = LeverState { tolerance: 0.0, bid_multiplier: 1.0, viewability_threshold: 0.01 };

    pub fn get(&self, lever: LeverKind) -> f64 {
        match lever {
            LeverKind::Tolerance => self.tolerance,
            LeverKind::BidMultiplier => self.bid_multiplier,
            LeverKind::ViewabilityThreshold => self.viewability_threshold,
        }
    }

    pub fn set(&mut self, lever: LeverKind, value: f64) {
        match lever {
            LeverKind::Tolerance => self.tolerance = value,
            LeverKind::BidMultiplier => self.bid_multiplier = value,
            LeverKind::ViewabilityThreshold => self.viewability_threshold = value,
        }
    }
}

impl Default for LeverState {
    fn default() -> Self {
        Self::INITIAL
    }
}

/// Per-lever weights for one KPI row of the weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverWeights {
    pub tolerance: f64,
    pub bid_multiplier: f64,
    pub viewability_threshold: f64,
}

impl LeverWeights {
    pub fn get(&self, lever: LeverKind) -> f64 {
        match lever {
            LeverKind::Tolerance => self.tolerance,
            LeverKind::BidMultiplier => self.bid_multiplier,
            LeverKind::ViewabilityThreshold => self.viewability_threshold,
        }
    }
}

/// Signed KPI x lever weights. The sign says which way to move a lever to
/// raise the KPI's error-corrected value; zero means the lever is not used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightMatrix(BTreeMap<KpiKind, LeverWeights>);

impl WeightMatrix {
    pub fn new(rows: impl IntoIterator<Item = (KpiKind, LeverWeights)>) -> Self {
        Self(rows.into_iter().collect())
    }

    /// Weight for `(kpi, lever)`; a KPI without a row uses no levers.
    pub fn weight(&self, kpi: KpiKind, lever: LeverKind) -> f64 {
        self.0.get(&kpi).map_or(0.0, |row| row.get(lever))
    }

    pub fn row(&self, kpi: KpiKind) -> Option<&LeverWeights> {
        self.0.get(&kpi)
    }

    pub fn set(&mut self, kpi: KpiKind, lever: LeverKind, weight: f64) {
        let row = self.0.entry(kpi).or_insert(LeverWeights { tolerance: 0.0, bid_multiplier: 0.0, viewability_threshold: 0.0 });
        match lever {
            LeverKind::Tolerance => row.tolerance = weight,
            LeverKind::BidMultiplier => row.bid_multiplier = weight,
            LeverKind::ViewabilityThreshold => row.viewability_threshold = weight,
        }
    }
}

impl Default for WeightMatrix {
    /// Pacing and CPC pull tolerance down and the multiplier up; viewability
    /// only moves the viewability threshold. CPA shares the CPC row.
    fn default() -> Self {
        let cost = LeverWeights { tolerance: -0.5, bid_multiplier: 0.5, viewability_threshold: 0.0 };
        Self::new([
            (KpiKind::Pacing, cost),
            (KpiKind::Cpc, cost),
            (KpiKind::Cpa, cost),
            (KpiKind::Viewability, LeverWeights { tolerance: 0.0, bid_multiplier: 0.0, viewability_threshold: 1.0 }),
        ])
    }
}
