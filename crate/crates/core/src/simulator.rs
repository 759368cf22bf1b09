//! Second-price replay of an impression log and the closed control loop.
//!
//! Each interval the current levers drive the bidder over a contiguous
//! slice of the inventory; cumulative KPIs are measured, turned into PID
//! signals, a selector picks the KPI(s) to act on, and the actuator produces
//! the levers for the next interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{self, ActuatorError, LeverConstraints, LeverUpdate};
use crate::bidder::{compute_bid, BidDecision};
use crate::controller::{self, ControlSignal, ControllerError, ErrorHistory, GainSchedule};
use crate::domain::{priority_label, CampaignConfig, ConfigErrors, ImpressionRecord, KpiKind, LeverState, WeightMatrix};
use crate::selector::{self, Method, Selection, SelectorConfig, SelectorError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error("inventory of {records} records cannot fill {intervals} intervals")]
    InventoryTooSmall { records: usize, intervals: usize },
    #[error("selector priorities `{}` are not a permutation of the goal KPIs `{}`", priority_label(priorities), priority_label(goals))]
    PriorityMismatch { priorities: Vec<KpiKind>, goals: Vec<KpiKind> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub index: usize,
    pub decision: BidDecision,
    pub won: bool,
    /// Currency paid: the clearing CPM divided by 1000 when won.
    pub cost: f64,
}

/// A bid at or above the clearing price wins and pays the clearing price.
pub fn settle_auction(index: usize, decision: BidDecision, imp: &ImpressionRecord) -> AuctionOutcome {
    match decision {
        BidDecision::Bid(price) if price >= imp.clearing_price => {
            AuctionOutcome { index, decision, won: true, cost: imp.clearing_price / 1000.0 }
        }
        _ => AuctionOutcome { index, decision, won: false, cost: 0.0 },
    }
}

/// Counts over a set of auction outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub auctions: u64,
    pub bids: u64,
    pub wins: u64,
    pub spend: f64,
    pub clicks: u64,
    pub conversions: u64,
    pub viewable: u64,
}

impl Totals {
    pub fn record(&mut self, outcome: &AuctionOutcome, imp: &ImpressionRecord) {
        self.auctions += 1;
        if outcome.decision.is_bid() {
            self.bids += 1;
        }
        if outcome.won {
            self.wins += 1;
            self.spend += outcome.cost;
            self.clicks += u64::from(imp.clicked);
            self.conversions += u64::from(imp.converted);
            self.viewable += u64::from(imp.viewable);
        }
    }

    pub fn from_outcomes(outcomes: &[AuctionOutcome], records: &[ImpressionRecord]) -> Self {
        let mut t = Self::default();
        for o in outcomes {
            t.record(o, &records[o.index]);
        }
        t
    }
}

/// Cumulative KPIs. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiMeasurement {
    pub elapsed_fraction: f64,
    pub spend: f64,
    pub wins: u64,
    pub clicks: u64,
    pub conversions: u64,
    pub viewable: u64,
    pub pacing: Option<f64>,
    pub cpc: Option<f64>,
    pub cpa: Option<f64>,
    pub viewability: Option<f64>,
}

fn ratio(num: f64, den: u64) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

impl KpiMeasurement {
    pub fn from_totals(totals: &Totals, budget: f64, elapsed_fraction: f64) -> Self {
        let scheduled = budget * elapsed_fraction;
        Self {
            elapsed_fraction,
            spend: totals.spend,
            wins: totals.wins,
            clicks: totals.clicks,
            conversions: totals.conversions,
            viewable: totals.viewable,
            pacing: (scheduled > 0.0).then(|| totals.spend / scheduled),
            cpc: ratio(totals.spend, totals.clicks),
            cpa: ratio(totals.spend, totals.conversions),
            viewability: ratio(totals.viewable as f64, totals.wins),
        }
    }

    pub fn value(&self, kpi: KpiKind) -> Option<f64> {
        match kpi {
            KpiKind::Pacing => self.pacing,
            KpiKind::Cpc => self.cpc,
            KpiKind::Cpa => self.cpa,
            KpiKind::Viewability => self.viewability,
        }
    }
}

/// KPIs over every outcome so far; `elapsed_fraction` is `(k + 1) / N`.
pub fn measure_kpis(outcomes: &[AuctionOutcome], records: &[ImpressionRecord], config: &CampaignConfig, elapsed_fraction: f64) -> KpiMeasurement {
    KpiMeasurement::from_totals(&Totals::from_outcomes(outcomes, records), config.budget, elapsed_fraction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRun {
    pub outcomes: Vec<AuctionOutcome>,
    pub spend: f64,
}

/// Replays `records` in order with fixed levers. `first_index` is the
/// position of `records[0]` in the full inventory.
pub fn run_interval(
    records: &[ImpressionRecord],
    first_index: usize,
    levers: &LeverState,
    config: &CampaignConfig,
    remaining_budget: f64,
) -> IntervalRun {
    let mut remaining = remaining_budget;
    let mut spend = 0.0;
    let outcomes = records
        .iter()
        .enumerate()
        .map(|(offset, imp)| {
            let decision = compute_bid(imp, levers, config, remaining);
            let outcome = settle_auction(first_index + offset, decision, imp);
            remaining -= outcome.cost;
            spend += outcome.cost;
            outcome
        })
        .collect();
    IntervalRun { outcomes, spend }
}

/// Contiguous `[start, end)` slices; the last one absorbs the remainder.
pub fn partition(len: usize, intervals: usize) -> Result<Vec<(usize, usize)>, SimulationError> {
    if intervals == 0 || len < intervals {
        return Err(SimulationError::InventoryTooSmall { records: len, intervals });
    }
    let size = len / intervals;
    Ok((0..intervals).map(|k| (k * size, if k + 1 == intervals { len } else { (k + 1) * size })).collect())
}

/// Signal detail for one KPI in one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub kpi: KpiKind,
    pub goal: f64,
    pub measured: Option<f64>,
    pub error: Option<f64>,
    pub phi: f64,
    pub p_term: f64,
    pub i_term: f64,
    pub d_term: f64,
    pub adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub interval: usize,
    /// Levers in force while this interval's auctions ran.
    pub levers: LeverState,
    pub signals: Vec<SignalReport>,
    pub selection: Selection,
    pub updates: Vec<LeverUpdate>,
    pub next_levers: LeverState,
    pub aggregates: Totals,
    pub cumulative: KpiMeasurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRun {
    pub method: Method,
    pub priorities: Vec<KpiKind>,
    pub acceptability_threshold: f64,
    pub exponential_base: f64,
    /// Smart Sequential stays idle when every signal is acceptable, which
    /// goes beyond taking the largest adjusted signal.
    pub smart_uses_threshold: bool,
    pub constraints: LeverConstraints,
    pub reports: Vec<IntervalReport>,
}

impl CampaignRun {
    pub fn final_measurement(&self) -> Option<&KpiMeasurement> {
        self.reports.last().map(|r| &r.cumulative)
    }

    pub fn lever_series(&self) -> impl Iterator<Item = &LeverState> {
        self.reports.iter().map(|r| &r.levers)
    }
}

fn resolve_priorities(config: &CampaignConfig, selector: &SelectorConfig) -> Result<Vec<KpiKind>, SimulationError> {
    let goals = config.priorities();
    if selector.priorities.is_empty() {
        return Ok(goals);
    }
    let mut a = selector.priorities.clone();
    let mut b = goals.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(SimulationError::PriorityMismatch { priorities: selector.priorities.clone(), goals });
    }
    Ok(selector.priorities.clone())
}

/// Runs the feedback loop over the whole inventory.
pub fn run_campaign(
    inventory: &[ImpressionRecord],
    config: &CampaignConfig,
    selector_config: &SelectorConfig,
    weights: &WeightMatrix,
    gains: &GainSchedule,
) -> Result<CampaignRun, SimulationError> {
    let config = config.clone().validate()?;
    selector_config.validate()?;
    let slices = partition(inventory.len(), config.num_intervals)?;
    let priorities = resolve_priorities(&config, selector_config)?;
    let selector_config = SelectorConfig { priorities: priorities.clone(), ..selector_config.clone() };
    let constraints = LeverConstraints::from_inventory(inventory);

    let mut levers = LeverState::INITIAL;
    let mut history = ErrorHistory::new();
    let mut cumulative = Totals::default();
    let mut reports = Vec::with_capacity(slices.len());

    for (k, &(start, end)) in slices.iter().enumerate() {
        let slice = &inventory[start..end];
        let run = run_interval(slice, start, &levers, &config, config.budget - cumulative.spend);
        let mut aggregates = Totals::default();
        for (outcome, imp) in run.outcomes.iter().zip(slice) {
            aggregates.record(outcome, imp);
            cumulative.record(outcome, imp);
        }
        let elapsed = (k + 1) as f64 / config.num_intervals as f64;
        let measurement = KpiMeasurement::from_totals(&cumulative, config.budget, elapsed);

        let mut signals = Vec::with_capacity(priorities.len());
        let mut details = Vec::with_capacity(priorities.len());
        for &kpi in &priorities {
            let goal = *config.goal(kpi).expect("priorities come from goals");
            let measured = measurement.value(kpi);
            let error = measured.map(|m| controller::compute_error(&goal, m)).transpose()?;
            history.record(kpi, k, error)?;
            let signal = if history.is_empty(kpi) {
                ControlSignal::zero(kpi)
            } else {
                controller::pid_signal(&history, kpi, &gains.for_goal(goal.goal_value))?
            };
            signals.push(signal);
            details.push((goal.goal_value, measured, error));
        }

        let adjusted = selector::adjusted_signals(&signals, &selector_config)?;
        let selection = selector::select(&signals, &selector_config)?;
        let actuation = actuator::apply(&selection, &signals, weights, &levers, &constraints)?;

        let signal_reports = signals
            .iter()
            .zip(&details)
            .zip(&adjusted)
            .map(|((s, &(goal, measured, error)), &(_, adj))| SignalReport {
                kpi: s.kpi,
                goal,
                measured,
                error,
                phi: s.phi,
                p_term: s.p_term,
                i_term: s.i_term,
                d_term: s.d_term,
                adjusted: adj,
            })
            .collect();

        reports.push(IntervalReport {
            interval: k,
            levers,
            signals: signal_reports,
            selection,
            updates: actuation.updates,
            next_levers: actuation.levers,
            aggregates,
            cumulative: measurement,
        });
        levers = actuation.levers;
    }

    Ok(CampaignRun {
        method: selector_config.method,
        priorities,
        acceptability_threshold: selector_config.acceptability_threshold,
        exponential_base: selector_config.exponential_base,
        smart_uses_threshold: selector_config.method == Method::SmartSequential,
        constraints,
        reports,
    })
}
