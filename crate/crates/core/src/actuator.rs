//! Turning control signals into lever moves.
//!
//! Each lever moves multiplicatively, `next = current * exp(w * phi)`, with the
//! KPI/lever weight in the exponent so its sign sets the direction and a zero
//! weight leaves the lever alone. The result is then limited to the lever's
//! per-interval change and clipped into its range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlSignal;
use crate::domain::{ImpressionRecord, KpiKind, LeverKind, LeverState, WeightMatrix};
use crate::selector::Selection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuatorError {
    #[error("non-finite actuator input (current {current}, weight {weight}, phi {phi})")]
    NonFiniteInput { current: f64, weight: f64, phi: f64 },
    #[error("no control signal for selected KPI {0}")]
    MissingSignal(KpiKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverBounds {
    pub min_value: f64,
    pub max_value: f64,
    pub max_change_per_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverConstraints {
    pub tolerance: LeverBounds,
    pub bid_multiplier: LeverBounds,
    pub viewability_threshold: LeverBounds,
}

impl LeverConstraints {
    pub const VIEWABILITY_THRESHOLD: LeverBounds = LeverBounds { min_value: 0.01, max_value: 0.6, max_change_per_interval: 0.1 };
    pub const BID_MULTIPLIER: LeverBounds = LeverBounds { min_value: 0.1, max_value: 10.0, max_change_per_interval: 1.0 };

    /// Fixed bounds for the multiplier and viewability threshold, with the
    /// given tolerance ceiling and per-interval tolerance step.
    pub fn new(tolerance_max: f64, tolerance_max_change: f64) -> Self {
        Self {
            tolerance: LeverBounds { min_value: 0.0, max_value: tolerance_max, max_change_per_interval: tolerance_max_change },
            bid_multiplier: Self::BID_MULTIPLIER,
            viewability_threshold: Self::VIEWABILITY_THRESHOLD,
        }
    }

    /// Tolerance ceiling is the 95th percentile of predicted CTR; its step
    /// is a fifth of the median. Nearest-rank percentiles over all records.
    pub fn from_inventory(records: &[ImpressionRecord]) -> Self {
        let mut ctrs: Vec<f64> = records.iter().map(|r| r.predicted_ctr).collect();
        ctrs.sort_by(f64::total_cmp);
        let p95 = nearest_rank(&ctrs, 95.0).unwrap_or(0.0);
        let p50 = nearest_rank(&ctrs, 50.0).unwrap_or(0.0);
        Self::new(p95, p50 / 5.0)
    }

    pub fn bounds(&self, lever: LeverKind) -> &LeverBounds {
        match lever {
            LeverKind::Tolerance => &self.tolerance,
            LeverKind::BidMultiplier => &self.bid_multiplier,
            LeverKind::ViewabilityThreshold => &self.viewability_threshold,
        }
    }

    /// Lowest tolerance a multiplicative increase starts from.
    pub fn tolerance_floor(&self) -> f64 {
        0.01 * self.tolerance.max_value
    }

    pub fn contains(&self, levers: &LeverState) -> bool {
        LeverKind::ALL.iter().all(|&l| {
            let b = self.bounds(l);
            let v = levers.get(l);
            v >= b.min_value && v <= b.max_value
        })
    }
}

/// Nearest-rank percentile of already sorted values.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn propose_update(current: f64, weight: f64, phi: f64) -> Result<f64, ActuatorError> {
    if !(current.is_finite() && weight.is_finite() && phi.is_finite()) {
        return Err(ActuatorError::NonFiniteInput { current, weight, phi });
    }
    if weight == 0.0 || current == 0.0 {
        return Ok(current);
    }
    Ok(current * (weight * phi).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampBound {
    MaxChange,
    Min,
    Max,
}

impl ClampBound {
    pub fn as_str(self) -> &'static str {
        match self {
            ClampBound::MaxChange => "max_change",
            ClampBound::Min => "min",
            ClampBound::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub value: f64,
    /// The last constraint that changed the value, if any.
    pub bound: Option<ClampBound>,
}

/// Caps the step at the lever's max change, then clips into `[min, max]`.
pub fn clamp_update(previous: f64, proposed: f64, constraints: &LeverConstraints, lever: LeverKind) -> Clamped {
    let b = constraints.bounds(lever);
    let step = b.max_change_per_interval;
    let mut bound = None;
    let mut value = if proposed.is_nan() { previous } else { proposed };

    if value - previous > step {
        value = previous + step;
        bound = Some(ClampBound::MaxChange);
    } else if previous - value > step {
        value = previous - step;
        bound = Some(ClampBound::MaxChange);
    }
    // previous + step can round past the cap
    while (value - previous).abs() > step {
        value = if value > previous { value.next_down() } else { value.next_up() };
    }

    if value > b.max_value {
        value = b.max_value;
        bound = Some(ClampBound::Max);
    } else if value < b.min_value {
        value = b.min_value;
        bound = Some(ClampBound::Min);
    }
    Clamped { value, bound }
}

/// One lever move within an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverUpdate {
    pub lever: LeverKind,
    pub previous: f64,
    pub proposed: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    pub bound: Option<ClampBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub levers: LeverState,
    pub updates: Vec<LeverUpdate>,
}

/// Moves one lever for one KPI, applying the zero-tolerance floor.
fn propose_for_lever(lever: LeverKind, current: f64, weight: f64, phi: f64, constraints: &LeverConstraints) -> Result<f64, ActuatorError> {
    let floor = constraints.tolerance_floor();
    let base = if lever == LeverKind::Tolerance && weight * phi > 0.0 && current < floor { floor } else { current };
    propose_update(base, weight, phi)
}

/// Applies the selected KPIs' signals to every lever with a nonzero weight.
///
/// Several KPIs (All-At-Once) compose in selection order and the combined
/// proposal is clamped once against the interval-start value.
pub fn apply(
    selection: &Selection,
    signals: &[ControlSignal],
    weights: &WeightMatrix,
    levers: &LeverState,
    constraints: &LeverConstraints,
) -> Result<Actuation, ActuatorError> {
    let mut phis = Vec::with_capacity(selection.chosen.len());
    for &kpi in &selection.chosen {
        let signal = signals.iter().find(|s| s.kpi == kpi).ok_or(ActuatorError::MissingSignal(kpi))?;
        phis.push((kpi, signal.phi));
    }

    let mut next = *levers;
    let mut updates = Vec::new();
    for lever in LeverKind::ALL {
        let previous = levers.get(lever);
        let mut proposed = previous;
        let mut touched = false;
        for &(kpi, phi) in &phis {
            let w = weights.weight(kpi, lever);
            if w == 0.0 {
                continue;
            }
            proposed = propose_for_lever(lever, proposed, w, phi, constraints)?;
            touched = true;
        }
        if !touched {
            continue;
        }
        let clamped = clamp_update(previous, proposed, constraints, lever);
        next.set(lever, clamped.value);
        updates.push(LeverUpdate { lever, previous, proposed, final_value: clamped.value, bound: clamped.bound });
    }
    Ok(Actuation { levers: next, updates })
}
