//! PID control signal per KPI.
//!
//! The error is `goal - measured` for every KPI regardless of goal direction;
//! lever direction comes entirely from the weight-matrix signs. Gains are
//! normalized by the goal value (`K_P = 1 / GV`) so signals from different
//! KPIs are directly comparable:
//!
//! ```text
//! phi = K_P * e_t + (K_P / T_I) * sum(e over last T_I intervals) + (T_D * K_P) * (e_t - e_{t-1})
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{KpiGoal, KpiKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("measurement for {0} is not finite")]
    NonFiniteMeasurement(KpiKind),
    #[error("no error samples recorded for {0}")]
    EmptyHistory(KpiKind),
    #[error("interval {interval} is not after the last sample ({last}) for {kpi}")]
    NonIncreasingInterval { kpi: KpiKind, interval: usize, last: usize },
}

/// `GV_k - KPI_k`.
pub fn compute_error(goal: &KpiGoal, measured: f64) -> Result<f64, ControllerError> {
    if !measured.is_finite() {
        return Err(ControllerError::NonFiniteMeasurement(goal.kind));
    }
    Ok(goal.goal_value - measured)
}

/// Per-KPI error samples, one per interval at most, in increasing interval order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistory {
    samples: BTreeMap<KpiKind, Vec<(usize, f64)>>,
}

impl ErrorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kpi: KpiKind, interval: usize, error: f64) -> Result<(), ControllerError> {
        let series = self.samples.entry(kpi).or_default();
        if let Some(&(last, _)) = series.last() {
            if interval <= last {
                return Err(ControllerError::NonIncreasingInterval { kpi, interval, last });
            }
        }
        series.push((interval, error));
        Ok(())
    }

    /// Records the error for an interval. With no measurement the previous
    /// error is carried forward; before any measurement nothing is recorded.
    pub fn record(&mut self, kpi: KpiKind, interval: usize, error: Option<f64>) -> Result<(), ControllerError> {
        match error {
            Some(e) => self.push(kpi, interval, e),
            None => match self.latest(kpi) {
                Some(prev) => self.push(kpi, interval, prev),
                None => Ok(()),
            },
        }
    }

    pub fn samples(&self, kpi: KpiKind) -> &[(usize, f64)] {
        self.samples.get(&kpi).map_or(&[], Vec::as_slice)
    }

    pub fn latest(&self, kpi: KpiKind) -> Option<f64> {
        self.samples(kpi).last().map(|&(_, e)| e)
    }

    pub fn is_empty(&self, kpi: KpiKind) -> bool {
        self.samples(kpi).is_empty()
    }
}

/// Window lengths shared by every KPI. `T_I` bounds the integral lookback,
/// `T_D` scales the derivative gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub integral_window: usize,
    pub derivative_span: u32,
}

impl Default for GainSchedule {
    fn default() -> Self {
        Self { integral_window: 10, derivative_span: 2 }
    }
}

impl GainSchedule {
    /// Gains for one KPI, normalized by its goal value.
    pub fn for_goal(&self, goal_value: f64) -> PidGains {
        PidGains { kp: 1.0 / goal_value, integral_window: self.integral_window, derivative_span: self.derivative_span }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub integral_window: usize,
    pub derivative_span: u32,
}

impl PidGains {
    pub fn ki(&self) -> f64 {
        self.kp / self.integral_window as f64
    }

    pub fn kd(&self) -> f64 {
        f64::from(self.derivative_span) * self.kp
    }
}

/// The combined signal and its pre-gain components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub kpi: KpiKind,
    pub phi: f64,
    pub p_term: f64,
    pub i_term: f64,
    pub d_term: f64,
}

impl ControlSignal {
    pub fn zero(kpi: KpiKind) -> Self {
        Self { kpi, phi: 0.0, p_term: 0.0, i_term: 0.0, d_term: 0.0 }
    }
}

pub fn pid_signal(history: &ErrorHistory, kpi: KpiKind, gains: &PidGains) -> Result<ControlSignal, ControllerError> {
    let samples = history.samples(kpi);
    let (&(_, latest), earlier) = samples.split_last().ok_or(ControllerError::EmptyHistory(kpi))?;

    let window = gains.integral_window.min(samples.len());
    let i_term: f64 = samples[samples.len() - window..].iter().map(|&(_, e)| e).sum();
    let d_term = earlier.last().map_or(0.0, |&(_, prev)| latest - prev);
    let p_term = latest;

    let phi = gains.kp * p_term + gains.ki() * i_term + gains.kd() * d_term;
    Ok(ControlSignal { kpi, phi, p_term, i_term, d_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn history_of(kpi: KpiKind, errors: &[f64]) -> ErrorHistory {
        let mut h = ErrorHistory::new();
        for (i, &e) in errors.iter().enumerate() {
            h.push(kpi, i, e).unwrap();
        }
        h
    }

    #[test]
    fn error_is_goal_minus_measured() {
        let view = KpiGoal::new(KpiKind::Viewability, 0.70);
        assert!((compute_error(&view, 0.50).unwrap() - 0.20).abs() < 1e-15);
        let cpc = KpiGoal::new(KpiKind::Cpc, 2.0);
        assert_eq!(compute_error(&cpc, 2.0).unwrap(), 0.0);
        assert_eq!(compute_error(&cpc, 3.0).unwrap(), -1.0);
        assert_eq!(compute_error(&cpc, f64::NAN), Err(ControllerError::NonFiniteMeasurement(KpiKind::Cpc)));
    }

    #[test]
    fn default_gains() {
        let g = GainSchedule::default().for_goal(4.0);
        assert_eq!(g.kp, 0.25);
        assert_eq!(g.ki(), 0.025);
        assert_eq!(g.kd(), 0.5);
    }

    #[test]
    fn single_sample_signal() {
        let h = history_of(KpiKind::Viewability, &[0.20]);
        let s = pid_signal(&h, KpiKind::Viewability, &GainSchedule::default().for_goal(0.70)).unwrap();
        assert_eq!((s.p_term, s.i_term, s.d_term), (0.20, 0.20, 0.0));
        // (1/0.7)(0.2) + (1/7)(0.2)
        assert!((s.phi - 0.314_285_714_285_714_3).abs() < 1e-12, "{}", s.phi);
    }

    #[test]
    fn two_sample_signal() {
        let h = history_of(KpiKind::Cpc, &[0.1, 0.3]);
        let s = pid_signal(&h, KpiKind::Cpc, &GainSchedule::default().for_goal(1.0)).unwrap();
        assert!((s.p_term - 0.3).abs() < 1e-15);
        assert!((s.i_term - 0.4).abs() < 1e-15);
        assert!((s.d_term - 0.2).abs() < 1e-15);
        assert!((s.phi - 0.74).abs() < 1e-12);
    }

    #[test]
    fn at_goal_history_is_silent() {
        let h = history_of(KpiKind::Pacing, &[0.0; 15]);
        let s = pid_signal(&h, KpiKind::Pacing, &GainSchedule::default().for_goal(1.0)).unwrap();
        assert_eq!(s.phi, 0.0);
    }

    #[test]
    fn empty_history_is_an_error() {
        let h = ErrorHistory::new();
        assert_eq!(
            pid_signal(&h, KpiKind::Cpa, &GainSchedule::default().for_goal(1.0)),
            Err(ControllerError::EmptyHistory(KpiKind::Cpa))
        );
    }

    #[test]
    fn integral_window_drops_old_errors() {
        let errors: Vec<f64> = (1..=12).map(f64::from).collect();
        let h = history_of(KpiKind::Pacing, &errors);
        let s = pid_signal(&h, KpiKind::Pacing, &GainSchedule::default().for_goal(1.0)).unwrap();
        assert_eq!(s.i_term, (3..=12).sum::<i32>() as f64);
    }

    #[test]
    fn missing_measurement_carries_error_forward() {
        let mut h = ErrorHistory::new();
        h.record(KpiKind::Cpc, 0, None).unwrap();
        assert!(h.is_empty(KpiKind::Cpc));
        h.record(KpiKind::Cpc, 1, Some(-0.4)).unwrap();
        h.record(KpiKind::Cpc, 2, None).unwrap();
        assert_eq!(h.samples(KpiKind::Cpc), &[(1, -0.4), (2, -0.4)]);
    }

    #[test]
    fn intervals_must_increase() {
        let mut h = ErrorHistory::new();
        h.push(KpiKind::Cpc, 3, 0.1).unwrap();
        assert!(h.push(KpiKind::Cpc, 3, 0.2).is_err());
        assert!(h.push(KpiKind::Cpc, 2, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn integral_matches_brute_force(errors in prop::collection::vec(-10.0f64..10.0, 1..100), window in 1usize..20) {
            let h = history_of(KpiKind::Viewability, &errors);
            let gains = PidGains { kp: 1.0, integral_window: window, derivative_span: 2 };
            let s = pid_signal(&h, KpiKind::Viewability, &gains).unwrap();
            let mut brute = 0.0;
            for (idx, e) in errors.iter().enumerate() {
                if idx + window >= errors.len() {
                    brute += e;
                }
            }
            prop_assert!((s.i_term - brute).abs() <= 1e-12 * (1.0 + brute.abs()));
        }

        #[test]
        fn signal_is_linear_in_errors(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            goal in 0.1f64..50.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let sum: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let gains = GainSchedule::default().for_goal(goal);
            let k = KpiKind::Cpc;
            let sa = pid_signal(&history_of(k, &a), k, &gains).unwrap().phi;
            let sb = pid_signal(&history_of(k, &b), k, &gains).unwrap().phi;
            let ss = pid_signal(&history_of(k, &sum), k, &gains).unwrap().phi;
            let scale = 1.0 + sa.abs() + sb.abs();
            prop_assert!((ss - (sa + sb)).abs() <= 1e-9 * scale);
        }
    }
}
