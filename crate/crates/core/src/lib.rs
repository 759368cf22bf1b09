//! Multivariate PID feedback control for real-time-bidding campaign KPIs.
//!
//! A campaign is replayed against an impression log in fixed intervals.
//! After each interval the cumulative KPIs are compared with their goals,
//! a PID controller turns each error into a normalized signal, a selector
//! decides which KPI(s) to act on, and the actuator moves the bid multiplier,
//! CTR tolerance and viewability threshold accordingly.

pub mod actuator;
pub mod bidder;
pub mod controller;
pub mod domain;
pub mod harness;
pub mod inventory;
pub mod report;
pub mod selector;
pub mod simulator;

pub use actuator::{LeverConstraints, LeverUpdate};
pub use bidder::{compute_bid, BidDecision, NoBidReason};
pub use controller::{pid_signal, ControlSignal, ErrorHistory, GainSchedule, PidGains};
pub use domain::{CampaignConfig, ImpressionRecord, KpiGoal, KpiKind, LeverKind, LeverState, WeightMatrix};
pub use selector::{Method, Selection, SelectorConfig};
pub use simulator::{run_campaign, CampaignRun, IntervalReport, KpiMeasurement};
