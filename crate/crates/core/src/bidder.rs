//! The bid function: a CPM price linear in predicted CTR, scaled by the bid
//! multiplier and capped by the campaign's min/max bid, behind the
//! tolerance and viewability-threshold filters.

use serde::{Deserialize, Serialize};

use crate::domain::{CampaignConfig, ImpressionRecord, LeverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoBidReason {
    BelowTolerance,
    BelowViewThreshold,
    NoViewProbability,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidDecision {
    NoBid(NoBidReason),
    /// Price in CPM.
    Bid(f64),
}

impl BidDecision {
    pub fn price(&self) -> Option<f64> {
        match *self {
            BidDecision::Bid(p) => Some(p),
            BidDecision::NoBid(_) => None,
        }
    }

    pub fn is_bid(&self) -> bool {
        matches!(self, BidDecision::Bid(_))
    }
}

/// Expected value of the impression in CPM before the multiplier.
pub fn base_value_cpm(imp: &ImpressionRecord, config: &CampaignConfig) -> f64 {
    config.value_per_click * imp.predicted_ctr * 1000.0
}

/// Decides whether and how much to bid.
///
/// A non-positive remaining budget stops bidding. A clearing price is only
/// known after the auction, so a final win may overshoot the budget.
/// Whenever the viewability threshold is above zero (always, under the
/// lever bounds) records without a view probability are skipped.
pub fn compute_bid(imp: &ImpressionRecord, levers: &LeverState, config: &CampaignConfig, remaining_budget: f64) -> BidDecision {
    if remaining_budget <= 0.0 {
        return BidDecision::NoBid(NoBidReason::BudgetExhausted);
    }
    if imp.predicted_ctr < levers.tolerance {
        return BidDecision::NoBid(NoBidReason::BelowTolerance);
    }
    if levers.viewability_threshold > 0.0 {
        match imp.predicted_view_prob {
            None => return BidDecision::NoBid(NoBidReason::NoViewProbability),
            Some(p) if p < levers.viewability_threshold => return BidDecision::NoBid(NoBidReason::BelowViewThreshold),
            Some(_) => {}
        }
    }
    let raw = levers.bid_multiplier * base_value_cpm(imp, config);
    BidDecision::Bid(raw.clamp(config.min_bid, config.max_bid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{KpiGoal, KpiKind};
    use proptest::prelude::*;

    fn config() -> CampaignConfig {
        CampaignConfig {
            budget: 100.0,
            value_per_click: 2.0,
            min_bid: 0.5,
            max_bid: 10.0,
            num_intervals: 1,
            auctions_per_interval: 1,
            goals: vec![KpiGoal::new(KpiKind::Pacing, 1.0)],
        }
    }

    fn imp(ctr: f64, view: Option<f64>) -> ImpressionRecord {
        ImpressionRecord { predicted_ctr: ctr, predicted_view_prob: view, clearing_price: 1.0, clicked: false, viewable: false, converted: false }
    }

    fn levers(tolerance: f64, m: f64, v: f64) -> LeverState {
        LeverState { tolerance, bid_multiplier: m, viewability_threshold: v }
    }

    #[test]
    fn linear_bid() {
        let d = compute_bid(&imp(0.002, Some(0.5)), &levers(0.0, 1.0, 0.01), &config(), 10.0);
        let p = d.price().unwrap();
        assert!((p - 4.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn bid_is_capped() {
        let d = compute_bid(&imp(0.002, Some(0.5)), &levers(0.0, 10.0, 0.01), &config(), 10.0);
        assert_eq!(d, BidDecision::Bid(10.0));
        let d = compute_bid(&imp(0.00001, Some(0.5)), &levers(0.0, 1.0, 0.01), &config(), 10.0);
        assert_eq!(d, BidDecision::Bid(0.5));
    }

    #[test]
    fn filters() {
        let cfg = config();
        assert_eq!(
            compute_bid(&imp(0.002, Some(0.5)), &levers(0.003, 1.0, 0.01), &cfg, 10.0),
            BidDecision::NoBid(NoBidReason::BelowTolerance)
        );
        assert_eq!(compute_bid(&imp(0.002, None), &levers(0.0, 1.0, 0.3), &cfg, 10.0), BidDecision::NoBid(NoBidReason::NoViewProbability));
        assert_eq!(
            compute_bid(&imp(0.002, Some(0.2)), &levers(0.0, 1.0, 0.3), &cfg, 10.0),
            BidDecision::NoBid(NoBidReason::BelowViewThreshold)
        );
        // the lowest reachable threshold still rejects missing predictions
        assert_eq!(compute_bid(&imp(0.002, None), &levers(0.0, 1.0, 0.01), &cfg, 10.0), BidDecision::NoBid(NoBidReason::NoViewProbability));
        // a view probability of exactly zero is a prediction, distinct from none
        assert_eq!(compute_bid(&imp(0.002, Some(0.0)), &levers(0.0, 1.0, 0.0), &cfg, 10.0).is_bid(), true);
    }

    #[test]
    fn exhausted_budget_blocks_everything() {
        assert_eq!(compute_bid(&imp(0.5, Some(0.9)), &levers(0.0, 1.0, 0.01), &config(), 0.0), BidDecision::NoBid(NoBidReason::BudgetExhausted));
    }

    proptest! {
        #[test]
        fn raising_multiplier_never_hurts(ctr in 0.0f64..0.1, view in prop::option::of(0.0f64..1.0), t in 0.0f64..0.05, v in 0.01f64..0.6, m1 in 0.1f64..10.0, m2 in 0.1f64..10.0) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let r = imp(ctr, view);
            let a = compute_bid(&r, &levers(t, lo, v), &config(), 1.0);
            let b = compute_bid(&r, &levers(t, hi, v), &config(), 1.0);
            prop_assert_eq!(a.is_bid(), b.is_bid());
            if let (Some(pa), Some(pb)) = (a.price(), b.price()) {
                prop_assert!(pb >= pa);
            }
        }

        #[test]
        fn raising_filters_never_adds_bids(ctr in 0.0f64..0.1, view in prop::option::of(0.0f64..1.0), t1 in 0.0f64..0.05, t2 in 0.0f64..0.05, v1 in 0.01f64..0.6, v2 in 0.01f64..0.6) {
            let r = imp(ctr, view);
            let loose = levers(t1.min(t2), 1.0, v1.min(v2));
            let tight_t = levers(t1.max(t2), 1.0, v1.min(v2));
            let tight_v = levers(t1.min(t2), 1.0, v1.max(v2));
            let base = compute_bid(&r, &loose, &config(), 1.0).is_bid();
            prop_assert!(base || !compute_bid(&r, &tight_t, &config(), 1.0).is_bid());
            prop_assert!(base || !compute_bid(&r, &tight_v, &config(), 1.0).is_bid());
        }

        #[test]
        fn bids_respect_caps(ctr in 0.0f64..1.0, m in 0.1f64..10.0) {
            let cfg = config();
            let d = compute_bid(&imp(ctr, Some(1.0)), &levers(0.0, m, 0.01), &cfg, 1.0);
            let p = d.price().unwrap();
            prop_assert!(p >= cfg.min_bid && p <= cfg.max_bid);
        }
    }
}
