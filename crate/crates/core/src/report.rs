//! Flat per-interval CSV time series for a campaign run.
//!
//! One row per interval. Per-KPI columns are left empty for KPIs the run
//! does not control; per-lever columns are empty when the lever was not
//! moved that interval.

use std::io::Write;

use crate::domain::{priority_label, KpiKind, LeverKind};
use crate::harness::{ExperimentReport, PercentChange};
use crate::simulator::{CampaignRun, KpiMeasurement};

pub fn time_series_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "interval",
        "tolerance",
        "bid_multiplier",
        "viewability_threshold",
        "auctions",
        "bids",
        "wins",
        "spend",
        "clicks",
        "conversions",
        "viewable",
        "cum_spend",
        "pacing",
        "cpc",
        "cpa",
        "viewability",
        "selected",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for kpi in KpiKind::ALL {
        for field in ["goal", "measured", "phi", "p", "i", "d", "adjusted"] {
            cols.push(format!("{kpi}_{field}"));
        }
    }
    for lever in LeverKind::ALL {
        for field in ["proposed", "final", "bound"] {
            cols.push(format!("{lever}_{field}"));
        }
    }
    cols
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_time_series<W: Write>(run: &CampaignRun, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(time_series_header())?;
    for r in &run.reports {
        let a = &r.aggregates;
        let c = &r.cumulative;
        let mut row = vec![
            r.interval.to_string(),
            r.levers.tolerance.to_string(),
            r.levers.bid_multiplier.to_string(),
            r.levers.viewability_threshold.to_string(),
            a.auctions.to_string(),
            a.bids.to_string(),
            a.wins.to_string(),
            a.spend.to_string(),
            a.clicks.to_string(),
            a.conversions.to_string(),
            a.viewable.to_string(),
            c.spend.to_string(),
            opt(c.pacing),
            opt(c.cpc),
            opt(c.cpa),
            opt(c.viewability),
            r.selection.chosen.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|"),
        ];
        for kpi in KpiKind::ALL {
            match r.signals.iter().find(|s| s.kpi == kpi) {
                Some(s) => row.extend([
                    s.goal.to_string(),
                    opt(s.measured),
                    s.phi.to_string(),
                    s.p_term.to_string(),
                    s.i_term.to_string(),
                    s.d_term.to_string(),
                    s.adjusted.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
        }
        for lever in LeverKind::ALL {
            match r.updates.iter().find(|u| u.lever == lever) {
                Some(u) => row.extend([
                    u.proposed.to_string(),
                    u.final_value.to_string(),
                    u.bound.map(|b| b.as_str().to_string()).unwrap_or_default(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 11] =
    ["seed", "method", "priority", "spend", "cpc", "cpa", "viewability", "pct_spend", "pct_cpc", "pct_cpa", "pct_viewability"];

fn pct_fields(p: &PercentChange) -> [String; 4] {
    [opt(p.spend), opt(p.cpc), opt(p.cpa), opt(p.viewability)]
}

fn measurement_fields(m: Option<&KpiMeasurement>) -> [String; 4] {
    match m {
        Some(m) => [m.spend.to_string(), opt(m.cpc), opt(m.cpa), opt(m.viewability)],
        None => Default::default(),
    }
}

/// Experiment cells as CSV: one row per seed and cell (baseline included),
/// then the mean rows with `seed` set to `mean` and no absolute values.
pub fn write_summary<W: Write>(report: &ExperimentReport, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for seed in &report.per_seed {
        for cell in std::iter::once(&seed.baseline).chain(&seed.cells) {
            let mut row = vec![seed.seed.to_string(), cell.method.to_string(), priority_label(&cell.priority)];
            row.extend(measurement_fields(Some(&cell.measurement)));
            row.extend(pct_fields(&cell.pct_change));
            w.write_record(&row)?;
        }
    }
    for mean in &report.mean {
        let mut row = vec!["mean".to_string(), mean.method.to_string(), priority_label(&mean.priority)];
        row.extend(measurement_fields(None));
        row.extend(pct_fields(&mean.pct_change));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
