//! Offline experiment grid: a Baseline run per seed, goals derived from it,
//! then every (method x priority order) cell on the same inventory, reported
//! as percent change against the baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::GainSchedule;
use crate::domain::{priority_label, CampaignConfig, ConfigErrors, ImpressionRecord, KpiGoal, KpiKind, WeightMatrix};
use crate::inventory::{self, InventoryError, LogSampling, SynthesisParams};
use crate::selector::{Method, SelectorConfig};
use crate::simulator::{run_campaign, CampaignRun, KpiMeasurement, SimulationError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error("baseline run produced no {0} measurement")]
    MissingBaselineKpi(KpiKind),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
}

/// Goal = `multiplier` x the baseline's final value of `kind`.
///
/// For pacing the baseline value is total spend over budget, so a
/// multiplier of 1.5 is the spend target "1.5 x baseline spend" expressed
/// on the pacing-ratio scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRule {
    pub kind: KpiKind,
    pub multiplier: f64,
}

impl GoalRule {
    /// Raise spend 50%, halve CPA, raise viewability 20%.
    pub fn standard() -> Vec<GoalRule> {
        vec![
            GoalRule { kind: KpiKind::Pacing, multiplier: 1.5 },
            GoalRule { kind: KpiKind::Cpa, multiplier: 0.5 },
            GoalRule { kind: KpiKind::Viewability, multiplier: 1.2 },
        ]
    }
}

pub fn derive_goals(baseline: &KpiMeasurement, rules: &[GoalRule]) -> Result<Vec<KpiGoal>, HarnessError> {
    rules
        .iter()
        .map(|r| {
            let base = baseline.value(r.kind).ok_or(HarnessError::MissingBaselineKpi(r.kind))?;
            Ok(KpiGoal::new(r.kind, r.multiplier * base))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// `goals` is ignored here; goals come from `goal_rules`.
    pub campaign: CampaignConfig,
    pub synthesis: SynthesisParams,
    pub methods: Vec<Method>,
    pub priority_orders: Vec<Vec<KpiKind>>,
    pub goal_rules: Vec<GoalRule>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_threshold")]
    pub acceptability_threshold: f64,
    #[serde(default = "default_base")]
    pub exponential_base: f64,
    #[serde(default)]
    pub gains: GainSchedule,
    #[serde(default)]
    pub weights: WeightMatrix,
    /// How each seed draws its inventory when the experiment runs on a log.
    #[serde(default)]
    pub sampling: LogSampling,
}

fn default_threshold() -> f64 {
    SelectorConfig::DEFAULT_THRESHOLD
}

fn default_base() -> f64 {
    SelectorConfig::DEFAULT_BASE
}

impl ExperimentSpec {
    /// Three KPIs (spend, CPA, viewability), the three priority orders and
    /// three controlled methods, over five seeds of synthetic inventory.
    pub fn template() -> Self {
        let num_intervals = 40;
        let auctions_per_interval = 5_000;
        Self {
            campaign: CampaignConfig {
                budget: 600.0,
                value_per_click: 0.25,
                min_bid: 0.1,
                max_bid: 20.0,
                num_intervals,
                auctions_per_interval,
                goals: Vec::new(),
            },
            synthesis: SynthesisParams { count: num_intervals * auctions_per_interval, ..SynthesisParams::default() },
            methods: vec![Method::SmartSequential, Method::SimpleSequential, Method::AllAtOnce],
            priority_orders: vec![
                vec![KpiKind::Viewability, KpiKind::Cpa, KpiKind::Pacing],
                vec![KpiKind::Pacing, KpiKind::Viewability, KpiKind::Cpa],
                vec![KpiKind::Cpa, KpiKind::Pacing, KpiKind::Viewability],
            ],
            goal_rules: GoalRule::standard(),
            seeds: vec![1, 2, 3, 4, 5],
            acceptability_threshold: SelectorConfig::DEFAULT_THRESHOLD,
            exponential_base: SelectorConfig::DEFAULT_BASE,
            gains: GainSchedule::default(),
            weights: WeightMatrix::default(),
            sampling: LogSampling::Replay,
        }
    }

    /// The campaign with placeholder goals for the controlled KPIs.
    fn provisional_config(&self) -> CampaignConfig {
        let goals = self.goal_rules.iter().map(|r| KpiGoal::new(r.kind, 1.0)).collect();
        self.campaign.clone().with_goals(goals)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
        self.provisional_config().validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut kinds: Vec<KpiKind> = self.goal_rules.iter().map(|r| r.kind).collect();
        kinds.sort();
        for r in &self.goal_rules {
            if !(r.multiplier.is_finite() && r.multiplier > 0.0) {
                return bad(format!("goal multiplier for {} must be > 0", r.kind));
            }
        }
        for order in &self.priority_orders {
            let mut o = order.clone();
            o.sort();
            if o != kinds {
                return bad(format!("priority order {} is not a permutation of the goal KPIs", priority_label(order)));
            }
        }
        if self.priority_orders.is_empty() && self.methods.iter().any(|m| *m != Method::Baseline) {
            return bad("controlled methods need at least one priority order".into());
        }
        if !(self.exponential_base >= 1.0) || !(self.acceptability_threshold >= 0.0) {
            return bad("exponential_base must be >= 1 and acceptability_threshold >= 0".into());
        }
        Ok(())
    }

    fn selector(&self, method: Method, order: Vec<KpiKind>) -> SelectorConfig {
        SelectorConfig { method, acceptability_threshold: self.acceptability_threshold, exponential_base: self.exponential_base, priorities: order }
    }
}

/// A single campaign run: the campaign with its goals plus the controller
/// settings. `synthesis` is used only when no inventory file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub synthesis: SynthesisParams,
    #[serde(default = "default_threshold")]
    pub acceptability_threshold: f64,
    #[serde(default = "default_base")]
    pub exponential_base: f64,
    #[serde(default)]
    pub gains: GainSchedule,
    #[serde(default)]
    pub weights: WeightMatrix,
}

impl SimulationSpec {
    /// Synthetic inventory sized to the campaign, `num_intervals * auctions_per_interval` records.
    pub fn synthesize(&self, seed: u64) -> Result<Vec<ImpressionRecord>, HarnessError> {
        let count = self.campaign.num_intervals * self.campaign.auctions_per_interval;
        Ok(inventory::generate_inventory(&SynthesisParams { count, seed, ..self.synthesis })?)
    }

    pub fn run(&self, inventory: &[ImpressionRecord], method: Method, priorities: Vec<KpiKind>) -> Result<CampaignRun, HarnessError> {
        let selector = SelectorConfig { method, acceptability_threshold: self.acceptability_threshold, exponential_base: self.exponential_base, priorities };
        Ok(run_campaign(inventory, &self.campaign, &selector, &self.weights, &self.gains)?)
    }
}

/// Percent change of each KPI against the baseline: `100 * (cell - base) / base`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentChange {
    pub spend: Option<f64>,
    pub cpc: Option<f64>,
    pub cpa: Option<f64>,
    pub viewability: Option<f64>,
}

fn pct(cell: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (cell, base) {
        (Some(c), Some(b)) if b != 0.0 => Some(100.0 * (c - b) / b),
        _ => None,
    }
}

impl PercentChange {
    pub fn between(cell: &KpiMeasurement, baseline: &KpiMeasurement) -> Self {
        Self {
            spend: pct(Some(cell.spend), Some(baseline.spend)),
            cpc: pct(cell.cpc, baseline.cpc),
            cpa: pct(cell.cpa, baseline.cpa),
            viewability: pct(cell.viewability, baseline.viewability),
        }
    }

    pub fn of(&self, kind: KpiKind) -> Option<f64> {
        match kind {
            KpiKind::Pacing => self.spend,
            KpiKind::Cpc => self.cpc,
            KpiKind::Cpa => self.cpa,
            KpiKind::Viewability => self.viewability,
        }
    }

    /// Percent change signed so that positive is better for the KPI.
    pub fn improvement(&self, kind: KpiKind) -> Option<f64> {
        let sign = match kind.natural_direction() {
            crate::domain::GoalDirection::AtLeast => 1.0,
            crate::domain::GoalDirection::AtMost => -1.0,
        };
        self.of(kind).map(|v| sign * v)
    }

    fn mean(rows: &[PercentChange]) -> Self {
        let avg = |f: fn(&PercentChange) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(f).collect();
            (!vals.is_empty() && vals.len() == rows.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self { spend: avg(|p| p.spend), cpc: avg(|p| p.cpc), cpa: avg(|p| p.cpa), viewability: avg(|p| p.viewability) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub priority: Vec<KpiKind>,
    pub measurement: KpiMeasurement,
    pub pct_change: PercentChange,
}

impl CellResult {
    pub fn label(&self) -> String {
        cell_label(self.method, &self.priority)
    }
}

/// `<method>_<priority>`, e.g. `simple_pacing-viewability-cpa`; baseline is `baseline_none`.
pub fn cell_label(method: Method, priority: &[KpiKind]) -> String {
    if priority.is_empty() {
        format!("{method}_none")
    } else {
        format!("{method}_{}", priority_label(priority))
    }
}

/// Results for one seed, i.e. one synthetic campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub goals: Vec<KpiGoal>,
    /// Goal on total spend implied by the pacing goal, if pacing is controlled.
    pub spend_target: Option<f64>,
    pub baseline: CellResult,
    pub cells: Vec<CellResult>,
}

/// Unweighted mean of per-seed percent changes for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub method: Method,
    pub priority: Vec<KpiKind>,
    pub pct_change: PercentChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub per_seed: Vec<SeedReport>,
    pub mean: Vec<MeanRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text comparison tables, one per priority order.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let orders: Vec<&Vec<KpiKind>> = self.spec.priority_orders.iter().collect();
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:+.1}%"));
        for order in orders {
            out.push_str(&format!("priority {} (mean over {} seeds, % change vs baseline)\n", priority_label(order), self.per_seed.len()));
            out.push_str(&format!("{:<8} {:>9} {:>9} {:>9} {:>12}\n", "method", "spend", "cpc", "cpa", "viewability"));
            for row in self.mean.iter().filter(|r| &r.priority == order) {
                let p = &row.pct_change;
                out.push_str(&format!(
                    "{:<8} {:>9} {:>9} {:>9} {:>12}\n",
                    row.method.as_str(),
                    fmt(p.spend),
                    fmt(p.cpc),
                    fmt(p.cpa),
                    fmt(p.viewability)
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// A finished run together with the cell it belongs to.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub seed: u64,
    pub label: String,
    pub run: CampaignRun,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runs: Vec<CellRun>,
}

pub fn inventory_for_seed(spec: &ExperimentSpec, seed: u64) -> Result<Vec<ImpressionRecord>, HarnessError> {
    Ok(inventory::generate_inventory(&SynthesisParams { seed, ..spec.synthesis })?)
}

/// Runs one seed's baseline and grid on a given inventory.
pub fn run_seed(spec: &ExperimentSpec, seed: u64, inventory: &[ImpressionRecord]) -> Result<(SeedReport, Vec<CellRun>), HarnessError> {
    let provisional = spec.provisional_config();
    let baseline_probe = run_campaign(inventory, &provisional, &spec.selector(Method::Baseline, vec![]), &spec.weights, &spec.gains)?;
    let baseline_final = *baseline_probe.final_measurement().expect("at least one interval");
    let goals = derive_goals(&baseline_final, &spec.goal_rules)?;
    let config = provisional.with_goals(goals.clone());

    // rerun so the baseline's signal columns refer to the derived goals
    let baseline_run = run_campaign(inventory, &config, &spec.selector(Method::Baseline, vec![]), &spec.weights, &spec.gains)?;

    let grid: Vec<(Method, Vec<KpiKind>)> = spec
        .priority_orders
        .iter()
        .flat_map(|order| spec.methods.iter().filter(|m| **m != Method::Baseline).map(move |&m| (m, order.clone())))
        .collect();
    let runs: Vec<(Method, Vec<KpiKind>, CampaignRun)> = grid
        .into_par_iter()
        .map(|(method, order)| {
            let run = run_campaign(inventory, &config, &spec.selector(method, order.clone()), &spec.weights, &spec.gains)?;
            Ok((method, order, run))
        })
        .collect::<Result<_, HarnessError>>()?;

    let baseline = CellResult { method: Method::Baseline, priority: Vec::new(), measurement: baseline_final, pct_change: PercentChange::between(&baseline_final, &baseline_final) };
    let mut cells = Vec::with_capacity(runs.len());
    let mut cell_runs = vec![CellRun { seed, label: baseline.label(), run: baseline_run }];
    for (method, order, run) in runs {
        let m = *run.final_measurement().expect("at least one interval");
        let cell = CellResult { method, priority: order, measurement: m, pct_change: PercentChange::between(&m, &baseline_final) };
        cell_runs.push(CellRun { seed, label: cell.label(), run });
        cells.push(cell);
    }
    let spend_target = goals.iter().find(|g| g.kind == KpiKind::Pacing).map(|g| g.goal_value * spec.campaign.budget);
    Ok((SeedReport { seed, goals, spend_target, baseline, cells }, cell_runs))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    run_seeds(spec, |seed| inventory_for_seed(spec, seed))
}

/// Runs the experiment on a log. Each seed draws a campaign-sized sample
/// according to `spec.sampling`; under `Replay` every seed sees the whole
/// log, so a single seed is usually what you want.
pub fn run_experiment_on(spec: &ExperimentSpec, log: &[ImpressionRecord]) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    let count = spec.campaign.num_intervals * spec.campaign.auctions_per_interval;
    run_seeds(spec, |seed| Ok(inventory::sample_log(log, count, seed, spec.sampling)))
}

fn run_seeds(
    spec: &ExperimentSpec,
    inventory_for: impl Fn(u64) -> Result<Vec<ImpressionRecord>, HarnessError>,
) -> Result<ExperimentOutput, HarnessError> {
    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        let inventory = inventory_for(seed)?;
        let (report, cell_runs) = run_seed(spec, seed, &inventory)?;
        per_seed.push(report);
        runs.extend(cell_runs);
    }

    let mut mean = Vec::new();
    if let Some(first) = per_seed.first() {
        for (idx, cell) in first.cells.iter().enumerate() {
            let rows: Vec<PercentChange> = per_seed.iter().map(|s| s.cells[idx].pct_change).collect();
            mean.push(MeanRow { method: cell.method, priority: cell.priority.clone(), pct_change: PercentChange::mean(&rows) });
        }
    }
    Ok(ExperimentOutput { report: ExperimentReport { spec: spec.clone(), per_seed, mean }, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(spend: f64, cpa: Option<f64>, view: Option<f64>) -> KpiMeasurement {
        KpiMeasurement {
            elapsed_fraction: 1.0,
            spend,
            wins: 10,
            clicks: 5,
            conversions: 1,
            viewable: 4,
            pacing: Some(spend / 100.0),
            cpc: Some(spend / 5.0),
            cpa,
            viewability: view,
        }
    }

    #[test]
    fn goal_derivation() {
        let base = measurement(50.0, Some(4.0), Some(0.5));
        let goals = derive_goals(&base, &GoalRule::standard()).unwrap();
        assert!((goals[0].goal_value - 0.75).abs() < 1e-12);
        assert_eq!(goals[1].goal_value, 2.0);
        assert!((goals[2].goal_value - 0.6).abs() < 1e-12);
        let identity = derive_goals(&base, &[GoalRule { kind: KpiKind::Cpa, multiplier: 1.0 }]).unwrap();
        assert_eq!(identity[0].goal_value, 4.0);
    }

    #[test]
    fn missing_baseline_kpi() {
        let base = measurement(50.0, None, Some(0.5));
        assert!(matches!(derive_goals(&base, &GoalRule::standard()), Err(HarnessError::MissingBaselineKpi(KpiKind::Cpa))));
    }

    #[test]
    fn self_comparison_is_zero() {
        let base = measurement(50.0, Some(4.0), Some(0.5));
        let p = PercentChange::between(&base, &base);
        assert_eq!((p.spend, p.cpc, p.cpa, p.viewability), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn improvement_sign_follows_direction() {
        let p = PercentChange { spend: Some(10.0), cpc: Some(5.0), cpa: Some(-20.0), viewability: Some(-1.0) };
        assert_eq!(p.improvement(KpiKind::Pacing), Some(10.0));
        assert_eq!(p.improvement(KpiKind::Cpa), Some(20.0));
        assert_eq!(p.improvement(KpiKind::Cpc), Some(-5.0));
        assert_eq!(p.improvement(KpiKind::Viewability), Some(-1.0));
    }

    #[test]
    fn template_validates() {
        let spec = ExperimentSpec::template();
        spec.validate().unwrap();
        spec.provisional_config().validate().unwrap();
    }

    #[test]
    fn bad_priority_order_is_rejected() {
        let mut spec = ExperimentSpec::template();
        spec.priority_orders.push(vec![KpiKind::Cpc, KpiKind::Pacing, KpiKind::Viewability]);
        assert!(matches!(spec.validate(), Err(HarnessError::InvalidSpec(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(cell_label(Method::SimpleSequential, &[KpiKind::Pacing, KpiKind::Cpa]), "simple_pacing-cpa");
        assert_eq!(cell_label(Method::Baseline, &[]), "baseline_none");
    }
}
