//! Multi-run experiments: the power sweep and the handover/TPC comparison.

use std::thread;

use pansim_core::coverage::{Anchor, CellGrid, Interval, StaticCoverage};
use pansim_core::net::NodeClass;
use pansim_core::scenario::{energy_saving_percent, EnergyBreakdown};
use pansim_core::sim::{self, SimReport};
use pansim_core::{HandoverMode, HandoverStats, NodeId, Placement, SimConfig, SimError, SimTime};

use crate::gaps::CellEvidence;

/// Run independent configurations on separate threads, preserving order.
pub fn run_all(configs: Vec<SimConfig>) -> Vec<Result<SimReport, SimError>> {
    thread::scope(|s| {
        let handles: Vec<_> = configs.into_iter().map(|c| s.spawn(move || sim::run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

/// Stationary parents as coverage anchors.
pub fn anchors(cfg: &SimConfig) -> Vec<Anchor> {
    cfg.nodes
        .iter()
        .filter(|n| n.role.class == NodeClass::Stationary && n.role.kind.can_parent())
        .filter_map(|n| match n.placement {
            Placement::Fixed { x, y } => {
                Some(Anchor { id: n.id, x, y, gain: n.antenna_gain.unwrap_or(cfg.phy.antenna_gain) })
            }
            Placement::Moving(_) => None,
        })
        .collect()
}

/// The first mobile node: id, antenna gain, x extent and y of the path.
pub fn mobile_geometry(cfg: &SimConfig) -> Option<(NodeId, f64, (f64, f64), f64)> {
    cfg.nodes.iter().find_map(|n| match &n.placement {
        Placement::Moving(t) => {
            Some((n.id, n.antenna_gain.unwrap_or(cfg.phy.antenna_gain), t.x_bounds(), t.waypoints()[0].y))
        }
        Placement::Fixed { .. } => None,
    })
}

/// Every node sends at `power`; power control is off.
pub fn level_config(base: &SimConfig, power: f64) -> SimConfig {
    let mut c = base.clone();
    c.phy.tx_power = power;
    c.net.tpc_enabled = false;
    for n in &mut c.nodes {
        n.tx_power = None;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub power: f64,
    /// Gaps recovered from the trace.
    pub gaps: Vec<Interval>,
    /// Gaps predicted by static range sampling at cell centres.
    pub static_gaps: Vec<Interval>,
    /// Cells where at least two stationary nodes are reachable.
    pub overlaps: Vec<Interval>,
    /// Serving parent per segment, from the trace.
    pub association: Vec<(Interval, NodeId)>,
    pub report: SimReport,
}

impl LevelResult {
    pub fn overprovisioned(&self) -> bool {
        !self.overlaps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: CellGrid,
    pub levels: Vec<LevelResult>,
}

impl SweepResult {
    /// Lowest level without gaps.
    pub fn optimal(&self) -> Option<f64> {
        self.levels.iter().filter(|l| l.gaps.is_empty()).map(|l| l.power).min_by(f64::total_cmp)
    }

    /// Gap sets shrink (by inclusion on the grid) as power rises.
    pub fn monotone(&self) -> bool {
        let mut sorted: Vec<&LevelResult> = self.levels.iter().collect();
        sorted.sort_by(|a, b| a.power.total_cmp(&b.power));
        sorted
            .windows(2)
            .all(|w| pansim_core::coverage::is_subset(&w[1].gaps, &w[0].gaps, &self.grid))
    }

    pub fn level(&self, power: f64) -> Option<&LevelResult> {
        self.levels.iter().find(|l| l.power == power)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("power list is empty")]
    NoPowers,
    #[error("{0} dBm is not a configured power level")]
    UnknownLevel(f64),
    #[error("scenario has no mobile node")]
    NoMobile,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One run per power level on the same seed.
pub fn sweep(base: &SimConfig, powers: &[f64], cell: f64) -> Result<SweepResult, ExperimentError> {
    if powers.is_empty() {
        return Err(ExperimentError::NoPowers);
    }
    if let Some(p) = powers.iter().find(|p| !base.phy.has_level(**p)) {
        return Err(ExperimentError::UnknownLevel(*p));
    }
    let (mobile, gain, (lo, hi), y) = mobile_geometry(base).ok_or(ExperimentError::NoMobile)?;
    let grid = CellGrid::new(lo, hi, cell);
    let anchors = anchors(base);
    let reports = run_all(powers.iter().map(|&p| level_config(base, p)).collect());
    let mut levels = Vec::with_capacity(powers.len());
    for (&power, report) in powers.iter().zip(reports) {
        let report = report?;
        let cfg = level_config(base, power);
        let cov = StaticCoverage::sample(&cfg.phy, &anchors, grid, y, gain, power);
        let ev = CellEvidence::collect(&report.trace, mobile, grid);
        levels.push(LevelResult {
            power,
            gaps: ev.gaps(),
            static_gaps: cov.gaps(),
            overlaps: cov.overlaps(),
            association: ev.association(),
            report,
        });
    }
    Ok(SweepResult { grid, levels })
}

/// What one configuration of the comparison achieved on the mobile node.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub label: &'static str,
    pub mode: HandoverMode,
    pub tpc: bool,
    pub sleep: bool,
    pub handover: HandoverStats,
    pub energy: EnergyBreakdown,
    pub radio_on: SimTime,
    pub mean_tx_power: Option<f64>,
    pub generated: u32,
    pub delivered: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seed: u64,
    pub proposed: ArmResult,
    pub baseline: ArmResult,
    pub broadcast_fixed: ArmResult,
    pub scan_tpc: ArmResult,
    /// Proposed configuration with end-device sleep disabled.
    pub proposed_awake: ArmResult,
    pub energy_saving_percent: f64,
}

impl Comparison {
    pub fn latency_reduction(&self) -> Option<f64> {
        Some(self.baseline.handover.mean_latency()?.as_secs_f64() - self.proposed.handover.mean_latency()?.as_secs_f64())
    }

    pub fn arms(&self) -> [&ArmResult; 5] {
        [&self.proposed, &self.baseline, &self.broadcast_fixed, &self.scan_tpc, &self.proposed_awake]
    }
}

fn arm_config(base: &SimConfig, mode: HandoverMode, tpc: bool, sleep: bool) -> SimConfig {
    let mut c = base.clone();
    c.net.handover_mode = mode;
    c.net.tpc_enabled = tpc;
    c.net.end_device_sleep = sleep;
    let max = c.phy.max_level();
    for n in &mut c.nodes {
        if n.role.class == NodeClass::Mobile {
            n.tx_power = if tpc { None } else { Some(max) };
        }
    }
    c
}

fn arm_result(label: &'static str, cfg: &SimConfig, report: &SimReport) -> Result<ArmResult, ExperimentError> {
    let m = report.mobile().ok_or(ExperimentError::NoMobile)?;
    Ok(ArmResult {
        label,
        mode: cfg.net.handover_mode,
        tpc: cfg.net.tpc_enabled,
        sleep: cfg.net.end_device_sleep,
        handover: m.handover.clone().unwrap_or_default(),
        energy: m.energy.clone(),
        radio_on: m.ledger.radio_on_time(),
        mean_tx_power: m.ledger.mean_tx_power(),
        generated: m.counters.data_generated,
        delivered: m.counters.data_delivered,
    })
}

/// Broadcast handover with power control against the sequential scan at
/// fixed maximum power, plus the mixed arms that separate the two effects.
pub fn compare(base: &SimConfig) -> Result<Comparison, ExperimentError> {
    let traj = base.mobile_trajectory().ok_or(ExperimentError::NoMobile)?.clone();
    let specs: [(&'static str, HandoverMode, bool, bool); 5] = [
        ("broadcast+tpc", HandoverMode::Broadcast, true, base.net.end_device_sleep),
        ("scan+fixed", HandoverMode::Scan, false, base.net.end_device_sleep),
        ("broadcast+fixed", HandoverMode::Broadcast, false, base.net.end_device_sleep),
        ("scan+tpc", HandoverMode::Scan, true, base.net.end_device_sleep),
        ("broadcast+tpc, no sleep", HandoverMode::Broadcast, true, false),
    ];
    let configs: Vec<SimConfig> = specs.iter().map(|&(_, m, t, s)| arm_config(base, m, t, s)).collect();
    let reports = run_all(configs.clone());
    let mut arms = Vec::with_capacity(5);
    let mut first = None;
    for ((spec, cfg), report) in specs.iter().zip(&configs).zip(reports) {
        let report = report?;
        arms.push(arm_result(spec.0, cfg, &report)?);
        first.get_or_insert(report.identity(traj.clone()));
    }
    let id = first.expect("five arms");
    let saving = energy_saving_percent((&id, arms[1].energy.total_mj), (&id, arms[0].energy.total_mj))
        .map_err(|e| ExperimentError::Sim(e.into()))?;
    let mut it = arms.into_iter();
    Ok(Comparison {
        seed: base.seed,
        proposed: it.next().expect("arm"),
        baseline: it.next().expect("arm"),
        broadcast_fixed: it.next().expect("arm"),
        scan_tpc: it.next().expect("arm"),
        proposed_awake: it.next().expect("arm"),
        energy_saving_percent: saving,
    })
}
