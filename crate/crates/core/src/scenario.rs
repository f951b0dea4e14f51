//! Node configuration, mobility and the per-node energy ledger.

use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::SimTime;
use crate::mac::NodeId;
use crate::net::Role;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("trajectory needs at least one waypoint")]
    EmptyTrajectory,
    #[error("waypoint arrival offsets must be strictly increasing (waypoint {0})")]
    NonIncreasingWaypoints(usize),
    #[error("waypoint coordinates must be finite (waypoint {0})")]
    NonFiniteWaypoint(usize),
    #[error("energy transition at {at} precedes the open interval starting at {since}")]
    OutOfOrderTransition { at: SimTime, since: SimTime },
    #[error("runs are not comparable: {0}")]
    MismatchedRuns(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub at: SimTime,
}

/// Piecewise-linear path; constant speed between waypoints, parked at the
/// last waypoint after arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
}

impl Default for Trajectory {
    /// Straight line along x from 0 m to 15 m at 1 m/s.
    fn default() -> Self {
        Trajectory {
            waypoints: alloc::vec![
                Waypoint { x: 0.0, y: 0.0, at: SimTime::ZERO },
                Waypoint { x: 15.0, y: 0.0, at: SimTime::from_secs(15) },
            ],
        }
    }
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, ScenarioError> {
        if waypoints.is_empty() {
            return Err(ScenarioError::EmptyTrajectory);
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !w.x.is_finite() || !w.y.is_finite() {
                return Err(ScenarioError::NonFiniteWaypoint(i));
            }
            if i > 0 && w.at <= waypoints[i - 1].at {
                return Err(ScenarioError::NonIncreasingWaypoints(i));
            }
        }
        Ok(Trajectory { waypoints })
    }

    pub fn stationary(x: f64, y: f64) -> Self {
        Trajectory { waypoints: alloc::vec![Waypoint { x, y, at: SimTime::ZERO }] }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn end_time(&self) -> SimTime {
        self.waypoints.last().map_or(SimTime::ZERO, |w| w.at)
    }

    /// Smallest and largest x visited.
    pub fn x_bounds(&self) -> (f64, f64) {
        let lo = self.waypoints.iter().map(|w| w.x).fold(f64::INFINITY, f64::min);
        let hi = self.waypoints.iter().map(|w| w.x).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn position_at(&self, t: SimTime) -> (f64, f64) {
        let first = self.waypoints[0];
        if t <= first.at {
            return (first.x, first.y);
        }
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if t <= b.at {
                let span = (b.at - a.at).as_micros() as f64;
                let f = (t - a.at).as_micros() as f64 / span;
                return (a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f);
            }
        }
        let last = self.waypoints[self.waypoints.len() - 1];
        (last.x, last.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    Fixed { x: f64, y: f64 },
    Moving(Trajectory),
}

impl Placement {
    pub fn position_at(&self, t: SimTime) -> (f64, f64) {
        match self {
            Placement::Fixed { x, y } => (*x, *y),
            Placement::Moving(traj) => traj.position_at(t),
        }
    }
}

/// Periodic data source on one node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficConfig {
    pub period: SimTime,
    pub payload: u32,
    /// First frame is generated at this offset from the start of the run.
    pub offset: SimTime,
    /// Fixed destination; `None` sends to the current parent.
    pub dst: Option<NodeId>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { period: SimTime::from_millis(100), payload: 20, offset: SimTime::from_millis(50), dst: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub id: NodeId,
    pub role: Role,
    pub placement: Placement,
    /// Overrides the network-wide antenna gain.
    pub antenna_gain: Option<f64>,
    /// Overrides the network-wide transmit power for this node.
    pub tx_power: Option<f64>,
    pub traffic: Option<TrafficConfig>,
    /// Beacon order for coordinators and routers; 15 disables beacons.
    pub beacon_order: u8,
}

/// Radio states tracked by the ledger. `Tx` carries the power in dBm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadioMode {
    Sleep,
    Idle,
    Rx,
    Tx(f64),
}

impl RadioMode {
    pub fn name(self) -> &'static str {
        match self {
            RadioMode::Sleep => "SLEEP",
            RadioMode::Idle => "IDLE",
            RadioMode::Rx => "RX",
            RadioMode::Tx(_) => "TX",
        }
    }
}

/// Supply currents per radio mode, mA.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentModel {
    /// Transmit current at 0 dBm.
    pub tx_base: f64,
    /// Additional transmit current per dBm above 0 dBm.
    pub tx_slope: f64,
    pub rx: f64,
    pub idle: f64,
    pub sleep: f64,
    pub voltage: f64,
}

impl Default for CurrentModel {
    fn default() -> Self {
        CurrentModel { tx_base: 30.0, tx_slope: 1.5, rx: 30.0, idle: 30.0, sleep: 0.003, voltage: 3.0 }
    }
}

impl CurrentModel {
    /// `tx_base + tx_slope * P` for `P >= 0`, flat at `tx_base` below.
    pub fn tx_current(&self, power_dbm: f64) -> f64 {
        self.tx_base + self.tx_slope * power_dbm.max(0.0)
    }

    pub fn current(&self, mode: RadioMode) -> f64 {
        match mode {
            RadioMode::Sleep => self.sleep,
            RadioMode::Idle => self.idle,
            RadioMode::Rx => self.rx,
            RadioMode::Tx(p) => self.tx_current(p),
        }
    }
}

/// Accumulated time per radio mode for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    mode: RadioMode,
    since: SimTime,
    sleep_us: u64,
    idle_us: u64,
    rx_us: u64,
    /// (power dBm, microseconds), ordered by first use
    tx_us: Vec<(f64, u64)>,
}

impl EnergyLedger {
    pub fn new(mode: RadioMode, start: SimTime) -> Self {
        EnergyLedger { mode, since: start, sleep_us: 0, idle_us: 0, rx_us: 0, tx_us: Vec::new() }
    }

    pub fn mode(&self) -> RadioMode {
        self.mode
    }

    pub fn since(&self) -> SimTime {
        self.since
    }

    /// Close the open interval at `t` and open one in `mode`.
    pub fn transition(&mut self, mode: RadioMode, t: SimTime) -> Result<(), ScenarioError> {
        self.close(t)?;
        self.mode = mode;
        Ok(())
    }

    /// Close the open interval at `t` without changing mode.
    pub fn close(&mut self, t: SimTime) -> Result<(), ScenarioError> {
        if t < self.since {
            return Err(ScenarioError::OutOfOrderTransition { at: t, since: self.since });
        }
        let dt = (t - self.since).as_micros();
        match self.mode {
            RadioMode::Sleep => self.sleep_us += dt,
            RadioMode::Idle => self.idle_us += dt,
            RadioMode::Rx => self.rx_us += dt,
            RadioMode::Tx(p) => match self.tx_us.iter_mut().find(|(level, _)| *level == p) {
                Some(slot) => slot.1 += dt,
                None => self.tx_us.push((p, dt)),
            },
        }
        self.since = t;
        Ok(())
    }

    pub fn sleep_time(&self) -> SimTime {
        SimTime::from_micros(self.sleep_us)
    }

    pub fn idle_time(&self) -> SimTime {
        SimTime::from_micros(self.idle_us)
    }

    pub fn rx_time(&self) -> SimTime {
        SimTime::from_micros(self.rx_us)
    }

    pub fn tx_time(&self) -> SimTime {
        SimTime::from_micros(self.tx_us.iter().map(|(_, t)| t).sum())
    }

    /// Transmit time per power level, ascending by power.
    pub fn tx_time_by_level(&self) -> Vec<(f64, SimTime)> {
        let mut v: Vec<(f64, SimTime)> = self.tx_us.iter().map(|&(p, t)| (p, SimTime::from_micros(t))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Closed time across all modes.
    pub fn accounted(&self) -> SimTime {
        self.sleep_time() + self.idle_time() + self.rx_time() + self.tx_time()
    }

    /// Time the radio was not asleep.
    pub fn radio_on_time(&self) -> SimTime {
        self.idle_time() + self.rx_time() + self.tx_time()
    }

    /// Mean transmit power weighted by time on air, dBm.
    pub fn mean_tx_power(&self) -> Option<f64> {
        let total: u64 = self.tx_us.iter().map(|(_, t)| t).sum();
        if total == 0 {
            return None;
        }
        Some(self.tx_us.iter().map(|&(p, t)| p * t as f64).sum::<f64>() / total as f64)
    }

    pub fn breakdown(&self, model: &CurrentModel) -> EnergyBreakdown {
        let mj = |current_ma: f64, us: u64| current_ma * model.voltage * us as f64 / 1_000_000.0;
        let tx_by_level: Vec<(f64, f64)> = self
            .tx_time_by_level()
            .into_iter()
            .map(|(p, t)| (p, mj(model.tx_current(p), t.as_micros())))
            .collect();
        let tx = tx_by_level.iter().map(|(_, e)| e).sum::<f64>();
        let sleep = mj(model.sleep, self.sleep_us);
        let idle = mj(model.idle, self.idle_us);
        let rx = mj(model.rx, self.rx_us);
        EnergyBreakdown { sleep_mj: sleep, idle_mj: idle, rx_mj: rx, tx_mj: tx, tx_by_level, total_mj: sleep + idle + rx + tx }
    }
}

/// Energy per mode in millijoules.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub sleep_mj: f64,
    pub idle_mj: f64,
    pub rx_mj: f64,
    pub tx_mj: f64,
    pub tx_by_level: Vec<(f64, f64)>,
    pub total_mj: f64,
}

/// What makes two runs comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct RunIdentity {
    pub seed: u64,
    pub duration: SimTime,
    pub trajectory: Trajectory,
}

/// `(baseline - proposed) / baseline` in percent.
pub fn energy_saving_percent(
    baseline: (&RunIdentity, f64),
    proposed: (&RunIdentity, f64),
) -> Result<f64, ScenarioError> {
    let (b_id, b_mj) = baseline;
    let (p_id, p_mj) = proposed;
    if b_id.seed != p_id.seed {
        return Err(ScenarioError::MismatchedRuns("different seeds"));
    }
    if b_id.duration != p_id.duration {
        return Err(ScenarioError::MismatchedRuns("different durations"));
    }
    if b_id.trajectory != p_id.trajectory {
        return Err(ScenarioError::MismatchedRuns("different trajectories"));
    }
    if b_mj <= 0.0 {
        return Err(ScenarioError::MismatchedRuns("baseline consumed no energy"));
    }
    Ok(100.0 * (b_mj - p_mj) / b_mj)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn mode(i: u8) -> RadioMode {
        match i % 5 {
            0 => RadioMode::Sleep,
            1 => RadioMode::Idle,
            2 => RadioMode::Rx,
            3 => RadioMode::Tx(0.0),
            _ => RadioMode::Tx(6.0),
        }
    }

    proptest! {
        #[test]
        fn mode_times_conserve_and_energy_is_additive(
            steps in proptest::collection::vec((0u8..5, 0u64..50_000), 1..40),
            split in 0u64..50_000,
        ) {
            let mut ledger = EnergyLedger::new(RadioMode::Idle, SimTime::ZERO);
            let mut t = 0;
            for &(m, dt) in &steps {
                t += dt;
                ledger.transition(mode(m), SimTime::from_micros(t)).unwrap();
            }
            let mut split_ledger = ledger.clone();
            let end = t + 10_000;
            split_ledger.close(SimTime::from_micros(t + split.min(10_000))).unwrap();
            split_ledger.close(SimTime::from_micros(end)).unwrap();
            ledger.close(SimTime::from_micros(end)).unwrap();
            prop_assert_eq!(ledger.accounted().as_micros(), end);
            let model = CurrentModel::default();
            let a = ledger.breakdown(&model).total_mj;
            let b = split_ledger.breakdown(&model).total_mj;
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);
            let doubled = CurrentModel { voltage: 6.0, ..model.clone() };
            prop_assert!((ledger.breakdown(&doubled).total_mj - 2.0 * a).abs() < 1e-9);
        }
    }
}
