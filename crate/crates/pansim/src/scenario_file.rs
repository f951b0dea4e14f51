//! TOML scenario files: parsing into a [`SimConfig`] and rendering the
//! annotated default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pansim_core::coverage::CELL_M;
use pansim_core::net::{NodeClass, Role, RoleKind};
use pansim_core::phy::{Band, BeaconOrder};
use pansim_core::scenario::{TrafficConfig, Waypoint};
use pansim_core::{
    CsmaParams, CurrentModel, HandoverMode, NetParams, NodeConfig, PhyParams, Placement, SimConfig, SimError, SimTime,
    Trajectory,
};
use serde::Deserialize;
use thiserror::Error;

use crate::units::{
    fmt_number, fmt_quantity, fmt_time, Bytes, Current, CurrentSlope, Decibel, Duration, Gain, Length, PowerDbm, Voltage,
    Q,
};

/// A run configuration plus the power levels a sweep visits.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sim: SimConfig,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub powers: Vec<f64>,
    /// Report resolution along the trajectory, metres.
    pub cell: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { powers: vec![0.0, 2.0, 3.0, 4.0, 5.0, 6.0], cell: CELL_M }
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { sim: SimConfig::default(), sweep: SweepSpec::default() }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}, column {column}: {key}: {message}")]
    Syntax { line: usize, column: usize, key: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("invalid scenario: {0}")]
    Sim(#[from] SimError),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ScenarioFileError {
    ScenarioFileError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileScenario {
    run: FileRun,
    phy: FilePhy,
    csma: FileCsma,
    handover: FileHandover,
    tpc: FileTpc,
    energy: FileEnergy,
    mobility: FileMobility,
    sweep: FileSweep,
    node: Option<Vec<FileNode>>,
    trajectory: Option<FileTrajectory>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileRun {
    seed: Option<u64>,
    duration: Option<Duration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FilePhy {
    band: Option<String>,
    channel: Option<u8>,
    tx_power: Option<Q<PowerDbm>>,
    levels: Option<Vec<Q<PowerDbm>>>,
    antenna_gain: Option<Q<Gain>>,
    rx_sensitivity: Option<Q<PowerDbm>>,
    pl0: Option<Q<Decibel>>,
    path_loss_exponent: Option<f64>,
    phy_overhead: Option<Bytes>,
    lq_saturation_margin: Option<Q<Decibel>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileCsma {
    mac_min_be: Option<u8>,
    mac_max_be: Option<u8>,
    max_csma_backoffs: Option<u8>,
    max_frame_retries: Option<u8>,
    unit_backoff: Option<Duration>,
    ack_wait: Option<Duration>,
    turnaround: Option<Duration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileHandover {
    mode: Option<String>,
    probe_window: Option<Duration>,
    probe_retry: Option<Duration>,
    scan_response_timeout: Option<Duration>,
    assoc_timeout: Option<Duration>,
    ack_failure_trigger: Option<u32>,
    holdoff: Option<Duration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileTpc {
    enabled: Option<bool>,
    lq_target: Option<u8>,
    lq_hysteresis: Option<u8>,
    window: Option<Duration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileEnergy {
    tx_current: Option<Q<Current>>,
    tx_slope: Option<Q<CurrentSlope>>,
    rx_current: Option<Q<Current>>,
    idle_current: Option<Q<Current>>,
    sleep_current: Option<Q<Current>>,
    voltage: Option<Q<Voltage>>,
    end_device_sleep: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileMobility {
    move_tick: Option<Duration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileSweep {
    powers: Option<Vec<Q<PowerDbm>>>,
    cell: Option<Q<Length>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: u16,
    role: String,
    #[serde(default)]
    mobile: bool,
    x: Option<Q<Length>>,
    y: Option<Q<Length>>,
    tx_power: Option<Q<PowerDbm>>,
    antenna_gain: Option<Q<Gain>>,
    beacon_order: Option<u8>,
    traffic: Option<FileTraffic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTraffic {
    period: Option<Duration>,
    payload: Option<Bytes>,
    offset: Option<Duration>,
    dst: Option<u16>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTrajectory {
    waypoint: Vec<FileWaypoint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWaypoint {
    x: Q<Length>,
    #[serde(default)]
    y: Option<Q<Length>>,
    at: Duration,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioFileError> {
    let syntax = |e: toml::de::Error, key: String| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioFileError::Syntax { line, column, key, message: e.message().to_string() }
    };
    let de = toml::Deserializer::parse(text).map_err(|e| syntax(e, "document".into()))?;
    let file: FileScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        syntax(e.into_inner(), key)
    })?;
    build(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioFileError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text)
}

fn build(f: FileScenario) -> Result<Scenario, ScenarioFileError> {
    let d = SimConfig::default();

    let dp = PhyParams::default();
    let band = match f.phy.band {
        Some(b) => Band::parse(&b).ok_or_else(|| invalid("phy.band", format!("unknown band {b:?} (2400, 915 or 868)")))?,
        None => dp.band,
    };
    let phy = PhyParams {
        band,
        channel: f.phy.channel.unwrap_or(dp.channel),
        tx_power: f.phy.tx_power.map_or(dp.tx_power, |q| q.value),
        levels: f.phy.levels.map_or(dp.levels.clone(), |l| l.iter().map(|q| q.value).collect()),
        antenna_gain: f.phy.antenna_gain.map_or(dp.antenna_gain, |q| q.value),
        rx_sensitivity: f.phy.rx_sensitivity.map_or(dp.rx_sensitivity, |q| q.value),
        pl0: f.phy.pl0.map_or(dp.pl0, |q| q.value),
        path_loss_exponent: f.phy.path_loss_exponent.unwrap_or(dp.path_loss_exponent),
        phy_overhead: f.phy.phy_overhead.map_or(dp.phy_overhead, |b| b.0),
        lq_saturation_margin: f.phy.lq_saturation_margin.map_or(dp.lq_saturation_margin, |q| q.value),
    };
    let channels = match phy.band {
        Band::B868 => 0..=0,
        Band::B915 => 1..=10,
        Band::B2400 => 11..=26,
    };
    if !channels.contains(&phy.channel) {
        return Err(invalid("phy.channel", format!("channel {} is not in the {} MHz band", phy.channel, phy.band)));
    }

    let dc = CsmaParams::default();
    let csma = CsmaParams {
        mac_min_be: f.csma.mac_min_be.unwrap_or(dc.mac_min_be),
        mac_max_be: f.csma.mac_max_be.unwrap_or(dc.mac_max_be),
        max_csma_backoffs: f.csma.max_csma_backoffs.unwrap_or(dc.max_csma_backoffs),
        max_frame_retries: f.csma.max_frame_retries.unwrap_or(dc.max_frame_retries),
        unit_backoff: f.csma.unit_backoff.map_or(dc.unit_backoff, |t| t.0),
        ack_wait: f.csma.ack_wait.map_or(dc.ack_wait, |t| t.0),
        turnaround: f.csma.turnaround.map_or(dc.turnaround, |t| t.0),
    };

    let dn = NetParams::default();
    let mode = match f.handover.mode {
        Some(m) => HandoverMode::parse(&m)
            .ok_or_else(|| invalid("handover.mode", format!("unknown mode {m:?} (broadcast or scan)")))?,
        None => dn.handover_mode,
    };
    let net = NetParams {
        handover_mode: mode,
        probe_window: f.handover.probe_window.map_or(dn.probe_window, |t| t.0),
        probe_retry: f.handover.probe_retry.map_or(dn.probe_retry, |t| t.0),
        scan_response_timeout: f.handover.scan_response_timeout.map_or(dn.scan_response_timeout, |t| t.0),
        assoc_timeout: f.handover.assoc_timeout.map_or(dn.assoc_timeout, |t| t.0),
        ack_failure_trigger: f.handover.ack_failure_trigger.unwrap_or(dn.ack_failure_trigger),
        handover_holdoff: f.handover.holdoff.map_or(dn.handover_holdoff, |t| t.0),
        tpc_enabled: f.tpc.enabled.unwrap_or(dn.tpc_enabled),
        lq_target: f.tpc.lq_target.unwrap_or(dn.lq_target),
        lq_hysteresis: f.tpc.lq_hysteresis.unwrap_or(dn.lq_hysteresis),
        tpc_window: f.tpc.window.map_or(dn.tpc_window, |t| t.0),
        end_device_sleep: f.energy.end_device_sleep.unwrap_or(dn.end_device_sleep),
    };
    if net.probe_window == SimTime::ZERO || net.probe_retry == SimTime::ZERO {
        return Err(invalid("handover", "probe_window and probe_retry must be positive"));
    }

    let de = CurrentModel::default();
    let currents = CurrentModel {
        tx_base: f.energy.tx_current.map_or(de.tx_base, |q| q.value),
        tx_slope: f.energy.tx_slope.map_or(de.tx_slope, |q| q.value),
        rx: f.energy.rx_current.map_or(de.rx, |q| q.value),
        idle: f.energy.idle_current.map_or(de.idle, |q| q.value),
        sleep: f.energy.sleep_current.map_or(de.sleep, |q| q.value),
        voltage: f.energy.voltage.map_or(de.voltage, |q| q.value),
    };
    if currents.tx_slope < 0.0 {
        return Err(invalid("energy.tx_slope", "transmit current must not decrease with power"));
    }
    for (key, v) in [
        ("energy.tx_current", currents.tx_base),
        ("energy.rx_current", currents.rx),
        ("energy.idle_current", currents.idle),
        ("energy.sleep_current", currents.sleep),
        ("energy.voltage", currents.voltage),
    ] {
        if v < 0.0 {
            return Err(invalid(key, "must not be negative"));
        }
    }

    let trajectory = match f.trajectory {
        Some(t) => {
            let wps = t
                .waypoint
                .iter()
                .map(|w| Waypoint { x: w.x.value, y: w.y.map_or(0.0, |q| q.value), at: w.at.0 })
                .collect();
            Trajectory::new(wps).map_err(|e| invalid("trajectory.waypoint", e.to_string()))?
        }
        None => Trajectory::default(),
    };

    let nodes = match f.node {
        None => d
            .nodes
            .iter()
            .cloned()
            .map(|mut n| {
                if let Placement::Moving(_) = n.placement {
                    n.placement = Placement::Moving(trajectory.clone());
                }
                n
            })
            .collect(),
        Some(list) => {
            let mut nodes = Vec::with_capacity(list.len());
            for (i, n) in list.into_iter().enumerate() {
                let key = |k: &str| format!("node[{i}].{k}");
                let kind = RoleKind::parse(&n.role).ok_or_else(|| {
                    invalid(key("role"), format!("unknown role {:?} (coordinator, router or end_device)", n.role))
                })?;
                let placement = if n.mobile {
                    if n.x.is_some() || n.y.is_some() {
                        return Err(invalid(key("x"), "mobile nodes follow [trajectory] and take no position"));
                    }
                    Placement::Moving(trajectory.clone())
                } else {
                    let x = n.x.ok_or_else(|| invalid(key("x"), "stationary nodes need a position"))?;
                    Placement::Fixed { x: x.value, y: n.y.map_or(0.0, |q| q.value) }
                };
                let beacon_order = n.beacon_order.unwrap_or(BeaconOrder::NON_BEACON.value());
                BeaconOrder::new(beacon_order).map_err(|e| invalid(key("beacon_order"), e.to_string()))?;
                let dt = TrafficConfig::default();
                nodes.push(NodeConfig {
                    id: n.id,
                    role: Role::new(kind, if n.mobile { NodeClass::Mobile } else { NodeClass::Stationary }),
                    placement,
                    antenna_gain: n.antenna_gain.map(|q| q.value),
                    tx_power: n.tx_power.map(|q| q.value),
                    traffic: n.traffic.map(|t| TrafficConfig {
                        period: t.period.map_or(dt.period, |p| p.0),
                        payload: t.payload.map_or(dt.payload, |b| b.0),
                        offset: t.offset.map_or(dt.offset, |o| o.0),
                        dst: t.dst,
                    }),
                    beacon_order,
                });
            }
            nodes
        }
    };

    let ds = SweepSpec::default();
    let sweep = SweepSpec {
        powers: f.sweep.powers.map_or(ds.powers, |l| l.iter().map(|q| q.value).collect()),
        cell: f.sweep.cell.map_or(ds.cell, |q| q.value),
    };
    if sweep.cell <= 0.0 {
        return Err(invalid("sweep.cell", "must be positive"));
    }
    if let Some(p) = sweep.powers.iter().find(|p| !phy.has_level(**p)) {
        return Err(invalid("sweep.powers", format!("{p} dBm is not one of phy.levels")));
    }

    let sim = SimConfig {
        seed: f.run.seed.unwrap_or(d.seed),
        duration: f.run.duration.map_or(d.duration, |t| t.0),
        phy,
        csma,
        net,
        currents,
        nodes,
        move_tick: f.mobility.move_tick.map_or(d.move_tick, |t| t.0),
        record_channel: false,
    };
    sim.validate()?;
    Ok(Scenario { sim, sweep })
}

fn dbm_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|p| format!("\"{}\"", fmt_quantity(*p, "dBm"))).collect();
    format!("[{}]", items.join(", "))
}

/// Render a scenario as an annotated file that parses back to the same
/// configuration. Each value carries its origin: `measured` (published
/// hardware or standard figures), `calibrated` (fitted by `pansim calibrate`)
/// or `chosen` (a modelling choice).
pub fn render_scenario(s: &Scenario) -> String {
    let c = &s.sim;
    let p = &c.phy;
    let k = &c.csma;
    let n = &c.net;
    let e = &c.currents;
    let mut o = String::new();
    let q = |v: f64, u: &str| format!("\"{}\"", fmt_quantity(v, u));
    let t = |v: SimTime| format!("\"{}\"", fmt_time(v));

    o.push_str("# pansim scenario\n#\n");
    o.push_str("# Every physical quantity is a string \"<number> <unit>\". Comments name the\n");
    o.push_str("# origin of each default: measured (hardware datasheet or radio standard),\n");
    o.push_str("# calibrated (fitted by `pansim calibrate`) or chosen (modelling decision).\n\n");

    let _ = writeln!(o, "[run]");
    let _ = writeln!(o, "seed = {}                     # chosen", c.seed);
    let _ = writeln!(o, "duration = {}             # chosen: one pass of the trajectory", t(c.duration));
    o.push('\n');

    let _ = writeln!(o, "[phy]");
    let _ = writeln!(o, "band = \"{}\"                 # measured: 2.4 GHz O-QPSK, 250 kbit/s", p.band.name());
    let _ = writeln!(o, "channel = {}                  # chosen (11..26 in the 2.4 GHz band)", p.channel);
    let _ = writeln!(o, "tx_power = {}           # calibrated: lowest gap-free level", q(p.tx_power, "dBm"));
    let _ = writeln!(o, "levels = {}", dbm_list(&p.levels));
    o.push_str("                                # measured: radio power steps up to the 0..6 dBm range\n");
    let _ = writeln!(o, "antenna_gain = {}         # chosen: isotropic", q(p.antenna_gain, "dBi"));
    let _ = writeln!(o, "rx_sensitivity = {}     # calibrated", q(p.rx_sensitivity, "dBm"));
    let _ = writeln!(o, "pl0 = {}                  # calibrated: path loss at 1 m", q(p.pl0, "dB"));
    let _ = writeln!(o, "path_loss_exponent = {}      # calibrated", fmt_number(p.path_loss_exponent));
    let _ = writeln!(o, "phy_overhead = {}            # measured: preamble, SFD and length byte", q(f64::from(p.phy_overhead), "B"));
    let _ = writeln!(o, "lq_saturation_margin = {}  # chosen: margin over sensitivity that maps to LQ 255", q(p.lq_saturation_margin, "dB"));
    o.push('\n');

    let _ = writeln!(o, "[csma]                          # measured: standard unslotted CSMA/CA constants");
    let _ = writeln!(o, "mac_min_be = {}", k.mac_min_be);
    let _ = writeln!(o, "mac_max_be = {}", k.mac_max_be);
    let _ = writeln!(o, "max_csma_backoffs = {}", k.max_csma_backoffs);
    let _ = writeln!(o, "max_frame_retries = {}", k.max_frame_retries);
    let _ = writeln!(o, "unit_backoff = {}          # 20 symbols", t(k.unit_backoff));
    let _ = writeln!(o, "ack_wait = {}              # 54 symbols", t(k.ack_wait));
    let _ = writeln!(o, "turnaround = {}            # 12 symbols before an ack", t(k.turnaround));
    o.push('\n');

    let _ = writeln!(o, "[handover]                      # chosen: trigger and timer values");
    let _ = writeln!(o, "mode = \"{}\"              # broadcast or scan", n.handover_mode.name());
    let _ = writeln!(o, "probe_window = {}", t(n.probe_window));
    let _ = writeln!(o, "probe_retry = {}", t(n.probe_retry));
    let _ = writeln!(o, "scan_response_timeout = {}", t(n.scan_response_timeout));
    let _ = writeln!(o, "assoc_timeout = {}", t(n.assoc_timeout));
    let _ = writeln!(o, "ack_failure_trigger = {}", n.ack_failure_trigger);
    let _ = writeln!(o, "holdoff = {}", t(n.handover_holdoff));
    o.push('\n');

    let _ = writeln!(o, "[tpc]                           # chosen");
    let _ = writeln!(o, "enabled = {}", n.tpc_enabled);
    let _ = writeln!(o, "lq_target = {}", n.lq_target);
    let _ = writeln!(o, "lq_hysteresis = {}", n.lq_hysteresis);
    let _ = writeln!(o, "window = {}", t(n.tpc_window));
    o.push('\n');

    let _ = writeln!(o, "[energy]");
    let _ = writeln!(o, "tx_current = {}          # measured: transmit current at 0 dBm", q(e.tx_base, "mA"));
    let _ = writeln!(o, "tx_slope = {}       # chosen: linear ramp above 0 dBm", q(e.tx_slope, "mA/dBm"));
    let _ = writeln!(o, "rx_current = {}          # chosen: same as transmit at 0 dBm", q(e.rx, "mA"));
    let _ = writeln!(o, "idle_current = {}        # chosen: listening costs as much as receiving", q(e.idle, "mA"));
    let _ = writeln!(o, "sleep_current = {}    # measured: standby current", q(e.sleep, "mA"));
    let _ = writeln!(o, "voltage = {}               # chosen", q(e.voltage, "V"));
    let _ = writeln!(o, "end_device_sleep = {}          # chosen: end devices sleep when idle", n.end_device_sleep);
    o.push('\n');

    let _ = writeln!(o, "[mobility]");
    let _ = writeln!(o, "move_tick = {}           # chosen: position sample period", t(c.move_tick));
    o.push('\n');

    let _ = writeln!(o, "[sweep]");
    let _ = writeln!(o, "powers = {}", dbm_list(&s.sweep.powers));
    o.push_str("                                # 2 dBm stands in for the second, ambiguously labelled trace\n");
    let _ = writeln!(o, "cell = {}                # chosen: report resolution", q(s.sweep.cell, "m"));

    for node in &c.nodes {
        o.push('\n');
        let _ = writeln!(o, "[[node]]");
        let _ = writeln!(o, "id = {}", node.id);
        let _ = writeln!(o, "role = \"{}\"", node.role.kind.name());
        match &node.placement {
            Placement::Fixed { x, y } => {
                let _ = writeln!(o, "x = {}                      # calibrated", q(*x, "m"));
                if *y != 0.0 {
                    let _ = writeln!(o, "y = {}", q(*y, "m"));
                }
            }
            Placement::Moving(_) => {
                let _ = writeln!(o, "mobile = true                 # follows [trajectory]");
            }
        }
        if let Some(pw) = node.tx_power {
            let _ = writeln!(o, "tx_power = {}", q(pw, "dBm"));
        }
        if let Some(g) = node.antenna_gain {
            let _ = writeln!(o, "antenna_gain = {}", q(g, "dBi"));
        }
        if node.beacon_order != BeaconOrder::NON_BEACON.value() {
            let _ = writeln!(o, "beacon_order = {}", node.beacon_order);
        }
        if let Some(tr) = &node.traffic {
            let _ = write!(o, "traffic = {{ period = {}, payload = {}, offset = {}", t(tr.period), q(f64::from(tr.payload), "B"), t(tr.offset));
            if let Some(dst) = tr.dst {
                let _ = write!(o, ", dst = {dst}");
            }
            o.push_str(" }  # chosen\n");
        }
    }

    if let Some(traj) = c.mobile_trajectory() {
        o.push('\n');
        let _ = writeln!(o, "[trajectory]                    # chosen: straight line at 1 m/s");
        for w in traj.waypoints() {
            let _ = writeln!(o, "[[trajectory.waypoint]]");
            let _ = write!(o, "x = {}\n", q(w.x, "m"));
            if w.y != 0.0 {
                let _ = writeln!(o, "y = {}", q(w.y, "m"));
            }
            let _ = writeln!(o, "at = {}", t(w.at));
        }
    }
    o
}
