//! The simulated network: nodes, shared channel, MAC state machines and the
//! handover / power-control logic of mobile end devices.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::{Engine, EngineError, EventId, Labeled, RngStream, RunSummary, SimTime, Target};
use crate::mac::{CsmaOp, CsmaOutcome, CsmaParams, CsmaStep, Frame, FrameError, FrameKind, NodeId, BROADCAST};
use crate::net::{
    select_responder, tpc_update, Association, HandoverMode, HandoverStats, NetParams, NodeClass, Role, RoleKind,
    TpcState,
};
use crate::phy::{beacon_interval, PhyError, link_rx_power, lq_from_rx_power, BeaconOrder, LinkSample, PhyParams, Radio};
use crate::scenario::{
    CurrentModel, EnergyBreakdown, EnergyLedger, NodeConfig, Placement, RadioMode, RunIdentity, ScenarioError,
    TrafficConfig, Trajectory,
};
use crate::trace::{EventLabel, TraceRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} frames must go through CSMA/CA")]
    NotCsmaExempt(FrameKind),
}

/// Everything needed to build a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub duration: SimTime,
    pub phy: PhyParams,
    pub csma: CsmaParams,
    pub net: NetParams,
    pub currents: CurrentModel,
    pub nodes: Vec<NodeConfig>,
    pub move_tick: SimTime,
    /// Keep per-transmission and per-reception logs in the report.
    pub record_channel: bool,
}

impl Default for SimConfig {
    /// Three stationary nodes on `y = 0` and one mobile end device crossing
    /// them from 0 m to 15 m at 1 m/s, sending 20 B to its parent every 100 ms.
    fn default() -> Self {
        SimConfig {
            seed: 42,
            duration: SimTime::from_secs(15),
            phy: PhyParams::default(),
            csma: CsmaParams::default(),
            net: NetParams::default(),
            currents: CurrentModel::default(),
            nodes: default_nodes(),
            move_tick: SimTime::from_millis(100),
            record_channel: false,
        }
    }
}

/// Stationary layout and mobile of the reference network.
pub fn default_nodes() -> Vec<NodeConfig> {
    let fixed = |id, kind, x| NodeConfig {
        id,
        role: Role::new(kind, NodeClass::Stationary),
        placement: Placement::Fixed { x, y: 0.0 },
        antenna_gain: None,
        tx_power: None,
        traffic: None,
        beacon_order: BeaconOrder::NON_BEACON.value(),
    };
    alloc::vec![
        fixed(1, RoleKind::Router, -1.5),
        fixed(2, RoleKind::Coordinator, 7.5),
        fixed(3, RoleKind::Router, 16.5),
        NodeConfig {
            id: 10,
            role: Role::new(RoleKind::EndDevice, NodeClass::Mobile),
            placement: Placement::Moving(Trajectory::default()),
            antenna_gain: None,
            tx_power: None,
            traffic: Some(TrafficConfig::default()),
            beacon_order: BeaconOrder::NON_BEACON.value(),
        },
    ]
}

impl SimConfig {
    /// The first mobile node's trajectory.
    pub fn mobile_trajectory(&self) -> Option<&Trajectory> {
        self.nodes.iter().find_map(|n| match &n.placement {
            Placement::Moving(t) => Some(t),
            Placement::Fixed { .. } => None,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id == BROADCAST {
                return bad(format!("node id {} is reserved for broadcast", n.id));
            }
            if !ids.insert(n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
            match (&n.placement, n.role.class) {
                (Placement::Fixed { .. }, NodeClass::Mobile) => {
                    return bad(format!("mobile node {} needs a trajectory", n.id))
                }
                (Placement::Moving(_), NodeClass::Stationary) => {
                    return bad(format!("stationary node {} cannot have a trajectory", n.id))
                }
                _ => {}
            }
            if let Some(p) = n.tx_power {
                if !self.phy.has_level(p) {
                    return bad(format!("node {} tx_power {p} dBm is not a configured level", n.id));
                }
            }
            if n.beacon_order > 15 {
                return bad(format!("node {} beacon_order {} exceeds 15", n.id, n.beacon_order));
            }
            if let Some(t) = &n.traffic {
                if t.period == SimTime::ZERO {
                    return bad(format!("node {} traffic period must be positive", n.id));
                }
                if t.dst.is_none() && n.role.class == NodeClass::Stationary {
                    return bad(format!("stationary node {} traffic needs an explicit destination", n.id));
                }
            }
        }
        let coordinators = self.nodes.iter().filter(|n| n.role.kind == RoleKind::Coordinator).count();
        if coordinators > 1 {
            return bad(format!("at most one coordinator allowed, found {coordinators}"));
        }
        for n in &self.nodes {
            if let Some(dst) = n.traffic.as_ref().and_then(|t| t.dst) {
                if !ids.contains(&dst) || dst == n.id {
                    return bad(format!("node {} traffic destination {dst} is not another node", n.id));
                }
            }
        }
        if self.phy.levels.is_empty() {
            return bad("at least one transmit power level is required".into());
        }
        if !self.phy.has_level(self.phy.tx_power) {
            return bad(format!("default tx_power {} dBm is not a configured level", self.phy.tx_power));
        }
        if self.phy.rx_sensitivity >= 0.0 {
            return bad("rx_sensitivity must be negative".into());
        }
        if self.phy.path_loss_exponent <= 0.0 {
            return bad("path_loss_exponent must be positive".into());
        }
        if self.phy.lq_saturation_margin <= 0.0 {
            return bad("lq_saturation_margin must be positive".into());
        }
        if self.move_tick == SimTime::ZERO {
            return bad("move tick must be positive".into());
        }
        self.csma.validate().map_err(|m| SimError::Config(m.into()))?;
        Ok(())
    }
}

/// Timers owned by the handover logic. Each carries the handover it belongs
/// to so that timers of an abandoned handover are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTimer {
    WindowClose(u32),
    ScanNext(u32),
    AssocTimeout(u32),
    Retry,
}

/// Event payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    /// CSMA-exempt transmission (acknowledgment after turnaround).
    TxStart(Frame),
    TxEnd(u64),
    CcaCheck,
    BackoffExpire,
    AckTimeout,
    BeaconDue,
    ProbeDue(ProbeTimer),
    MoveTick,
    TrafficDue,
}

impl Labeled for SimEvent {
    fn label(&self) -> &'static str {
        match self {
            SimEvent::TxStart(_) => "TxStart",
            SimEvent::TxEnd(_) => "TxEnd",
            SimEvent::CcaCheck => "CcaCheck",
            SimEvent::BackoffExpire => "BackoffExpire",
            SimEvent::AckTimeout => "AckTimeout",
            SimEvent::BeaconDue => "BeaconDue",
            SimEvent::ProbeDue(_) => "ProbeDue",
            SimEvent::MoveTick => "MoveTick",
            SimEvent::TrafficDue => "TrafficDue",
        }
    }
}

/// One transmission on the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub id: u64,
    pub src: NodeId,
    pub frame: Frame,
    pub start: SimTime,
    pub end: SimTime,
    /// Sent after a clear channel assessment.
    pub via_csma: bool,
}

/// One frame accepted by a receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct RxRecord {
    pub tx: u64,
    pub node: NodeId,
    pub time: SimTime,
    pub rx_power: f64,
}

/// Radio mode change of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRecord {
    pub node: NodeId,
    pub time: SimTime,
    pub mode: RadioMode,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelLog {
    pub transmissions: Vec<TxRecord>,
    pub receptions: Vec<RxRecord>,
    pub modes: Vec<ModeRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub frames_sent: u32,
    pub frames_received: u32,
    pub collisions: u32,
    pub data_generated: u32,
    pub data_delivered: u32,
    pub data_failed: u32,
    pub outage_losses: u32,
    pub channel_access_failures: u32,
}

/// Per-node results.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub id: NodeId,
    pub role: Role,
    pub ledger: EnergyLedger,
    pub energy: EnergyBreakdown,
    pub counters: NodeCounters,
    pub handover: Option<HandoverStats>,
    pub final_parent: Option<NodeId>,
}

/// Results of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub summary: RunSummary,
    pub duration: SimTime,
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
    pub nodes: Vec<NodeReport>,
    pub channel: Option<ChannelLog>,
}

impl SimReport {
    pub fn node(&self, id: NodeId) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// First mobile node, if any.
    pub fn mobile(&self) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.role.class == NodeClass::Mobile)
    }

    pub fn identity(&self, trajectory: Trajectory) -> RunIdentity {
        RunIdentity { seed: self.seed, duration: self.duration, trajectory }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RxLock {
    tx: u64,
    corrupted: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Probing,
    Associating(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
struct Handover {
    id: u32,
    mode: HandoverMode,
    started: SimTime,
    phase: Phase,
    responses: Vec<(NodeId, u8)>,
    probes_sent: u32,
    scan_order: Vec<NodeId>,
    scan_idx: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct MobileState {
    trajectory: Trajectory,
    assoc: Association,
    ack_failures: u32,
    handover: Option<Handover>,
    next_handover: u32,
    tpc: TpcState,
    samples: Vec<LinkSample>,
    stats: HandoverStats,
    orphan_since: Option<SimTime>,
    last_completion: Option<SimTime>,
}

struct Node {
    cfg: NodeConfig,
    gain: f64,
    power: f64,
    ledger: EnergyLedger,
    rng: RngStream,
    seq: u8,
    queue: VecDeque<Frame>,
    op: Option<CsmaOp>,
    ack_timer: Option<EventId>,
    ack_pending: bool,
    rx_lock: Option<RxLock>,
    audible: u32,
    last_seq_from: BTreeMap<NodeId, u8>,
    children: BTreeSet<NodeId>,
    mobile: Option<MobileState>,
    counters: NodeCounters,
}

impl Node {
    fn next_seq(&mut self) -> u8 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }

    fn is_mobile(&self) -> bool {
        self.mobile.is_some()
    }

    fn mode(&self) -> RadioMode {
        self.ledger.mode()
    }
}

struct ActiveTx {
    id: u64,
    src: usize,
    frame: Frame,
    via_csma: bool,
    audible: Vec<(usize, f64)>,
}

/// A runnable network.
pub struct Sim {
    engine: Engine<SimEvent>,
    cfg: SimConfig,
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    active: Vec<ActiveTx>,
    next_tx: u64,
    trace: Vec<TraceRecord>,
    log: Option<ChannelLog>,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Sim, SimError> {
        cfg.validate()?;
        let max_level = cfg.phy.max_level();
        let mut nodes = Vec::with_capacity(cfg.nodes.len());
        let mut index = BTreeMap::new();
        for (i, nc) in cfg.nodes.iter().enumerate() {
            index.insert(nc.id, i);
            let mobile = match (&nc.placement, nc.role.class) {
                (Placement::Moving(traj), NodeClass::Mobile) => Some(MobileState {
                    trajectory: traj.clone(),
                    assoc: Association::default(),
                    ack_failures: 0,
                    handover: None,
                    next_handover: 0,
                    tpc: TpcState {
                        current_power: if cfg.net.tpc_enabled { max_level } else { nc.tx_power.unwrap_or(cfg.phy.tx_power) },
                        lq_target: cfg.net.lq_target,
                        lq_hysteresis: cfg.net.lq_hysteresis,
                    },
                    samples: Vec::new(),
                    stats: HandoverStats::default(),
                    orphan_since: Some(SimTime::ZERO),
                    last_completion: None,
                }),
                _ => None,
            };
            let power = match &mobile {
                Some(m) => m.tpc.current_power,
                None => nc.tx_power.unwrap_or(cfg.phy.tx_power),
            };
            nodes.push(Node {
                cfg: nc.clone(),
                gain: nc.antenna_gain.unwrap_or(cfg.phy.antenna_gain),
                power,
                ledger: EnergyLedger::new(RadioMode::Idle, SimTime::ZERO),
                rng: RngStream::for_node(cfg.seed, nc.id),
                seq: 0,
                queue: VecDeque::new(),
                op: None,
                ack_timer: None,
                ack_pending: false,
                rx_lock: None,
                audible: 0,
                last_seq_from: BTreeMap::new(),
                children: BTreeSet::new(),
                mobile,
                counters: NodeCounters::default(),
            });
        }
        let log = cfg.record_channel.then(ChannelLog::default);
        let mut sim =
            Sim { engine: Engine::new(), cfg, nodes, index, active: Vec::new(), next_tx: 0, trace: Vec::new(), log };
        sim.bootstrap()?;
        Ok(sim)
    }

    fn bootstrap(&mut self) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            let id = self.nodes[i].cfg.id;
            let target = Target::Node(id);
            if self.nodes[i].cfg.role.kind.can_parent() && BeaconOrder::new(self.nodes[i].cfg.beacon_order)?.beacons_enabled() {
                self.engine.schedule(SimTime::ZERO, target, SimEvent::BeaconDue)?;
            }
            if self.nodes[i].is_mobile() {
                self.engine.schedule(SimTime::ZERO, target, SimEvent::MoveTick)?;
                self.engine.schedule(SimTime::ZERO, target, SimEvent::ProbeDue(ProbeTimer::Retry))?;
            }
            if let Some(t) = &self.nodes[i].cfg.traffic {
                self.engine.schedule(t.offset, target, SimEvent::TrafficDue)?;
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Static reachability between two nodes at time `t`.
    pub fn in_range(&self, tx: NodeId, rx: NodeId, power: f64, t: SimTime) -> bool {
        let (Some(&a), Some(&b)) = (self.index.get(&tx), self.index.get(&rx)) else {
            return false;
        };
        link_rx_power(self.radio(a, t), self.radio(b, t), power, &self.cfg.phy) > self.cfg.phy.rx_sensitivity
    }

    fn radio(&self, i: usize, t: SimTime) -> Radio {
        Radio { position: self.nodes[i].cfg.placement.position_at(t), antenna_gain: self.nodes[i].gain }
    }

    /// Run over `[0, duration)` and collect results.
    pub fn run(mut self) -> Result<SimReport, SimError> {
        let end = self.cfg.duration;
        let last = end.as_micros().checked_sub(1).map(SimTime::from_micros);
        while let Some(ev) = last.and_then(|l| self.engine.pop_until(l)) {
            let Target::Node(id) = ev.target else {
                continue;
            };
            let i = self.index[&id];
            self.handle(i, ev.payload)?;
        }
        let summary = self.engine.finish();
        let mut reports = Vec::with_capacity(self.nodes.len());
        for node in &mut self.nodes {
            node.ledger.close(end)?;
            if let Some(m) = node.mobile.as_mut() {
                if let Some(since) = m.orphan_since.take() {
                    m.stats.total_outage = m.stats.total_outage + end.saturating_sub(since);
                }
            }
            reports.push(NodeReport {
                id: node.cfg.id,
                role: node.cfg.role,
                energy: node.ledger.breakdown(&self.cfg.currents),
                ledger: node.ledger.clone(),
                counters: node.counters,
                handover: node.mobile.as_ref().map(|m| m.stats.clone()),
                final_parent: node.mobile.as_ref().and_then(|m| m.assoc.parent),
            });
        }
        Ok(SimReport {
            summary,
            duration: end,
            seed: self.cfg.seed,
            trace: self.trace,
            nodes: reports,
            channel: self.log,
        })
    }

    fn handle(&mut self, i: usize, ev: SimEvent) -> Result<(), SimError> {
        match ev {
            SimEvent::TxStart(frame) => {
                if frame.kind == FrameKind::Ack {
                    self.nodes[i].ack_pending = false;
                }
                self.send_immediate(i, frame)?;
            }
            SimEvent::TxEnd(tx) => self.on_tx_end(tx)?,
            SimEvent::BackoffExpire => {
                self.engine.schedule_in(SimTime::ZERO, self.target(i), SimEvent::CcaCheck);
            }
            SimEvent::CcaCheck => self.on_cca(i)?,
            SimEvent::AckTimeout => self.on_ack_timeout(i)?,
            SimEvent::BeaconDue => self.on_beacon_due(i)?,
            SimEvent::ProbeDue(timer) => self.on_probe_timer(i, timer)?,
            SimEvent::MoveTick => self.on_move_tick(i),
            SimEvent::TrafficDue => self.on_traffic(i)?,
        }
        Ok(())
    }

    fn target(&self, i: usize) -> Target {
        Target::Node(self.nodes[i].cfg.id)
    }

    fn now(&self) -> SimTime {
        self.engine.now()
    }

    // ---------------------------------------------------------------- trace

    fn row(&self, i: usize, event: EventLabel) -> TraceRecord {
        let mut r = TraceRecord::new(self.now(), self.nodes[i].cfg.id, event);
        if let Some(m) = &self.nodes[i].mobile {
            r.pos_x_m = Some(m.trajectory.position_at(self.now()).0);
        }
        r
    }

    fn frame_row(&self, i: usize, event: EventLabel, frame: &Frame) -> TraceRecord {
        let mut r = self.row(i, event);
        r.frame_kind = Some(frame.kind);
        r.src = Some(frame.src);
        r.dst = Some(frame.dst);
        r.seq = Some(frame.seq);
        r.power_dbm = Some(frame.tx_power);
        r
    }

    fn emit(&mut self, r: TraceRecord) {
        self.trace.push(r);
    }

    // ---------------------------------------------------------------- radio

    fn set_mode(&mut self, i: usize, mode: RadioMode) -> Result<(), SimError> {
        if self.nodes[i].mode() == mode {
            return Ok(());
        }
        let now = self.now();
        self.nodes[i].ledger.transition(mode, now)?;
        if let Some(log) = self.log.as_mut() {
            log.modes.push(ModeRecord { node: self.nodes[i].cfg.id, time: now, mode });
        }
        Ok(())
    }

    fn wake(&mut self, i: usize) -> Result<(), SimError> {
        if self.nodes[i].mode() == RadioMode::Sleep {
            self.set_mode(i, RadioMode::Idle)?;
        }
        Ok(())
    }

    /// Put an idle end device to sleep when nothing is pending.
    fn settle(&mut self, i: usize) -> Result<(), SimError> {
        let n = &self.nodes[i];
        let Some(m) = &n.mobile else {
            return Ok(());
        };
        let idle = n.op.is_none()
            && n.queue.is_empty()
            && !n.ack_pending
            && n.rx_lock.is_none()
            && m.handover.is_none()
            && n.mode() == RadioMode::Idle;
        if idle && self.cfg.net.end_device_sleep && n.cfg.role.kind == RoleKind::EndDevice {
            self.set_mode(i, RadioMode::Sleep)?;
        }
        Ok(())
    }

    // ---------------------------------------------------------------- channel

    fn begin_tx(&mut self, i: usize, mut frame: Frame, via_csma: bool) -> Result<(), SimError> {
        let now = self.now();
        if self.nodes[i].rx_lock.take().is_some() {
            self.nodes[i].counters.collisions += 1;
        }
        frame.tx_power = self.nodes[i].power;
        self.set_mode(i, RadioMode::Tx(frame.tx_power))?;
        let airtime = frame.airtime(self.cfg.phy.phy_overhead, self.cfg.phy.band);
        let id = self.next_tx;
        self.next_tx += 1;

        let tx_radio = self.radio(i, now);
        let mut audible = Vec::new();
        for j in 0..self.nodes.len() {
            if j == i {
                continue;
            }
            let rx = link_rx_power(tx_radio, self.radio(j, now), frame.tx_power, &self.cfg.phy);
            if rx > self.cfg.phy.rx_sensitivity {
                audible.push((j, rx));
            }
        }
        for &(j, _) in &audible {
            let node = &mut self.nodes[j];
            node.audible += 1;
            if let Some(lock) = node.rx_lock.as_mut() {
                lock.corrupted = true;
            } else if node.audible == 1 && node.mode() == RadioMode::Idle {
                node.rx_lock = Some(RxLock { tx: id, corrupted: false });
                self.set_mode(j, RadioMode::Rx)?;
            }
        }

        self.nodes[i].counters.frames_sent += 1;
        let row = self.frame_row(i, EventLabel::TxStart, &frame);
        self.emit(row);
        if let Some(log) = self.log.as_mut() {
            log.transmissions.push(TxRecord {
                id,
                src: self.nodes[i].cfg.id,
                frame: frame.clone(),
                start: now,
                end: now + airtime,
                via_csma,
            });
        }
        self.active.push(ActiveTx { id, src: i, frame, via_csma, audible });
        self.engine.schedule_in(airtime, self.target(i), SimEvent::TxEnd(id));
        Ok(())
    }

    fn on_tx_end(&mut self, id: u64) -> Result<(), SimError> {
        let pos = self.active.iter().position(|t| t.id == id).expect("active transmission");
        let tx = self.active.swap_remove(pos);
        let now = self.now();
        let src = tx.src;
        self.set_mode(src, RadioMode::Idle)?;

        let mut deliveries = Vec::new();
        for &(j, rx) in &tx.audible {
            self.nodes[j].audible -= 1;
            let locked = self.nodes[j].rx_lock.is_some_and(|l| l.tx == id);
            if !locked {
                continue;
            }
            let lock = self.nodes[j].rx_lock.take().expect("lock");
            if self.nodes[j].mode() == RadioMode::Rx {
                self.set_mode(j, RadioMode::Idle)?;
            }
            if lock.corrupted {
                self.nodes[j].counters.collisions += 1;
                let row = self.frame_row(j, EventLabel::Collision, &tx.frame);
                self.emit(row);
            } else {
                deliveries.push((j, rx));
            }
        }

        if tx.via_csma {
            if let Some(op) = self.nodes[src].op.as_mut() {
                op.last_tx_end = Some(now);
            }
            if tx.frame.wants_ack() {
                let timer = self.engine.schedule_in(self.cfg.csma.ack_wait, self.target(src), SimEvent::AckTimeout);
                self.nodes[src].ack_timer = Some(timer);
            } else {
                self.finish(src, CsmaOutcome::Delivered)?;
            }
        }

        for (j, rx) in deliveries {
            if let Some(log) = self.log.as_mut() {
                log.receptions.push(RxRecord { tx: id, node: self.nodes[j].cfg.id, time: now, rx_power: rx });
            }
            self.on_receive(j, &tx.frame, rx)?;
        }
        self.settle(src)?;
        for &(j, _) in &tx.audible {
            self.settle(j)?;
        }
        Ok(())
    }

    // ---------------------------------------------------------------- MAC

    /// Queue a frame for CSMA/CA transmission.
    fn csma_send(&mut self, i: usize, mut frame: Frame) -> Result<(), SimError> {
        frame.validate()?;
        if frame.kind.csma_exempt() {
            return Err(SimError::Config(format!("{} frames are sent without CSMA", frame.kind)));
        }
        frame.seq = self.nodes[i].next_seq();
        frame.tx_power = self.nodes[i].power;
        self.nodes[i].queue.push_back(frame);
        self.wake(i)?;
        self.start_next(i)
    }

    fn start_next(&mut self, i: usize) -> Result<(), SimError> {
        if self.nodes[i].op.is_some() {
            return Ok(());
        }
        let Some(frame) = self.nodes[i].queue.pop_front() else {
            return Ok(());
        };
        let op = CsmaOp::new(frame, &self.cfg.csma);
        let step = op.backoff();
        self.nodes[i].op = Some(op);
        self.apply_step(i, step)
    }

    fn apply_step(&mut self, i: usize, step: CsmaStep) -> Result<(), SimError> {
        match step {
            CsmaStep::Backoff { periods_range } => {
                let periods = self.nodes[i].rng.draw_uniform(periods_range);
                let delay = SimTime::from_micros(u64::from(periods) * self.cfg.csma.unit_backoff.as_micros());
                let mut r = self.row(i, EventLabel::Backoff);
                if let Some(op) = &self.nodes[i].op {
                    r.frame_kind = Some(op.frame.kind);
                    r.seq = Some(op.frame.seq);
                }
                r.outcome = Some(format!("delay_us={}", delay.as_micros()));
                self.emit(r);
                self.engine.schedule_in(delay, self.target(i), SimEvent::BackoffExpire);
                Ok(())
            }
            CsmaStep::Done(outcome) => self.finish(i, outcome),
        }
    }

    fn on_cca(&mut self, i: usize) -> Result<(), SimError> {
        let n = &self.nodes[i];
        let Some(op) = &n.op else {
            return Ok(());
        };
        let busy = n.audible > 0 || n.ack_pending || n.rx_lock.is_some() || matches!(n.mode(), RadioMode::Tx(_));
        if !busy {
            let frame = op.frame.clone();
            return self.begin_tx(i, frame, true);
        }
        let mut r = self.row(i, EventLabel::CcaBusy);
        r.frame_kind = Some(op.frame.kind);
        r.seq = Some(op.frame.seq);
        self.emit(r);
        let csma = self.cfg.csma.clone();
        let step = self.nodes[i].op.as_mut().expect("op").on_cca_busy(&csma);
        self.apply_step(i, step)
    }

    fn on_ack_timeout(&mut self, i: usize) -> Result<(), SimError> {
        self.nodes[i].ack_timer = None;
        let Some(op) = &self.nodes[i].op else {
            return Ok(());
        };
        let row = self.frame_row(i, EventLabel::AckTimeout, &op.frame);
        let to_parent = op.frame.kind == FrameKind::Data
            && self.nodes[i].mobile.as_ref().is_some_and(|m| m.assoc.parent == Some(op.frame.dst));
        self.emit(row);
        let csma = self.cfg.csma.clone();
        let step = self.nodes[i].op.as_mut().expect("op").on_ack_timeout(&csma);
        self.apply_step(i, step)?;
        if to_parent {
            let trigger = self.cfg.net.ack_failure_trigger;
            let m = self.nodes[i].mobile.as_mut().expect("mobile");
            m.ack_failures += 1;
            if m.ack_failures >= trigger && m.handover.is_none() {
                self.start_handover(i, "ack_failures")?;
            }
        }
        Ok(())
    }

    fn finish(&mut self, i: usize, outcome: CsmaOutcome) -> Result<(), SimError> {
        let Some(op) = self.nodes[i].op.take() else {
            return Ok(());
        };
        if let Some(timer) = self.nodes[i].ack_timer.take() {
            self.engine.cancel(timer);
        }
        if outcome == CsmaOutcome::ChannelAccessFailure {
            self.nodes[i].counters.channel_access_failures += 1;
        }
        let mut r = self.frame_row(i, EventLabel::CsmaDone, &op.frame);
        r.power_dbm = Some(self.nodes[i].power);
        r.outcome = Some(outcome.name().into());
        self.emit(r);
        self.on_send_done(i, &op, outcome)?;
        self.start_next(i)?;
        self.settle(i)
    }

    /// Transmit a beacon or acknowledgment immediately, without sensing.
    fn send_immediate(&mut self, i: usize, frame: Frame) -> Result<(), SimError> {
        if !frame.kind.csma_exempt() {
            return Err(SimError::NotCsmaExempt(frame.kind));
        }
        frame.validate()?;
        if matches!(self.nodes[i].mode(), RadioMode::Tx(_) | RadioMode::Sleep) {
            let row = self.frame_row(i, EventLabel::TxSkipped, &frame);
            self.emit(row);
            return Ok(());
        }
        self.begin_tx(i, frame, false)
    }

    fn on_beacon_due(&mut self, i: usize) -> Result<(), SimError> {
        let bo = BeaconOrder::new(self.nodes[i].cfg.beacon_order)?;
        let interval = beacon_interval(bo, self.cfg.phy.band)?;
        self.engine.schedule_in(interval, self.target(i), SimEvent::BeaconDue);
        let id = self.nodes[i].cfg.id;
        let seq = self.nodes[i].next_seq();
        let beacon = Frame::new(FrameKind::Beacon, seq, id, BROADCAST, 0, self.nodes[i].power);
        if self.nodes[i].ack_pending {
            let row = self.frame_row(i, EventLabel::TxSkipped, &beacon);
            self.emit(row);
            return Ok(());
        }
        self.send_immediate(i, beacon)
    }

    fn on_receive(&mut self, j: usize, frame: &Frame, rx: f64) -> Result<(), SimError> {
        let me = self.nodes[j].cfg.id;
        if frame.dst != BROADCAST && frame.dst != me {
            return Ok(());
        }
        let lq = lq_from_rx_power(rx, &self.cfg.phy);
        let duplicate = frame.wants_ack() && self.nodes[j].last_seq_from.get(&frame.src) == Some(&frame.seq);
        let mut r = self.frame_row(j, EventLabel::Rx, frame);
        r.rx_power_dbm = Some(rx);
        r.lq = Some(lq);
        if duplicate {
            r.outcome = Some("dup".into());
        }
        self.emit(r);
        self.nodes[j].counters.frames_received += 1;

        if frame.wants_ack() {
            self.nodes[j].ack_pending = true;
            let ack = Frame::ack_for(frame, self.nodes[j].power);
            self.engine.schedule_in(self.cfg.csma.turnaround, self.target(j), SimEvent::TxStart(ack));
            self.nodes[j].last_seq_from.insert(frame.src, frame.seq);
            if duplicate {
                return Ok(());
            }
        }

        // link quality bookkeeping for end devices
        if let Some(m) = self.nodes[j].mobile.as_mut() {
            if m.assoc.parent == Some(frame.src) {
                m.assoc.last_lq = lq;
                m.assoc.last_contact = self.engine.now();
                m.samples.push(LinkSample { rx_power: rx, lq, time: self.engine.now(), from: frame.src, sent_at: frame.tx_power });
                let window = self.cfg.net.tpc_window;
                let now = self.engine.now();
                m.samples.retain(|s| now.saturating_sub(s.time) <= window);
            }
        }

        match frame.kind {
            FrameKind::Ack => {
                let matches = self.nodes[j].op.as_ref().is_some_and(|op| {
                    op.frame.wants_ack() && op.frame.seq == frame.seq && op.frame.dst == frame.src
                }) && self.nodes[j].ack_timer.is_some();
                if matches {
                    self.finish(j, CsmaOutcome::Delivered)?;
                }
            }
            FrameKind::Data => {
                if !self.nodes[j].is_mobile() {
                    self.nodes[j].counters.data_delivered += 1;
                }
            }
            FrameKind::ProbeRequest => {
                if self.can_respond(j) {
                    let mut rsp = Frame::new(FrameKind::ProbeResponse, 0, me, frame.src, 1, 0.0);
                    rsp.reported_lq = Some(lq);
                    self.csma_send(j, rsp)?;
                }
            }
            FrameKind::AssocRequest => {
                if self.can_respond(j) {
                    self.nodes[j].children.insert(frame.src);
                    let rsp = Frame::new(FrameKind::AssocResponse, 0, me, frame.src, 3, 0.0);
                    self.csma_send(j, rsp)?;
                }
            }
            FrameKind::Disassoc => {
                self.nodes[j].children.remove(&frame.src);
            }
            FrameKind::ProbeResponse => self.on_probe_response(j, frame),
            FrameKind::AssocResponse => self.on_assoc_response(j, frame, lq, rx)?,
            FrameKind::Beacon => {}
        }
        Ok(())
    }

    fn can_respond(&self, j: usize) -> bool {
        let n = &self.nodes[j];
        n.cfg.role.kind.can_parent() && n.cfg.role.class == NodeClass::Stationary
    }

    // ---------------------------------------------------------------- net

    fn on_send_done(&mut self, i: usize, op: &CsmaOp, outcome: CsmaOutcome) -> Result<(), SimError> {
        let now = self.now();
        let frame = &op.frame;
        if frame.kind == FrameKind::Data {
            let c = &mut self.nodes[i].counters;
            if outcome == CsmaOutcome::Delivered {
                c.data_delivered += 1;
            } else {
                c.data_failed += 1;
            }
        }
        if !self.nodes[i].is_mobile() {
            return Ok(());
        }
        match frame.kind {
            FrameKind::Data => {
                if outcome == CsmaOutcome::Delivered {
                    self.nodes[i].mobile.as_mut().expect("mobile").ack_failures = 0;
                }
            }
            FrameKind::ProbeRequest => {
                let Some(h) = self.nodes[i].mobile.as_ref().and_then(|m| m.handover.as_ref()) else {
                    return Ok(());
                };
                let (hid, mode) = (h.id, h.mode);
                if h.phase != Phase::Probing {
                    return Ok(());
                }
                match mode {
                    HandoverMode::Broadcast => {
                        if outcome == CsmaOutcome::ChannelAccessFailure {
                            self.fail_handover(i)?;
                        } else {
                            self.engine.schedule_in(
                                self.cfg.net.probe_window,
                                self.target(i),
                                SimEvent::ProbeDue(ProbeTimer::WindowClose(hid)),
                            );
                        }
                    }
                    HandoverMode::Scan => {
                        let ack_deadline = op.last_tx_end.map_or(now, |e| e + self.cfg.csma.ack_wait).max(now);
                        let at = ack_deadline + self.cfg.net.scan_response_timeout;
                        self.engine.schedule(at, self.target(i), SimEvent::ProbeDue(ProbeTimer::ScanNext(hid)))?;
                    }
                }
            }
            FrameKind::AssocRequest => {
                let associating = self.nodes[i]
                    .mobile
                    .as_ref()
                    .and_then(|m| m.handover.as_ref())
                    .is_some_and(|h| h.phase == Phase::Associating(frame.dst));
                if associating && outcome != CsmaOutcome::Delivered {
                    self.fail_handover(i)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn start_handover(&mut self, i: usize, reason: &str) -> Result<(), SimError> {
        let now = self.now();
        let mode = self.cfg.net.handover_mode;
        let stationary: Vec<NodeId> =
            self.nodes.iter().filter(|n| n.cfg.role.class == NodeClass::Stationary && n.cfg.role.kind.can_parent()).map(|n| n.cfg.id).collect();
        let m = self.nodes[i].mobile.as_mut().expect("mobile");
        let id = m.next_handover;
        m.next_handover += 1;
        m.stats.attempts += 1;
        m.handover = Some(Handover {
            id,
            mode,
            started: now,
            phase: Phase::Probing,
            responses: Vec::new(),
            probes_sent: 0,
            scan_order: stationary,
            scan_idx: 0,
        });
        let mut r = self.row(i, EventLabel::HandoverStart);
        r.outcome = Some(format!("{};{reason}", mode.name()));
        self.emit(r);
        self.wake(i)?;
        match mode {
            HandoverMode::Broadcast => self.send_probe(i, BROADCAST),
            HandoverMode::Scan => match self.scan_target(i) {
                Some(t) => self.send_probe(i, t),
                None => self.fail_handover(i),
            },
        }
    }

    fn scan_target(&self, i: usize) -> Option<NodeId> {
        let h = self.nodes[i].mobile.as_ref()?.handover.as_ref()?;
        h.scan_order.get(h.scan_idx).copied()
    }

    fn send_probe(&mut self, i: usize, dst: NodeId) -> Result<(), SimError> {
        let id = self.nodes[i].cfg.id;
        if let Some(h) = self.nodes[i].mobile.as_mut().and_then(|m| m.handover.as_mut()) {
            h.probes_sent += 1;
        }
        let probe = Frame::new(FrameKind::ProbeRequest, 0, id, dst, 0, 0.0);
        self.csma_send(i, probe)
    }

    fn on_probe_response(&mut self, j: usize, frame: &Frame) {
        let Some(h) = self.nodes[j].mobile.as_mut().and_then(|m| m.handover.as_mut()) else {
            return;
        };
        if h.phase != Phase::Probing {
            return;
        }
        if h.mode == HandoverMode::Scan && h.scan_order.get(h.scan_idx) != Some(&frame.src) {
            return;
        }
        if h.responses.iter().any(|(id, _)| *id == frame.src) {
            return;
        }
        h.responses.push((frame.src, frame.reported_lq.unwrap_or(0)));
    }

    fn on_probe_timer(&mut self, i: usize, timer: ProbeTimer) -> Result<(), SimError> {
        let current = self.nodes[i].mobile.as_ref().and_then(|m| m.handover.as_ref()).map(|h| h.id);
        match timer {
            ProbeTimer::Retry => {
                let m = self.nodes[i].mobile.as_ref().expect("mobile");
                if m.handover.is_none() && m.assoc.parent.is_none() {
                    self.start_handover(i, "orphan")?;
                }
            }
            ProbeTimer::WindowClose(h) if current == Some(h) => self.choose_parent(i)?,
            ProbeTimer::ScanNext(h) if current == Some(h) => {
                let m = self.nodes[i].mobile.as_mut().expect("mobile");
                let ho = m.handover.as_mut().expect("handover");
                ho.scan_idx += 1;
                match self.scan_target(i) {
                    Some(t) => self.send_probe(i, t)?,
                    None => self.choose_parent(i)?,
                }
            }
            ProbeTimer::AssocTimeout(h) if current == Some(h) => {
                let associating = self.nodes[i]
                    .mobile
                    .as_ref()
                    .and_then(|m| m.handover.as_ref())
                    .is_some_and(|ho| matches!(ho.phase, Phase::Associating(_)));
                if associating {
                    self.fail_handover(i)?;
                }
            }
            _ => {}
        }
        self.settle(i)
    }

    fn choose_parent(&mut self, i: usize) -> Result<(), SimError> {
        let h = self.nodes[i].mobile.as_mut().and_then(|m| m.handover.as_mut()).expect("handover");
        let Some(best) = select_responder(&h.responses) else {
            return self.fail_handover(i);
        };
        h.phase = Phase::Associating(best);
        let hid = h.id;
        let id = self.nodes[i].cfg.id;
        self.csma_send(i, Frame::new(FrameKind::AssocRequest, 0, id, best, 1, 0.0))?;
        self.engine.schedule_in(self.cfg.net.assoc_timeout, self.target(i), SimEvent::ProbeDue(ProbeTimer::AssocTimeout(hid)));
        Ok(())
    }

    fn on_assoc_response(&mut self, j: usize, frame: &Frame, lq: u8, rx: f64) -> Result<(), SimError> {
        let now = self.now();
        let Some(m) = self.nodes[j].mobile.as_mut() else {
            return Ok(());
        };
        let Some(h) = m.handover.as_ref() else {
            return Ok(());
        };
        if h.phase != Phase::Associating(frame.src) {
            return Ok(());
        }
        let h = m.handover.take().expect("handover");
        let latency = now - h.started;
        let responders = h.responses.len() as u32;
        let msgs = h.probes_sent + responders + 2;
        m.stats.completions += 1;
        m.last_completion = Some(now);
        m.stats.latencies.push(latency);
        m.stats.messages.push(msgs);
        m.stats.responders.push(responders);
        let old = m.assoc.parent;
        m.assoc = Association { parent: Some(frame.src), last_lq: lq, last_contact: now };
        m.ack_failures = 0;
        m.samples.clear();
        m.samples.push(LinkSample { rx_power: rx, lq, time: now, from: frame.src, sent_at: frame.tx_power });
        if let Some(since) = m.orphan_since.take() {
            m.stats.total_outage = m.stats.total_outage + (now - since);
        }
        let mut r = self.row(j, EventLabel::HandoverDone);
        r.src = Some(frame.src);
        r.lq = Some(lq);
        r.outcome = Some(format!("parent={};latency_us={};msgs={}", frame.src, latency.as_micros(), msgs));
        self.emit(r);
        if let Some(old) = old.filter(|&o| o != frame.src) {
            let id = self.nodes[j].cfg.id;
            self.csma_send(j, Frame::new(FrameKind::Disassoc, 0, id, old, 1, 0.0))?;
        }
        Ok(())
    }

    fn fail_handover(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now();
        let max_level = self.cfg.phy.max_level();
        let tpc = self.cfg.net.tpc_enabled;
        let m = self.nodes[i].mobile.as_mut().expect("mobile");
        m.handover = None;
        if m.assoc.parent.take().is_some() {
            m.orphan_since = Some(now);
        }
        m.samples.clear();
        m.ack_failures = 0;
        if tpc {
            m.tpc.current_power = max_level;
            self.nodes[i].power = max_level;
        }
        let mut r = self.row(i, EventLabel::HandoverDone);
        r.outcome = Some("parent=none".into());
        self.emit(r);
        self.engine.schedule_in(self.cfg.net.probe_retry, self.target(i), SimEvent::ProbeDue(ProbeTimer::Retry));
        self.settle(i)
    }

    fn on_move_tick(&mut self, i: usize) {
        self.engine.schedule_in(self.cfg.move_tick, self.target(i), SimEvent::MoveTick);
        let parent = self.nodes[i].mobile.as_ref().and_then(|m| m.assoc.parent);
        let mut r = self.row(i, EventLabel::Move);
        r.outcome = Some(match parent {
            Some(p) => format!("parent={p}"),
            None => "parent=none".into(),
        });
        self.emit(r);
    }

    fn on_traffic(&mut self, i: usize) -> Result<(), SimError> {
        let Some(traffic) = self.nodes[i].cfg.traffic.clone() else {
            return Ok(());
        };
        self.engine.schedule_in(traffic.period, self.target(i), SimEvent::TrafficDue);
        self.nodes[i].counters.data_generated += 1;
        let id = self.nodes[i].cfg.id;

        if !self.nodes[i].is_mobile() {
            let dst = traffic.dst.expect("validated");
            let mut r = self.row(i, EventLabel::DataGen);
            r.dst = Some(dst);
            r.outcome = Some("QUEUED".into());
            self.emit(r);
            return self.csma_send(i, Frame::new(FrameKind::Data, 0, id, dst, traffic.payload, 0.0));
        }

        let m = self.nodes[i].mobile.as_ref().expect("mobile");
        let dst = traffic.dst.or(m.assoc.parent);
        let Some(dst) = dst else {
            self.nodes[i].counters.outage_losses += 1;
            let mut r = self.row(i, EventLabel::DataGen);
            r.outcome = Some("OUTAGE".into());
            self.emit(r);
            if self.nodes[i].mobile.as_ref().is_some_and(|m| m.handover.is_none()) {
                self.start_handover(i, "orphan")?;
            }
            return Ok(());
        };

        if self.cfg.net.tpc_enabled {
            let now = self.now();
            let m = self.nodes[i].mobile.as_ref().expect("mobile");
            let next = tpc_update(&m.tpc, &m.samples, now, self.cfg.net.tpc_window, &self.cfg.phy);
            if next != m.tpc.current_power {
                self.nodes[i].mobile.as_mut().expect("mobile").tpc.current_power = next;
                self.nodes[i].power = next;
                let mut r = self.row(i, EventLabel::TpcSet);
                r.power_dbm = Some(next);
                self.emit(r);
            }
        }

        let mut r = self.row(i, EventLabel::DataGen);
        r.dst = Some(dst);
        r.outcome = Some("QUEUED".into());
        self.emit(r);
        self.csma_send(i, Frame::new(FrameKind::Data, 0, id, dst, traffic.payload, 0.0))?;

        let now = self.now();
        let m = self.nodes[i].mobile.as_ref().expect("mobile");
        let settled = m.last_completion.is_none_or(|t| now - t >= self.cfg.net.handover_holdoff);
        if m.handover.is_none() {
            if settled && m.assoc.last_lq < self.cfg.net.lq_trigger() {
                self.start_handover(i, "low_lq")?;
            } else if m.ack_failures >= self.cfg.net.ack_failure_trigger {
                self.start_handover(i, "ack_failures")?;
            }
        }
        Ok(())
    }
}

/// Build and run in one call.
pub fn run(cfg: SimConfig) -> Result<SimReport, SimError> {
    Sim::new(cfg)?.run()
}
