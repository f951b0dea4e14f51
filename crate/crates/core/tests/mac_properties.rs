//! Randomized small networks checked against channel-level invariants.

use std::collections::BTreeMap;

use pansim_core::scenario::{TrafficConfig, Waypoint};
use pansim_core::sim::{ChannelLog, TxRecord};
use pansim_core::*;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Stationary {
    kind: RoleKind,
    x: f64,
    y: f64,
    bo: u8,
    traffic: Option<(u64, u32, u64)>,
}

#[derive(Debug, Clone)]
struct Mobile {
    from: f64,
    to: f64,
    period_ms: u64,
    mode: HandoverMode,
    tpc: bool,
    sleep: bool,
}

#[derive(Debug, Clone)]
struct Net {
    stationary: Vec<Stationary>,
    mobile: Option<Mobile>,
    power: f64,
    min_be: u8,
    max_be: u8,
    duration_ms: u64,
    seed: u64,
}

fn bo() -> impl Strategy<Value = u8> {
    prop_oneof![Just(0u8), Just(1), Just(2), Just(4), Just(15), Just(15)]
}

fn traffic() -> impl Strategy<Value = Option<(u64, u32, u64)>> {
    prop::option::weighted(0.7, (2u64..80, 1u32..=100, 0u64..40))
}

fn stationary(kind: RoleKind) -> impl Strategy<Value = Stationary> {
    (0.0f64..10.0, -2.0f64..2.0, bo(), traffic()).prop_map(move |(x, y, bo, traffic)| Stationary {
        kind,
        x,
        y,
        bo,
        traffic: if kind == RoleKind::Coordinator { None } else { traffic },
    })
}

fn mobile() -> impl Strategy<Value = Mobile> {
    (-2.0f64..12.0, -2.0f64..12.0, 20u64..200, any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(from, to, period_ms, scan, tpc, sleep)| Mobile {
            from,
            to,
            period_ms,
            mode: if scan { HandoverMode::Scan } else { HandoverMode::Broadcast },
            tpc,
            sleep,
        },
    )
}

fn net() -> impl Strategy<Value = Net> {
    (
        stationary(RoleKind::Coordinator),
        prop::collection::vec(stationary(RoleKind::Router), 0..=2),
        prop::option::of(stationary(RoleKind::EndDevice)),
        prop::option::of(mobile()),
        prop::sample::select(vec![0.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        (0u8..=3, 3u8..=5),
        1u64..=1000,
        any::<u64>(),
    )
        .prop_map(|(c, routers, ed, mobile, power, (min_be, max_be), duration_ms, seed)| {
            let mut stationary = vec![c];
            stationary.extend(routers);
            stationary.extend(ed);
            Net { stationary, mobile, power, min_be, max_be, duration_ms, seed }
        })
}

fn config(n: &Net) -> SimConfig {
    let mut cfg = SimConfig {
        seed: n.seed,
        duration: SimTime::from_millis(n.duration_ms),
        record_channel: true,
        nodes: Vec::new(),
        ..SimConfig::default()
    };
    cfg.phy.tx_power = n.power;
    cfg.csma.mac_min_be = n.min_be;
    cfg.csma.mac_max_be = n.max_be;
    for (k, s) in n.stationary.iter().enumerate() {
        cfg.nodes.push(NodeConfig {
            id: k as NodeId + 1,
            role: Role::new(s.kind, NodeClass::Stationary),
            placement: Placement::Fixed { x: s.x, y: s.y },
            antenna_gain: None,
            tx_power: None,
            traffic: s.traffic.map(|(p, payload, off)| TrafficConfig {
                period: SimTime::from_millis(p),
                payload,
                offset: SimTime::from_millis(off),
                dst: Some(1),
            }),
            beacon_order: if s.kind.can_parent() { s.bo } else { 15 },
        });
    }
    if let Some(m) = &n.mobile {
        cfg.net.handover_mode = m.mode;
        cfg.net.tpc_enabled = m.tpc;
        cfg.net.end_device_sleep = m.sleep;
        let traj = Trajectory::new(vec![
            Waypoint { x: m.from, y: 0.0, at: SimTime::ZERO },
            Waypoint { x: m.to, y: 0.0, at: SimTime::from_secs(1) },
        ])
        .unwrap();
        cfg.nodes.push(NodeConfig {
            id: 10,
            role: Role::new(RoleKind::EndDevice, NodeClass::Mobile),
            placement: Placement::Moving(traj),
            antenna_gain: None,
            tx_power: None,
            traffic: Some(TrafficConfig {
                period: SimTime::from_millis(m.period_ms),
                payload: 20,
                offset: SimTime::from_millis(m.period_ms / 2),
                dst: None,
            }),
            beacon_order: 15,
        });
    }
    cfg
}

/// Audibility from the raw link budget, independent of the simulator's code.
fn audible(cfg: &SimConfig, from: NodeId, to: NodeId, power: f64, t: SimTime) -> bool {
    let node = |id: NodeId| cfg.nodes.iter().find(|n| n.id == id).unwrap();
    let (a, b) = (node(from).placement.position_at(t), node(to).placement.position_at(t));
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt().max(0.1);
    let rx = power - (cfg.phy.pl0 + 10.0 * cfg.phy.path_loss_exponent * d.log10());
    rx > cfg.phy.rx_sensitivity
}

fn overlaps(a: &TxRecord, b: &TxRecord) -> bool {
    a.start < b.end && b.start < a.end
}

fn check(cfg: &SimConfig, report: &SimReport) -> Result<(), TestCaseError> {
    let log: &ChannelLog = report.channel.as_ref().unwrap();
    let tx: BTreeMap<u64, &TxRecord> = log.transmissions.iter().map(|t| (t.id, t)).collect();

    // no capture: a decoded frame had the receiver's ear to itself
    for r in &log.receptions {
        let t = tx[&r.tx];
        prop_assert!(audible(cfg, t.src, r.node, t.frame.tx_power, t.start));
        for u in log.transmissions.iter().filter(|u| u.id != t.id && overlaps(u, t)) {
            prop_assert!(u.src != r.node, "receiver {} transmitted during frame {}", r.node, t.id);
            prop_assert!(
                u.src == t.src || !audible(cfg, u.src, r.node, u.frame.tx_power, u.start),
                "frame {} decoded at {} despite overlapping audible frame {}",
                t.id,
                r.node,
                u.id
            );
        }
    }

    // beacons and acks skip carrier sense, everything else uses it
    for t in &log.transmissions {
        prop_assert_eq!(t.via_csma, !t.frame.kind.csma_exempt(), "{:?}", t.frame.kind);
    }

    // one acknowledgment per accepted unicast, after the turnaround
    let turnaround = cfg.csma.turnaround;
    let skipped: Vec<(NodeId, SimTime)> = report
        .trace
        .iter()
        .filter(|r| r.event == EventLabel::TxSkipped && r.frame_kind == Some(FrameKind::Ack))
        .map(|r| (r.node, r.time))
        .collect();
    let mut expected_acks = 0;
    for r in &log.receptions {
        let f = &tx[&r.tx].frame;
        if f.dst != r.node || !f.wants_ack() {
            continue;
        }
        let at = r.time + turnaround;
        let acks = log
            .transmissions
            .iter()
            .filter(|a| {
                a.frame.kind == FrameKind::Ack
                    && a.src == r.node
                    && a.start == at
                    && a.frame.seq == f.seq
                    && a.frame.dst == f.src
            })
            .count();
        if skipped.contains(&(r.node, at)) {
            prop_assert_eq!(acks, 0);
        } else if at >= report.duration {
            prop_assert!(acks <= 1);
            expected_acks += acks;
        } else {
            prop_assert_eq!(acks, 1, "unicast frame {} at node {}", r.tx, r.node);
            expected_acks += 1;
        }
    }
    let sent_acks = log.transmissions.iter().filter(|t| t.frame.kind == FrameKind::Ack).count();
    prop_assert_eq!(sent_acks, expected_acks);

    // a delivered data frame was acknowledged by its destination
    for d in report.trace.iter().filter(|r| {
        r.event == EventLabel::CsmaDone && r.frame_kind == Some(FrameKind::Data) && r.outcome.as_deref() == Some("DELIVERED")
    }) {
        let ok = log.receptions.iter().any(|r| {
            let f = &tx[&r.tx].frame;
            r.node == d.node && r.time == d.time && f.kind == FrameKind::Ack && Some(f.seq) == d.seq && Some(f.src) == d.dst
        });
        prop_assert!(ok, "delivered data without ack at node {} t={}", d.node, d.time);
    }

    // random backoff never exceeds (2^max_be - 1) unit periods
    let bound = ((1u64 << cfg.csma.mac_max_be) - 1) * cfg.csma.unit_backoff.as_micros();
    prop_assert!(bound <= 31 * 320);
    for r in report.trace.iter().filter(|r| r.event == EventLabel::Backoff) {
        let us: u64 = r.outcome.as_deref().unwrap().strip_prefix("delay_us=").unwrap().parse().unwrap();
        prop_assert!(us <= bound && us % 320 == 0, "backoff {us}");
    }

    // retries reuse the sequence number of the original attempt
    let mut open: BTreeMap<NodeId, Vec<u8>> = BTreeMap::new();
    for r in &report.trace {
        match (r.event, r.frame_kind) {
            (EventLabel::TxStart, Some(k)) if !k.csma_exempt() => open.entry(r.node).or_default().push(r.seq.unwrap()),
            (EventLabel::CsmaDone, Some(_)) => {
                let seqs = open.remove(&r.node).unwrap_or_default();
                prop_assert!(seqs.iter().all(|s| Some(*s) == r.seq), "node {} seqs {:?} vs {:?}", r.node, seqs, r.seq);
            }
            _ => {}
        }
    }

    // a sleeping radio hears nothing
    for r in &log.receptions {
        let t = tx[&r.tx];
        let at_start = log.modes.iter().filter(|m| m.node == r.node && m.time <= t.start).last();
        prop_assert_eq!(at_start.map(|m| (m.time, m.mode)), Some((t.start, RadioMode::Rx)));
        prop_assert!(!log
            .modes
            .iter()
            .any(|m| m.node == r.node && m.time >= t.start && m.time < r.time && m.mode == RadioMode::Sleep));
    }

    // every microsecond of the run is in exactly one mode
    for n in &report.nodes {
        prop_assert_eq!(n.ledger.accounted(), report.duration, "node {}", n.id);
        let sum = n.ledger.sleep_time() + n.ledger.idle_time() + n.ledger.rx_time() + n.ledger.tx_time();
        prop_assert_eq!(sum, report.duration);
    }

    // parents are always coordinators or routers
    let parents = |id: NodeId| cfg.nodes.iter().any(|n| n.id == id && n.role.kind.can_parent());
    for r in &report.trace {
        if let Some(Some(p)) = r.move_parent() {
            prop_assert!(parents(p), "parent {p}");
        }
    }
    if let Some(m) = report.mobile() {
        if let Some(p) = m.final_parent {
            prop_assert!(parents(p));
        }
        let h = m.handover.as_ref().unwrap();
        prop_assert_eq!(h.messages.len(), h.completions as usize);
        if cfg.net.handover_mode == HandoverMode::Broadcast {
            for (msgs, resp) in h.messages.iter().zip(&h.responders) {
                prop_assert_eq!(*msgs, 3 + resp);
            }
        }
        if let Some(mean) = m.ledger.mean_tx_power() {
            prop_assert!(mean <= cfg.phy.max_level() + 1e-9);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn channel_invariants_hold(n in net()) {
        let cfg = config(&n);
        let report = sim::run(cfg.clone()).unwrap();
        check(&cfg, &report)?;
    }
}

#[test]
fn hidden_terminals_collide_without_capture() {
    // two senders out of each other's range, both heard by the coordinator
    let n = Net {
        stationary: vec![
            Stationary { kind: RoleKind::Coordinator, x: 0.0, y: 0.0, bo: 15, traffic: None },
            Stationary { kind: RoleKind::Router, x: -3.0, y: 0.0, bo: 15, traffic: Some((3, 100, 0)) },
            Stationary { kind: RoleKind::Router, x: 3.0, y: 0.0, bo: 15, traffic: Some((3, 100, 0)) },
        ],
        mobile: None,
        power: 0.0,
        min_be: 0,
        max_be: 3,
        duration_ms: 500,
        seed: 7,
    };
    let cfg = config(&n);
    assert!(!audible(&cfg, 2, 3, 0.0, SimTime::ZERO));
    let report = sim::run(cfg.clone()).unwrap();
    check(&cfg, &report).unwrap();
    assert!(report.node(1).unwrap().counters.collisions > 0);
}
