//! Flat trace rows emitted by a run.

use alloc::string::String;
use core::fmt;

use crate::engine::SimTime;
use crate::mac::{FrameKind, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventLabel {
    TxStart,
    /// A CSMA-exempt transmission could not start because the radio was busy.
    TxSkipped,
    Rx,
    Collision,
    Backoff,
    CcaBusy,
    AckTimeout,
    CsmaDone,
    DataGen,
    Move,
    HandoverStart,
    HandoverDone,
    TpcSet,
}

impl EventLabel {
    pub const ALL: [EventLabel; 13] = [
        EventLabel::TxStart,
        EventLabel::TxSkipped,
        EventLabel::Rx,
        EventLabel::Collision,
        EventLabel::Backoff,
        EventLabel::CcaBusy,
        EventLabel::AckTimeout,
        EventLabel::CsmaDone,
        EventLabel::DataGen,
        EventLabel::Move,
        EventLabel::HandoverStart,
        EventLabel::HandoverDone,
        EventLabel::TpcSet,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            EventLabel::TxStart => "TX_START",
            EventLabel::TxSkipped => "TX_SKIPPED",
            EventLabel::Rx => "RX",
            EventLabel::Collision => "COLLISION",
            EventLabel::Backoff => "BACKOFF",
            EventLabel::CcaBusy => "CCA_BUSY",
            EventLabel::AckTimeout => "ACK_TIMEOUT",
            EventLabel::CsmaDone => "CSMA_DONE",
            EventLabel::DataGen => "DATA_GEN",
            EventLabel::Move => "MOVE",
            EventLabel::HandoverStart => "HANDOVER_START",
            EventLabel::HandoverDone => "HANDOVER_DONE",
            EventLabel::TpcSet => "TPC_SET",
        }
    }

    pub fn parse(s: &str) -> Option<EventLabel> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One trace row. Fields that do not apply to an event are `None`.
///
/// `outcome` conventions by event:
/// - `BACKOFF`: `delay_us=<n>`
/// - `CSMA_DONE`: `DELIVERED`, `NO_ACK` or `CHANNEL_ACCESS_FAILURE`
/// - `DATA_GEN`: `QUEUED` or `OUTAGE`
/// - `MOVE`: `parent=<id>` or `parent=none`
/// - `HANDOVER_START`: `<mode>;<reason>`
/// - `HANDOVER_DONE`: `parent=<id>;latency_us=<n>;msgs=<n>` or `parent=none`
/// - `RX`: `dup` for a retransmission already delivered
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub event: EventLabel,
    pub frame_kind: Option<FrameKind>,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub seq: Option<u8>,
    pub power_dbm: Option<f64>,
    pub rx_power_dbm: Option<f64>,
    pub lq: Option<u8>,
    pub pos_x_m: Option<f64>,
    pub outcome: Option<String>,
}

impl TraceRecord {
    pub fn new(time: SimTime, node: NodeId, event: EventLabel) -> Self {
        TraceRecord {
            time,
            node,
            event,
            frame_kind: None,
            src: None,
            dst: None,
            seq: None,
            power_dbm: None,
            rx_power_dbm: None,
            lq: None,
            pos_x_m: None,
            outcome: None,
        }
    }

    /// Parent id carried by a `MOVE` row, `Some(None)` for an orphan.
    pub fn move_parent(&self) -> Option<Option<NodeId>> {
        let rest = self.outcome.as_deref()?.strip_prefix("parent=")?;
        let head = rest.split(';').next().unwrap_or(rest);
        if head == "none" {
            Some(None)
        } else {
            head.parse().ok().map(Some)
        }
    }
}
