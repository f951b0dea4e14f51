//! Simplified 802.15.4 MAC: frame model, CSMA/CA parameters and the
//! per-frame unslotted CSMA/CA state machine.

use core::fmt;

use thiserror::Error;

use crate::engine::SimTime;
use crate::phy::{frame_airtime, Band};

pub type NodeId = u16;

/// Destination address meaning "every listener".
pub const BROADCAST: NodeId = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Beacon,
    Data,
    Ack,
    ProbeRequest,
    ProbeResponse,
    AssocRequest,
    AssocResponse,
    Disassoc,
}

impl FrameKind {
    pub const fn name(self) -> &'static str {
        match self {
            FrameKind::Beacon => "BEACON",
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
            FrameKind::ProbeRequest => "PROBE_REQ",
            FrameKind::ProbeResponse => "PROBE_RSP",
            FrameKind::AssocRequest => "ASSOC_REQ",
            FrameKind::AssocResponse => "ASSOC_RSP",
            FrameKind::Disassoc => "DISASSOC",
        }
    }

    pub fn parse(s: &str) -> Option<FrameKind> {
        use FrameKind::*;
        [Beacon, Data, Ack, ProbeRequest, ProbeResponse, AssocRequest, AssocResponse, Disassoc]
            .into_iter()
            .find(|k| k.name() == s)
    }

    /// Frames sent without channel sensing.
    pub const fn csma_exempt(self) -> bool {
        matches!(self, FrameKind::Beacon | FrameKind::Ack)
    }

    const fn is_command(self) -> bool {
        matches!(
            self,
            FrameKind::ProbeRequest
                | FrameKind::ProbeResponse
                | FrameKind::AssocRequest
                | FrameKind::AssocResponse
                | FrameKind::Disassoc
        )
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("ack frames must carry an empty payload")]
    AckWithPayload,
    #[error("ack frames must be unicast")]
    BroadcastAck,
    #[error("{0} frames must be unicast")]
    BroadcastNotAllowed(FrameKind),
}

/// Simplified MAC frame. Only header fields the model needs are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u8,
    pub src: NodeId,
    pub dst: NodeId,
    pub pan_id: u16,
    pub payload_len: u32,
    /// Power the frame is (or was) sent at, dBm.
    pub tx_power: f64,
    /// LQ carried by a probe response: what the responder measured on the probe.
    pub reported_lq: Option<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, seq: u8, src: NodeId, dst: NodeId, payload_len: u32, tx_power: f64) -> Self {
        Frame { kind, seq, src, dst, pan_id: 0x1A2B, payload_len, tx_power, reported_lq: None }
    }

    pub fn ack_for(frame: &Frame, tx_power: f64) -> Self {
        Frame { pan_id: frame.pan_id, ..Frame::new(FrameKind::Ack, frame.seq, frame.dst, frame.src, 0, tx_power) }
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }

    /// Unicast frames other than acks request an acknowledgment.
    pub fn wants_ack(&self) -> bool {
        !self.is_broadcast() && self.kind != FrameKind::Ack
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        match self.kind {
            FrameKind::Ack if self.payload_len != 0 => Err(FrameError::AckWithPayload),
            FrameKind::Ack if self.is_broadcast() => Err(FrameError::BroadcastAck),
            FrameKind::Beacon | FrameKind::ProbeRequest | FrameKind::Ack => Ok(()),
            k if self.is_broadcast() => Err(FrameError::BroadcastNotAllowed(k)),
            _ => Ok(()),
        }
    }

    /// MAC header + payload + FCS with short addressing and PAN id compression.
    pub fn mac_bytes(&self) -> u32 {
        let header = match self.kind {
            // frame control, sequence, FCS
            FrameKind::Ack => return 5,
            // frame control, seq, src PAN, src addr, superframe spec, GTS, pending
            FrameKind::Beacon => 11,
            // frame control, seq, dst PAN, dst addr, src addr
            _ => 9,
        };
        let command_id = u32::from(self.kind.is_command());
        header + command_id + self.payload_len + 2
    }

    pub fn ppdu_bytes(&self, phy_overhead: u32) -> u32 {
        self.mac_bytes() + phy_overhead
    }

    pub fn airtime(&self, phy_overhead: u32, band: Band) -> SimTime {
        frame_airtime(self.ppdu_bytes(phy_overhead), band)
    }
}

/// Unslotted CSMA/CA constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsmaParams {
    pub mac_min_be: u8,
    pub mac_max_be: u8,
    pub max_csma_backoffs: u8,
    pub max_frame_retries: u8,
    pub unit_backoff: SimTime,
    pub ack_wait: SimTime,
    /// RX-to-TX turnaround before an acknowledgment.
    pub turnaround: SimTime,
}

impl Default for CsmaParams {
    fn default() -> Self {
        CsmaParams {
            mac_min_be: 3,
            mac_max_be: 5,
            max_csma_backoffs: 4,
            max_frame_retries: 3,
            unit_backoff: SimTime::from_micros(320),
            ack_wait: SimTime::from_micros(864),
            turnaround: SimTime::from_micros(192),
        }
    }
}

impl CsmaParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.mac_min_be > self.mac_max_be {
            return Err("mac_min_be must not exceed mac_max_be");
        }
        if self.mac_max_be > 8 {
            return Err("mac_max_be must be at most 8");
        }
        if self.unit_backoff == SimTime::ZERO || self.ack_wait == SimTime::ZERO {
            return Err("durations must be positive");
        }
        Ok(())
    }

    /// Longest single random backoff: `(2^max_be - 1)` unit periods.
    pub fn max_backoff(&self) -> SimTime {
        SimTime::from_micros(((1u64 << self.mac_max_be) - 1) * self.unit_backoff.as_micros())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CsmaOutcome {
    Delivered,
    NoAck,
    ChannelAccessFailure,
}

impl CsmaOutcome {
    pub const fn name(self) -> &'static str {
        match self {
            CsmaOutcome::Delivered => "DELIVERED",
            CsmaOutcome::NoAck => "NO_ACK",
            CsmaOutcome::ChannelAccessFailure => "CHANNEL_ACCESS_FAILURE",
        }
    }
}

/// What the MAC should do next for a frame in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaStep {
    /// Wait this many unit backoff periods, then sense the channel.
    Backoff { periods_range: u32 },
    Done(CsmaOutcome),
}

/// Per-frame CSMA/CA state: NB, BE and the retransmission count.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmaOp {
    pub frame: Frame,
    pub nb: u8,
    pub be: u8,
    pub retries: u8,
    pub last_tx_end: Option<SimTime>,
}

impl CsmaOp {
    pub fn new(frame: Frame, params: &CsmaParams) -> Self {
        CsmaOp { frame, nb: 0, be: params.mac_min_be, retries: 0, last_tx_end: None }
    }

    /// Draw range for the next random backoff: `2^BE` periods.
    pub fn backoff(&self) -> CsmaStep {
        CsmaStep::Backoff { periods_range: 1 << self.be }
    }

    pub fn on_cca_busy(&mut self, params: &CsmaParams) -> CsmaStep {
        self.nb += 1;
        self.be = (self.be + 1).min(params.mac_max_be);
        if self.nb > params.max_csma_backoffs {
            CsmaStep::Done(CsmaOutcome::ChannelAccessFailure)
        } else {
            self.backoff()
        }
    }

    pub fn on_ack_timeout(&mut self, params: &CsmaParams) -> CsmaStep {
        self.retries += 1;
        if self.retries > params.max_frame_retries {
            CsmaStep::Done(CsmaOutcome::NoAck)
        } else {
            self.nb = 0;
            self.be = params.mac_min_be;
            self.backoff()
        }
    }
}
