//! Deterministic discrete-event model of an IEEE 802.15.4 / ZigBee personal-area
//! network with stationary routers and a mobile end device.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. Everything a
//! run produces (trace rows, energy ledgers, handover statistics) is returned
//! as plain data; file formats and the command-line front end live in the
//! `pansim` crate.
//!
//! Layout:
//! - [`engine`]: virtual clock, event queue, per-node random streams
//! - [`phy`]: channel plan, beacon intervals, propagation, link budget, LQ
//! - [`mac`]: frames and CSMA/CA parameters
//! - [`net`]: roles, association, transmit power control
//! - [`scenario`]: node configuration, trajectories, energy ledger
//! - [`sim`]: the world that wires the above into a runnable network
//! - [`coverage`]: static range sampling and interval helpers
//! - [`trace`]: flat trace rows emitted by a run

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coverage;
pub mod engine;
pub mod mac;
pub mod net;
pub mod phy;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use engine::{Engine, EventId, RngStream, RunSummary, SimTime, Target};
pub use mac::{CsmaOutcome, CsmaParams, Frame, FrameKind, NodeId, BROADCAST};
pub use net::{HandoverMode, HandoverStats, NetParams, Role, RoleKind, NodeClass, TpcState};
pub use phy::{Band, BeaconOrder, LinkSample, PhyParams};
pub use scenario::{CurrentModel, EnergyLedger, NodeConfig, Placement, RadioMode, Trajectory};
pub use sim::{Sim, SimConfig, SimError, SimReport};
pub use trace::{EventLabel, TraceRecord};
