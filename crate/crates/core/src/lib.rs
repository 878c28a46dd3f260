//! Packet-level discrete-event simulator of 802.3ad link bonding between
//! routers, with LACP, MII monitoring, a link-state routing fallback and QoS
//! measurement of voice, video and bulk-data services.

pub mod bonding;
pub mod engine;
pub mod harness;
pub mod lacp;
pub mod metrics;
pub mod netmodel;
pub mod routing;
pub mod sim;
pub mod traffic;

pub use engine::{SimRng, SimTime};
pub use sim::{Sim, SimConfig};
