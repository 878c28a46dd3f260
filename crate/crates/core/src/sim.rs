//! The simulation world: one scheduler, one topology, and the per-module state
//! that event handlers mutate.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::bonding::{Bond, BondId};
use crate::engine::{EngineError, Scheduler, SimRng, SimTime};
use crate::lacp::LacpConfig;
use crate::metrics::Metrics;
use crate::netmodel::{Frame, IfaceId, LinkId, MacAddress, Network, NodeId, PortId};
use crate::routing::{Routing, RoutingConfig};
use crate::traffic::{FlowEvent, FlowId, Traffic};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub lacp: LacpConfig,
    pub routing: RoutingConfig,
    /// Keep a copy of every originated frame and compare on delivery.
    pub audit_frames: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            lacp: LacpConfig::default(),
            routing: RoutingConfig::default(),
            audit_frames: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    TxDone(PortId),
    Arrive { link: LinkId, key: u64, to: PortId },
    SetLink { link: LinkId, up: bool },
    MiiPoll(BondId),
    BondRelease { bond: BondId, key: MacAddress },
    LacpTx(PortId),
    LacpExpire(PortId),
    HelloTimer { router: NodeId, iface: IfaceId },
    NeighborDead { router: NodeId, iface: IfaceId },
    Spf(NodeId),
    Flow { flow: FlowId, ev: FlowEvent },
}

/// Invariant violations accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Violations {
    pub ordering: u64,
    pub duplicate: u64,
    pub modified: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.ordering + self.duplicate + self.modified
    }
}

pub struct Sim {
    pub(crate) sched: Scheduler<Event>,
    pub(crate) rng: SimRng,
    pub net: Network,
    pub bonds: Vec<Bond>,
    pub lacp_cfg: LacpConfig,
    pub routing: Routing,
    pub traffic: Traffic,
    pub metrics: Metrics,
    pub violations: Violations,
    pub(crate) audit: Option<HashMap<u64, Frame>>,
    pub(crate) next_frame_id: u64,
    started: bool,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Self {
        Sim {
            sched: Scheduler::new(),
            rng: SimRng::new(cfg.seed),
            net: Network::default(),
            bonds: Vec::new(),
            lacp_cfg: cfg.lacp,
            routing: Routing::new(cfg.routing),
            traffic: Traffic::default(),
            metrics: Metrics::default(),
            violations: Violations::default(),
            audit: cfg.audit_frames.then(HashMap::new),
            next_frame_id: 0,
            started: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn seed(&self) -> u64 {
        self.rng.seed()
    }

    pub fn events_delivered(&self) -> u64 {
        self.sched.delivered()
    }

    /// Arms the periodic machinery (MII polls, LACPDUs, hellos). Idempotent.
    pub fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for b in 0..self.bonds.len() {
            let id = BondId(b as u32);
            self.sched.after(SimTime::ZERO, Event::MiiPoll(id));
            for &p in &self.bonds[b].members {
                self.sched.after(SimTime::ZERO, Event::LacpTx(p));
            }
        }
        self.start_routing();
    }

    /// Delivers every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) -> Result<usize, EngineError> {
        self.start();
        if t < self.now() {
            return Err(EngineError::RewindRequested {
                target: t,
                now: self.now(),
            });
        }
        let mut fired = 0;
        while let Some(ev) = self.sched.pop_due(t) {
            let payload = ev.payload;
            let res = catch_unwind(AssertUnwindSafe(|| self.dispatch(payload)));
            if let Err(p) = res {
                let reason = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "handler panicked".into());
                return Err(EngineError::Handler {
                    seq: ev.seq,
                    fire_at: ev.fire_at,
                    event: format!("{payload:?}"),
                    reason,
                });
            }
            fired += 1;
        }
        self.sched.advance_to(t)?;
        Ok(fired)
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::TxDone(p) => self.on_tx_done(p),
            Event::Arrive { link, key, to } => self.on_arrive(link, key, to),
            Event::SetLink { link, up } => self.apply_link_state(link, up),
            Event::MiiPoll(b) => {
                self.mii_poll(b);
                let interval = self.bonds[b.idx()].mii.poll_interval();
                self.sched.after(interval, Event::MiiPoll(b));
            }
            Event::BondRelease { bond, key } => self.bond_release(bond, key),
            Event::LacpTx(p) => self.lacp_periodic_tx(p),
            Event::LacpExpire(p) => self.lacp_expire(p),
            Event::HelloTimer { router, iface } => self.hello_tick(router, iface),
            Event::NeighborDead { router, iface } => self.neighbor_dead(router, iface),
            Event::Spf(r) => self.run_spf(r),
            Event::Flow { flow, ev } => self.on_flow_event(flow, ev),
        }
    }

    /// Sum of ordering/duplicate counters across bonds plus the frame audit.
    pub fn total_violations(&self) -> Violations {
        let mut v = self.violations;
        for b in &self.bonds {
            v.ordering += b.ledger.ordering_violations;
            v.duplicate += b.ledger.duplicate_violations;
        }
        v
    }
}
