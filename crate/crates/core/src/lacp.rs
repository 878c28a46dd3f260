//! Minimal LACP: identifiers, periodic LACPDU exchange per member port and the
//! SELECTED/UNSELECTED decision that gates which ports a bond may use.

use log::debug;

use crate::engine::{EventHandle, SimTime};
use crate::netmodel::{Control, Envelope, Frame, FrameKind, MacAddress, NetAddress, PortId};
use crate::sim::{Event, Sim};

/// On-wire size of every LACPDU.
pub const LACPDU_SIZE: u32 = 124;
pub const DEFAULT_SYSTEM_PRIORITY: u16 = 0x8000;
pub const DEFAULT_PORT_PRIORITY: u16 = 0x8000;

/// Ordered by (priority, mac); lower wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SystemId {
    pub priority: u16,
    pub mac: MacAddress,
}

/// Ordered by (priority, number).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortIdent {
    pub priority: u16,
    pub number: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AggKey(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LagId {
    pub local_system: SystemId,
    pub local_key: AggKey,
    pub partner_system: SystemId,
    pub partner_key: AggKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActorState {
    pub activity: bool,
    pub sync: bool,
    pub collecting: bool,
    pub distributing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartnerInfo {
    pub system: SystemId,
    pub key: AggKey,
    pub port: PortIdent,
    pub state: ActorState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lacpdu {
    pub actor_system: SystemId,
    pub actor_key: AggKey,
    pub actor_port: PortIdent,
    pub actor_state: ActorState,
    /// The sender's current view of its partner, if any.
    pub partner: Option<PartnerInfo>,
}

impl Lacpdu {
    pub fn is_malformed(&self) -> bool {
        self.actor_system.mac.is_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LacpConfig {
    pub enabled: bool,
    pub tx_interval: SimTime,
    /// Partner info expires after this many silent intervals.
    pub expiry_intervals: u64,
}

impl Default for LacpConfig {
    fn default() -> Self {
        LacpConfig {
            enabled: true,
            tx_interval: SimTime::from_secs(1),
            expiry_intervals: 3,
        }
    }
}

/// Per-member LACP state kept by the bond.
#[derive(Debug, Clone)]
pub struct LacpPort {
    pub ident: PortIdent,
    pub partner: Option<PartnerInfo>,
    pub selected: bool,
    pub(crate) expiry: Option<EventHandle>,
    pub tx_pdus: u64,
    pub rx_pdus: u64,
    pub malformed: u64,
}

impl LacpPort {
    pub fn new(ident: PortIdent) -> Self {
        LacpPort {
            ident,
            partner: None,
            selected: false,
            expiry: None,
            tx_pdus: 0,
            rx_pdus: 0,
            malformed: 0,
        }
    }
}

/// One member's view as input to the selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub ident: PortIdent,
    pub speed_bps: u64,
    pub lag: Option<LagId>,
}

/// Decides SELECTED for each candidate. Ports aggregate iff their LagId and
/// speed are equal; the group with the most members wins, ties going to the
/// group holding the lowest PortIdent. Ports without partner info are never
/// selected.
pub fn select(candidates: &[Candidate]) -> Vec<bool> {
    let mut best: Option<((LagId, u64), usize, PortIdent)> = None;
    for c in candidates {
        let Some(lag) = c.lag else { continue };
        let group = (lag, c.speed_bps);
        let members = candidates
            .iter()
            .filter(|o| o.lag == Some(lag) && o.speed_bps == c.speed_bps);
        let size = members.clone().count();
        let lowest = members.map(|o| o.ident).min().expect("c is a member");
        let better = match &best {
            None => true,
            Some((_, bsize, bident)) => size > *bsize || (size == *bsize && lowest < *bident),
        };
        if better {
            best = Some((group, size, lowest));
        }
    }
    candidates
        .iter()
        .map(|c| match (&best, c.lag) {
            (Some(((lag, speed), _, _)), Some(l)) => l == *lag && c.speed_bps == *speed,
            _ => false,
        })
        .collect()
}

impl Sim {
    pub fn system_id(&self, node: crate::netmodel::NodeId) -> SystemId {
        SystemId {
            priority: DEFAULT_SYSTEM_PRIORITY,
            mac: self.net.nodes[node.idx()].base_mac,
        }
    }

    fn member_slot(&self, p: PortId) -> Option<(usize, usize)> {
        let b = self.net.ports[p.idx()].bond?;
        let i = self.bonds[b.idx()].members.iter().position(|m| *m == p)?;
        Some((b.idx(), i))
    }

    /// Periodic LACPDU transmission; re-arms itself every tx_interval.
    pub(crate) fn lacp_periodic_tx(&mut self, p: PortId) {
        if !self.lacp_cfg.enabled {
            return;
        }
        self.sched.after(self.lacp_cfg.tx_interval, Event::LacpTx(p));
        if !self.net.ports[p.idx()].carrier {
            return;
        }
        let Some((b, i)) = self.member_slot(p) else {
            return;
        };
        let bond = &self.bonds[b];
        let lp = &bond.lacp[i];
        let pdu = Lacpdu {
            actor_system: self.system_id(bond.node),
            actor_key: bond.key,
            actor_port: lp.ident,
            actor_state: ActorState {
                activity: true,
                sync: lp.selected,
                collecting: lp.selected,
                distributing: lp.selected,
            },
            partner: lp.partner,
        };
        self.send_lacpdu(p, pdu);
        self.bonds[b].lacp[i].tx_pdus += 1;
    }

    pub(crate) fn send_lacpdu(&mut self, p: PortId, pdu: Lacpdu) {
        let port = &self.net.ports[p.idx()];
        self.next_frame_id += 1;
        let frame = Frame {
            id: self.next_frame_id,
            src_mac: port.mac,
            dst_mac: MacAddress::SLOW_PROTOCOLS,
            src_addr: NetAddress::ALL_ROUTERS,
            dst_addr: NetAddress::ALL_ROUTERS,
            size_bytes: LACPDU_SIZE,
            kind: FrameKind::Lacpdu,
            conversation: 0,
            seq: 0,
            tag: 0,
            sent_at: self.now(),
            received_at: None,
            control: Some(Box::new(Control::Lacpdu(pdu))),
        };
        self.metrics.record_sent(&frame);
        self.transmit(p, Envelope::new(frame));
    }

    pub(crate) fn on_lacpdu(&mut self, p: PortId, frame: &Frame) {
        let Some(Control::Lacpdu(pdu)) = frame.control.as_deref() else {
            return;
        };
        self.lacp_receive(p, *pdu);
    }

    /// Applies a received LACPDU to member port `p`.
    pub fn lacp_receive(&mut self, p: PortId, pdu: Lacpdu) {
        let Some((b, i)) = self.member_slot(p) else {
            return;
        };
        if pdu.is_malformed() {
            self.bonds[b].lacp[i].malformed += 1;
            debug!("malformed LACPDU on port {:?} ignored", p);
            return;
        }
        let expiry_at = self.now()
            + SimTime(self.lacp_cfg.tx_interval.as_micros() * self.lacp_cfg.expiry_intervals + 1);
        let handle = self
            .sched
            .schedule(expiry_at, Event::LacpExpire(p))
            .expect("expiry is in the future");
        let lp = &mut self.bonds[b].lacp[i];
        lp.rx_pdus += 1;
        if let Some(old) = lp.expiry.replace(handle) {
            self.sched.cancel(old);
        }
        lp.partner = Some(PartnerInfo {
            system: pdu.actor_system,
            key: pdu.actor_key,
            port: pdu.actor_port,
            state: pdu.actor_state,
        });
        self.lacp_reselect(crate::bonding::BondId(b as u32));
    }

    pub(crate) fn lacp_expire(&mut self, p: PortId) {
        let Some((b, i)) = self.member_slot(p) else {
            return;
        };
        let lp = &mut self.bonds[b].lacp[i];
        lp.expiry = None;
        if lp.partner.take().is_some() {
            debug!("partner info expired on port {:?}", p);
            self.lacp_reselect(crate::bonding::BondId(b as u32));
        }
    }

    /// Recomputes SELECTED for every member and refreshes the active set if it changed.
    pub(crate) fn lacp_reselect(&mut self, b: crate::bonding::BondId) {
        let bond = &self.bonds[b.idx()];
        let local = self.system_id(bond.node);
        let candidates: Vec<Candidate> = bond
            .members
            .iter()
            .zip(&bond.lacp)
            .map(|(p, lp)| Candidate {
                ident: lp.ident,
                speed_bps: self.net.ports[p.idx()].speed_bps,
                lag: lp.partner.map(|pi| LagId {
                    local_system: local,
                    local_key: bond.key,
                    partner_system: pi.system,
                    partner_key: pi.key,
                }),
            })
            .collect();
        let sel = select(&candidates);
        let bond = &mut self.bonds[b.idx()];
        let mut changed = false;
        for (lp, s) in bond.lacp.iter_mut().zip(sel) {
            changed |= lp.selected != s;
            lp.selected = s;
        }
        if changed {
            self.refresh_active(b);
        }
    }

    /// SELECTED members with carrier UP, in PortIdent order.
    pub fn selected_ports(&self, b: crate::bonding::BondId) -> Vec<PortId> {
        let bond = &self.bonds[b.idx()];
        bond.members
            .iter()
            .zip(&bond.lacp)
            .filter(|(p, lp)| lp.selected && self.net.ports[p.idx()].carrier)
            .map(|(p, _)| *p)
            .collect()
    }

    /// The LagId a member port currently computes, if it has a partner.
    pub fn lag_id(&self, p: PortId) -> Option<LagId> {
        let (b, i) = self.member_slot(p)?;
        let bond = &self.bonds[b];
        let pi = bond.lacp[i].partner?;
        Some(LagId {
            local_system: self.system_id(bond.node),
            local_key: bond.key,
            partner_system: pi.system,
            partner_key: pi.key,
        })
    }
}
