//! Bond virtual interface: MII carrier polling with up/down delays, the
//! destination-keyed distributor and the collector's ordering/duplicate ledger.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use log::warn;

use crate::engine::SimTime;
use crate::lacp::{AggKey, LacpPort, PortIdent, DEFAULT_PORT_PRIORITY};
use crate::netmodel::{Envelope, IfaceId, IfaceKind, MacAddress, NetAddress, NetError, NodeId, PortId, TxOutcome};
use crate::sim::{Event, Sim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BondId(pub u32);

impl BondId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiiConfig {
    pub poll_interval_ms: u64,
    pub updelay_ms: u64,
    pub downdelay_ms: u64,
}

impl Default for MiiConfig {
    fn default() -> Self {
        MiiConfig {
            poll_interval_ms: 100,
            updelay_ms: 0,
            downdelay_ms: 0,
        }
    }
}

impl MiiConfig {
    /// Clamps the poll interval to ≥ 1 ms and rounds delays up to whole polls.
    pub fn normalized(self) -> Self {
        let poll = self.poll_interval_ms.max(1);
        if self.poll_interval_ms == 0 {
            warn!("miimon poll interval 0 ms raised to 1 ms");
        }
        let round = |name: &str, d: u64| {
            let r = d.div_ceil(poll) * poll;
            if r != d {
                warn!("{name} {d} ms is not a multiple of the {poll} ms poll interval; using {r} ms");
            }
            r
        };
        MiiConfig {
            poll_interval_ms: poll,
            updelay_ms: round("updelay", self.updelay_ms),
            downdelay_ms: round("downdelay", self.downdelay_ms),
        }
    }

    pub fn poll_interval(&self) -> SimTime {
        SimTime::from_millis(self.poll_interval_ms)
    }

    fn polls_for(&self, up: bool) -> u64 {
        let d = if up { self.updelay_ms } else { self.downdelay_ms };
        d.div_ceil(self.poll_interval_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BondPolicy {
    #[default]
    DestMacModN,
    RoundRobin,
}

/// Index into the active list chosen for a frame.
pub fn select_index(policy: BondPolicy, dst_mac: MacAddress, active_len: usize, rr_counter: u64) -> usize {
    match policy {
        BondPolicy::DestMacModN => dst_mac.last_octet() as usize % active_len,
        BondPolicy::RoundRobin => (rr_counter % active_len as u64) as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiiMember {
    pub up: bool,
    /// Target state and polls left before it is committed.
    pending: Option<(bool, u64)>,
}

/// Assertion-only record of what the collector has passed upward.
#[derive(Debug, Clone, Default)]
pub struct ConversationLedger {
    last: HashMap<(Option<BondId>, u32), u64>,
    delivered: HashSet<(u64, u64)>,
    pub ordering_violations: u64,
    pub duplicate_violations: u64,
}

impl ConversationLedger {
    /// Records one collected frame. `order` is the distributor stamp when present,
    /// else the frame's sequence number.
    pub fn observe(&mut self, origin: Option<BondId>, conversation: u32, frame_id: u64, order: u64) {
        let key = (origin, conversation);
        match self.last.get_mut(&key) {
            Some(last) => {
                if order < *last {
                    self.ordering_violations += 1;
                } else {
                    *last = order;
                }
            }
            None => {
                self.last.insert(key, order);
            }
        }
        if !self.delivered.insert((frame_id, order)) {
            self.duplicate_violations += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailoverEvent {
    pub at: SimTime,
    pub removed: Vec<PortId>,
    pub added: Vec<PortId>,
    pub active_after: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BondCounters {
    pub tx_frames: u64,
    pub rx_frames: u64,
    pub tx_dropped_down: u64,
    pub held_frames: u64,
}

#[derive(Debug, Clone, Copy)]
struct LastTx {
    port: PortId,
    arrival: SimTime,
}

#[derive(Debug)]
pub struct Bond {
    pub id: BondId,
    pub node: NodeId,
    pub iface: IfaceId,
    pub mac: MacAddress,
    pub addr: NetAddress,
    pub key: AggKey,
    /// Members in PortIdent order.
    pub members: Vec<PortId>,
    pub lacp: Vec<LacpPort>,
    pub mii: MiiConfig,
    pub mii_state: Vec<MiiMember>,
    pub policy: BondPolicy,
    pub active: Vec<PortId>,
    rr_counter: u64,
    last_tx: HashMap<MacAddress, LastTx>,
    pub(crate) holds: BTreeMap<MacAddress, VecDeque<Envelope>>,
    stamps: HashMap<u32, u64>,
    pub ledger: ConversationLedger,
    pub counters: BondCounters,
    pub failovers: Vec<FailoverEvent>,
}

impl Sim {
    /// Aggregates `ports` (all on `node`) into one bond interface with address `addr`.
    pub fn add_bond(
        &mut self,
        node: NodeId,
        ports: &[PortId],
        addr: NetAddress,
        mii: MiiConfig,
        policy: BondPolicy,
        passive: bool,
    ) -> Result<BondId, NetError> {
        for &p in ports {
            let port = &self.net.ports[p.idx()];
            if port.iface.is_some() || port.bond.is_some() || port.node != node {
                return Err(NetError::PortClaimed(p));
            }
        }
        if ports.len() == 1 {
            warn!(
                "bond on {} has a single member and behaves as a plain link",
                self.net.nodes[node.idx()].name
            );
        }
        let id = BondId(self.bonds.len() as u32);
        let mac = self.net.next_mac();
        let iface = self.register_iface(node, addr, mac, IfaceKind::Bond(id), passive)?;
        let mut members: Vec<(PortIdent, PortId)> = ports
            .iter()
            .map(|&p| {
                (
                    PortIdent {
                        priority: DEFAULT_PORT_PRIORITY,
                        number: self.net.ports[p.idx()].index as u16 + 1,
                    },
                    p,
                )
            })
            .collect();
        members.sort();
        for &(_, p) in &members {
            self.net.ports[p.idx()].bond = Some(id);
        }
        let mii = mii.normalized();
        let mii_state = members
            .iter()
            .map(|_| MiiMember {
                up: false,
                pending: None,
            })
            .collect();
        self.bonds.push(Bond {
            id,
            node,
            iface,
            mac,
            addr,
            key: AggKey(id.0 as u16 + 1),
            members: members.iter().map(|m| m.1).collect(),
            lacp: members.iter().map(|m| LacpPort::new(m.0)).collect(),
            mii,
            mii_state,
            policy,
            active: Vec::new(),
            rr_counter: 0,
            last_tx: HashMap::new(),
            holds: BTreeMap::new(),
            stamps: HashMap::new(),
            ledger: ConversationLedger::default(),
            counters: BondCounters::default(),
            failovers: Vec::new(),
        });
        Ok(id)
    }

    pub fn bond_of_iface(&self, iface: IfaceId) -> Option<BondId> {
        match self.net.ifaces[iface.idx()].kind {
            IfaceKind::Bond(b) => Some(b),
            IfaceKind::Port(_) => None,
        }
    }

    /// One MII poll: reads member carriers and commits changes whose delay has elapsed.
    pub fn mii_poll(&mut self, b: BondId) -> Vec<(PortId, bool)> {
        let now = self.now();
        let bond = &mut self.bonds[b.idx()];
        let mut transitions = Vec::new();
        for (i, &p) in bond.members.iter().enumerate() {
            let reading = self.net.ports[p.idx()].polled_carrier(now);
            let st = &mut bond.mii_state[i];
            if reading == st.up {
                st.pending = None;
                continue;
            }
            let remaining = match st.pending {
                Some((target, n)) if target == reading => n.saturating_sub(1),
                _ => bond.mii.polls_for(reading),
            };
            if remaining == 0 {
                st.up = reading;
                st.pending = None;
                transitions.push((p, reading));
            } else {
                st.pending = Some((reading, remaining));
            }
        }
        if !transitions.is_empty() {
            self.refresh_active(b);
        }
        transitions
    }

    /// Recomputes the active list: MII-up and LACP-selected members, PortIdent order.
    pub(crate) fn refresh_active(&mut self, b: BondId) {
        let now = self.now();
        let bond = &mut self.bonds[b.idx()];
        let active: Vec<PortId> = bond
            .members
            .iter()
            .enumerate()
            .filter(|(i, _)| bond.mii_state[*i].up && bond.lacp[*i].selected)
            .map(|(_, p)| *p)
            .collect();
        if active == bond.active {
            return;
        }
        let removed = bond.active.iter().filter(|p| !active.contains(p)).copied().collect();
        let added = active.iter().filter(|p| !bond.active.contains(p)).copied().collect();
        let was_up = !bond.active.is_empty();
        let is_up = !active.is_empty();
        bond.failovers.push(FailoverEvent {
            at: now,
            removed,
            added,
            active_after: active.len(),
        });
        bond.active = active;
        let iface = bond.iface;
        if !is_up {
            let holds = std::mem::take(&mut bond.holds);
            for env in holds.into_values().flatten() {
                self.bonds[b.idx()].counters.tx_dropped_down += 1;
                self.record_drop(&env, crate::netmodel::DropReason::LinkDown);
            }
        }
        if was_up != is_up {
            self.on_iface_state_change(iface, is_up);
        }
    }

    /// Distributor entry point for frames routed out of the bond interface.
    pub(crate) fn bond_transmit(&mut self, b: BondId, env: Envelope) {
        let now = self.now();
        let bond = &mut self.bonds[b.idx()];
        if bond.active.is_empty() {
            bond.counters.tx_dropped_down += 1;
            self.record_drop(&env, crate::netmodel::DropReason::LinkDown);
            return;
        }
        if bond.policy == BondPolicy::RoundRobin {
            let i = select_index(bond.policy, env.frame.dst_mac, bond.active.len(), bond.rr_counter);
            bond.rr_counter += 1;
            let port = bond.active[i];
            self.distribute(b, port, env);
            return;
        }
        let key = env.frame.dst_mac;
        if let Some(q) = bond.holds.get_mut(&key) {
            q.push_back(env);
            bond.counters.held_frames += 1;
            return;
        }
        let i = select_index(bond.policy, key, bond.active.len(), 0);
        let port = bond.active[i];
        if let Some(prev) = bond.last_tx.get(&key).copied() {
            // Hold until the old member has drained this conversation.
            if prev.port != port && now < prev.arrival && self.net.ports[prev.port.idx()].carrier {
                bond.holds.entry(key).or_default().push_back(env);
                bond.counters.held_frames += 1;
                self.sched.schedule(prev.arrival, Event::BondRelease { bond: b, key })
                    .expect("release is in the future");
                return;
            }
        }
        self.distribute(b, port, env);
    }

    fn distribute(&mut self, b: BondId, port: PortId, mut env: Envelope) {
        let bond = &mut self.bonds[b.idx()];
        let stamp = bond.stamps.entry(env.frame.conversation).or_insert(0);
        *stamp += 1;
        env.lag_stamp = Some((b, *stamp));
        let key = env.frame.dst_mac;
        bond.counters.tx_frames += 1;
        if let TxOutcome::Queued { arrival } = self.transmit(port, env) {
            self.bonds[b.idx()].last_tx.insert(key, LastTx { port, arrival });
        }
    }

    pub(crate) fn bond_release(&mut self, b: BondId, key: MacAddress) {
        let Some(q) = self.bonds[b.idx()].holds.remove(&key) else {
            return;
        };
        for env in q {
            self.bond_transmit(b, env);
        }
    }

    /// Collector: every frame arriving on a member passes through here exactly once.
    pub(crate) fn bond_collect(&mut self, b: BondId, env: &Envelope) {
        let bond = &mut self.bonds[b.idx()];
        bond.counters.rx_frames += 1;
        let (origin, order) = match env.lag_stamp {
            Some((src, n)) => (Some(src), n),
            None => (None, env.frame.seq),
        };
        bond.ledger
            .observe(origin, env.frame.conversation, env.frame.id, order);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{FrameKind, NodeRole, PortConfig};
    use crate::sim::SimConfig;
    use std::net::Ipv4Addr;

    #[test]
    fn dest_mac_hash_picks_index() {
        let mac = MacAddress([2, 0, 0, 0, 0, 0x0a]);
        assert_eq!(select_index(BondPolicy::DestMacModN, mac, 2, 0), 0);
        let mac = MacAddress([2, 0, 0, 0, 0, 0x0b]);
        assert_eq!(select_index(BondPolicy::DestMacModN, mac, 2, 0), 1);
        assert_eq!(select_index(BondPolicy::DestMacModN, mac, 1, 0), 0);
        assert_eq!(select_index(BondPolicy::RoundRobin, mac, 1, 7), 0);
    }

    #[test]
    fn normalizing_rounds_delays_up() {
        let m = MiiConfig {
            poll_interval_ms: 100,
            updelay_ms: 150,
            downdelay_ms: 0,
        }
        .normalized();
        assert_eq!(m.updelay_ms, 200);
        assert_eq!(m.polls_for(true), 2);
        assert_eq!(m.polls_for(false), 0);
        assert_eq!(MiiConfig { poll_interval_ms: 0, ..m }.normalized().poll_interval_ms, 1);
    }

    #[test]
    fn ledger_flags_reorder_and_duplicate() {
        let mut l = ConversationLedger::default();
        for (id, s) in [(1, 1), (2, 2), (3, 3)] {
            l.observe(None, 1, id, s);
        }
        assert_eq!((l.ordering_violations, l.duplicate_violations), (0, 0));
        let mut l = ConversationLedger::default();
        l.observe(None, 1, 5, 5);
        l.observe(None, 1, 4, 4);
        assert_eq!(l.ordering_violations, 1);
        let mut l = ConversationLedger::default();
        l.observe(None, 1, 9, 1);
        l.observe(None, 1, 9, 1);
        assert_eq!((l.ordering_violations, l.duplicate_violations), (0, 1));
    }

    /// Two hosts joined by a 2-member bond on each side.
    struct Pair {
        sim: Sim,
        links: Vec<crate::netmodel::LinkId>,
        bonds: [BondId; 2],
    }

    fn bonded_pair(mii: MiiConfig, policy: BondPolicy, speeds: [u64; 2]) -> Pair {
        let mut sim = Sim::new(SimConfig::default());
        let a = sim.add_node("a", NodeRole::Host, 0);
        let b = sim.add_node("b", NodeRole::Host, 0);
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        let mut links = Vec::new();
        for s in speeds {
            let cfg = PortConfig {
                speed_bps: s,
                ..PortConfig::default()
            };
            let x = sim.add_port(a, cfg).unwrap();
            let y = sim.add_port(b, cfg).unwrap();
            links.push(sim.connect(x, y, 5).unwrap());
            pa.push(x);
            pb.push(y);
        }
        let net = Ipv4Addr::new(10, 0, 0, 0);
        let ba = sim.add_bond(a, &pa, NetAddress::new(net, 1), mii, policy, true).unwrap();
        let bb = sim.add_bond(b, &pb, NetAddress::new(net, 2), mii, policy, true).unwrap();
        Pair {
            sim,
            links,
            bonds: [ba, bb],
        }
    }

    #[test]
    fn lacp_selects_both_members_within_two_intervals() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(2)).unwrap();
        for b in p.bonds {
            assert_eq!(p.sim.selected_ports(b).len(), 2);
            assert_eq!(p.sim.bonds[b.idx()].active.len(), 2);
        }
        let m0 = p.sim.bonds[0].members.clone();
        let m1 = p.sim.bonds[1].members.clone();
        assert_eq!(p.sim.lag_id(m0[0]), p.sim.lag_id(m0[1]));
        assert_eq!(p.sim.lag_id(m1[0]), p.sim.lag_id(m1[1]));
    }

    #[test]
    fn speed_mismatch_member_unselected() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000, 10_000_000]);
        p.sim.run_until(SimTime::from_secs(3)).unwrap();
        let sel = p.sim.selected_ports(p.bonds[0]);
        assert_eq!(sel, vec![p.sim.bonds[0].members[0]]);
    }

    #[test]
    fn lacpdus_every_interval_and_none_while_down() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime(4_500_000)).unwrap();
        assert_eq!(p.sim.bonds[0].lacp[0].tx_pdus, 5);
        p.sim.set_link_state(p.links[1], crate::netmodel::LinkState::Down, SimTime(4_500_000)).unwrap();
        p.sim.run_until(SimTime::from_secs(10)).unwrap();
        assert_eq!(p.sim.bonds[0].lacp[1].tx_pdus, 5);
    }

    #[test]
    fn silent_partner_expires_to_unselected() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(2)).unwrap();
        p.sim.lacp_cfg.enabled = false;
        p.sim.run_until(SimTime::from_secs(6)).unwrap();
        assert!(p.sim.bonds[0].lacp.iter().all(|l| !l.selected));
        assert!(p.sim.bonds[0].active.is_empty());
    }

    #[test]
    fn malformed_pdu_is_counted_and_ignored() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        let port = p.sim.bonds[0].members[0];
        let pdu = crate::lacp::Lacpdu {
            actor_system: crate::lacp::SystemId {
                priority: 1,
                mac: MacAddress::ZERO,
            },
            actor_key: AggKey(1),
            actor_port: PortIdent { priority: 1, number: 1 },
            actor_state: Default::default(),
            partner: None,
        };
        p.sim.lacp_receive(port, pdu);
        assert_eq!(p.sim.bonds[0].lacp[0].malformed, 1);
        assert!(p.sim.bonds[0].lacp[0].partner.is_none());
    }

    #[test]
    fn cut_between_polls_detected_at_next_poll() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(10)).unwrap();
        p.sim
            .set_link_state(p.links[0], crate::netmodel::LinkState::Down, SimTime::from_millis(10_050))
            .unwrap();
        p.sim.run_until(SimTime(10_099_999)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 2);
        p.sim.run_until(SimTime::from_millis(10_100)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 1);
        let ev = p.sim.bonds[0].failovers.last().unwrap();
        assert_eq!(ev.at, SimTime::from_millis(10_100));
    }

    #[test]
    fn cut_on_poll_boundary_detected_one_poll_later() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(10) - SimTime(1)).unwrap();
        p.sim
            .set_link_state(p.links[0], crate::netmodel::LinkState::Down, SimTime::from_secs(10))
            .unwrap();
        p.sim.run_until(SimTime::from_secs(10)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 2);
        p.sim.run_until(SimTime::from_millis(10_100)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 1);
    }

    #[test]
    fn updelay_restores_two_polls_after_first_up_reading() {
        let mii = MiiConfig {
            poll_interval_ms: 100,
            updelay_ms: 200,
            downdelay_ms: 0,
        };
        let mut p = bonded_pair(mii, BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(5)).unwrap();
        let l = p.links[0];
        p.sim.set_link_state(l, crate::netmodel::LinkState::Down, SimTime::from_millis(5_050)).unwrap();
        p.sim.set_link_state(l, crate::netmodel::LinkState::Up, SimTime::from_millis(6_050)).unwrap();
        // First UP reading at 6.1 s; committed two polls later at 6.3 s.
        p.sim.run_until(SimTime::from_millis(6_299)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 1);
        p.sim.run_until(SimTime::from_millis(6_300)).unwrap();
        assert_eq!(p.sim.bonds[0].active.len(), 2);
    }

    #[test]
    fn stable_destination_sticks_to_one_port() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(3)).unwrap();
        let src = p.sim.bonds[0].iface;
        let dst = p.sim.bonds[1].addr;
        let members = p.sim.bonds[0].members.clone();
        let before: Vec<u64> = members.iter().map(|m| p.sim.net.port(*m).tx_frames).collect();
        for i in 0..1000 {
            let f = p.sim.new_frame(FrameKind::Data, src, dst, 100, 1, i, 0);
            let node = p.sim.bonds[0].node;
            p.sim.send_frame(node, f);
            p.sim.run_until(p.sim.now() + SimTime(100)).unwrap();
        }
        let after: Vec<u64> = members.iter().map(|m| p.sim.net.port(*m).tx_frames).collect();
        let used: Vec<u64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
        assert!(used.contains(&1000), "{used:?}");
    }

    #[test]
    fn both_members_down_takes_bond_down() {
        let mut p = bonded_pair(MiiConfig::default(), BondPolicy::DestMacModN, [100_000_000; 2]);
        p.sim.run_until(SimTime::from_secs(3)).unwrap();
        for l in p.links.clone() {
            p.sim.set_link_state(l, crate::netmodel::LinkState::Down, SimTime::from_millis(3_010)).unwrap();
        }
        p.sim.run_until(SimTime::from_millis(3_100)).unwrap();
        assert!(!p.sim.iface_is_up(p.sim.bonds[0].iface));
        assert!(p.sim.selected_ports(p.bonds[0]).is_empty());
    }
}
