//! Link-state routing core: hellos and dead timers, LSA origination and
//! flooding, and a Dijkstra SPF over the LSA database.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use log::debug;

use crate::engine::{EventHandle, SimTime};
use crate::netmodel::{Control, FrameKind, IfaceId, NetAddress, NodeId, NodeRole};
use crate::sim::{Event, Sim};

pub const HELLO_SIZE: u32 = 82;
pub const LSA_BASE_SIZE: u32 = 66;
pub const LSA_LINK_SIZE: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectionMode {
    #[default]
    DeadInterval,
    CarrierTriggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingConfig {
    pub hello_interval: SimTime,
    pub dead_interval: SimTime,
    pub spf_delay: SimTime,
    pub detection_mode: DetectionMode,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            hello_interval: SimTime::from_secs(10),
            dead_interval: SimTime::from_secs(40),
            spf_delay: SimTime::from_millis(200),
            detection_mode: DetectionMode::DeadInterval,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hello_interval == SimTime::ZERO {
            return Err("hello interval must be positive".into());
        }
        if self.dead_interval <= self.hello_interval {
            return Err(format!(
                "dead interval {} must exceed hello interval {}",
                self.dead_interval, self.hello_interval
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LsaLink {
    /// `None` for a stub network with no adjacent router.
    pub neighbor: Option<NodeId>,
    pub network: Ipv4Addr,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lsa {
    pub origin: NodeId,
    pub seq: u64,
    pub links: Vec<LsaLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    /// `None` for directly connected networks.
    pub next_hop: Option<NodeId>,
    pub egress: IfaceId,
    pub cost: u32,
}

pub type RouteTable = BTreeMap<Ipv4Addr, Route>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteChange {
    pub at: SimTime,
    pub router: NodeId,
    pub network: Ipv4Addr,
    pub old: Option<Route>,
    pub new: Option<Route>,
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub router: NodeId,
    pub last_seen: SimTime,
    dead_timer: EventHandle,
}

#[derive(Debug, Clone, Default)]
pub struct RouterState {
    pub lsdb: BTreeMap<NodeId, Lsa>,
    pub neighbors: BTreeMap<IfaceId, Neighbor>,
    pub routes: RouteTable,
    pub own_seq: u64,
    spf_pending: bool,
    pub spf_runs: u64,
    pub lsa_originated: u64,
}

#[derive(Debug, Default)]
pub struct Routing {
    pub cfg: RoutingConfig,
    pub routers: BTreeMap<NodeId, RouterState>,
    pub log: Vec<RouteChange>,
}

impl Routing {
    pub fn new(cfg: RoutingConfig) -> Self {
        Routing {
            cfg,
            routers: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn add_router(&mut self, id: NodeId) {
        self.routers.entry(id).or_default();
    }

    pub fn table(&self, r: NodeId) -> Option<&RouteTable> {
        self.routers.get(&r).map(|s| &s.routes)
    }

    pub fn total_spf_runs(&self) -> u64 {
        self.routers.values().map(|r| r.spf_runs).sum()
    }

    pub fn total_lsa_originated(&self) -> u64 {
        self.routers.values().map(|r| r.lsa_originated).sum()
    }
}

/// Shortest-path result for one network: cost and first-hop router (`None` when
/// the root itself is attached).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpfEntry {
    pub cost: u32,
    pub first_hop: Option<NodeId>,
}

fn two_way(lsdb: &BTreeMap<NodeId, Lsa>, u: NodeId, v: NodeId, network: Ipv4Addr) -> bool {
    lsdb.get(&v).is_some_and(|l| {
        l.links
            .iter()
            .any(|x| x.neighbor == Some(u) && x.network == network)
    })
}

/// Dijkstra from `root` over two-way adjacencies in `lsdb`. Equal-cost paths
/// keep the lowest first-hop router id.
pub fn spf(root: NodeId, lsdb: &BTreeMap<NodeId, Lsa>) -> BTreeMap<Ipv4Addr, SpfEntry> {
    let mut dist: BTreeMap<NodeId, SpfEntry> = BTreeMap::new();
    let mut done: BTreeSet<NodeId> = BTreeSet::new();
    dist.insert(
        root,
        SpfEntry {
            cost: 0,
            first_hop: None,
        },
    );
    loop {
        let next = dist
            .iter()
            .filter(|(n, _)| !done.contains(n))
            .min_by_key(|(n, e)| (e.cost, e.first_hop, **n))
            .map(|(n, e)| (*n, *e));
        let Some((u, eu)) = next else { break };
        done.insert(u);
        let Some(lsa) = lsdb.get(&u) else { continue };
        for l in &lsa.links {
            let Some(v) = l.neighbor else { continue };
            if done.contains(&v) || !two_way(lsdb, u, v, l.network) {
                continue;
            }
            let cand = SpfEntry {
                cost: eu.cost + l.cost,
                first_hop: if u == root { Some(v) } else { eu.first_hop },
            };
            let better = match dist.get(&v) {
                None => true,
                Some(cur) => (cand.cost, cand.first_hop) < (cur.cost, cur.first_hop),
            };
            if better {
                dist.insert(v, cand);
            }
        }
    }
    let mut nets: BTreeMap<Ipv4Addr, SpfEntry> = BTreeMap::new();
    for (u, eu) in &dist {
        let Some(lsa) = lsdb.get(u) else { continue };
        for l in &lsa.links {
            let cand = SpfEntry {
                cost: eu.cost + l.cost,
                first_hop: eu.first_hop,
            };
            let better = match nets.get(&l.network) {
                None => true,
                Some(cur) => (cand.cost, cand.first_hop) < (cur.cost, cur.first_hop),
            };
            if better {
                nets.insert(l.network, cand);
            }
        }
    }
    nets
}

impl Sim {
    pub(crate) fn start_routing(&mut self) {
        let routers: Vec<NodeId> = self.routing.routers.keys().copied().collect();
        for r in routers {
            let ifaces = self.net.nodes[r.idx()].ifaces.clone();
            for i in ifaces {
                if self.net.ifaces[i.idx()].passive {
                    continue;
                }
                let hello = self.routing.cfg.hello_interval;
                self.sched.after(hello, Event::HelloTimer { router: r, iface: i });
                if self.iface_is_up(i) {
                    self.send_hello(r, i);
                }
            }
            self.originate_lsa(r);
        }
        let hosts: Vec<NodeId> = self
            .net
            .nodes
            .iter()
            .filter(|n| n.role == NodeRole::Host)
            .map(|n| n.id)
            .collect();
        for h in hosts {
            if self.net.nodes[h.idx()].ifaces.is_empty() {
                debug!("host {} has no interface", self.net.nodes[h.idx()].name);
            }
        }
    }

    /// Egress interface for `dst` at `node`: SPF table on routers, first interface on hosts.
    pub fn route_egress(&self, node: NodeId, dst: NetAddress) -> Option<IfaceId> {
        let n = &self.net.nodes[node.idx()];
        match n.role {
            NodeRole::Host => n.ifaces.first().copied(),
            NodeRole::Router => self
                .routing
                .routers
                .get(&node)?
                .routes
                .get(&dst.network)
                .map(|r| r.egress),
        }
    }

    pub(crate) fn hello_tick(&mut self, r: NodeId, i: IfaceId) {
        self.sched
            .after(self.routing.cfg.hello_interval, Event::HelloTimer { router: r, iface: i });
        if self.iface_is_up(i) {
            self.send_hello(r, i);
        }
    }

    fn send_hello(&mut self, r: NodeId, i: IfaceId) {
        let mut f = self.new_frame(FrameKind::Routing, i, NetAddress::ALL_ROUTERS, HELLO_SIZE, 0, 0, 0);
        f.control = Some(Box::new(Control::Hello { router: r }));
        self.send_control(i, f);
    }

    pub(crate) fn on_routing_frame(&mut self, r: NodeId, i: IfaceId, frame: &crate::netmodel::Frame) {
        if self.net.ifaces[i.idx()].passive {
            return;
        }
        match frame.control.as_deref() {
            Some(Control::Hello { router }) => self.hello_received(r, i, *router),
            Some(Control::Lsa(lsa)) => self.lsa_received(r, i, lsa.clone()),
            _ => {}
        }
    }

    fn hello_received(&mut self, r: NodeId, i: IfaceId, from: NodeId) {
        let now = self.now();
        let dead_at = now + self.routing.cfg.dead_interval + SimTime(1);
        let handle = self
            .sched
            .schedule(dead_at, Event::NeighborDead { router: r, iface: i })
            .expect("dead timer is in the future");
        let st = self.routing.routers.get_mut(&r).expect("router state");
        let prev = st.neighbors.insert(
            i,
            Neighbor {
                router: from,
                last_seen: now,
                dead_timer: handle,
            },
        );
        if let Some(p) = prev {
            self.sched.cancel(p.dead_timer);
        }
        if prev.map(|p| p.router) != Some(from) {
            debug!("{}: adjacency up with {} at {}", r, from, now);
            self.originate_lsa(r);
            let lsas: Vec<Lsa> = self.routing.routers[&r].lsdb.values().cloned().collect();
            for lsa in lsas {
                self.send_lsa(i, lsa);
            }
            self.send_hello(r, i);
        }
    }

    pub(crate) fn neighbor_dead(&mut self, r: NodeId, i: IfaceId) {
        let st = self.routing.routers.get_mut(&r).expect("router state");
        if let Some(n) = st.neighbors.remove(&i) {
            debug!("{}: neighbor {} dead at {}", r, n.router, self.now());
            self.originate_lsa(r);
        }
    }

    /// Interface carrier changes (plain port or bond active/empty transitions).
    pub(crate) fn on_iface_state_change(&mut self, i: IfaceId, up: bool) {
        let iface = &self.net.ifaces[i.idx()];
        let r = iface.node;
        let passive = iface.passive;
        if !self.routing.routers.contains_key(&r) {
            return;
        }
        let carrier_mode = self.routing.cfg.detection_mode == DetectionMode::CarrierTriggered;
        if up {
            if !passive {
                self.send_hello(r, i);
            }
            if passive || carrier_mode {
                self.originate_lsa(r);
            }
        } else if carrier_mode {
            let st = self.routing.routers.get_mut(&r).expect("router state");
            if let Some(n) = st.neighbors.remove(&i) {
                self.sched.cancel(n.dead_timer);
            }
            self.originate_lsa(r);
        } else if passive {
            self.originate_lsa(r);
        }
    }

    fn build_lsa_links(&self, r: NodeId) -> Vec<LsaLink> {
        let st = &self.routing.routers[&r];
        let mut links = Vec::new();
        for &i in &self.net.nodes[r.idx()].ifaces {
            let neighbor = st.neighbors.get(&i).map(|n| n.router);
            if neighbor.is_none() && !self.iface_is_up(i) {
                continue;
            }
            links.push(LsaLink {
                neighbor,
                network: self.net.ifaces[i.idx()].addr.network,
                cost: 1,
            });
        }
        links
    }

    /// Builds, installs and floods a fresh LSA for `r`, then schedules SPF.
    pub(crate) fn originate_lsa(&mut self, r: NodeId) {
        let links = self.build_lsa_links(r);
        let st = self.routing.routers.get_mut(&r).expect("router state");
        st.own_seq += 1;
        st.lsa_originated += 1;
        let lsa = Lsa {
            origin: r,
            seq: st.own_seq,
            links,
        };
        st.lsdb.insert(r, lsa.clone());
        self.flood(r, &lsa, None);
        self.schedule_spf(r);
    }

    fn flood(&mut self, r: NodeId, lsa: &Lsa, except: Option<IfaceId>) {
        let targets: Vec<IfaceId> = self.routing.routers[&r]
            .neighbors
            .keys()
            .copied()
            .filter(|i| Some(*i) != except)
            .collect();
        for i in targets {
            self.send_lsa(i, lsa.clone());
        }
    }

    fn send_lsa(&mut self, i: IfaceId, lsa: Lsa) {
        let size = LSA_BASE_SIZE + LSA_LINK_SIZE * lsa.links.len() as u32;
        let mut f = self.new_frame(FrameKind::Routing, i, NetAddress::ALL_ROUTERS, size, 0, 0, lsa.seq);
        f.control = Some(Box::new(Control::Lsa(lsa)));
        self.send_control(i, f);
    }

    fn lsa_received(&mut self, r: NodeId, i: IfaceId, lsa: Lsa) {
        if lsa.origin == r {
            return;
        }
        let st = self.routing.routers.get_mut(&r).expect("router state");
        let newer = st.lsdb.get(&lsa.origin).is_none_or(|old| lsa.seq > old.seq);
        if !newer {
            return;
        }
        st.lsdb.insert(lsa.origin, lsa.clone());
        self.flood(r, &lsa, Some(i));
        self.schedule_spf(r);
    }

    fn schedule_spf(&mut self, r: NodeId) {
        let st = self.routing.routers.get_mut(&r).expect("router state");
        if !st.spf_pending {
            st.spf_pending = true;
            self.sched.after(self.routing.cfg.spf_delay, Event::Spf(r));
        }
    }

    pub(crate) fn run_spf(&mut self, r: NodeId) {
        let now = self.now();
        let st = &self.routing.routers[&r];
        let result = spf(r, &st.lsdb);
        let mut table = RouteTable::new();
        for (net, e) in result {
            let egress = match e.first_hop {
                None => self.net.iface_on(r, net),
                Some(h) => st
                    .neighbors
                    .iter()
                    .find(|(_, n)| n.router == h)
                    .map(|(i, _)| *i),
            };
            if let Some(egress) = egress {
                table.insert(
                    net,
                    Route {
                        next_hop: e.first_hop,
                        egress,
                        cost: e.cost,
                    },
                );
            }
        }
        let st = self.routing.routers.get_mut(&r).expect("router state");
        st.spf_pending = false;
        st.spf_runs += 1;
        let nets: BTreeSet<Ipv4Addr> = st.routes.keys().chain(table.keys()).copied().collect();
        for net in nets {
            let old = st.routes.get(&net).copied();
            let new = table.get(&net).copied();
            if old != new {
                self.routing.log.push(RouteChange {
                    at: now,
                    router: r,
                    network: net,
                    old,
                    new,
                });
            }
        }
        self.routing.routers.get_mut(&r).expect("router state").routes = table;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(192, 168, n, 0)
    }

    fn link(nb: Option<u32>, n: u8) -> LsaLink {
        LsaLink {
            neighbor: nb.map(NodeId),
            network: net(n),
            cost: 1,
        }
    }

    /// Ring r0-r1-r2-r3-r0 over networks 1..4, each router also with a stub.
    fn ring_lsdb(down: &[u8]) -> BTreeMap<NodeId, Lsa> {
        let edges = [(0u32, 1u32, 1u8), (1, 2, 2), (2, 3, 3), (3, 0, 4)];
        let mut db = BTreeMap::new();
        for r in 0..4u32 {
            let mut links = vec![link(None, 10 + r as u8)];
            for &(a, b, n) in &edges {
                if down.contains(&n) {
                    continue;
                }
                if a == r {
                    links.push(link(Some(b), n));
                }
                if b == r {
                    links.push(link(Some(a), n));
                }
            }
            db.insert(
                NodeId(r),
                Lsa {
                    origin: NodeId(r),
                    seq: 1,
                    links,
                },
            );
        }
        db
    }

    #[test]
    fn ring_all_up_reaches_all_networks_within_two() {
        for r in 0..4 {
            let t = spf(NodeId(r), &ring_lsdb(&[]));
            for n in 1..=4 {
                assert!(t[&net(n)].cost <= 2, "router {r} net {n}");
            }
            assert_eq!(t.len(), 8);
        }
    }

    #[test]
    fn one_adjacency_down_goes_around() {
        let t = spf(NodeId(0), &ring_lsdb(&[1]));
        // Stub of r1 is now three hops away via r3.
        assert_eq!(t[&net(11)], SpfEntry { cost: 4, first_hop: Some(NodeId(3)) });
    }

    #[test]
    fn equal_cost_tie_goes_to_lowest_first_hop() {
        let t = spf(NodeId(0), &ring_lsdb(&[]));
        // r2's stub is two hops via r1 or r3.
        assert_eq!(t[&net(12)].first_hop, Some(NodeId(1)));
    }

    #[test]
    fn isolated_router_networks_absent() {
        let t = spf(NodeId(0), &ring_lsdb(&[2, 3]));
        assert!(!t.contains_key(&net(12)));
        assert!(t.contains_key(&net(11)));
    }

    #[test]
    fn one_way_adjacency_is_ignored() {
        let mut db = ring_lsdb(&[]);
        db.get_mut(&NodeId(1)).unwrap().links.retain(|l| l.neighbor != Some(NodeId(0)));
        let t = spf(NodeId(0), &db);
        assert_eq!(t[&net(11)].first_hop, Some(NodeId(3)));
    }

    #[test]
    fn config_validation() {
        let mut c = RoutingConfig::default();
        assert!(c.validate().is_ok());
        c.dead_interval = c.hello_interval;
        assert!(c.validate().is_err());
    }
}
