//! Builds the router ring, its bonds or single links, and the host LANs.

use std::net::Ipv4Addr;

use crate::bonding::BondId;
use crate::netmodel::{IfaceId, LinkId, NetAddress, NetError, NodeId, NodeRole, PortConfig};
use crate::sim::Sim;

use super::scenario::{Endpoint, Mode, Scenario, ScenarioError};

/// One router-to-router adjacency ("r1-r2") and what realizes it.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub name: String,
    pub index: usize,
    pub network: Ipv4Addr,
    /// Lower-numbered router first in ring order: `ends.0` holds host .1.
    pub ends: (NodeId, NodeId),
    pub links: Vec<LinkId>,
    pub ifaces: (IfaceId, IfaceId),
    pub bonds: Option<(BondId, BondId)>,
}

#[derive(Debug, Clone)]
pub struct Lan {
    pub network: Ipv4Addr,
    pub router: NodeId,
    pub host: NodeId,
    pub router_iface: IfaceId,
    pub host_iface: IfaceId,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub routers: Vec<NodeId>,
    pub server: NodeId,
    pub client1: NodeId,
    pub client2: NodeId,
    pub adjacencies: Vec<Adjacency>,
    pub lans: Vec<Lan>,
}

pub const SERVER_LAN: Ipv4Addr = Ipv4Addr::new(172, 16, 1, 0);
pub const CLIENT1_LAN: Ipv4Addr = Ipv4Addr::new(172, 16, 2, 0);
pub const CLIENT2_LAN: Ipv4Addr = Ipv4Addr::new(172, 16, 3, 0);

pub fn adjacency_network(index: usize) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, index as u8 + 1, 0)
}

fn net_err(e: NetError) -> ScenarioError {
    ScenarioError::invalid("topology", None, e.to_string())
}

/// Instantiates the scenario's topology in `sim`.
pub fn build(sim: &mut Sim, s: &Scenario) -> Result<Topology, ScenarioError> {
    let t = &s.topology;
    let n = t.routers;
    let router_port = PortConfig {
        speed_bps: t.link_speed_bps,
        queue_capacity_frames: t.queue_capacity_frames,
        interframe_gap_bytes: t.interframe_gap_bytes,
    };
    let host_port = PortConfig {
        speed_bps: t.host_speed_bps,
        ..router_port
    };
    let routers: Vec<NodeId> = (1..=n)
        .map(|i| sim.add_node(&format!("r{i}"), NodeRole::Router, t.forward_capacity_fps))
        .collect();
    let server = sim.add_node("server", NodeRole::Host, 0);
    let client1 = sim.add_node("client1", NodeRole::Host, 0);
    let client2 = sim.add_node("client2", NodeRole::Host, 0);

    let mut adjacencies = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (routers[i], routers[(i + 1) % n]);
        let network = adjacency_network(i);
        let members = match s.mode {
            Mode::Bonded => t.members_per_bond,
            Mode::SingleLink => 1,
        };
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        let mut links = Vec::new();
        for _ in 0..members {
            let x = sim.add_port(a, router_port).map_err(net_err)?;
            let y = sim.add_port(b, router_port).map_err(net_err)?;
            links.push(sim.connect(x, y, t.propagation_us).map_err(net_err)?);
            pa.push(x);
            pb.push(y);
        }
        let (addr_a, addr_b) = (NetAddress::new(network, 1), NetAddress::new(network, 2));
        let (ifaces, bonds) = match s.mode {
            Mode::Bonded => {
                let ba = sim
                    .add_bond(a, &pa, addr_a, s.mii, s.policy, false)
                    .map_err(net_err)?;
                let bb = sim
                    .add_bond(b, &pb, addr_b, s.mii, s.policy, false)
                    .map_err(net_err)?;
                (
                    (sim.bonds[ba.idx()].iface, sim.bonds[bb.idx()].iface),
                    Some((ba, bb)),
                )
            }
            Mode::SingleLink => (
                (
                    sim.add_port_iface(pa[0], addr_a, false).map_err(net_err)?,
                    sim.add_port_iface(pb[0], addr_b, false).map_err(net_err)?,
                ),
                None,
            ),
        };
        adjacencies.push(Adjacency {
            name: format!("r{}-r{}", i + 1, (i + 1) % n + 1),
            index: i,
            network,
            ends: (a, b),
            links,
            ifaces,
            bonds,
        });
    }

    let mut lans = Vec::new();
    for (network, router, host) in [
        (SERVER_LAN, routers[0], server),
        (CLIENT1_LAN, routers[n - 1], client1),
        (CLIENT2_LAN, routers[n - 1], client2),
    ] {
        let rp = sim.add_port(router, router_port).map_err(net_err)?;
        let hp = sim.add_port(host, host_port).map_err(net_err)?;
        sim.connect(rp, hp, t.propagation_us).map_err(net_err)?;
        let router_iface = sim
            .add_port_iface(rp, NetAddress::new(network, 1), true)
            .map_err(net_err)?;
        let host_iface = sim
            .add_port_iface(hp, NetAddress::new(network, 2), true)
            .map_err(net_err)?;
        lans.push(Lan {
            network,
            router,
            host,
            router_iface,
            host_iface,
        });
    }

    Ok(Topology {
        routers,
        server,
        client1,
        client2,
        adjacencies,
        lans,
    })
}

impl Topology {
    pub fn adjacency(&self, name: &str) -> Option<&Adjacency> {
        self.adjacencies.iter().find(|a| a.name == name)
    }

    /// Every network that a converged router must reach.
    pub fn networks(&self) -> Vec<Ipv4Addr> {
        let mut v: Vec<Ipv4Addr> = self.adjacencies.iter().map(|a| a.network).collect();
        v.extend(self.lans.iter().map(|l| l.network));
        v
    }

    /// Hop distance between two routers around the ring.
    pub fn ring_distance(&self, a: NodeId, b: NodeId) -> usize {
        let n = self.routers.len();
        let ia = self.routers.iter().position(|r| *r == a).unwrap_or(0);
        let ib = self.routers.iter().position(|r| *r == b).unwrap_or(0);
        let d = ia.abs_diff(ib);
        d.min(n - d)
    }

    /// Resolves a failure target to the links it cuts.
    pub fn failure_links(&self, target: &str) -> Result<Vec<LinkId>, String> {
        let (base, member) = match target.split_once('/') {
            Some((b, m)) => (b, Some(m)),
            None => (target, None),
        };
        let adj = self
            .adjacency(base)
            .ok_or_else(|| format!("unknown adjacency `{base}`"))?;
        match member {
            None => Ok(adj.links.clone()),
            Some(m) => {
                let k: usize = m.parse().map_err(|_| format!("bad member index `{m}`"))?;
                adj.links
                    .get(k)
                    .map(|l| vec![*l])
                    .ok_or_else(|| format!("`{base}` has {} member link(s)", adj.links.len()))
            }
        }
    }
}

/// First interface of a named node, or the interface owning an address.
pub fn resolve_endpoint(sim: &Sim, e: &Endpoint) -> Result<IfaceId, String> {
    match e {
        Endpoint::Node(name) => {
            let n = sim
                .net
                .node_by_name(name)
                .ok_or_else(|| format!("unknown node `{name}`"))?;
            sim.net.nodes[n.idx()]
                .ifaces
                .first()
                .copied()
                .ok_or_else(|| format!("node `{name}` has no interface"))
        }
        Endpoint::Addr(ip) => sim
            .net
            .iface_of_addr(NetAddress::from_ip(*ip))
            .ok_or_else(|| format!("no interface has address {ip}")),
    }
}
