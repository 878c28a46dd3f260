//! Topology primitives: nodes, ports, point-to-point links, FIFO egress queues
//! and the router forwarding-capacity model.
//!
//! A port serializes one frame at a time at `speed_bps`; the frame reaches the
//! peer `propagation_us` after its last bit leaves. Port timelines are kept in
//! nanoseconds and event times are rounded up to the next microsecond. An
//! optional inter-frame gap (preamble + IFG) occupies the port after each
//! frame without delaying that frame's own arrival.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use log::warn;
use thiserror::Error;

use crate::bonding::BondId;
use crate::engine::{EventHandle, SimTime};
use crate::lacp::Lacpdu;
use crate::routing::Lsa;
use crate::sim::{Event, Sim};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(NodeId);
id_type!(PortId);
id_type!(LinkId);
id_type!(IfaceId);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Frames dropped after this many router hops are counted as `TtlExpired`.
pub const MAX_HOPS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const ZERO: MacAddress = MacAddress([0; 6]);
    /// Slow-protocols multicast group used by LACPDUs.
    pub const SLOW_PROTOCOLS: MacAddress = MacAddress([0x01, 0x80, 0xc2, 0x00, 0x00, 0x02]);
    /// Multicast group used by routing hellos and LSAs.
    pub const ALL_ROUTERS: MacAddress = MacAddress([0x01, 0x00, 0x5e, 0x00, 0x00, 0x05]);

    /// Locally administered unicast address derived from a counter.
    pub fn local(n: u32) -> Self {
        let b = n.to_be_bytes();
        MacAddress([0x02, 0x00, b[0], b[1], b[2], b[3]])
    }

    pub fn last_octet(&self) -> u8 {
        self.0[5]
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 6]
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

/// An interface address inside a /24 network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetAddress {
    pub network: Ipv4Addr,
    pub host: u8,
}

impl NetAddress {
    pub const ALL_ROUTERS: NetAddress = NetAddress {
        network: Ipv4Addr::new(224, 0, 0, 0),
        host: 5,
    };

    pub fn new(network: Ipv4Addr, host: u8) -> Self {
        let o = network.octets();
        NetAddress {
            network: Ipv4Addr::new(o[0], o[1], o[2], 0),
            host,
        }
    }

    pub fn ip(&self) -> Ipv4Addr {
        let o = self.network.octets();
        Ipv4Addr::new(o[0], o[1], o[2], self.host)
    }

    pub fn from_ip(ip: Ipv4Addr) -> Self {
        NetAddress::new(ip, ip.octets()[3])
    }
}

impl fmt::Display for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ip())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Video,
    Voice,
    Data,
    Probe,
    ProbeReply,
    Lacpdu,
    Routing,
    Ack,
}

impl FrameKind {
    pub fn is_control(self) -> bool {
        matches!(self, FrameKind::Lacpdu | FrameKind::Routing)
    }
}

/// Control-plane body carried by LACPDU and routing frames.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Lacpdu(Lacpdu),
    Hello { router: NodeId },
    Lsa(Lsa),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub src_mac: MacAddress,
    pub dst_mac: MacAddress,
    pub src_addr: NetAddress,
    pub dst_addr: NetAddress,
    pub size_bytes: u32,
    pub kind: FrameKind,
    pub conversation: u32,
    pub seq: u64,
    /// Kind-specific value: probe number, data segment index, cumulative ack.
    pub tag: u64,
    pub sent_at: SimTime,
    pub received_at: Option<SimTime>,
    pub control: Option<Box<Control>>,
}

impl Frame {
    /// True when every field except `received_at` matches.
    pub fn same_content(&self, other: &Frame) -> bool {
        let mut a = self.clone();
        a.received_at = other.received_at;
        &a == other
    }
}

/// Transit metadata that travels with a frame but is not part of it.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub frame: Frame,
    pub hops: u8,
    /// Set by a bond distributor: (sending bond, per-conversation acceptance order).
    pub lag_stamp: Option<(BondId, u64)>,
}

impl Envelope {
    pub fn new(frame: Frame) -> Self {
        Envelope {
            frame,
            hops: 0,
            lag_stamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    LinkDown,
    QueueFull,
    NoRoute,
    Overload,
    TtlExpired,
}

impl DropReason {
    pub const ALL: [DropReason; 5] = [
        DropReason::LinkDown,
        DropReason::QueueFull,
        DropReason::NoRoute,
        DropReason::Overload,
        DropReason::TtlExpired,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::LinkDown => "LINK_DOWN",
            DropReason::QueueFull => "QUEUE_FULL",
            DropReason::NoRoute => "NO_ROUTE",
            DropReason::Overload => "OVERLOAD",
            DropReason::TtlExpired => "TTL_EXPIRED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("port {0:?} is already attached to a link")]
    PortInUse(PortId),
    #[error("port {0:?} already belongs to an interface or bond")]
    PortClaimed(PortId),
    #[error("address {0} is already assigned")]
    DuplicateAddress(NetAddress),
    #[error("port speed must be positive")]
    ZeroSpeed,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("link state change at {at} is before now {now}")]
    InPast { at: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Copy)]
pub struct PortConfig {
    pub speed_bps: u64,
    pub queue_capacity_frames: usize,
    /// Preamble + inter-frame gap occupying the port after each frame.
    pub interframe_gap_bytes: u32,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            speed_bps: 100_000_000,
            queue_capacity_frames: 100,
            interframe_gap_bytes: 20,
        }
    }
}

#[derive(Debug)]
pub struct Port {
    pub id: PortId,
    pub node: NodeId,
    pub index: u32,
    pub mac: MacAddress,
    pub speed_bps: u64,
    pub queue_capacity_frames: usize,
    pub interframe_gap_bytes: u32,
    pub carrier: bool,
    pub(crate) prev_carrier: bool,
    pub(crate) carrier_changed_at: Option<SimTime>,
    pub link: Option<LinkId>,
    pub iface: Option<IfaceId>,
    pub bond: Option<BondId>,
    pub(crate) queue: VecDeque<(Envelope, u64)>,
    pub(crate) busy: Option<(Envelope, EventHandle)>,
    pub(crate) tail_free_ns: u64,
    pub tx_frames: u64,
    pub rx_frames: u64,
}

impl Port {
    /// Frames waiting behind the one being serialized.
    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Carrier as seen by a poll at `now`: a change made at exactly `now` is not yet visible.
    pub fn polled_carrier(&self, now: SimTime) -> bool {
        match self.carrier_changed_at {
            Some(t) if t == now => self.prev_carrier,
            _ => self.carrier,
        }
    }

    pub(crate) fn set_carrier(&mut self, up: bool, now: SimTime) {
        if self.carrier != up {
            if self.carrier_changed_at != Some(now) {
                self.prev_carrier = self.carrier;
            }
            self.carrier = up;
            self.carrier_changed_at = Some(now);
        }
    }
}

#[derive(Debug)]
pub(crate) struct InFlight {
    pub env: Envelope,
    pub handle: EventHandle,
}

#[derive(Debug)]
pub struct Link {
    pub id: LinkId,
    pub a: PortId,
    pub b: PortId,
    pub propagation_us: u64,
    pub state: LinkState,
    pub(crate) in_flight: BTreeMap<u64, InFlight>,
    pub(crate) next_key: u64,
}

impl Link {
    pub fn peer(&self, p: PortId) -> PortId {
        if p == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Router,
    Host,
}

/// Forwarding budget: refills at `fps` frames/s and holds at most one millisecond of budget.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    fps: u64,
    capacity: u64,
    tokens: u64,
    last: SimTime,
}

const UNITS_PER_FRAME: u64 = 1_000_000;

impl TokenBucket {
    pub fn new(fps: u64) -> Self {
        let capacity = (fps * 1_000).max(UNITS_PER_FRAME);
        TokenBucket {
            fps,
            capacity,
            tokens: capacity,
            last: SimTime::ZERO,
        }
    }

    pub fn fps(&self) -> u64 {
        self.fps
    }

    /// Takes one frame's worth of budget; false means the frame is over capacity.
    pub fn admit(&mut self, now: SimTime) -> bool {
        let dt = now.saturating_sub(self.last).as_micros();
        self.last = now;
        self.tokens = self
            .tokens
            .saturating_add(dt.saturating_mul(self.fps))
            .min(self.capacity);
        if self.tokens >= UNITS_PER_FRAME {
            self.tokens -= UNITS_PER_FRAME;
            true
        } else {
            false
        }
    }
}

#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: NodeRole,
    pub ports: Vec<PortId>,
    pub ifaces: Vec<IfaceId>,
    pub base_mac: MacAddress,
    pub(crate) bucket: Option<TokenBucket>,
    pub forwarded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfaceKind {
    Port(PortId),
    Bond(BondId),
}

/// A layer-3 interface: one address on top of a port or a bond.
#[derive(Debug, Clone)]
pub struct Interface {
    pub id: IfaceId,
    pub node: NodeId,
    pub addr: NetAddress,
    pub mac: MacAddress,
    pub kind: IfaceKind,
    /// Passive interfaces carry no routing hellos.
    pub passive: bool,
}

#[derive(Debug, Default)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub ports: Vec<Port>,
    pub links: Vec<Link>,
    pub ifaces: Vec<Interface>,
    pub(crate) addr_index: HashMap<Ipv4Addr, IfaceId>,
    pub(crate) mac_counter: u32,
    /// Drops per conversation, kept apart from the flow metrics.
    pub drop_ledger: BTreeMap<u32, [u64; DropReason::ALL.len()]>,
}

impl Network {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.idx()]
    }

    pub fn port(&self, id: PortId) -> &Port {
        &self.ports[id.idx()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.idx()]
    }

    pub fn iface(&self, id: IfaceId) -> &Interface {
        &self.ifaces[id.idx()]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn iface_of_addr(&self, addr: NetAddress) -> Option<IfaceId> {
        self.addr_index.get(&addr.ip()).copied()
    }

    pub fn owns(&self, node: NodeId, addr: NetAddress) -> bool {
        self.iface_of_addr(addr)
            .is_some_and(|i| self.ifaces[i.idx()].node == node)
    }

    pub fn routers(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Router)
    }

    pub fn next_mac(&mut self) -> MacAddress {
        self.mac_counter += 1;
        MacAddress::local(self.mac_counter)
    }

    /// Interface on `node` attached to `network`, if any.
    pub fn iface_on(&self, node: NodeId, network: Ipv4Addr) -> Option<IfaceId> {
        self.nodes[node.idx()]
            .ifaces
            .iter()
            .copied()
            .find(|i| self.ifaces[i.idx()].addr.network == network)
    }
}

/// Nanoseconds to put `bytes` on a wire of `speed_bps`, rounded up.
pub fn serialization_ns(bytes: u32, speed_bps: u64) -> u64 {
    let bits = bytes as u128 * 8 * 1_000_000_000;
    bits.div_ceil(speed_bps as u128) as u64
}

fn ns_to_time_ceil(ns: u64) -> SimTime {
    SimTime(ns.div_ceil(1_000))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxOutcome {
    Queued { arrival: SimTime },
    Dropped(DropReason),
}

impl Sim {
    pub fn add_node(&mut self, name: &str, role: NodeRole, forward_capacity_fps: u64) -> NodeId {
        let id = NodeId(self.net.nodes.len() as u32);
        let base_mac = self.net.next_mac();
        self.net.nodes.push(Node {
            id,
            name: name.to_string(),
            role,
            ports: Vec::new(),
            ifaces: Vec::new(),
            base_mac,
            bucket: (role == NodeRole::Router).then(|| TokenBucket::new(forward_capacity_fps)),
            forwarded: 0,
        });
        if role == NodeRole::Router {
            self.routing.add_router(id);
        }
        id
    }

    pub fn add_port(&mut self, node: NodeId, cfg: PortConfig) -> Result<PortId, NetError> {
        if cfg.speed_bps == 0 {
            return Err(NetError::ZeroSpeed);
        }
        let id = PortId(self.net.ports.len() as u32);
        let mac = self.net.next_mac();
        let n = &mut self.net.nodes[node.idx()];
        let index = n.ports.len() as u32;
        n.ports.push(id);
        self.net.ports.push(Port {
            id,
            node,
            index,
            mac,
            speed_bps: cfg.speed_bps,
            queue_capacity_frames: cfg.queue_capacity_frames,
            interframe_gap_bytes: cfg.interframe_gap_bytes,
            carrier: false,
            prev_carrier: false,
            carrier_changed_at: None,
            link: None,
            iface: None,
            bond: None,
            queue: VecDeque::new(),
            busy: None,
            tail_free_ns: 0,
            tx_frames: 0,
            rx_frames: 0,
        });
        Ok(id)
    }

    /// Joins two ports with a point-to-point link; the link starts UP.
    pub fn connect(&mut self, a: PortId, b: PortId, propagation_us: u64) -> Result<LinkId, NetError> {
        for p in [a, b] {
            if self.net.ports[p.idx()].link.is_some() {
                return Err(NetError::PortInUse(p));
            }
        }
        if a == b {
            return Err(NetError::PortInUse(a));
        }
        if self.net.ports[a.idx()].node == self.net.ports[b.idx()].node {
            warn!(
                "loopback link between ports {:?} and {:?} on one node",
                a, b
            );
        }
        let id = LinkId(self.net.links.len() as u32);
        self.net.links.push(Link {
            id,
            a,
            b,
            propagation_us,
            state: LinkState::Up,
            in_flight: BTreeMap::new(),
            next_key: 0,
        });
        let now = self.now();
        for p in [a, b] {
            let port = &mut self.net.ports[p.idx()];
            port.link = Some(id);
            port.set_carrier(true, now);
            port.carrier_changed_at = None;
        }
        Ok(id)
    }

    /// Gives a standalone port a layer-3 address.
    pub fn add_port_iface(&mut self, port: PortId, addr: NetAddress, passive: bool) -> Result<IfaceId, NetError> {
        let p = &self.net.ports[port.idx()];
        if p.iface.is_some() || p.bond.is_some() {
            return Err(NetError::PortClaimed(port));
        }
        let (node, mac) = (p.node, p.mac);
        let id = self.register_iface(node, addr, mac, IfaceKind::Port(port), passive)?;
        self.net.ports[port.idx()].iface = Some(id);
        Ok(id)
    }

    pub(crate) fn register_iface(
        &mut self,
        node: NodeId,
        addr: NetAddress,
        mac: MacAddress,
        kind: IfaceKind,
        passive: bool,
    ) -> Result<IfaceId, NetError> {
        if self.net.addr_index.contains_key(&addr.ip()) {
            return Err(NetError::DuplicateAddress(addr));
        }
        let id = IfaceId(self.net.ifaces.len() as u32);
        self.net.ifaces.push(Interface {
            id,
            node,
            addr,
            mac,
            kind,
            passive,
        });
        self.net.addr_index.insert(addr.ip(), id);
        self.net.nodes[node.idx()].ifaces.push(id);
        Ok(id)
    }

    /// Schedules a link state change at `at`.
    pub fn set_link_state(&mut self, link: LinkId, state: LinkState, at: SimTime) -> Result<(), NetError> {
        self.sched
            .schedule(
                at,
                Event::SetLink {
                    link,
                    up: state == LinkState::Up,
                },
            )
            .map(|_| ())
            .map_err(|_| NetError::InPast {
                at,
                now: self.now(),
            })
    }

    pub(crate) fn apply_link_state(&mut self, link: LinkId, up: bool) {
        let now = self.now();
        let l = &mut self.net.links[link.idx()];
        let new_state = if up { LinkState::Up } else { LinkState::Down };
        if l.state == new_state {
            return;
        }
        l.state = new_state;
        let (a, b) = (l.a, l.b);
        if !up {
            let in_flight = std::mem::take(&mut l.in_flight);
            for (_, f) in in_flight {
                self.sched.cancel(f.handle);
                self.record_drop(&f.env, DropReason::LinkDown);
            }
        }
        for p in [a, b] {
            self.net.ports[p.idx()].set_carrier(up, now);
            if !up {
                self.flush_port(p);
            }
            self.on_port_carrier_change(p, up);
        }
    }

    fn flush_port(&mut self, p: PortId) {
        let now_ns = self.now().as_micros() * 1_000;
        let port = &mut self.net.ports[p.idx()];
        let busy = port.busy.take();
        let queued: Vec<_> = port.queue.drain(..).collect();
        port.tail_free_ns = now_ns;
        if let Some((env, h)) = busy {
            self.sched.cancel(h);
            self.record_drop(&env, DropReason::LinkDown);
        }
        for (env, _) in queued {
            self.record_drop(&env, DropReason::LinkDown);
        }
    }

    /// Carrier changes on plain interfaces are visible to routing immediately;
    /// bond members wait for the next MII poll.
    fn on_port_carrier_change(&mut self, p: PortId, up: bool) {
        if let Some(iface) = self.net.ports[p.idx()].iface {
            self.on_iface_state_change(iface, up);
        }
    }

    pub fn iface_is_up(&self, iface: IfaceId) -> bool {
        match self.net.ifaces[iface.idx()].kind {
            IfaceKind::Port(p) => self.net.ports[p.idx()].carrier,
            IfaceKind::Bond(b) => !self.bonds[b.idx()].active.is_empty(),
        }
    }

    /// Queues `env` on port `p`.
    pub fn transmit(&mut self, p: PortId, env: Envelope) -> TxOutcome {
        let now = self.now();
        let port = &self.net.ports[p.idx()];
        let Some(link) = port.link else {
            self.record_drop(&env, DropReason::LinkDown);
            return TxOutcome::Dropped(DropReason::LinkDown);
        };
        if !port.carrier {
            self.record_drop(&env, DropReason::LinkDown);
            return TxOutcome::Dropped(DropReason::LinkDown);
        }
        if port.busy.is_some() && port.queue.len() >= port.queue_capacity_frames {
            self.record_drop(&env, DropReason::QueueFull);
            return TxOutcome::Dropped(DropReason::QueueFull);
        }
        let prop = self.net.links[link.idx()].propagation_us;
        let port = &mut self.net.ports[p.idx()];
        let ser = serialization_ns(env.frame.size_bytes, port.speed_bps);
        let gap = serialization_ns(port.interframe_gap_bytes, port.speed_bps);
        let start = (now.as_micros() * 1_000).max(port.tail_free_ns);
        port.tail_free_ns = start + ser + gap;
        let done = ns_to_time_ceil(start + ser);
        port.tx_frames += 1;
        if port.busy.is_none() {
            let h = self
                .sched
                .schedule(done, Event::TxDone(p))
                .expect("serialization ends after now");
            self.net.ports[p.idx()].busy = Some((env, h));
        } else {
            port.queue.push_back((env, start));
        }
        TxOutcome::Queued {
            arrival: done + SimTime(prop),
        }
    }

    pub(crate) fn on_tx_done(&mut self, p: PortId) {
        let port = &mut self.net.ports[p.idx()];
        let Some((env, _)) = port.busy.take() else {
            return;
        };
        if let Some((next, start)) = port.queue.pop_front() {
            let ser = serialization_ns(next.frame.size_bytes, port.speed_bps);
            let done = ns_to_time_ceil(start + ser);
            let h = self
                .sched
                .schedule(done, Event::TxDone(p))
                .expect("queued frame finishes after the previous one");
            self.net.ports[p.idx()].busy = Some((next, h));
        }
        let link_id = self.net.ports[p.idx()].link.expect("busy port has a link");
        let link = &mut self.net.links[link_id.idx()];
        let to = link.peer(p);
        let key = link.next_key;
        link.next_key += 1;
        let prop = SimTime(link.propagation_us);
        let handle = self.sched.after(prop, Event::Arrive { link: link_id, key, to });
        self.net.links[link_id.idx()]
            .in_flight
            .insert(key, InFlight { env, handle });
    }

    pub(crate) fn on_arrive(&mut self, link: LinkId, key: u64, to: PortId) {
        let Some(f) = self.net.links[link.idx()].in_flight.remove(&key) else {
            return;
        };
        self.net.ports[to.idx()].rx_frames += 1;
        self.port_receive(to, f.env);
    }

    fn port_receive(&mut self, p: PortId, env: Envelope) {
        if env.frame.kind == FrameKind::Lacpdu {
            self.metrics.record_delivered(&env.frame, self.now());
            self.on_lacpdu(p, &env.frame);
            return;
        }
        let port = &self.net.ports[p.idx()];
        let node = port.node;
        let iface = if let Some(b) = port.bond {
            self.bond_collect(b, &env);
            self.bonds[b.idx()].iface
        } else if let Some(i) = port.iface {
            i
        } else {
            self.record_drop(&env, DropReason::NoRoute);
            return;
        };
        self.node_receive(node, iface, env);
    }

    fn node_receive(&mut self, node: NodeId, in_iface: IfaceId, env: Envelope) {
        let role = self.net.nodes[node.idx()].role;
        if env.frame.kind == FrameKind::Routing {
            self.metrics.record_delivered(&env.frame, self.now());
            if role == NodeRole::Router {
                self.on_routing_frame(node, in_iface, &env.frame);
            }
            return;
        }
        if self.net.owns(node, env.frame.dst_addr) {
            self.deliver_local(node, env);
        } else if role == NodeRole::Router {
            self.forward(node, env);
        } else {
            self.record_drop(&env, DropReason::NoRoute);
        }
    }

    /// Hands a frame that reached its destination node to the owning flow.
    pub fn deliver_local(&mut self, node: NodeId, mut env: Envelope) {
        let now = self.now();
        env.frame.received_at = Some(now);
        if let Some(audit) = &self.audit {
            if let Some(orig) = audit.get(&env.frame.id) {
                if !orig.same_content(&env.frame) {
                    self.violations.modified += 1;
                }
            }
        }
        self.metrics.record_delivered(&env.frame, now);
        self.on_flow_delivery(node, env.frame);
    }

    fn forward(&mut self, node: NodeId, mut env: Envelope) {
        env.hops += 1;
        if env.hops > MAX_HOPS {
            self.record_drop(&env, DropReason::TtlExpired);
            return;
        }
        let now = self.now();
        let n = &mut self.net.nodes[node.idx()];
        if let Some(bucket) = n.bucket.as_mut() {
            if !bucket.admit(now) {
                self.record_drop(&env, DropReason::Overload);
                return;
            }
        }
        n.forwarded += 1;
        match self.route_egress(node, env.frame.dst_addr) {
            Some(out) => self.iface_transmit(out, env),
            None => self.record_drop(&env, DropReason::NoRoute),
        }
    }

    pub(crate) fn iface_transmit(&mut self, iface: IfaceId, env: Envelope) {
        match self.net.ifaces[iface.idx()].kind {
            IfaceKind::Port(p) => {
                self.transmit(p, env);
            }
            IfaceKind::Bond(b) => self.bond_transmit(b, env),
        }
    }

    /// Builds a frame originated by `src_iface` and stamps it with a fresh id.
    pub fn new_frame(
        &mut self,
        kind: FrameKind,
        src_iface: IfaceId,
        dst_addr: NetAddress,
        size_bytes: u32,
        conversation: u32,
        seq: u64,
        tag: u64,
    ) -> Frame {
        let src = &self.net.ifaces[src_iface.idx()];
        let dst_mac = match kind {
            FrameKind::Routing => MacAddress::ALL_ROUTERS,
            FrameKind::Lacpdu => MacAddress::SLOW_PROTOCOLS,
            _ => self
                .net
                .iface_of_addr(dst_addr)
                .map(|i| self.net.ifaces[i.idx()].mac)
                .unwrap_or(MacAddress::ZERO),
        };
        self.next_frame_id += 1;
        Frame {
            id: self.next_frame_id,
            src_mac: src.mac,
            dst_mac,
            src_addr: src.addr,
            dst_addr,
            size_bytes: size_bytes.max(1),
            kind,
            conversation,
            seq,
            tag,
            sent_at: self.now(),
            received_at: None,
            control: None,
        }
    }

    /// Originates `frame` at `node`: counts it as sent and routes it out.
    pub fn send_frame(&mut self, node: NodeId, frame: Frame) {
        self.metrics.record_sent(&frame);
        if let Some(audit) = self.audit.as_mut() {
            audit.insert(frame.id, frame.clone());
        }
        let env = Envelope::new(frame);
        if self.net.owns(node, env.frame.dst_addr) {
            self.deliver_local(node, env);
            return;
        }
        match self.route_egress(node, env.frame.dst_addr) {
            Some(out) => self.iface_transmit(out, env),
            None => self.record_drop(&env, DropReason::NoRoute),
        }
    }

    /// Sends a control frame out of one interface without route lookup.
    pub(crate) fn send_control(&mut self, iface: IfaceId, frame: Frame) {
        self.metrics.record_sent(&frame);
        self.iface_transmit(iface, Envelope::new(frame));
    }

    pub(crate) fn record_drop(&mut self, env: &Envelope, reason: DropReason) {
        self.net
            .drop_ledger
            .entry(env.frame.conversation)
            .or_insert([0; DropReason::ALL.len()])[reason.index()] += 1;
        self.metrics.record_drop(&env.frame, reason);
    }

    /// Frames still queued, serializing, propagating or held by a bond, per conversation.
    pub fn in_flight_by_conversation(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        let mut add = |f: &Frame| *out.entry(f.conversation).or_insert(0) += 1;
        for p in &self.net.ports {
            if let Some((e, _)) = &p.busy {
                add(&e.frame);
            }
            for (e, _) in &p.queue {
                add(&e.frame);
            }
        }
        for l in &self.net.links {
            for f in l.in_flight.values() {
                add(&f.env.frame);
            }
        }
        for b in &self.bonds {
            for q in b.holds.values() {
                for e in q {
                    add(&e.frame);
                }
            }
        }
        out
    }
}
