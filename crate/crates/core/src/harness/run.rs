//! Scenario execution: warm-up, convergence, services, failures, drain; plus
//! the randomized failover batches.

use std::net::Ipv4Addr;

use log::{debug, info};
use thiserror::Error;

use crate::bonding::{select_index, BondPolicy};
use crate::engine::{EngineError, SimRng, SimTime};
use crate::metrics::{
    aggregate_downtime, packet_loss_pct, DowntimeReport, Fixed3, QosReport, VoipDelayModel,
};
use crate::netmodel::{DropReason, FrameKind, IfaceId, LinkState, NodeId};
use crate::routing::Route;
use crate::sim::{Sim, SimConfig, Violations};
use crate::traffic::{FlowId, FlowSpec, ProbeSpec};

use super::scenario::{FailureAction, Mode, Scenario, ScenarioError};
use super::topology::{self, resolve_endpoint, Topology};

const N_DROPS: usize = DropReason::ALL.len();

/// Longest time past warm-up we wait for routing to converge.
pub const CONVERGENCE_LIMIT: SimTime = SimTime(120_000_000);
const CONVERGENCE_STEP: SimTime = SimTime(100_000);

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Endpoint(String),
    #[error("routing did not converge by {0}")]
    NotConverged(SimTime),
}

/// Per-conversation accounting: `sent = delivered + drops + in_flight`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservationRow {
    pub label: String,
    pub conv: u32,
    pub sent: u64,
    pub delivered: u64,
    pub drops: [u64; N_DROPS],
    pub in_flight: u64,
    /// Drops as tallied by the network model itself.
    pub ledger_drops: [u64; N_DROPS],
}

impl ConservationRow {
    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.drops.iter().sum::<u64>() + self.in_flight
    }

    /// Loss from the flow counters.
    pub fn metrics_loss(&self) -> Fixed3 {
        packet_loss_pct(self.sent, self.delivered).value
    }

    /// Loss recomputed from the network's drop ledger and residual in-flight frames.
    pub fn ledger_loss(&self) -> Fixed3 {
        let lost = self.ledger_drops.iter().sum::<u64>() + self.in_flight;
        packet_loss_pct(self.sent, self.sent.saturating_sub(lost)).value
    }

    pub fn consistent(&self) -> bool {
        self.balanced() && self.drops == self.ledger_drops && self.metrics_loss() == self.ledger_loss()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteRow {
    pub at: SimTime,
    pub router: String,
    pub network: Ipv4Addr,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRow {
    pub service: String,
    pub kind: FrameKind,
    pub start: SimTime,
    pub stop: SimTime,
    pub end: Option<SimTime>,
    pub bytes: u64,
    pub retransmissions: u64,
}

impl FlowRow {
    pub fn completed(&self) -> bool {
        self.end.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BondRow {
    pub name: String,
    pub tx_frames: u64,
    pub rx_frames: u64,
    pub tx_dropped_down: u64,
    pub held_frames: u64,
    pub failovers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub converged_at: SimTime,
    pub end: SimTime,
    pub qos: Vec<QosReport>,
    pub downtime: Vec<DowntimeReport>,
    pub violations: Violations,
    pub routes: Vec<RouteRow>,
    pub flows: Vec<FlowRow>,
    pub conservation: Vec<ConservationRow>,
    pub bonds: Vec<BondRow>,
}

impl RunResult {
    pub fn conservation_ok(&self) -> bool {
        self.conservation.iter().all(|r| r.consistent())
    }

    pub fn qos_for(&self, service: &str) -> Option<&QosReport> {
        self.qos.iter().find(|q| q.service == service)
    }
}

/// A built and converged world, ready for services.
pub struct Prepared {
    pub sim: Sim,
    pub topo: Topology,
    /// Time services are measured from.
    pub base: SimTime,
}

fn converged(sim: &Sim, topo: &Topology) -> bool {
    let nets = topo.networks();
    topo.routers.iter().all(|r| {
        sim.routing
            .table(*r)
            .is_some_and(|t| nets.iter().all(|n| t.contains_key(n)))
    })
}

/// Builds the topology and runs warm-up until every router reaches every network.
pub fn prepare(s: &Scenario, seed: u64) -> Result<Prepared, RunError> {
    let mut sim = Sim::new(SimConfig {
        seed,
        lacp: s.lacp,
        routing: s.routing,
        audit_frames: s.audit_frames,
    });
    let topo = topology::build(&mut sim, s)?;
    sim.run_until(s.warmup)?;
    let limit = s.warmup + CONVERGENCE_LIMIT;
    while !converged(&sim, &topo) {
        if sim.now() >= limit {
            return Err(RunError::NotConverged(limit));
        }
        let next = sim.now() + CONVERGENCE_STEP;
        sim.run_until(next)?;
    }
    let base = sim.now();
    debug!("converged by {base}");
    Ok(Prepared { sim, topo, base })
}

fn start_services(p: &mut Prepared, s: &Scenario) -> Result<Vec<FlowId>, RunError> {
    let mut ids = Vec::new();
    for (svc, (start, dur)) in s.services.iter().zip(s.service_windows()) {
        let src = resolve_endpoint(&p.sim, &svc.src).map_err(RunError::Endpoint)?;
        let dst = resolve_endpoint(&p.sim, &svc.dst).map_err(RunError::Endpoint)?;
        ids.push(p.sim.start_flow(&svc.name, svc.flow, src, dst, p.base + start, dur));
    }
    Ok(ids)
}

fn describe_route(sim: &Sim, r: Option<Route>) -> String {
    match r {
        None => "-".into(),
        Some(Route { next_hop: None, .. }) => "direct".into(),
        Some(Route {
            next_hop: Some(h), ..
        }) => sim.net.node(h).name.clone(),
    }
}

fn node_name(sim: &Sim, n: NodeId) -> &str {
    &sim.net.node(n).name
}

/// Throughput window: data runs from first send to last delivery, the rest over their schedule.
fn qos_window(sim: &Sim, flow: FlowId, conv: u32) -> SimTime {
    let f = sim.traffic.flow(flow);
    match f.spec {
        FlowSpec::Data(_) => {
            let c = sim.metrics.get(conv);
            match (c.and_then(|c| c.first_sent), c.and_then(|c| c.last_delivery)) {
                (Some(a), Some(b)) if b > a => b - a,
                _ => SimTime(1),
            }
        }
        _ => f.stop - f.start,
    }
}

/// Collects metrics for `flows` once the run has ended.
pub fn collect(p: &Prepared, s: &Scenario, flows: &[FlowId]) -> RunResult {
    let sim = &p.sim;
    let model = VoipDelayModel::default();
    let in_flight = sim.in_flight_by_conversation();
    let mut qos = Vec::new();
    let mut downtime = Vec::new();
    let mut flow_rows = Vec::new();
    let mut conservation = Vec::new();

    for &id in flows {
        let f = sim.traffic.flow(id);
        let mut convs = vec![("fwd", f.conv_fwd)];
        if let Some(c) = f.conv_rev {
            convs.push(("rev", c));
        }
        for &(dir, conv) in &convs {
            let label = format!("{}/{}", f.label, dir);
            let stats = sim.metrics.get(conv).cloned().unwrap_or_default();
            conservation.push(ConservationRow {
                label: label.clone(),
                conv,
                sent: stats.sent,
                delivered: stats.delivered,
                drops: stats.drops,
                in_flight: in_flight.get(&conv).copied().unwrap_or(0),
                ledger_drops: sim.net.drop_ledger.get(&conv).copied().unwrap_or([0; N_DROPS]),
            });
            let report_dir = match f.spec {
                FlowSpec::Voip(v) if v.bidirectional => true,
                FlowSpec::Probe(_) => false,
                _ => dir == "fwd",
            };
            if !report_dir {
                continue;
            }
            let name = match f.spec {
                FlowSpec::Voip(v) if v.bidirectional => label,
                _ => f.label.clone(),
            };
            let mut stats = stats;
            stats.kind.get_or_insert(f.spec.kind());
            qos.push(QosReport::from_stats(
                &name,
                &stats,
                qos_window(sim, id, conv),
                f.spec.header_overhead(),
                &model,
            ));
        }
        if let Some(d) = f.downtime() {
            downtime.push(d);
        }
        let rec = f.record();
        flow_rows.push(FlowRow {
            service: f.label.clone(),
            kind: f.spec.kind(),
            start: f.start,
            stop: f.stop,
            end: rec.end,
            bytes: rec.bytes,
            retransmissions: rec.retransmissions,
        });
    }

    // Control traffic shares conversation 0.
    if let Some(c) = sim.metrics.get(0) {
        conservation.push(ConservationRow {
            label: "control".into(),
            conv: 0,
            sent: c.sent,
            delivered: c.delivered,
            drops: c.drops,
            in_flight: in_flight.get(&0).copied().unwrap_or(0),
            ledger_drops: sim.net.drop_ledger.get(&0).copied().unwrap_or([0; N_DROPS]),
        });
    }

    let routes = sim
        .routing
        .log
        .iter()
        .map(|c| RouteRow {
            at: c.at,
            router: node_name(sim, c.router).to_string(),
            network: c.network,
            old: describe_route(sim, c.old),
            new: describe_route(sim, c.new),
        })
        .collect();

    let bonds = sim
        .bonds
        .iter()
        .map(|b| {
            let iface = sim.net.iface(b.iface);
            BondRow {
                name: format!("{}@{}", iface.addr, node_name(sim, b.node)),
                tx_frames: b.counters.tx_frames,
                rx_frames: b.counters.rx_frames,
                tx_dropped_down: b.counters.tx_dropped_down,
                held_frames: b.counters.held_frames,
                failovers: b.failovers.len(),
            }
        })
        .collect();

    RunResult {
        scenario: s.name.clone(),
        mode: s.mode,
        seed: sim.seed(),
        converged_at: p.base,
        end: sim.now(),
        qos,
        downtime,
        violations: sim.total_violations(),
        routes,
        flows: flow_rows,
        conservation,
        bonds,
    }
}

fn schedule_failures(p: &mut Prepared, s: &Scenario) -> Result<(), RunError> {
    for (i, f) in s.failures.iter().enumerate() {
        let links = p
            .topo
            .failure_links(&f.target)
            .map_err(|m| ScenarioError::invalid(format!("failures[{i}].target"), None, m))?;
        let state = match f.action {
            FailureAction::Cut => LinkState::Down,
            FailureAction::Restore => LinkState::Up,
        };
        for l in links {
            p.sim
                .set_link_state(l, state, p.base + f.at)
                .map_err(|e| ScenarioError::invalid(format!("failures[{i}].at_s"), None, e.to_string()))?;
        }
    }
    Ok(())
}

/// Starts services, schedules failures and runs to the end of the drain.
pub fn execute(p: &mut Prepared, s: &Scenario) -> Result<Vec<FlowId>, RunError> {
    let flows = start_services(p, s)?;
    schedule_failures(p, s)?;
    let end = p.base + s.active_span() + s.drain;
    p.sim.run_until(end)?;
    Ok(flows)
}

/// Runs one scenario end to end.
pub fn run(s: &Scenario) -> Result<RunResult, RunError> {
    s.validate()?;
    let mut p = prepare(s, s.seed)?;
    let flows = execute(&mut p, s)?;
    let r = collect(&p, s, &flows);
    info!(
        "{} ({}): {} flows, {} violations",
        r.scenario,
        r.mode.as_str(),
        r.flows.len(),
        r.violations.total()
    );
    Ok(r)
}

// ---- failover batches ----

/// What the prober pings in a single-link cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellTarget {
    Server,
    ServerGateway,
    Client,
    ClientGateway,
}

impl CellTarget {
    pub const ALL: [CellTarget; 4] = [
        CellTarget::Server,
        CellTarget::ServerGateway,
        CellTarget::Client,
        CellTarget::ClientGateway,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CellTarget::Server => "server",
            CellTarget::ServerGateway => "server-gw",
            CellTarget::Client => "client",
            CellTarget::ClientGateway => "client-gw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    pub cell: String,
    pub trial: u32,
    pub seed: u64,
    pub cut_at: SimTime,
    pub downtime: SimTime,
    pub timeouts: u64,
    pub episodes: usize,
    pub probe_interval: SimTime,
    pub services_completed: bool,
    pub violations: Violations,
    pub conservation_ok: bool,
}

impl TrialResult {
    pub fn downtime_is_multiple(&self) -> bool {
        self.downtime.as_micros().is_multiple_of(self.probe_interval.as_micros())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellResult {
    pub name: String,
    pub mean_ms: Fixed3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchResult {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub links: u8,
    pub trials: Vec<TrialResult>,
    pub cells: Vec<CellResult>,
    pub mean_ms: Fixed3,
}

impl BatchResult {
    pub fn min(&self) -> SimTime {
        self.trials.iter().map(|t| t.downtime).min().unwrap_or(SimTime::ZERO)
    }

    pub fn max(&self) -> SimTime {
        self.trials.iter().map(|t| t.downtime).max().unwrap_or(SimTime::ZERO)
    }
}

/// Seed of trial `idx`, independent of how many trials run.
pub fn trial_seed(base: u64, idx: u64) -> u64 {
    SimRng::new(base).fork(idx).seed()
}

#[derive(Debug, Clone)]
struct TrialPlan {
    cell: String,
    trial: u32,
    seed: u64,
    /// Adjacency index and target for one-link cells.
    prober: Option<(usize, CellTarget)>,
}

fn probe_spec(s: &Scenario) -> ProbeSpec {
    s.services
        .iter()
        .find_map(|x| match x.flow {
            FlowSpec::Probe(p) => Some(p),
            _ => None,
        })
        .unwrap_or_default()
}

fn target_iface(topo: &Topology, t: CellTarget) -> (IfaceId, NodeId) {
    let (lan, host_side) = match t {
        CellTarget::Server => (&topo.lans[0], true),
        CellTarget::ServerGateway => (&topo.lans[0], false),
        CellTarget::Client => (&topo.lans[1], true),
        CellTarget::ClientGateway => (&topo.lans[1], false),
    };
    let iface = if host_side { lan.host_iface } else { lan.router_iface };
    (iface, lan.router)
}

fn run_trial(s: &Scenario, plan: &TrialPlan) -> Result<TrialResult, RunError> {
    let mut p = prepare(s, plan.seed)?;
    let probe = probe_spec(s);
    let fo = s.failover;
    let services: Vec<_> = s
        .services
        .iter()
        .filter(|x| !matches!(x.flow, FlowSpec::Probe(_)))
        .cloned()
        .collect();
    let svc_scenario = Scenario {
        services,
        ..s.clone()
    };
    let flows = start_services(&mut p, &svc_scenario)?;

    let (src, dst, links) = match plan.prober {
        Some((adj_index, target)) => {
            let adj = &p.topo.adjacencies[adj_index];
            let (dst, target_router) = target_iface(&p.topo, target);
            let near_a = p.topo.ring_distance(adj.ends.0, target_router);
            let near_b = p.topo.ring_distance(adj.ends.1, target_router);
            let src = if near_a >= near_b { adj.ifaces.0 } else { adj.ifaces.1 };
            let members = adj.links.len();
            let cut = match p.sim.bond_of_iface(src) {
                Some(b) => select_index(BondPolicy::DestMacModN, p.sim.bonds[b.idx()].mac, members, 0),
                None => 0,
            };
            (src, dst, vec![adj.links[cut]])
        }
        None => {
            let adj = p.topo.adjacencies.last().expect("ring has adjacencies");
            (p.topo.lans[1].host_iface, p.topo.lans[0].host_iface, adj.links.clone())
        }
    };

    let mut rng = SimRng::new(plan.seed).fork(0xC07);
    let (lo, hi) = fo.cut_window;
    let cut_at = p.base + SimTime(rng.range_u64(lo.as_micros(), hi.as_micros()));
    let probe_span = hi + fo.observe_after_cut;
    let probe_id = p
        .sim
        .start_flow("probe", FlowSpec::Probe(probe), src, dst, p.base, probe_span);
    for l in links {
        p.sim.set_link_state(l, LinkState::Down, cut_at).expect("cut is after now");
    }
    let end = p.base + probe_span.max(svc_scenario.active_span()) + s.drain;
    p.sim.run_until(end)?;

    let mut all = flows.clone();
    all.push(probe_id);
    let r = collect(&p, &svc_scenario, &all);
    let d = p.sim.traffic.flow(probe_id).downtime().expect("probe flow");
    let services_completed = r
        .flows
        .iter()
        .filter(|f| f.kind != FrameKind::Probe)
        .all(|f| f.completed());
    Ok(TrialResult {
        cell: plan.cell.clone(),
        trial: plan.trial,
        seed: plan.seed,
        cut_at: cut_at - p.base,
        downtime: d.total(),
        timeouts: d.episodes.iter().map(|e| e.timeouts).sum(),
        episodes: d.episodes.len(),
        probe_interval: d.interval,
        services_completed,
        violations: r.violations,
        conservation_ok: r.conservation_ok(),
    })
}

fn run_plans(s: &Scenario, plans: &[TrialPlan]) -> Result<Vec<TrialResult>, RunError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        plans.par_iter().map(|p| run_trial(s, p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        plans.iter().map(|p| run_trial(s, p)).collect()
    }
}

/// Randomized failover batch. One-link batches cover every (network, target)
/// cell `trials_per_cell` times; two-link batches cut the whole last adjacency
/// under a client-to-server probe `trials` times.
pub fn run_failover_batch(s: &Scenario) -> Result<BatchResult, RunError> {
    s.validate()?;
    let fo = s.failover;
    let mut plans = Vec::new();
    let mut idx = 0u64;
    if fo.links == 1 {
        for k in 0..s.topology.routers {
            for t in CellTarget::ALL {
                for trial in 0..fo.trials_per_cell {
                    plans.push(TrialPlan {
                        cell: format!("net{}/{}", k + 1, t.as_str()),
                        trial,
                        seed: trial_seed(s.seed, idx),
                        prober: Some((k, t)),
                    });
                    idx += 1;
                }
            }
        }
    } else {
        let adj = s.adjacency_names().pop().unwrap_or_default();
        for trial in 0..fo.trials {
            plans.push(TrialPlan {
                cell: adj.clone(),
                trial,
                seed: trial_seed(s.seed, idx),
                prober: None,
            });
            idx += 1;
        }
    }
    let trials = run_plans(s, &plans)?;

    let mut cells: Vec<CellResult> = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for t in &trials {
        if !names.contains(&t.cell.as_str()) {
            names.push(&t.cell);
        }
    }
    for name in names {
        let d: Vec<SimTime> = trials.iter().filter(|t| t.cell == name).map(|t| t.downtime).collect();
        cells.push(CellResult {
            name: name.to_string(),
            mean_ms: aggregate_downtime(&d),
        });
    }
    let all: Vec<SimTime> = trials.iter().map(|t| t.downtime).collect();
    Ok(BatchResult {
        scenario: s.name.clone(),
        mode: s.mode,
        seed: s.seed,
        links: fo.links,
        mean_ms: aggregate_downtime(&all),
        trials,
        cells,
    })
}
