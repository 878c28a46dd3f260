//! Scenario files: TOML with every key optional, unknown keys rejected, and
//! validation errors that name the offending key and line.

use std::net::Ipv4Addr;
use std::path::Path;

use log::warn;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::bonding::{BondPolicy, MiiConfig};
use crate::engine::SimTime;
use crate::lacp::LacpConfig;
use crate::routing::{DetectionMode, RoutingConfig};
use crate::traffic::{DataFlowSpec, FlowSpec, ProbeSpec, VideoFlowSpec, VoipFlowSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}`{key}`: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

impl ScenarioError {
    pub fn invalid(key: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            key: key.into(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Bonded,
    SingleLink,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bonded => "BONDED",
            Mode::SingleLink => "SINGLE_LINK",
        }
    }
}

/// How services without an explicit start share the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Concurrent,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureAction {
    Cut,
    Restore,
}

/// Where a flow starts or ends: a node's first interface or a specific address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Node(String),
    Addr(Ipv4Addr),
}

impl Endpoint {
    pub fn parse(s: &str) -> Endpoint {
        match s.parse::<Ipv4Addr>() {
            Ok(a) => Endpoint::Addr(a),
            Err(_) => Endpoint::Node(s.to_string()),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Node(n) => write!(f, "{n}"),
            Endpoint::Addr(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    pub name: String,
    pub flow: FlowSpec,
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Offset from the end of warm-up; `None` follows the layout.
    pub start: Option<SimTime>,
    pub duration: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureSpec {
    /// Adjacency name ("r1-r2") or one member link ("r1-r2/0").
    pub target: String,
    pub action: FailureAction,
    /// Offset from the end of warm-up.
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyConfig {
    pub routers: usize,
    pub link_speed_bps: u64,
    pub host_speed_bps: u64,
    pub propagation_us: u64,
    pub queue_capacity_frames: usize,
    pub forward_capacity_fps: u64,
    pub members_per_bond: usize,
    pub interframe_gap_bytes: u32,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            routers: 4,
            link_speed_bps: 100_000_000,
            host_speed_bps: 100_000_000,
            propagation_us: 5,
            queue_capacity_frames: 100,
            forward_capacity_fps: 20_000,
            members_per_bond: 2,
            interframe_gap_bytes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailoverConfig {
    /// 1: cut one member of a bond; 2: cut every member of one adjacency.
    pub links: u8,
    pub trials_per_cell: u32,
    /// Trial count for the dual-link experiment.
    pub trials: u32,
    /// Cut instant is uniform in this window, relative to the end of warm-up.
    pub cut_window: (SimTime, SimTime),
    /// Probe keeps running this long after the cut.
    pub observe_after_cut: SimTime,
}

impl Default for FailoverConfig {
    fn default() -> Self {
        FailoverConfig {
            links: 1,
            trials_per_cell: 3,
            trials: 10,
            cut_window: (SimTime::from_secs(5), SimTime::from_secs(6)),
            observe_after_cut: SimTime::from_secs(5),
        }
    }
}

impl FailoverConfig {
    pub fn dual_link_default() -> Self {
        FailoverConfig {
            links: 2,
            cut_window: (SimTime::from_secs(10), SimTime::from_secs(20)),
            observe_after_cut: SimTime::from_secs(45),
            ..FailoverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub layout: Layout,
    /// Length of one service window.
    pub duration: SimTime,
    pub warmup: SimTime,
    pub drain: SimTime,
    pub topology: TopologyConfig,
    pub mii: MiiConfig,
    pub policy: BondPolicy,
    pub lacp: LacpConfig,
    pub routing: RoutingConfig,
    pub services: Vec<ServiceSpec>,
    pub failures: Vec<FailureSpec>,
    pub failover: FailoverConfig,
    pub audit_frames: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 1,
            mode: Mode::Bonded,
            layout: Layout::Concurrent,
            duration: SimTime::from_secs(30),
            warmup: SimTime::from_secs(2),
            drain: SimTime::from_secs(1),
            topology: TopologyConfig::default(),
            mii: MiiConfig::default(),
            policy: BondPolicy::DestMacModN,
            lacp: LacpConfig::default(),
            routing: RoutingConfig::default(),
            services: default_services(),
            failures: Vec::new(),
            failover: FailoverConfig::default(),
            audit_frames: true,
        }
    }
}

/// Video to client2, two-way voice with client1, and a bulk download to client1.
pub fn default_services() -> Vec<ServiceSpec> {
    let svc = |name: &str, flow, dst: &str| ServiceSpec {
        name: name.into(),
        flow,
        src: Endpoint::Node("server".into()),
        dst: Endpoint::Node(dst.into()),
        start: None,
        duration: None,
    };
    vec![
        svc("video", FlowSpec::Video(VideoFlowSpec::default()), "client2"),
        svc("voice", FlowSpec::Voip(VoipFlowSpec::default()), "client1"),
        svc("data", FlowSpec::Data(DataFlowSpec::default()), "client1"),
    ]
}

impl Scenario {
    /// Start offset of every service after warm-up, following the layout.
    pub fn service_windows(&self) -> Vec<(SimTime, SimTime)> {
        let mut slot = 0u64;
        self.services
            .iter()
            .map(|s| {
                let dur = s.duration.unwrap_or(self.duration);
                let start = match (s.start, self.layout) {
                    (Some(t), _) => t,
                    (None, Layout::Concurrent) => SimTime::ZERO,
                    (None, Layout::Sequential) => {
                        let t = SimTime(self.duration.as_micros() * slot);
                        slot += 1;
                        t
                    }
                };
                (start, dur)
            })
            .collect()
    }

    /// Time after warm-up covered by services (at least one window).
    pub fn active_span(&self) -> SimTime {
        self.service_windows()
            .iter()
            .map(|(s, d)| *s + *d)
            .max()
            .unwrap_or(SimTime::ZERO)
            .max(self.duration)
    }

    pub fn node_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.topology.routers).map(|i| format!("r{i}")).collect();
        v.extend(["server", "client1", "client2"].map(String::from));
        v
    }

    pub fn adjacency_names(&self) -> Vec<String> {
        let n = self.topology.routers;
        (1..=n).map(|i| format!("r{}-r{}", i, i % n + 1)).collect()
    }

    /// Checks cross-field constraints that do not depend on source positions.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let v = |k: &str, m: String| Err(ScenarioError::invalid(k, None, m));
        if self.duration == SimTime::ZERO {
            return v("duration_s", "must be positive".into());
        }
        if !(3..=200).contains(&self.topology.routers) {
            return v("topology.routers", "must be between 3 and 200".into());
        }
        if self.topology.link_speed_bps == 0 || self.topology.host_speed_bps == 0 {
            return v("topology.link_speed_bps", "port speeds must be positive".into());
        }
        if self.topology.members_per_bond == 0 {
            return v("topology.members_per_bond", "must be at least 1".into());
        }
        if let Err(m) = self.routing.validate() {
            return v("routing.dead_interval_s", m);
        }
        let names = self.node_names();
        for (i, s) in self.services.iter().enumerate() {
            for (which, e) in [("src", &s.src), ("dst", &s.dst)] {
                if let Endpoint::Node(n) = e {
                    if !names.contains(n) {
                        return v(&format!("services[{i}].{which}"), format!("unknown node `{n}`"));
                    }
                }
            }
        }
        let span = self.active_span();
        let adj = self.adjacency_names();
        for (i, f) in self.failures.iter().enumerate() {
            if f.at > span {
                return v(
                    &format!("failures[{i}].at_s"),
                    format!("{} s is after the end of the run ({} s)", f.at.as_secs_f64(), span.as_secs_f64()),
                );
            }
            let base = f.target.split('/').next().unwrap_or_default();
            if !adj.iter().any(|a| a == base) {
                return v(&format!("failures[{i}].target"), format!("unknown adjacency `{}`", f.target));
            }
        }
        if !(1..=2).contains(&self.failover.links) {
            return v("failover.links", "must be 1 or 2".into());
        }
        if self.failover.cut_window.1 < self.failover.cut_window.0 {
            return v("failover.cut_window_s", "window end precedes start".into());
        }
        Ok(())
    }
}

// ---- file schema ----

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    name: Option<String>,
    seed: Option<u64>,
    mode: Option<Mode>,
    layout: Option<Layout>,
    duration_s: Option<Spanned<f64>>,
    warmup_s: Option<f64>,
    drain_s: Option<f64>,
    audit_frames: Option<bool>,
    #[serde(default)]
    topology: FileTopology,
    #[serde(default)]
    mii: FileMii,
    #[serde(default)]
    lacp: FileLacp,
    routing: Option<Spanned<FileRouting>>,
    services: Option<Vec<Spanned<FileService>>>,
    #[serde(default)]
    failures: Vec<Spanned<FileFailure>>,
    #[serde(default)]
    failover: Option<Spanned<FileFailover>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileTopology {
    routers: Option<usize>,
    link_speed_bps: Option<u64>,
    host_speed_bps: Option<u64>,
    propagation_us: Option<u64>,
    queue_capacity_frames: Option<usize>,
    forward_capacity_fps: Option<u64>,
    members_per_bond: Option<usize>,
    interframe_gap_bytes: Option<u32>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
enum FilePolicy {
    DestMacModN,
    RoundRobin,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileMii {
    poll_interval_ms: Option<u64>,
    updelay_ms: Option<u64>,
    downdelay_ms: Option<u64>,
    policy: Option<FilePolicy>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileLacp {
    enabled: Option<bool>,
    tx_interval_ms: Option<u64>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
enum FileDetection {
    DeadInterval,
    CarrierTriggered,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileRouting {
    hello_interval_s: Option<f64>,
    dead_interval_s: Option<f64>,
    spf_delay_ms: Option<u64>,
    detection_mode: Option<FileDetection>,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum FileKind {
    Voip,
    Video,
    Data,
    Probe,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileService {
    kind: FileKind,
    name: Option<String>,
    src: Option<String>,
    dst: Option<String>,
    start_s: Option<f64>,
    duration_s: Option<f64>,
    payload_bytes: Option<u32>,
    header_overhead_bytes: Option<u32>,
    frame_interval_ms: Option<u64>,
    bidirectional: Option<bool>,
    video_bitrate_bps: Option<u64>,
    audio_bitrate_bps: Option<u64>,
    packet_payload_bytes: Option<u32>,
    total_bytes: Option<u64>,
    segment_bytes: Option<u32>,
    window_segments: Option<u32>,
    ack_bytes: Option<u32>,
    interval_ms: Option<u64>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFailure {
    target: String,
    action: FailureAction,
    at_s: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileFailover {
    links: Option<u8>,
    trials_per_cell: Option<u32>,
    trials: Option<u32>,
    cut_window_s: Option<[f64; 2]>,
    observe_after_cut_s: Option<f64>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn secs(key: &str, line: Option<usize>, v: f64) -> Result<SimTime, ScenarioError> {
    if !v.is_finite() || v < 0.0 {
        return Err(ScenarioError::invalid(key, line, format!("{v} is not a non-negative number of seconds")));
    }
    Ok(SimTime::from_secs_f64(v))
}

impl FileService {
    fn resolve(self, i: usize, line: usize) -> Result<ServiceSpec, ScenarioError> {
        let key = |k: &str| format!("services[{i}].{k}");
        let allowed: &[&str] = match self.kind {
            FileKind::Voip => &["payload_bytes", "header_overhead_bytes", "frame_interval_ms", "bidirectional"],
            FileKind::Video => &["header_overhead_bytes", "video_bitrate_bps", "audio_bitrate_bps", "packet_payload_bytes"],
            FileKind::Data => &["header_overhead_bytes", "total_bytes", "segment_bytes", "window_segments", "ack_bytes"],
            FileKind::Probe => &["payload_bytes", "header_overhead_bytes", "interval_ms", "timeout_ms"],
        };
        let present = [
            ("payload_bytes", self.payload_bytes.is_some()),
            ("header_overhead_bytes", self.header_overhead_bytes.is_some()),
            ("frame_interval_ms", self.frame_interval_ms.is_some()),
            ("bidirectional", self.bidirectional.is_some()),
            ("video_bitrate_bps", self.video_bitrate_bps.is_some()),
            ("audio_bitrate_bps", self.audio_bitrate_bps.is_some()),
            ("packet_payload_bytes", self.packet_payload_bytes.is_some()),
            ("total_bytes", self.total_bytes.is_some()),
            ("segment_bytes", self.segment_bytes.is_some()),
            ("window_segments", self.window_segments.is_some()),
            ("ack_bytes", self.ack_bytes.is_some()),
            ("interval_ms", self.interval_ms.is_some()),
            ("timeout_ms", self.timeout_ms.is_some()),
        ];
        for (k, set) in present {
            if set && !allowed.contains(&k) {
                return Err(ScenarioError::invalid(
                    key(k),
                    Some(line),
                    format!("not a parameter of {:?} services", self.kind).to_lowercase(),
                ));
            }
        }
        let positive = |k: &str, v: u64| {
            if v == 0 {
                Err(ScenarioError::invalid(key(k), Some(line), "must be positive"))
            } else {
                Ok(())
            }
        };
        let flow = match self.kind {
            FileKind::Voip => {
                let d = VoipFlowSpec::default();
                let s = VoipFlowSpec {
                    payload_bytes: self.payload_bytes.unwrap_or(d.payload_bytes),
                    frame_interval_ms: self.frame_interval_ms.unwrap_or(d.frame_interval_ms),
                    header_overhead_bytes: self.header_overhead_bytes.unwrap_or(d.header_overhead_bytes),
                    bidirectional: self.bidirectional.unwrap_or(d.bidirectional),
                };
                positive("frame_interval_ms", s.frame_interval_ms)?;
                FlowSpec::Voip(s)
            }
            FileKind::Video => {
                let d = VideoFlowSpec::default();
                let s = VideoFlowSpec {
                    video_bitrate_bps: self.video_bitrate_bps.unwrap_or(d.video_bitrate_bps),
                    audio_bitrate_bps: self.audio_bitrate_bps.unwrap_or(d.audio_bitrate_bps),
                    packet_payload_bytes: self.packet_payload_bytes.unwrap_or(d.packet_payload_bytes),
                    header_overhead_bytes: self.header_overhead_bytes.unwrap_or(d.header_overhead_bytes),
                };
                positive("video_bitrate_bps", s.media_bitrate_bps())?;
                positive("packet_payload_bytes", s.packet_payload_bytes as u64)?;
                FlowSpec::Video(s)
            }
            FileKind::Data => {
                let d = DataFlowSpec::default();
                let s = DataFlowSpec {
                    total_bytes: self.total_bytes.unwrap_or(d.total_bytes),
                    segment_bytes: self.segment_bytes.unwrap_or(d.segment_bytes),
                    window_segments: self.window_segments.unwrap_or(d.window_segments),
                    ack_bytes: self.ack_bytes.unwrap_or(d.ack_bytes),
                    header_overhead_bytes: self.header_overhead_bytes.unwrap_or(d.header_overhead_bytes),
                };
                positive("segment_bytes", s.segment_bytes as u64)?;
                positive("window_segments", s.window_segments as u64)?;
                FlowSpec::Data(s)
            }
            FileKind::Probe => {
                let d = ProbeSpec::default();
                let s = ProbeSpec {
                    payload_bytes: self.payload_bytes.unwrap_or(d.payload_bytes),
                    interval_ms: self.interval_ms.unwrap_or(d.interval_ms),
                    timeout_ms: self.timeout_ms.unwrap_or(d.timeout_ms),
                    header_overhead_bytes: self.header_overhead_bytes.unwrap_or(d.header_overhead_bytes),
                };
                positive("interval_ms", s.interval_ms)?;
                FlowSpec::Probe(s)
            }
        };
        let default_dst = match self.kind {
            FileKind::Video => "client2",
            _ => "client1",
        };
        Ok(ServiceSpec {
            name: self
                .name
                .unwrap_or_else(|| format!("{:?}{}", self.kind, i).to_lowercase()),
            flow,
            src: Endpoint::parse(self.src.as_deref().unwrap_or("server")),
            dst: Endpoint::parse(self.dst.as_deref().unwrap_or(default_dst)),
            start: self.start_s.map(|v| secs(&key("start_s"), Some(line), v)).transpose()?,
            duration: self
                .duration_s
                .map(|v| secs(&key("duration_s"), Some(line), v))
                .transpose()?,
        })
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(src: &str) -> Result<Scenario, ScenarioError> {
    let file: FileScenario = toml::from_str(src).map_err(|e| ScenarioError::Parse {
        line: e.span().map(|s| line_of(src, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    let mut s = Scenario::default();
    let line = |span: std::ops::Range<usize>| Some(line_of(src, span.start));

    if let Some(n) = file.name {
        s.name = n;
    }
    if let Some(v) = file.seed {
        s.seed = v;
    }
    if let Some(v) = file.mode {
        s.mode = v;
    }
    if let Some(v) = file.layout {
        s.layout = v;
    }
    if let Some(v) = file.audit_frames {
        s.audit_frames = v;
    }
    if let Some(d) = &file.duration_s {
        s.duration = secs("duration_s", line(d.span()), *d.get_ref())?;
        if s.duration == SimTime::ZERO {
            return Err(ScenarioError::invalid("duration_s", line(d.span()), "must be positive"));
        }
    }
    if let Some(v) = file.warmup_s {
        s.warmup = secs("warmup_s", None, v)?;
    }
    if let Some(v) = file.drain_s {
        s.drain = secs("drain_s", None, v)?;
    }

    let t = &file.topology;
    let d = TopologyConfig::default();
    s.topology = TopologyConfig {
        routers: t.routers.unwrap_or(d.routers),
        link_speed_bps: t.link_speed_bps.unwrap_or(d.link_speed_bps),
        host_speed_bps: t.host_speed_bps.unwrap_or(d.host_speed_bps),
        propagation_us: t.propagation_us.unwrap_or(d.propagation_us),
        queue_capacity_frames: t.queue_capacity_frames.unwrap_or(d.queue_capacity_frames),
        forward_capacity_fps: t.forward_capacity_fps.unwrap_or(d.forward_capacity_fps),
        members_per_bond: t.members_per_bond.unwrap_or(d.members_per_bond),
        interframe_gap_bytes: t.interframe_gap_bytes.unwrap_or(d.interframe_gap_bytes),
    };
    if s.topology.members_per_bond == 1 && s.mode == Mode::Bonded {
        warn!("bonds with a single member behave as single links");
    }

    let m = &file.mii;
    let dm = MiiConfig::default();
    s.mii = MiiConfig {
        poll_interval_ms: m.poll_interval_ms.unwrap_or(dm.poll_interval_ms),
        updelay_ms: m.updelay_ms.unwrap_or(dm.updelay_ms),
        downdelay_ms: m.downdelay_ms.unwrap_or(dm.downdelay_ms),
    };
    s.policy = match m.policy {
        Some(FilePolicy::RoundRobin) => BondPolicy::RoundRobin,
        _ => BondPolicy::DestMacModN,
    };

    if let Some(v) = file.lacp.enabled {
        s.lacp.enabled = v;
    }
    if let Some(v) = file.lacp.tx_interval_ms {
        if v == 0 {
            return Err(ScenarioError::invalid("lacp.tx_interval_ms", None, "must be positive"));
        }
        s.lacp.tx_interval = SimTime::from_millis(v);
    }

    if let Some(r) = &file.routing {
        let ln = line(r.span());
        let r = r.get_ref();
        if let Some(v) = r.hello_interval_s {
            s.routing.hello_interval = secs("routing.hello_interval_s", ln, v)?;
        }
        if let Some(v) = r.dead_interval_s {
            s.routing.dead_interval = secs("routing.dead_interval_s", ln, v)?;
        }
        if let Some(v) = r.spf_delay_ms {
            s.routing.spf_delay = SimTime::from_millis(v);
        }
        if let Some(m) = r.detection_mode {
            s.routing.detection_mode = match m {
                FileDetection::DeadInterval => DetectionMode::DeadInterval,
                FileDetection::CarrierTriggered => DetectionMode::CarrierTriggered,
            };
        }
        s.routing
            .validate()
            .map_err(|m| ScenarioError::invalid("routing.dead_interval_s", ln, m))?;
    }

    if let Some(services) = file.services {
        s.services = Vec::new();
        for (i, sp) in services.into_iter().enumerate() {
            let ln = line_of(src, sp.span().start);
            s.services.push(sp.into_inner().resolve(i, ln)?);
        }
    }

    if let Some(fo) = &file.failover {
        let ln = line(fo.span());
        let f = fo.get_ref();
        let links = f.links.unwrap_or(1);
        let mut c = if links == 2 {
            FailoverConfig::dual_link_default()
        } else {
            FailoverConfig::default()
        };
        c.links = links;
        if let Some(v) = f.trials_per_cell {
            c.trials_per_cell = v;
        }
        if let Some(v) = f.trials {
            c.trials = v;
        }
        if let Some([a, b]) = f.cut_window_s {
            c.cut_window = (
                secs("failover.cut_window_s", ln, a)?,
                secs("failover.cut_window_s", ln, b)?,
            );
        }
        if let Some(v) = f.observe_after_cut_s {
            c.observe_after_cut = secs("failover.observe_after_cut_s", ln, v)?;
        }
        s.failover = c;
    }

    let mut failure_lines = Vec::new();
    for (i, f) in file.failures.into_iter().enumerate() {
        let ln = line_of(src, f.span().start);
        let f = f.into_inner();
        s.failures.push(FailureSpec {
            target: f.target,
            action: f.action,
            at: secs(&format!("failures[{i}].at_s"), Some(ln), f.at_s)?,
        });
        failure_lines.push(ln);
    }

    // Re-run cross-field checks, attaching source lines where known.
    s.validate().map_err(|e| match e {
        ScenarioError::Invalid { key, line: None, message } => {
            let ln = key
                .strip_prefix("failures[")
                .and_then(|r| r.split(']').next())
                .and_then(|n| n.parse::<usize>().ok())
                .and_then(|i| failure_lines.get(i).copied())
                .or_else(|| file.duration_s.as_ref().filter(|_| key == "duration_s").map(|d| line_of(src, d.span().start)));
            ScenarioError::Invalid { key, line: ln, message }
        }
        other => other,
    })?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let src = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_scenario(&src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gives_default_topology() {
        let s = parse_scenario("mode = \"BONDED\"\n").unwrap();
        assert_eq!(s.topology, TopologyConfig::default());
        assert_eq!(s.topology.routers, 4);
        assert_eq!(s.topology.members_per_bond, 2);
        assert_eq!(s.services.len(), 3);
        assert_eq!(s.mode, Mode::Bonded);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = parse_scenario("mode = \"BONDED\"\n\n[mii]\npoll_interval = 5\n").unwrap_err();
        match e {
            ScenarioError::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("poll_interval"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn failure_after_end_rejected() {
        let src = "duration_s = 10\n\n[[failures]]\ntarget = \"r1-r2/0\"\naction = \"CUT\"\nat_s = 11\n";
        let e = parse_scenario(src).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("failures[0].at_s"), "{msg}");
        assert!(msg.starts_with("line 3"), "{msg}");
    }

    #[test]
    fn single_member_bond_accepted() {
        let s = parse_scenario("[topology]\nmembers_per_bond = 1\n").unwrap();
        assert_eq!(s.topology.members_per_bond, 1);
    }

    #[test]
    fn dead_not_above_hello_rejected() {
        let e = parse_scenario("[routing]\nhello_interval_s = 10\ndead_interval_s = 10\n").unwrap_err();
        assert!(e.to_string().contains("routing.dead_interval_s"));
    }

    #[test]
    fn service_parameter_for_wrong_kind_rejected() {
        let src = "[[services]]\nkind = \"voip\"\ntotal_bytes = 5\n";
        let e = parse_scenario(src).unwrap_err();
        assert!(e.to_string().contains("services[0].total_bytes"), "{e}");
    }

    #[test]
    fn unknown_node_rejected() {
        let src = "[[services]]\nkind = \"probe\"\nsrc = \"r9\"\n";
        assert!(parse_scenario(src).unwrap_err().to_string().contains("unknown node"));
    }

    #[test]
    fn sequential_layout_gives_disjoint_windows() {
        let s = parse_scenario("layout = \"sequential\"\nduration_s = 30\n").unwrap();
        let w = s.service_windows();
        assert_eq!(w[0], (SimTime::ZERO, SimTime::from_secs(30)));
        assert_eq!(w[1].0, SimTime::from_secs(30));
        assert_eq!(w[2].0, SimTime::from_secs(60));
        assert_eq!(s.active_span(), SimTime::from_secs(90));
    }

    #[test]
    fn full_file_round_trip() {
        let src = r#"
name = "full"
seed = 9
mode = "SINGLE_LINK"
duration_s = 12.5
[topology]
forward_capacity_fps = 10000
[mii]
poll_interval_ms = 50
policy = "ROUND_ROBIN"
[routing]
detection_mode = "CARRIER_TRIGGERED"
[[services]]
kind = "probe"
src = "client1"
dst = "172.16.1.2"
[[failures]]
target = "r4-r1"
action = "CUT"
at_s = 5
[failover]
links = 2
trials = 4
"#;
        let s = parse_scenario(src).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.mode, Mode::SingleLink);
        assert_eq!(s.duration, SimTime(12_500_000));
        assert_eq!(s.policy, BondPolicy::RoundRobin);
        assert_eq!(s.routing.detection_mode, DetectionMode::CarrierTriggered);
        assert_eq!(s.services[0].dst, Endpoint::Addr(Ipv4Addr::new(172, 16, 1, 2)));
        assert_eq!(s.failures[0].action, FailureAction::Cut);
        assert_eq!(s.failover.links, 2);
        assert_eq!(s.failover.trials, 4);
        assert_eq!(s.failover.cut_window.0, SimTime::from_secs(10));
    }
}
