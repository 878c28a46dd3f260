//! Service sources: bidirectional VoIP, CBR video, a go-back-N windowed file
//! transfer, and the 20 ms ping probe whose timeouts measure downtime.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::engine::{EventHandle, SimTime};
use crate::metrics::OutageEpisode;
use crate::netmodel::{Frame, FrameKind, IfaceId, NodeId};
use crate::sim::{Event, Sim};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoipFlowSpec {
    pub payload_bytes: u32,
    pub frame_interval_ms: u64,
    pub header_overhead_bytes: u32,
    pub bidirectional: bool,
}

impl Default for VoipFlowSpec {
    fn default() -> Self {
        VoipFlowSpec {
            payload_bytes: 160,
            frame_interval_ms: 20,
            header_overhead_bytes: 58,
            bidirectional: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoFlowSpec {
    pub video_bitrate_bps: u64,
    pub audio_bitrate_bps: u64,
    pub packet_payload_bytes: u32,
    pub header_overhead_bytes: u32,
}

impl Default for VideoFlowSpec {
    fn default() -> Self {
        VideoFlowSpec {
            video_bitrate_bps: 800_000,
            audio_bitrate_bps: 128_000,
            packet_payload_bytes: 1316,
            header_overhead_bytes: 46,
        }
    }
}

impl VideoFlowSpec {
    pub fn media_bitrate_bps(&self) -> u64 {
        self.video_bitrate_bps + self.audio_bitrate_bps
    }

    /// Send offset of packet `k` from the flow start.
    pub fn offset(&self, k: u64) -> SimTime {
        let bits = self.packet_payload_bytes as u128 * 8;
        SimTime((k as u128 * bits * 1_000_000 / self.media_bitrate_bps() as u128) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataFlowSpec {
    pub total_bytes: u64,
    pub segment_bytes: u32,
    pub window_segments: u32,
    pub ack_bytes: u32,
    pub header_overhead_bytes: u32,
}

impl Default for DataFlowSpec {
    fn default() -> Self {
        DataFlowSpec {
            total_bytes: 30_000_000,
            segment_bytes: 1460,
            window_segments: 44,
            ack_bytes: 60,
            header_overhead_bytes: 58,
        }
    }
}

impl DataFlowSpec {
    pub fn segments(&self) -> u64 {
        self.total_bytes.div_ceil(self.segment_bytes as u64)
    }

    pub fn payload_of(&self, i: u64) -> u32 {
        let start = i * self.segment_bytes as u64;
        (self.total_bytes - start).min(self.segment_bytes as u64) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSpec {
    pub payload_bytes: u32,
    pub interval_ms: u64,
    pub timeout_ms: u64,
    pub header_overhead_bytes: u32,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            payload_bytes: 32,
            interval_ms: 20,
            timeout_ms: 20,
            header_overhead_bytes: 46,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSpec {
    Voip(VoipFlowSpec),
    Video(VideoFlowSpec),
    Data(DataFlowSpec),
    Probe(ProbeSpec),
}

impl FlowSpec {
    pub fn kind(&self) -> FrameKind {
        match self {
            FlowSpec::Voip(_) => FrameKind::Voice,
            FlowSpec::Video(_) => FrameKind::Video,
            FlowSpec::Data(_) => FrameKind::Data,
            FlowSpec::Probe(_) => FrameKind::Probe,
        }
    }

    pub fn header_overhead(&self) -> u32 {
        match self {
            FlowSpec::Voip(s) => s.header_overhead_bytes,
            FlowSpec::Video(s) => s.header_overhead_bytes,
            FlowSpec::Data(s) => s.header_overhead_bytes,
            FlowSpec::Probe(s) => s.header_overhead_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowEvent {
    Tick,
    ProbeTimeout(u64),
    DataRto,
}

/// Lower bound on the retransmission timeout.
pub const MIN_RTO: SimTime = SimTime(20_000);
/// Retransmission timeout before the first RTT sample.
pub const INITIAL_RTO: SimTime = SimTime(200_000);
/// Upper bound reached by exponential backoff.
pub const MAX_RTO: SimTime = SimTime(1_000_000);

#[derive(Debug, Clone, Default)]
pub struct ProbeState {
    sent: BTreeMap<u64, SimTime>,
    answered: BTreeSet<u64>,
    pub probes_sent: u64,
    pub replies_in_time: u64,
    pub replies_late: u64,
    pub timeouts: u64,
    pub episodes: Vec<OutageEpisode>,
    open: bool,
}

#[derive(Debug, Clone)]
pub struct DataState {
    pub base: u64,
    pub next: u64,
    sent_at: Vec<Option<SimTime>>,
    retransmitted: Vec<bool>,
    pub srtt: Option<SimTime>,
    pub rto: SimTime,
    timer: Option<EventHandle>,
    pub retransmissions: u64,
    received: Vec<bool>,
    recv_next: u64,
    pub delivered_payload: u64,
    pub abandoned: bool,
}

/// Start/end/bytes/retransmissions summary of one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub start: SimTime,
    pub end: Option<SimTime>,
    pub bytes: u64,
    pub retransmissions: u64,
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub id: FlowId,
    pub label: String,
    pub spec: FlowSpec,
    pub src: IfaceId,
    pub dst: IfaceId,
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub start: SimTime,
    pub stop: SimTime,
    pub conv_fwd: u32,
    pub conv_rev: Option<u32>,
    next_index: u64,
    seq_rev: u64,
    pub probe: Option<ProbeState>,
    pub data: Option<DataState>,
    pub completed_at: Option<SimTime>,
    pub frames_fwd: u64,
    pub frames_rev: u64,
    pub media_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Fwd,
    Rev,
}

#[derive(Debug, Default)]
pub struct Traffic {
    pub flows: Vec<Flow>,
    by_conv: HashMap<u32, (FlowId, Dir)>,
    next_conv: u32,
}

impl Traffic {
    fn alloc_conv(&mut self) -> u32 {
        self.next_conv += 1;
        self.next_conv
    }

    pub fn flow(&self, id: FlowId) -> &Flow {
        &self.flows[id.0 as usize]
    }

    pub fn by_label(&self, label: &str) -> Option<&Flow> {
        self.flows.iter().find(|f| f.label == label)
    }
}

impl Flow {
    pub fn record(&self) -> FlowRecord {
        let (bytes, retx) = match &self.data {
            Some(d) => (d.delivered_payload, d.retransmissions),
            None => (self.media_bytes, 0),
        };
        FlowRecord {
            start: self.start,
            end: self.completed_at,
            bytes,
            retransmissions: retx,
        }
    }

    pub fn downtime(&self) -> Option<crate::metrics::DowntimeReport> {
        let (FlowSpec::Probe(spec), Some(st)) = (&self.spec, &self.probe) else {
            return None;
        };
        Some(crate::metrics::DowntimeReport {
            label: self.label.clone(),
            interval: SimTime::from_millis(spec.interval_ms),
            episodes: st.episodes.clone(),
        })
    }
}

impl Sim {
    /// Registers a flow from `src` to `dst` active over `[t0, t0 + duration)`.
    pub fn start_flow(
        &mut self,
        label: &str,
        spec: FlowSpec,
        src: IfaceId,
        dst: IfaceId,
        t0: SimTime,
        duration: SimTime,
    ) -> FlowId {
        let id = FlowId(self.traffic.flows.len() as u32);
        let conv_fwd = self.traffic.alloc_conv();
        let needs_rev = match spec {
            FlowSpec::Voip(v) => v.bidirectional,
            FlowSpec::Video(_) => false,
            FlowSpec::Data(_) | FlowSpec::Probe(_) => true,
        };
        let conv_rev = needs_rev.then(|| self.traffic.alloc_conv());
        self.traffic.by_conv.insert(conv_fwd, (id, Dir::Fwd));
        if let Some(c) = conv_rev {
            self.traffic.by_conv.insert(c, (id, Dir::Rev));
        }
        let data = match spec {
            FlowSpec::Data(d) => {
                let n = d.segments() as usize;
                Some(DataState {
                    base: 0,
                    next: 0,
                    sent_at: vec![None; n],
                    retransmitted: vec![false; n],
                    srtt: None,
                    rto: INITIAL_RTO,
                    timer: None,
                    retransmissions: 0,
                    received: vec![false; n],
                    recv_next: 0,
                    delivered_payload: 0,
                    abandoned: false,
                })
            }
            _ => None,
        };
        let probe = matches!(spec, FlowSpec::Probe(_)).then(ProbeState::default);
        self.traffic.flows.push(Flow {
            id,
            label: label.to_string(),
            spec,
            src,
            dst,
            src_node: self.net.ifaces[src.idx()].node,
            dst_node: self.net.ifaces[dst.idx()].node,
            start: t0,
            stop: t0 + duration,
            conv_fwd,
            conv_rev,
            next_index: 0,
            seq_rev: 0,
            probe,
            data,
            completed_at: None,
            frames_fwd: 0,
            frames_rev: 0,
            media_bytes: 0,
        });
        self.sched
            .schedule(t0.max(self.now()), Event::Flow { flow: id, ev: FlowEvent::Tick })
            .expect("flow start is not in the past");
        id
    }

    pub(crate) fn on_flow_event(&mut self, id: FlowId, ev: FlowEvent) {
        match ev {
            FlowEvent::Tick => self.flow_tick(id),
            FlowEvent::ProbeTimeout(k) => self.probe_timeout(id, k),
            FlowEvent::DataRto => self.data_rto(id),
        }
    }

    fn flow_send(&mut self, id: FlowId, dir: Dir, kind: FrameKind, size: u32, seq: u64, tag: u64) {
        let f = &self.traffic.flows[id.0 as usize];
        let (src, dst, node, conv) = match dir {
            Dir::Fwd => (f.src, f.dst, f.src_node, f.conv_fwd),
            Dir::Rev => (f.dst, f.src, f.dst_node, f.conv_rev.expect("reverse conversation")),
        };
        let dst_addr = self.net.ifaces[dst.idx()].addr;
        let frame = self.new_frame(kind, src, dst_addr, size, conv, seq, tag);
        let f = &mut self.traffic.flows[id.0 as usize];
        match dir {
            Dir::Fwd => f.frames_fwd += 1,
            Dir::Rev => f.frames_rev += 1,
        }
        self.send_frame(node, frame);
    }

    fn schedule_flow(&mut self, id: FlowId, at: SimTime, ev: FlowEvent) -> EventHandle {
        self.sched
            .schedule(at, Event::Flow { flow: id, ev })
            .expect("flow events are not in the past")
    }

    fn flow_tick(&mut self, id: FlowId) {
        let now = self.now();
        let f = &mut self.traffic.flows[id.0 as usize];
        let k = f.next_index;
        let (start, stop) = (f.start, f.stop);
        match f.spec {
            FlowSpec::Voip(v) => {
                let interval = SimTime::from_millis(v.frame_interval_ms);
                if start + SimTime(interval.as_micros() * (k + 1)) > stop {
                    f.completed_at = Some(now);
                    return;
                }
                f.next_index += 1;
                f.media_bytes += v.payload_bytes as u64;
                let size = v.payload_bytes + v.header_overhead_bytes;
                self.flow_send(id, Dir::Fwd, FrameKind::Voice, size, k, k);
                if v.bidirectional {
                    self.flow_send(id, Dir::Rev, FrameKind::Voice, size, k, k);
                }
                let next = start + SimTime(interval.as_micros() * (k + 1));
                self.schedule_flow(id, next, FlowEvent::Tick);
            }
            FlowSpec::Video(v) => {
                if start + v.offset(k) >= stop {
                    f.completed_at = Some(now);
                    return;
                }
                f.next_index += 1;
                f.media_bytes += v.packet_payload_bytes as u64;
                let size = v.packet_payload_bytes + v.header_overhead_bytes;
                self.flow_send(id, Dir::Fwd, FrameKind::Video, size, k, k);
                self.schedule_flow(id, start + v.offset(k + 1), FlowEvent::Tick);
            }
            FlowSpec::Probe(p) => {
                let interval = SimTime::from_millis(p.interval_ms);
                if start + SimTime(interval.as_micros() * (k + 1)) > stop {
                    f.completed_at = Some(now);
                    return;
                }
                f.next_index += 1;
                let st = f.probe.as_mut().expect("probe state");
                st.sent.insert(k, now);
                st.probes_sent += 1;
                self.flow_send(id, Dir::Fwd, FrameKind::Probe, p.payload_bytes + p.header_overhead_bytes, k, k);
                self.schedule_flow(id, now + SimTime::from_millis(p.timeout_ms), FlowEvent::ProbeTimeout(k));
                self.schedule_flow(id, start + SimTime(interval.as_micros() * (k + 1)), FlowEvent::Tick);
            }
            FlowSpec::Data(d) => {
                if d.total_bytes == 0 {
                    f.completed_at = Some(now);
                    return;
                }
                self.data_fill_window(id);
            }
        }
    }

    fn probe_timeout(&mut self, id: FlowId, k: u64) {
        let f = &mut self.traffic.flows[id.0 as usize];
        let st = f.probe.as_mut().expect("probe state");
        let sent = st.sent.remove(&k).expect("probe was sent");
        if st.answered.remove(&k) {
            st.open = false;
            return;
        }
        st.timeouts += 1;
        if st.open {
            st.episodes.last_mut().expect("open episode").timeouts += 1;
        } else {
            st.open = true;
            st.episodes.push(OutageEpisode {
                start: sent,
                timeouts: 1,
            });
        }
    }

    /// Frames reaching their destination node are handed here after metrics.
    pub(crate) fn on_flow_delivery(&mut self, _node: NodeId, frame: Frame) {
        let Some(&(id, dir)) = self.traffic.by_conv.get(&frame.conversation) else {
            return;
        };
        let now = self.now();
        match (frame.kind, dir) {
            (FrameKind::Probe, Dir::Fwd) => {
                let f = &mut self.traffic.flows[id.0 as usize];
                let seq = f.seq_rev;
                f.seq_rev += 1;
                self.flow_send(id, Dir::Rev, FrameKind::ProbeReply, frame.size_bytes, seq, frame.tag);
            }
            (FrameKind::ProbeReply, Dir::Rev) => {
                let f = &mut self.traffic.flows[id.0 as usize];
                let FlowSpec::Probe(p) = f.spec else { return };
                let st = f.probe.as_mut().expect("probe state");
                match st.sent.get(&frame.tag) {
                    Some(&sent) if now < sent + SimTime::from_millis(p.timeout_ms) => {
                        st.answered.insert(frame.tag);
                        st.replies_in_time += 1;
                    }
                    _ => st.replies_late += 1,
                }
            }
            (FrameKind::Data, Dir::Fwd) => self.data_receive(id, frame.tag),
            (FrameKind::Ack, Dir::Rev) => self.data_on_ack(id, frame.tag),
            _ => {}
        }
    }

    fn data_spec(&self, id: FlowId) -> DataFlowSpec {
        match self.traffic.flows[id.0 as usize].spec {
            FlowSpec::Data(d) => d,
            _ => unreachable!("data operation on a non-data flow"),
        }
    }

    fn data_fill_window(&mut self, id: FlowId) {
        let spec = self.data_spec(id);
        let total = spec.segments();
        let now = self.now();
        loop {
            let f = &mut self.traffic.flows[id.0 as usize];
            let st = f.data.as_mut().expect("data state");
            if st.next >= total || st.next >= st.base + spec.window_segments as u64 {
                break;
            }
            let i = st.next;
            st.next += 1;
            if st.sent_at[i as usize].replace(now).is_some() {
                st.retransmitted[i as usize] = true;
                st.retransmissions += 1;
            }
            let seq = f.next_index;
            f.next_index += 1;
            let size = spec.payload_of(i) + spec.header_overhead_bytes;
            self.flow_send(id, Dir::Fwd, FrameKind::Data, size, seq, i);
        }
        let st = self.traffic.flows[id.0 as usize].data.as_ref().expect("data state");
        if st.timer.is_none() && st.base < st.next {
            self.data_arm_timer(id);
        }
    }

    fn data_arm_timer(&mut self, id: FlowId) {
        let now = self.now();
        let st = self.traffic.flows[id.0 as usize].data.as_mut().expect("data state");
        if let Some(h) = st.timer.take() {
            self.sched.cancel(h);
        }
        let at = now + st.rto;
        let h = self.schedule_flow(id, at, FlowEvent::DataRto);
        self.traffic.flows[id.0 as usize].data.as_mut().expect("data state").timer = Some(h);
    }

    /// Cumulative ACK `ack` = index of the next segment the receiver expects.
    pub fn data_on_ack(&mut self, id: FlowId, ack: u64) {
        let spec = self.data_spec(id);
        let total = spec.segments();
        let now = self.now();
        let f = &mut self.traffic.flows[id.0 as usize];
        let st = f.data.as_mut().expect("data state");
        if ack <= st.base || f.completed_at.is_some() {
            return;
        }
        let last = (ack - 1) as usize;
        if !st.retransmitted[last] {
            let sample = now - st.sent_at[last].expect("acked segment was sent");
            let srtt = match st.srtt {
                None => sample,
                Some(s) => SimTime((s.as_micros() * 7 + sample.as_micros()) / 8),
            };
            st.srtt = Some(srtt);
            st.rto = SimTime(srtt.as_micros() * 2).max(MIN_RTO);
        }
        st.base = ack;
        if st.next < st.base {
            st.next = st.base;
        }
        if st.base >= total {
            f.completed_at = Some(now);
            if let Some(h) = st.timer.take() {
                self.sched.cancel(h);
            }
            return;
        }
        self.data_arm_timer(id);
        self.data_fill_window(id);
    }

    fn data_rto(&mut self, id: FlowId) {
        let now = self.now();
        let f = &mut self.traffic.flows[id.0 as usize];
        let stop = f.stop;
        let done = f.completed_at.is_some();
        let st = f.data.as_mut().expect("data state");
        st.timer = None;
        if done {
            return;
        }
        if now >= stop {
            st.abandoned = true;
            return;
        }
        st.next = st.base;
        st.rto = SimTime(st.rto.as_micros() * 2).min(MAX_RTO);
        self.data_fill_window(id);
        let st = self.traffic.flows[id.0 as usize].data.as_ref().expect("data state");
        if st.timer.is_none() {
            self.data_arm_timer(id);
        }
    }

    fn data_receive(&mut self, id: FlowId, i: u64) {
        let spec = self.data_spec(id);
        let f = &mut self.traffic.flows[id.0 as usize];
        let st = f.data.as_mut().expect("data state");
        let total = st.received.len() as u64;
        if i < total && !st.received[i as usize] {
            st.received[i as usize] = true;
            st.delivered_payload += spec.payload_of(i) as u64;
            while st.recv_next < total && st.received[st.recv_next as usize] {
                st.recv_next += 1;
            }
        }
        let ack = st.recv_next;
        let seq = f.seq_rev;
        f.seq_rev += 1;
        self.flow_send(id, Dir::Rev, FrameKind::Ack, spec.ack_bytes, seq, ack);
    }
}
