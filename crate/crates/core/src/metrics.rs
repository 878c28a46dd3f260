//! Per-conversation counters and the QoS arithmetic: one-way delay (with the
//! fixed VoIP component model), jitter, throughput, loss and downtime.
//!
//! Reported values are fixed-point thousandths (`Fixed3`) rounded half-up from
//! exact integer ratios wherever the inputs are integers.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use crate::engine::SimTime;
use crate::netmodel::{DropReason, Frame, FrameKind};

/// A non-negative decimal with exactly three fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed3(pub i64);

impl Fixed3 {
    pub const ZERO: Fixed3 = Fixed3(0);

    /// `num / den` in thousandths-units already, rounded half-up.
    pub fn from_ratio(num: i128, den: i128) -> Fixed3 {
        assert!(den > 0, "denominator must be positive");
        let q = (2 * num + den).div_euclid(2 * den);
        Fixed3(q as i64)
    }

    pub fn from_f64(x: f64) -> Fixed3 {
        Fixed3((x * 1000.0 + 0.5).floor() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Fixed3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", a / 1000, a % 1000)
    }
}

/// Fixed delay components added to every voice frame's network transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoipDelayModel {
    pub processing: Duration,
    pub algorithmic: Duration,
    pub packetization: Duration,
    pub serialization: Duration,
    pub decompression: Duration,
    pub depacketization: Duration,
    pub dejitter: Duration,
}

impl Default for VoipDelayModel {
    fn default() -> Self {
        VoipDelayModel {
            processing: Duration::from_millis(10),
            algorithmic: Duration::from_micros(3_750),
            packetization: Duration::from_millis(20),
            serialization: Duration::from_nanos(16_300),
            decompression: Duration::from_millis(1),
            depacketization: Duration::from_millis(20),
            dejitter: Duration::from_millis(45),
        }
    }
}

impl VoipDelayModel {
    pub fn fixed_sum(&self) -> Duration {
        self.processing
            + self.algorithmic
            + self.packetization
            + self.serialization
            + self.decompression
            + self.depacketization
            + self.dejitter
    }
}

/// Network transit of a delivered frame.
pub fn network_delay(f: &Frame) -> Option<Duration> {
    let r = f.received_at?;
    Some(Duration::from_micros((r - f.sent_at).as_micros()))
}

/// One-way delay as reported: voice adds the fixed component model.
pub fn one_way_delay(f: &Frame, model: &VoipDelayModel) -> Option<Duration> {
    let d = network_delay(f)?;
    Some(match f.kind {
        FrameKind::Voice => d + model.fixed_sum(),
        _ => d,
    })
}

/// Duration in milliseconds, rounded half-up to 3 decimals.
pub fn duration_ms(d: Duration) -> Fixed3 {
    Fixed3::from_ratio(d.as_nanos() as i128, 1_000)
}

/// Mean reported delay in ms over per-frame transits (µs).
pub fn mean_delay_ms(kind: FrameKind, transits_us: &[u64], model: &VoipDelayModel) -> Fixed3 {
    if transits_us.is_empty() {
        return Fixed3::ZERO;
    }
    let extra = if kind == FrameKind::Voice {
        model.fixed_sum().as_nanos()
    } else {
        0
    };
    let sum_ns: u128 = transits_us.iter().map(|t| *t as u128 * 1_000 + extra).sum();
    Fixed3::from_ratio(sum_ns as i128, transits_us.len() as i128 * 1_000)
}

/// Smoothed interarrival-variation estimator over successive transits, in ms.
pub fn voice_jitter_ms(transits_us: &[u64]) -> f64 {
    let mut j = 0.0f64;
    for w in transits_us.windows(2) {
        let d = (w[1] as f64 - w[0] as f64).abs() / 1_000.0;
        j += (d - j) / 16.0;
    }
    j
}

/// Mean absolute difference of consecutive transits, in ms.
pub fn mean_abs_delta_ms(transits_us: &[u64]) -> Fixed3 {
    if transits_us.len() < 2 {
        return Fixed3::ZERO;
    }
    let sum: u128 = transits_us
        .windows(2)
        .map(|w| w[1].abs_diff(w[0]) as u128)
        .sum();
    Fixed3::from_ratio(sum as i128, transits_us.len() as i128 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flagged {
    pub value: Fixed3,
    /// The input did not support the metric (too few frames, nothing sent).
    pub undefined: bool,
}

/// Jitter by service rule; fewer than two frames is flagged.
pub fn jitter_ms(kind: FrameKind, transits_us: &[u64]) -> Flagged {
    if transits_us.len() < 2 {
        return Flagged {
            value: Fixed3::ZERO,
            undefined: true,
        };
    }
    let value = match kind {
        FrameKind::Voice => Fixed3::from_f64(voice_jitter_ms(transits_us)),
        _ => mean_abs_delta_ms(transits_us),
    };
    Flagged {
        value,
        undefined: false,
    }
}

/// On-wire bits over a window, in Mb/s (bits per µs).
pub fn throughput_mbps(bytes: u64, window: SimTime) -> Fixed3 {
    if window == SimTime::ZERO {
        return Fixed3::ZERO;
    }
    Fixed3::from_ratio(bytes as i128 * 8 * 1_000, window.as_micros() as i128)
}

pub fn packet_loss_pct(sent: u64, delivered: u64) -> Flagged {
    if sent == 0 {
        return Flagged {
            value: Fixed3::ZERO,
            undefined: true,
        };
    }
    let lost = sent.saturating_sub(delivered);
    Flagged {
        value: Fixed3::from_ratio(lost as i128 * 100 * 1_000, sent as i128),
        undefined: false,
    }
}

/// One run of consecutive probe timeouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutageEpisode {
    /// Send time of the first probe that timed out.
    pub start: SimTime,
    pub timeouts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DowntimeReport {
    pub label: String,
    pub interval: SimTime,
    pub episodes: Vec<OutageEpisode>,
}

impl DowntimeReport {
    pub fn episode_downtime(&self, e: &OutageEpisode) -> SimTime {
        SimTime(e.timeouts * self.interval.as_micros())
    }

    pub fn total(&self) -> SimTime {
        SimTime(
            self.episodes
                .iter()
                .map(|e| self.episode_downtime(e).as_micros())
                .sum(),
        )
    }

    pub fn total_ms(&self) -> Fixed3 {
        Fixed3(self.total().as_micros() as i64)
    }
}

/// Arithmetic mean of trial downtimes in ms, exact before rounding.
pub fn aggregate_downtime(trials: &[SimTime]) -> Fixed3 {
    if trials.is_empty() {
        return Fixed3::ZERO;
    }
    let sum: i128 = trials.iter().map(|t| t.as_micros() as i128).sum();
    Fixed3::from_ratio(sum, trials.len() as i128)
}

#[derive(Debug, Clone, Default)]
pub struct ConvStats {
    pub conv: u32,
    pub kind: Option<FrameKind>,
    pub sent: u64,
    pub sent_bytes: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub drops: [u64; DropReason::ALL.len()],
    pub first_sent: Option<SimTime>,
    pub last_delivery: Option<SimTime>,
    /// Network transit (µs) of each delivered frame, in arrival order.
    pub transits_us: Vec<u64>,
    pub delivered_ids: Vec<u64>,
}

impl ConvStats {
    pub fn dropped(&self) -> u64 {
        self.drops.iter().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub convs: BTreeMap<u32, ConvStats>,
}

impl Metrics {
    fn conv(&mut self, f: &Frame) -> &mut ConvStats {
        let c = self.convs.entry(f.conversation).or_insert_with(|| ConvStats {
            conv: f.conversation,
            ..ConvStats::default()
        });
        c.kind.get_or_insert(f.kind);
        c
    }

    pub fn record_sent(&mut self, f: &Frame) {
        let c = self.conv(f);
        c.sent += 1;
        c.sent_bytes += f.size_bytes as u64;
        c.first_sent.get_or_insert(f.sent_at);
    }

    pub fn record_delivered(&mut self, f: &Frame, now: SimTime) {
        let control = f.kind.is_control();
        let c = self.conv(f);
        c.delivered += 1;
        c.delivered_bytes += f.size_bytes as u64;
        c.last_delivery = Some(now);
        if !control {
            c.transits_us.push((now - f.sent_at).as_micros());
            c.delivered_ids.push(f.id);
        }
    }

    pub fn record_drop(&mut self, f: &Frame, reason: DropReason) {
        self.conv(f).drops[reason.index()] += 1;
    }

    pub fn get(&self, conv: u32) -> Option<&ConvStats> {
        self.convs.get(&conv)
    }

    pub fn total_delivered(&self) -> u64 {
        self.convs.values().map(|c| c.delivered).sum()
    }

    pub fn drops_total(&self, reason: DropReason) -> u64 {
        self.convs.values().map(|c| c.drops[reason.index()]).sum()
    }

    pub fn delivery_order(&self, conv: u32) -> Vec<u64> {
        self.convs
            .get(&conv)
            .map(|c| c.delivered_ids.clone())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QosReport {
    pub service: String,
    pub kind: FrameKind,
    pub delay_ms: Fixed3,
    pub jitter_ms: Fixed3,
    pub throughput_mbps: Fixed3,
    pub goodput_mbps: Fixed3,
    pub loss_pct: Fixed3,
    pub sent: u64,
    pub delivered: u64,
    pub drops: [u64; DropReason::ALL.len()],
    pub flags: Vec<&'static str>,
}

impl QosReport {
    /// Builds a report from a conversation's counters over `window`.
    /// `payload_per_frame` is the declared header overhead subtracted for goodput.
    pub fn from_stats(
        service: &str,
        stats: &ConvStats,
        window: SimTime,
        header_overhead: u32,
        model: &VoipDelayModel,
    ) -> QosReport {
        let kind = stats.kind.unwrap_or(FrameKind::Data);
        let jitter = jitter_ms(kind, &stats.transits_us);
        let loss = packet_loss_pct(stats.sent, stats.delivered);
        let mut flags = Vec::new();
        if jitter.undefined {
            flags.push("jitter_undefined");
        }
        if loss.undefined {
            flags.push("loss_undefined");
        }
        let payload = stats
            .delivered_bytes
            .saturating_sub(stats.delivered * header_overhead as u64);
        QosReport {
            service: service.to_string(),
            kind,
            delay_ms: mean_delay_ms(kind, &stats.transits_us, model),
            jitter_ms: jitter.value,
            throughput_mbps: throughput_mbps(stats.delivered_bytes, window),
            goodput_mbps: throughput_mbps(payload, window),
            loss_pct: loss.value,
            sent: stats.sent,
            delivered: stats.delivered,
            drops: stats.drops,
            flags,
        }
    }
}
