//! CSV and text rendering of run, batch and comparison results.
//!
//! Rendering is pure; `emit_*` only writes the rendered strings.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{SimRng, SimTime};
use crate::metrics::{Fixed3, QosReport};
use crate::netmodel::{DropReason, FrameKind};

use super::run::{BatchResult, RunResult};

pub const JITTER_NOTE: &str = "# jitter: voice uses the smoothed interarrival estimator J += (|D| - J)/16 over consecutive transits; video and data use the mean absolute difference of consecutive transits";

pub fn kind_str(k: FrameKind) -> &'static str {
    match k {
        FrameKind::Voice => "voice",
        FrameKind::Video => "video",
        FrameKind::Data => "data",
        FrameKind::Probe => "probe",
        FrameKind::ProbeReply => "probe_reply",
        FrameKind::Ack => "ack",
        FrameKind::Lacpdu => "lacpdu",
        FrameKind::Routing => "routing",
    }
}

fn ms(t: SimTime) -> Fixed3 {
    Fixed3(t.as_micros() as i64)
}

fn header(out: &mut String, scenario: &str, mode: &str, seed: u64) {
    let _ = writeln!(out, "# scenario: {scenario}");
    let _ = writeln!(out, "# mode: {mode}");
    let _ = writeln!(out, "# seed: {seed}");
    let _ = writeln!(out, "# rng: {}", SimRng::ALGORITHM);
    let _ = writeln!(out, "{JITTER_NOTE}");
}

/// The four-section CSV report of one run.
pub fn render_csv(r: &RunResult) -> String {
    let mode = r.mode.as_str();
    let mut out = String::new();
    header(&mut out, &r.scenario, mode, r.seed);

    out.push_str("# downtime\n");
    out.push_str("scenario,mode,service,episodes,timeouts,interval_ms,downtime_ms\n");
    for d in &r.downtime {
        let timeouts: u64 = d.episodes.iter().map(|e| e.timeouts).sum();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario,
            mode,
            d.label,
            d.episodes.len(),
            timeouts,
            ms(d.interval),
            d.total_ms()
        );
    }

    out.push_str("# qos\n");
    out.push_str("scenario,mode,service,delay_ms,jitter_ms,throughput_mbps,loss_pct\n");
    for q in &r.qos {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario, mode, q.service, q.delay_ms, q.jitter_ms, q.throughput_mbps, q.loss_pct
        );
    }

    out.push_str("# routes\n");
    out.push_str("at_ms,router,network,old_next_hop,new_next_hop\n");
    for c in &r.routes {
        let _ = writeln!(out, "{},{},{},{},{}", ms(c.at), c.router, c.network, c.old, c.new);
    }

    out.push_str("# flows\n");
    out.push_str("service,kind,start_ms,stop_ms,end_ms,bytes,retransmissions,goodput_mbps\n");
    for f in &r.flows {
        let end = f.end.map(|e| ms(e).to_string()).unwrap_or_else(|| "-".into());
        let goodput = r
            .qos
            .iter()
            .find(|q| q.service == f.service || q.service == format!("{}/fwd", f.service))
            .map(|q| q.goodput_mbps.to_string())
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            f.service,
            kind_str(f.kind),
            ms(f.start),
            ms(f.stop),
            end,
            f.bytes,
            f.retransmissions,
            goodput
        );
    }
    out
}

/// Human-readable summary: violations, conservation audit and bond counters.
pub fn render_summary(r: &RunResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} ({}), seed {}", r.scenario, r.mode.as_str(), r.seed);
    let _ = writeln!(out, "routing converged at {}", r.converged_at);
    let _ = writeln!(out, "run ended at {}", r.end);
    let _ = writeln!(out);
    let v = r.violations;
    let _ = writeln!(out, "violations");
    let _ = writeln!(out, "  ordering   {}", v.ordering);
    let _ = writeln!(out, "  duplicate  {}", v.duplicate);
    let _ = writeln!(out, "  modified   {}", v.modified);
    let _ = writeln!(out);
    let _ = writeln!(out, "conservation (sent = delivered + drops + in flight)");
    let names: Vec<&str> = DropReason::ALL.iter().map(|d| d.as_str()).collect();
    let _ = writeln!(out, "  {:<16} {:>8} {:>9} {} {:>9}  ok", "flow", "sent", "delivered", names.join(" "), "in_flight");
    for c in &r.conservation {
        let drops: Vec<String> = c
            .drops
            .iter()
            .zip(&names)
            .map(|(d, n)| format!("{:>w$}", d, w = n.len()))
            .collect();
        let _ = writeln!(
            out,
            "  {:<16} {:>8} {:>9} {} {:>9}  {}",
            c.label,
            c.sent,
            c.delivered,
            drops.join(" "),
            c.in_flight,
            if c.consistent() { "yes" } else { "NO" }
        );
    }
    if !r.bonds.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "bonds");
        for b in &r.bonds {
            let _ = writeln!(
                out,
                "  {:<24} tx {:>8} rx {:>8} dropped {:>5} held {:>5} failovers {}",
                b.name, b.tx_frames, b.rx_frames, b.tx_dropped_down, b.held_frames, b.failovers
            );
        }
    }
    out
}

/// Per-cell means, one row each, then the overall mean.
pub fn render_batch_csv(b: &BatchResult) -> String {
    let mut out = String::new();
    header(&mut out, &b.scenario, b.mode.as_str(), b.seed);
    let _ = writeln!(out, "# links cut per trial: {}", b.links);
    out.push_str("# downtime\n");
    out.push_str("cell,trials,downtime_ms\n");
    for c in &b.cells {
        let n = b.trials.iter().filter(|t| t.cell == c.name).count();
        let _ = writeln!(out, "{},{},{}", c.name, n, c.mean_ms);
    }
    let _ = writeln!(out, "mean,{},{}", b.trials.len(), b.mean_ms);
    out
}

/// Every trial of a batch.
pub fn render_trials_csv(b: &BatchResult) -> String {
    let mut out = String::new();
    header(&mut out, &b.scenario, b.mode.as_str(), b.seed);
    out.push_str("cell,trial,seed,cut_ms,timeouts,episodes,downtime_ms,services_completed,violations\n");
    for t in &b.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.cell,
            t.trial,
            t.seed,
            ms(t.cut_at),
            t.timeouts,
            t.episodes,
            ms(t.downtime),
            t.services_completed,
            t.violations.total()
        );
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("service sets differ: bonded has [{bonded}], single-link has [{single}]")]
    ServiceMismatch { bonded: String, single: String },
    #[error("service `{0}` has a different schedule in the two runs")]
    ScheduleMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lower {
    Bonded,
    Single,
    Equal,
}

impl Lower {
    pub fn of(bonded: Fixed3, single: Fixed3) -> Lower {
        match bonded.cmp(&single) {
            std::cmp::Ordering::Less => Lower::Bonded,
            std::cmp::Ordering::Greater => Lower::Single,
            std::cmp::Ordering::Equal => Lower::Equal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lower::Bonded => "bonded",
            Lower::Single => "single",
            Lower::Equal => "equal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompareRow {
    pub service: String,
    pub bonded: QosReport,
    pub single: QosReport,
}

fn delta(a: Fixed3, b: Fixed3) -> Fixed3 {
    Fixed3(a.0 - b.0)
}

impl CompareRow {
    /// Bonded minus single-link, per metric: delay, jitter, throughput, loss.
    pub fn deltas(&self) -> [Fixed3; 4] {
        let (b, s) = (&self.bonded, &self.single);
        [
            delta(b.delay_ms, s.delay_ms),
            delta(b.jitter_ms, s.jitter_ms),
            delta(b.throughput_mbps, s.throughput_mbps),
            delta(b.loss_pct, s.loss_pct),
        ]
    }

    pub fn lower_jitter(&self) -> Lower {
        Lower::of(self.bonded.jitter_ms, self.single.jitter_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<CompareRow>,
}

/// Pairs each service's QoS across the two runs.
pub fn compare(bonded: &RunResult, single: &RunResult) -> Result<Comparison, CompareError> {
    let names = |r: &RunResult| r.qos.iter().map(|q| q.service.clone()).collect::<Vec<_>>();
    let (nb, ns) = (names(bonded), names(single));
    let mut sb = nb.clone();
    let mut ss = ns.clone();
    sb.sort();
    ss.sort();
    if sb != ss {
        return Err(CompareError::ServiceMismatch {
            bonded: nb.join(", "),
            single: ns.join(", "),
        });
    }
    for f in &bonded.flows {
        let same = single
            .flows
            .iter()
            .any(|g| g.service == f.service && g.start == f.start && g.stop == f.stop);
        if !same {
            return Err(CompareError::ScheduleMismatch(f.service.clone()));
        }
    }
    let rows = bonded
        .qos
        .iter()
        .map(|b| CompareRow {
            service: b.service.clone(),
            bonded: b.clone(),
            single: single.qos_for(&b.service).expect("service sets match").clone(),
        })
        .collect();
    Ok(Comparison {
        scenario: bonded.scenario.clone(),
        seed: bonded.seed,
        rows,
    })
}

pub fn render_comparison_csv(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# scenario: {}", c.scenario);
    let _ = writeln!(out, "# seed: {}", c.seed);
    let _ = writeln!(out, "# rng: {}", SimRng::ALGORITHM);
    let _ = writeln!(out, "{JITTER_NOTE}");
    let _ = writeln!(out, "# deltas are bonded minus single-link");
    out.push_str("# compare\n");
    out.push_str("service,metric,bonded,single,delta\n");
    for r in &c.rows {
        let d = r.deltas();
        let pairs = [
            ("delay_ms", r.bonded.delay_ms, r.single.delay_ms),
            ("jitter_ms", r.bonded.jitter_ms, r.single.jitter_ms),
            ("throughput_mbps", r.bonded.throughput_mbps, r.single.throughput_mbps),
            ("loss_pct", r.bonded.loss_pct, r.single.loss_pct),
        ];
        for (i, (m, b, s)) in pairs.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", r.service, m, b, s, d[i]);
        }
    }
    out.push_str("# jitter\n");
    out.push_str("service,bonded_jitter_ms,single_jitter_ms,lower\n");
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.service,
            r.bonded.jitter_ms,
            r.single.jitter_ms,
            r.lower_jitter().as_str()
        );
    }
    out
}

fn write(dir: &Path, name: &str, body: &str) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, body)?;
    Ok(p)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `<scenario>_<mode>.csv` and a matching summary.
pub fn emit_reports(r: &RunResult, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let stem = format!("{}_{}", file_stem(&r.scenario), r.mode.as_str().to_lowercase());
    Ok(vec![
        write(out_dir, &format!("{stem}.csv"), &render_csv(r))?,
        write(out_dir, &format!("{stem}_summary.txt"), &render_summary(r))?,
    ])
}

pub fn emit_batch(b: &BatchResult, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let stem = format!(
        "{}_{}_failover{}",
        file_stem(&b.scenario),
        b.mode.as_str().to_lowercase(),
        b.links
    );
    Ok(vec![
        write(out_dir, &format!("{stem}.csv"), &render_batch_csv(b))?,
        write(out_dir, &format!("{stem}_trials.csv"), &render_trials_csv(b))?,
    ])
}

pub fn emit_comparison(c: &Comparison, out_dir: &Path) -> io::Result<PathBuf> {
    write(out_dir, &format!("{}_compare.csv", file_stem(&c.scenario)), &render_comparison_csv(c))
}
