//! Run measurements, the two closed-form buffer bounds, and the plain-text
//! trace format.

use std::io::{self, Write};

use crate::aal::{cells_per_packet, CELL_BITS};
use crate::error::{Result, SimError};
use crate::kernel::SimTime;
use crate::topology::Service;

/// Cells in one `duration x bandwidth` product, using 53-byte cells.
pub fn bandwidth_delay_cells(duration_s: f64, link_rate_bps: f64) -> f64 {
    duration_s * link_rate_bps / CELL_BITS as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferBound {
    pub service: Service,
    pub bound_cells: u64,
    pub rtt_s: f64,
    pub feedback_delay_s: f64,
    pub link_rate_bps: f64,
    pub windows_bytes: Vec<u64>,
    pub a: f64,
    pub c: f64,
}

/// Loss-free ABR switch buffer: `ceil((a*RTT + c*feedback_delay) * BW)` cells.
pub fn abr_buffer_bound(
    rtt_s: f64,
    feedback_delay_s: f64,
    link_rate_bps: f64,
    a: f64,
    c: f64,
) -> Result<BufferBound> {
    for (name, v) in [
        ("rtt", rtt_s),
        ("feedback_delay", feedback_delay_s),
        ("link_rate", link_rate_bps),
        ("a", a),
        ("c", c),
    ] {
        if v < 0.0 || !v.is_finite() {
            return Err(SimError::config(name, format!("must be non-negative, got {v}")));
        }
    }
    if feedback_delay_s > rtt_s {
        return Err(SimError::config(
            "feedback_delay",
            format!("feedback delay {feedback_delay_s}s exceeds RTT {rtt_s}s"),
        ));
    }
    let cells = bandwidth_delay_cells(a * rtt_s + c * feedback_delay_s, link_rate_bps);
    Ok(BufferBound {
        service: Service::Abr,
        bound_cells: cells.ceil() as u64,
        rtt_s,
        feedback_delay_s,
        link_rate_bps,
        windows_bytes: vec![],
        a,
        c,
    })
}

/// Loss-free UBR switch buffer: the sum of every connection's maximum
/// window, converted to cells.
pub fn ubr_buffer_bound(max_windows_bytes: &[u64], mss: u32) -> BufferBound {
    let per_segment = cells_per_packet(mss) as u64;
    let bound_cells = max_windows_bytes
        .iter()
        .map(|w| w.div_ceil(mss as u64) * per_segment)
        .sum();
    BufferBound {
        service: Service::Ubr,
        bound_cells,
        rtt_s: 0.0,
        feedback_delay_s: 0.0,
        link_rate_bps: 0.0,
        windows_bytes: max_windows_bytes.to_vec(),
        a: 0.0,
        c: 0.0,
    }
}

/// One maximal run of back-to-back emissions from a source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Burst {
    pub start: SimTime,
    pub active: SimTime,
    pub idle_before: SimTime,
    pub cells: u64,
}

/// Per-VC cell accounting for the conservation check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VcConservation {
    pub emitted: u64,
    pub absorbed: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl VcConservation {
    pub fn balanced(&self) -> bool {
        self.emitted == self.absorbed + self.dropped + self.in_flight
    }
}

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub cwnd: Vec<Vec<(SimTime, f64)>>,
    pub acr: Vec<Vec<(SimTime, f64)>>,
    pub bottleneck_queue: Vec<(SimTime, u64)>,
    pub source_queue: Vec<Vec<(SimTime, u64)>>,
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub horizon: SimTime,
    pub warmup: SimTime,
    pub rtt: SimTime,
    pub feedback_delay: SimTime,
    pub link_rate_bps: f64,

    pub bottleneck_max_queue: u64,
    pub port_max_queue: Vec<u64>,
    pub source_max_queue: Vec<u64>,
    /// Peak of (all source queues + all port queues) at one instant.
    pub max_total_queue: u64,

    pub goodput_mbps: Vec<f64>,
    pub delivered_bytes: Vec<u64>,

    pub cells_sent: u64,
    pub cells_dropped: u64,
    pub packets_dropped_reassembly: u64,
    pub duplicates_discarded: u64,
    pub timeouts: u64,

    pub rm_stamps: u64,
    pub er_increases: u64,
    pub acr_updates: u64,
    pub acr_bound_violations: u64,

    pub events_processed: u64,
    pub conservation: Vec<VcConservation>,
    pub bursts: Vec<Vec<Burst>>,
    pub series: Series,
    /// Every receiver's delivered byte count matches its contiguous prefix.
    pub in_order: bool,
}

impl RunMetrics {
    pub fn aggregate_goodput_mbps(&self) -> f64 {
        self.goodput_mbps.iter().sum()
    }

    pub fn clr(&self) -> f64 {
        if self.cells_sent == 0 {
            0.0
        } else {
            self.cells_dropped as f64 / self.cells_sent as f64
        }
    }

    pub fn rtt_bw_cells(&self) -> f64 {
        bandwidth_delay_cells(self.rtt.as_secs_f64(), self.link_rate_bps)
    }

    pub fn queue_rtt_ratio(&self) -> f64 {
        self.bottleneck_max_queue as f64 / self.rtt_bw_cells()
    }

    pub fn max_source_queue(&self) -> u64 {
        self.source_max_queue.iter().copied().max().unwrap_or(0)
    }

    pub fn goodput_fairness(&self) -> f64 {
        let max = self.goodput_mbps.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.goodput_mbps.iter().cloned().fold(f64::MAX, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }

    pub fn conserved(&self) -> bool {
        self.conservation.iter().all(VcConservation::balanced)
    }
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub series: String,
    pub time: SimTime,
    pub value: f64,
}

impl TraceRecord {
    fn new(series: String, time: SimTime, value: f64) -> Self {
        TraceRecord {
            series,
            time,
            value,
        }
    }
}

/// Flattens the recorded series and burst logs into trace records.
pub fn emit_traces(m: &RunMetrics) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    for (conn, s) in m.series.cwnd.iter().enumerate() {
        let name = format!("cwnd.{conn}");
        out.extend(s.iter().map(|&(t, v)| TraceRecord::new(name.clone(), t, v)));
    }
    out.extend(
        m.series
            .bottleneck_queue
            .iter()
            .map(|&(t, q)| TraceRecord::new("queue.bottleneck".into(), t, q as f64)),
    );
    for (vc, s) in m.series.source_queue.iter().enumerate() {
        let name = format!("source_queue.{vc}");
        out.extend(s.iter().map(|&(t, q)| TraceRecord::new(name.clone(), t, q as f64)));
    }
    for (vc, s) in m.series.acr.iter().enumerate() {
        let name = format!("acr.{vc}");
        out.extend(s.iter().map(|&(t, v)| TraceRecord::new(name.clone(), t, v)));
    }
    for (vc, bursts) in m.bursts.iter().enumerate() {
        for b in bursts {
            out.push(TraceRecord::new(
                format!("burst_active.{vc}"),
                b.start,
                b.active.as_secs_f64(),
            ));
            out.push(TraceRecord::new(
                format!("burst_idle.{vc}"),
                b.start,
                b.idle_before.as_secs_f64(),
            ));
        }
    }
    out
}

/// Tab-separated: series name, time in seconds with 9 decimals, value.
pub fn write_traces<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.series, r.time, r.value)?;
    }
    Ok(())
}
