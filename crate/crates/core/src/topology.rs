//! The n-source configuration: n sources -> edge switch -> bottleneck link ->
//! egress switch -> n destinations, plus the reverse path for acks and
//! backward RM cells.

use std::fmt;
use std::str::FromStr;

use crate::aal::{cells_per_packet, CELL_BITS};
use crate::abr::{EricaParams, DEFAULT_NRM, DEFAULT_RIF};
use crate::error::{Result, SimError};
use crate::kernel::SimTime;
use crate::tcp::TcpParams;

/// Propagation delay per kilometre of fibre.
pub const PROP_NS_PER_KM: f64 = 5_000.0;
pub const OC3_BPS: f64 = 155_520_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Service {
    Abr,
    Ubr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckPath {
    /// Acks ride their own ABR VC with its own rate control.
    Abr,
    /// Acks leave at the peak rate without RM cells.
    Unconstrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Traffic {
    /// Infinite file transfer over TCP.
    Tcp,
    /// Saturating cell sources without TCP, for rate-allocation tests.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    TailDrop,
    Epd,
}

macro_rules! keyword_enum {
    ($ty:ty, $($variant:path => $text:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(
                        "expected one of {}, got `{other}`",
                        [$($text),+].join(" | ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(Service, Service::Abr => "abr", Service::Ubr => "ubr");
keyword_enum!(AckPath, AckPath::Abr => "abr", AckPath::Unconstrained => "unconstrained");
keyword_enum!(Traffic, Traffic::Tcp => "tcp", Traffic::Greedy => "greedy");
keyword_enum!(PolicyKind, PolicyKind::TailDrop => "tail_drop", PolicyKind::Epd => "epd");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub rate_bps: f64,
    pub length_km: f64,
}

impl LinkSpec {
    pub fn new(rate_bps: f64, length_km: f64) -> Self {
        LinkSpec {
            rate_bps,
            length_km,
        }
    }

    pub fn prop_delay(&self) -> SimTime {
        SimTime::from_nanos((self.length_km * PROP_NS_PER_KM).round() as u64)
    }

    /// One cell time, rounded to the nanosecond (2726 ns at 155.52 Mb/s).
    pub fn cell_time(&self) -> SimTime {
        SimTime::from_nanos((CELL_BITS as f64 * 1e9 / self.rate_bps).round() as u64)
    }

    pub fn cell_rate(&self) -> f64 {
        self.rate_bps / CELL_BITS as f64
    }
}

fn km_for_delay_ms(ms: f64) -> f64 {
    ms * 1e6 / PROP_NS_PER_KM
}

/// Link geometry after resolving RTT and feedback-delay overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub source_links: Vec<LinkSpec>,
    pub bottleneck: LinkSpec,
    pub dest_link: LinkSpec,
    /// Largest round trip over all connections.
    pub rtt: SimTime,
    /// Bottleneck switch -> farthest source -> bottleneck switch.
    pub feedback_delay: SimTime,
}

impl Geometry {
    pub fn connection_rtt(&self, i: usize) -> SimTime {
        let one_way = self.source_links[i].prop_delay()
            + self.bottleneck.prop_delay()
            + self.dest_link.prop_delay();
        one_way + one_way
    }
}

/// Full description of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct NSourceConfig {
    pub n: usize,
    pub link_km: f64,
    /// Per-source access link lengths; overrides `link_km` for those links.
    pub source_km: Option<Vec<f64>>,
    pub rtt_ms: Option<f64>,
    pub feedback_delay_ms: Option<f64>,
    pub link_rate_bps: f64,
    pub service: Service,
    pub ack_path: AckPath,
    pub traffic: Traffic,

    pub mss: u32,
    pub max_window_bytes: u64,
    /// Base retransmission timeout; `None` means max(500 ms, 2 x RTT).
    pub rto_ms: Option<f64>,
    pub timer_granularity_ms: f64,
    pub start_offset_ms: f64,
    pub start_jitter_ms: f64,

    pub erica: EricaParams,
    pub rif: f64,
    pub mcr: f64,
    /// Initial cell rate as a fraction of PCR.
    pub icr_fraction: f64,
    pub nrm: u32,
    pub abr_buffer_cells: Option<usize>,

    pub ubr_buffer_cells: Option<usize>,
    pub drop_policy: PolicyKind,
    pub epd_threshold: Option<usize>,

    pub horizon_s: Option<f64>,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub record_series: bool,
    pub trace_interval_us: f64,

    pub bound_a: f64,
    pub bound_c: f64,
}

impl Default for NSourceConfig {
    fn default() -> Self {
        NSourceConfig {
            n: 1,
            link_km: 1000.0,
            source_km: None,
            rtt_ms: None,
            feedback_delay_ms: None,
            link_rate_bps: OC3_BPS,
            service: Service::Abr,
            ack_path: AckPath::Abr,
            traffic: Traffic::Tcp,
            mss: 512,
            max_window_bytes: 1 << 20,
            rto_ms: None,
            timer_granularity_ms: 100.0,
            start_offset_ms: 0.0,
            start_jitter_ms: 0.0,
            erica: EricaParams::default(),
            rif: DEFAULT_RIF,
            mcr: 0.0,
            icr_fraction: 1.0,
            nrm: DEFAULT_NRM,
            abr_buffer_cells: None,
            ubr_buffer_cells: None,
            drop_policy: PolicyKind::TailDrop,
            epd_threshold: None,
            horizon_s: None,
            warmup_fraction: 0.1,
            seed: 1,
            record_series: false,
            trace_interval_us: 100.0,
            bound_a: 3.0,
            bound_c: 1.0,
        }
    }
}

fn check(cond: bool, field: &str, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::config(field, msg()))
    }
}

impl NSourceConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.n >= 1, "n", || "at least one source required".into())?;
        check(self.link_km.is_finite() && self.link_km >= 0.0, "link_km", || {
            format!("must be a non-negative length, got {}", self.link_km)
        })?;
        if let Some(km) = &self.source_km {
            check(km.len() == self.n, "source_km", || {
                format!("{} lengths given for {} sources", km.len(), self.n)
            })?;
            check(km.iter().all(|k| k.is_finite() && *k >= 0.0), "source_km", || {
                "lengths must be non-negative".into()
            })?;
            check(self.feedback_delay_ms.is_none(), "source_km", || {
                "cannot be combined with feedback_delay_ms".into()
            })?;
        }
        check(self.link_rate_bps > 0.0, "link_rate_mbps", || "must be positive".into())?;
        if let Some(rtt) = self.rtt_ms {
            check(rtt > 0.0 && rtt.is_finite(), "rtt_ms", || "must be positive".into())?;
        }
        if let Some(fd) = self.feedback_delay_ms {
            check(fd >= 0.0 && fd.is_finite(), "feedback_delay_ms", || {
                "must be non-negative".into()
            })?;
            let rtt = self.rtt_ms.unwrap_or(6.0 * self.link_km * PROP_NS_PER_KM / 1e6);
            check(fd <= rtt, "feedback_delay_ms", || {
                format!("feedback delay {fd} ms exceeds RTT {rtt} ms")
            })?;
        }
        check(self.mss > 0, "mss", || "must be positive".into())?;
        check(self.max_window_bytes >= self.mss as u64, "maxwin_bytes", || {
            "must hold at least one segment".into()
        })?;
        if let Some(rto) = self.rto_ms {
            check(rto > 0.0, "rto_ms", || "must be positive".into())?;
        }
        check(self.timer_granularity_ms >= 0.0, "timer_granularity_ms", || {
            "must be non-negative".into()
        })?;
        check(self.start_offset_ms >= 0.0, "start_offset_ms", || {
            "must be non-negative".into()
        })?;
        check(self.start_jitter_ms >= 0.0, "start_jitter_ms", || {
            "must be non-negative".into()
        })?;
        let tu = self.erica.target_utilization;
        check(tu > 0.0 && tu <= 1.0, "target_utilization", || {
            format!("must be in (0, 1], got {tu}")
        })?;
        check(self.erica.interval > SimTime::ZERO, "interval_ms", || {
            "must be positive".into()
        })?;
        check(self.erica.interval_cells >= 1, "interval_cells", || {
            "must be at least 1".into()
        })?;
        check(self.rif > 0.0 && self.rif <= 1.0, "rif", || "must be in (0, 1]".into())?;
        check(self.icr_fraction > 0.0 && self.icr_fraction <= 1.0, "icr", || {
            "must be in (0, 1] of PCR".into()
        })?;
        let pcr = self.link_rate_bps / CELL_BITS as f64;
        check(self.mcr >= 0.0 && self.mcr <= pcr, "mcr", || {
            format!("must be in [0, {pcr}] cells/s")
        })?;
        check(self.nrm >= 1, "nrm", || "must be at least 1".into())?;
        if let Some(b) = self.abr_buffer_cells {
            check(b >= 1, "abr_buffer_cells", || "must be at least 1".into())?;
        }
        if let Some(b) = self.ubr_buffer_cells {
            check(b >= 1, "buffer_cells", || "must be at least 1".into())?;
        }
        if self.drop_policy == PolicyKind::Epd {
            check(self.ubr_buffer_cells.is_some(), "drop_policy", || {
                "epd needs a finite buffer_cells".into()
            })?;
        }
        if let Some(r) = self.epd_threshold {
            let cap = self.ubr_buffer_cells.unwrap_or(usize::MAX);
            check(r <= cap, "epd_threshold", || {
                format!("threshold {r} exceeds buffer capacity {cap}")
            })?;
        }
        if let Some(h) = self.horizon_s {
            check(h > 0.0 && h.is_finite(), "horizon_s", || "must be positive".into())?;
        }
        check(
            (0.0..1.0).contains(&self.warmup_fraction),
            "warmup_fraction",
            || "must be in [0, 1)".into(),
        )?;
        check(self.trace_interval_us >= 0.0, "trace_interval_us", || {
            "must be non-negative".into()
        })?;
        check(self.bound_a >= 0.0 && self.bound_c >= 0.0, "bound_c", || {
            "bound coefficients must be non-negative".into()
        })?;
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        let rate = self.link_rate_bps;
        let link = |km: f64| LinkSpec::new(rate, km);
        let (sources, bottleneck_km, dest_km) = match (self.rtt_ms, self.feedback_delay_ms) {
            (rtt, Some(fd)) => {
                let rtt = rtt.unwrap_or(6.0 * self.link_km * PROP_NS_PER_KM / 1e6);
                let src = km_for_delay_ms(fd / 2.0);
                let rest = km_for_delay_ms((rtt / 2.0 - fd / 2.0) / 2.0);
                (vec![src; self.n], rest, rest)
            }
            (Some(rtt), None) => {
                let km = km_for_delay_ms(rtt / 6.0);
                (vec![km; self.n], km, km)
            }
            (None, None) => {
                let src = self
                    .source_km
                    .clone()
                    .unwrap_or_else(|| vec![self.link_km; self.n]);
                (src, self.link_km, self.link_km)
            }
        };
        let source_links: Vec<LinkSpec> = sources.into_iter().map(link).collect();
        let mut g = Geometry {
            source_links,
            bottleneck: link(bottleneck_km),
            dest_link: link(dest_km),
            rtt: SimTime::ZERO,
            feedback_delay: SimTime::ZERO,
        };
        g.rtt = (0..self.n).map(|i| g.connection_rtt(i)).max().unwrap_or_default();
        let max_src = g
            .source_links
            .iter()
            .map(LinkSpec::prop_delay)
            .max()
            .unwrap_or_default();
        g.feedback_delay = max_src + max_src;
        g
    }

    pub fn horizon(&self) -> SimTime {
        match self.horizon_s {
            Some(h) => SimTime::from_secs_f64(h),
            None => {
                let rtt = self.geometry().rtt;
                SimTime(rtt.as_nanos() * 40).max(SimTime::from_millis(2000))
            }
        }
    }

    pub fn warmup(&self) -> SimTime {
        SimTime::from_secs_f64(self.horizon().as_secs_f64() * self.warmup_fraction)
    }

    pub fn rto(&self) -> SimTime {
        match self.rto_ms {
            Some(ms) => SimTime::from_millis_f64(ms),
            None => {
                let rtt = self.geometry().rtt;
                SimTime::from_millis(500).max(rtt + rtt)
            }
        }
    }

    pub fn tcp_params(&self) -> TcpParams {
        TcpParams {
            mss: self.mss,
            max_window_bytes: self.max_window_bytes,
            rtx_timeout: self.rto(),
            timer_granularity: SimTime::from_millis_f64(self.timer_granularity_ms),
        }
    }

    pub fn pcr(&self) -> f64 {
        self.link_rate_bps / CELL_BITS as f64
    }

    pub fn epd_threshold(&self) -> Option<usize> {
        match (self.drop_policy, self.ubr_buffer_cells) {
            (PolicyKind::Epd, Some(cap)) => Some(self.epd_threshold.unwrap_or_else(|| {
                cap.saturating_sub(2 * cells_per_packet(self.mss) as usize)
            })),
            _ => None,
        }
    }
}
