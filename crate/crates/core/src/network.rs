//! A runnable n-source network: hosts, switches and output ports driven by
//! kernel events.
//!
//! VC `2i` carries connection `i`'s data from source host `i` to destination
//! host `n + i`; VC `2i + 1` carries its acks back. Every unidirectional link
//! has an output port at its transmitting end. Switch ports run ERICA when
//! the service is ABR; backward RM cells are stamped at each switch by the
//! port that carries the VC's forward direction.

use crate::aal::{Cell, CellBody, Reassembler, VcId};
use crate::abr::{
    destination_turnaround, AbrSourceParams, AbrSourceState, Direction,
    EricaPortState, GreedySupply,
};
use crate::error::{Result, SimError};
use crate::kernel::{Model, Scheduler, SimTime, Simulation};
use crate::metrics::{Burst, RunMetrics, Series, VcConservation};
use crate::tcp::{ConnId, TcpConnState, TcpRxState, TcpSegment, TimerAction};
use crate::topology::{AckPath, LinkSpec, NSourceConfig, Service, Traffic};
use crate::ubr::{Admission, DropPolicy, UbrPortState};

use rand::Rng;

pub type PortId = usize;

const SWITCH_EDGE: usize = 0;
const SWITCH_EGRESS: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeId {
    Host(usize),
    Switch(usize),
}

#[derive(Clone, Debug)]
pub enum Event {
    /// A cell finished crossing a link.
    Arrival { node: NodeId, cell: Cell },
    /// The port's link is free for its next queued cell.
    PortDrain(PortId),
    /// A host's pacer may emit its next cell.
    SourceEmit(usize),
    RetransmitTimeout(ConnId),
    IntervalEnd(PortId),
    AppStart(ConnId),
}

struct Port {
    cell_time: SimTime,
    prop: SimTime,
    to: NodeId,
    buffer: UbrPortState,
    busy_until: SimTime,
    drain_pending: bool,
    erica: Option<EricaPortState>,
    max_queue: u64,
}

struct Switch {
    /// Output port for a VC's data and forward RM cells.
    forward: Vec<PortId>,
    /// Output port for a VC's backward RM cells.
    backward: Vec<PortId>,
}

#[derive(Clone, Copy, Debug)]
enum Role {
    Sender(ConnId),
    Receiver(ConnId),
}

#[derive(Default)]
struct BurstTracker {
    open: bool,
    start: SimTime,
    last: SimTime,
    last_gap: SimTime,
    cells: u64,
    prev_end: SimTime,
    log: Vec<Burst>,
}

impl BurstTracker {
    fn on_emit(&mut self, now: SimTime, gap: SimTime) {
        if self.open && now.saturating_sub(self.last) > SimTime(2 * self.last_gap.as_nanos()) {
            self.close();
        }
        if !self.open {
            self.open = true;
            self.start = now;
            self.cells = 0;
        }
        self.cells += 1;
        self.last = now;
        self.last_gap = gap;
    }

    fn close(&mut self) {
        if !self.open {
            return;
        }
        let end = self.last + self.last_gap;
        self.log.push(Burst {
            start: self.start,
            active: end - self.start,
            idle_before: self.start.saturating_sub(self.prev_end),
            cells: self.cells,
        });
        self.prev_end = end;
        self.open = false;
    }
}

struct Host {
    port: PortId,
    source: AbrSourceState,
    emit_pending: bool,
    reassembler: Reassembler,
    role: Role,
    max_source_queue: u64,
    bursts: BurstTracker,
    last_queue_sample: Option<SimTime>,
}

struct Conn {
    tcp: TcpConnState,
    rx: TcpRxState,
    src: usize,
    dst: usize,
    delivered_after_warmup: u64,
    delivered_total: u64,
}

/// One isolated simulation instance.
pub struct Network {
    n: usize,
    traffic: Traffic,
    ports: Vec<Port>,
    hosts: Vec<Host>,
    switches: Vec<Switch>,
    conns: Vec<Conn>,
    bottleneck: PortId,
    warmup: SimTime,
    horizon: SimTime,
    rtt: SimTime,
    feedback_delay: SimTime,
    link_rate_bps: f64,
    start_offset: SimTime,
    start_jitter: SimTime,

    record_series: bool,
    trace_interval: SimTime,
    series: Series,
    last_bottleneck_sample: Option<SimTime>,

    queued_total: u64,
    max_total_queue: u64,
    vc_stats: Vec<VcConservation>,
    cells_sent: u64,
    cells_dropped: u64,
    rm_stamps: u64,
    er_increases: u64,
    acr_updates: u64,
    acr_bound_violations: u64,
    /// Pending injected losses: (data VC, segment index).
    injected_losses: Vec<(VcId, u64)>,
}

fn fwd_vc(conn: usize) -> VcId {
    (2 * conn) as VcId
}

fn ack_vc(conn: usize) -> VcId {
    (2 * conn + 1) as VcId
}

impl Network {
    pub fn build(cfg: &NSourceConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let geo = cfg.geometry();
        let pcr = cfg.pcr();
        let vcs = 2 * n;

        let switch_buffer = || match cfg.service {
            Service::Abr => match cfg.abr_buffer_cells {
                Some(cap) => UbrPortState::new(cap, DropPolicy::TailDrop),
                None => UbrPortState::unbounded(),
            },
            Service::Ubr => {
                let cap = cfg.ubr_buffer_cells.unwrap_or(usize::MAX);
                let policy = match cfg.epd_threshold() {
                    Some(threshold) => DropPolicy::Epd { threshold },
                    None => DropPolicy::TailDrop,
                };
                UbrPortState::new(cap, policy)
            }
        };
        let erica = |link: &LinkSpec| match cfg.service {
            Service::Abr => Some(EricaPortState::new(cfg.erica, link.cell_rate(), SimTime::ZERO)),
            Service::Ubr => None,
        };
        let mut ports: Vec<Port> = Vec::new();
        let mut add_port = |link: LinkSpec, to: NodeId, buffer: UbrPortState, erica: Option<EricaPortState>| {
            ports.push(Port {
                cell_time: link.cell_time(),
                prop: link.prop_delay(),
                to,
                buffer,
                busy_until: SimTime::ZERO,
                drain_pending: false,
                erica,
                max_queue: 0,
            });
            ports.len() - 1
        };

        let host_ports: Vec<PortId> = (0..2 * n)
            .map(|h| {
                let (link, to) = if h < n {
                    (geo.source_links[h], NodeId::Switch(SWITCH_EDGE))
                } else {
                    (geo.dest_link, NodeId::Switch(SWITCH_EGRESS))
                };
                add_port(link, to, UbrPortState::unbounded(), None)
            })
            .collect();
        let edge_to_src: Vec<PortId> = (0..n)
            .map(|i| {
                let l = geo.source_links[i];
                add_port(l, NodeId::Host(i), switch_buffer(), erica(&l))
            })
            .collect();
        let bottleneck = add_port(
            geo.bottleneck,
            NodeId::Switch(SWITCH_EGRESS),
            switch_buffer(),
            erica(&geo.bottleneck),
        );
        let reverse_trunk = add_port(
            geo.bottleneck,
            NodeId::Switch(SWITCH_EDGE),
            switch_buffer(),
            erica(&geo.bottleneck),
        );
        let egress_to_dst: Vec<PortId> = (0..n)
            .map(|i| {
                add_port(
                    geo.dest_link,
                    NodeId::Host(n + i),
                    switch_buffer(),
                    erica(&geo.dest_link),
                )
            })
            .collect();

        let mut edge = Switch {
            forward: vec![0; vcs],
            backward: vec![0; vcs],
        };
        let mut egress = Switch {
            forward: vec![0; vcs],
            backward: vec![0; vcs],
        };
        for i in 0..n {
            let (d, a) = (fwd_vc(i) as usize, ack_vc(i) as usize);
            edge.forward[d] = bottleneck;
            edge.backward[d] = edge_to_src[i];
            edge.forward[a] = edge_to_src[i];
            edge.backward[a] = bottleneck;
            egress.forward[d] = egress_to_dst[i];
            egress.backward[d] = reverse_trunk;
            egress.forward[a] = reverse_trunk;
            egress.backward[a] = egress_to_dst[i];
        }

        let abr_params = AbrSourceParams {
            pcr,
            mcr: cfg.mcr,
            icr: cfg.icr_fraction * pcr,
            rif: cfg.rif,
            nrm: cfg.nrm,
            rm_enabled: true,
        };
        let data_params = match cfg.service {
            Service::Abr => abr_params,
            Service::Ubr => AbrSourceParams::unconstrained(pcr),
        };
        let ack_params = match (cfg.service, cfg.ack_path) {
            (Service::Abr, AckPath::Abr) => abr_params,
            _ => AbrSourceParams::unconstrained(pcr),
        };

        let tcp = cfg.tcp_params();
        let mut hosts = Vec::with_capacity(2 * n);
        for (h, &port) in host_ports.iter().enumerate() {
            let (vc, params, role) = if h < n {
                (fwd_vc(h), &data_params, Role::Sender(h as ConnId))
            } else {
                (ack_vc(h - n), &ack_params, Role::Receiver((h - n) as ConnId))
            };
            let mut source = AbrSourceState::new(vc, params);
            if h < n && cfg.traffic == Traffic::Greedy {
                source.greedy = None;
            }
            hosts.push(Host {
                port,
                source,
                emit_pending: false,
                reassembler: Reassembler::new(),
                role,
                max_source_queue: 0,
                bursts: BurstTracker::default(),
                last_queue_sample: None,
            });
        }
        let conns = (0..n)
            .map(|i| Conn {
                tcp: TcpConnState::new(&tcp),
                rx: TcpRxState::default(),
                src: i,
                dst: n + i,
                delivered_after_warmup: 0,
                delivered_total: 0,
            })
            .collect();

        let series = if cfg.record_series {
            Series {
                cwnd: vec![Vec::new(); n],
                acr: vec![Vec::new(); 2 * n],
                bottleneck_queue: Vec::new(),
                source_queue: vec![Vec::new(); n],
            }
        } else {
            Series::default()
        };

        Ok(Network {
            n,
            traffic: cfg.traffic,
            ports,
            hosts,
            switches: vec![edge, egress],
            conns,
            bottleneck,
            warmup: cfg.warmup(),
            horizon: cfg.horizon(),
            rtt: geo.rtt,
            feedback_delay: geo.feedback_delay,
            link_rate_bps: cfg.link_rate_bps,
            start_offset: SimTime::from_millis_f64(cfg.start_offset_ms),
            start_jitter: SimTime::from_millis_f64(cfg.start_jitter_ms),
            record_series: cfg.record_series,
            trace_interval: SimTime::from_secs_f64(cfg.trace_interval_us / 1e6),
            series,
            last_bottleneck_sample: None,
            queued_total: 0,
            max_total_queue: 0,
            vc_stats: vec![VcConservation::default(); vcs],
            cells_sent: 0,
            cells_dropped: 0,
            rm_stamps: 0,
            er_increases: 0,
            acr_updates: 0,
            acr_bound_violations: 0,
            injected_losses: Vec::new(),
        })
    }

    /// Schedules connection starts and the first averaging-interval timers.
    pub fn start(&mut self, sched: &mut Scheduler<Event>) -> Result<()> {
        for c in 0..self.n {
            let jitter = if self.start_jitter > SimTime::ZERO {
                SimTime(sched.rng().gen_range(0..=self.start_jitter.as_nanos()))
            } else {
                SimTime::ZERO
            };
            sched.schedule(self.start_offset + jitter, Event::AppStart(c as ConnId))?;
        }
        for p in 0..self.ports.len() {
            if let Some(e) = self.ports[p].erica.as_mut() {
                e.timer = Some(sched.schedule_cancellable(e.params.interval, Event::IntervalEnd(p))?);
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    fn note_total_queue(&mut self) {
        if self.queued_total > self.max_total_queue {
            self.max_total_queue = self.queued_total;
        }
    }

    fn sample_source_queue(&mut self, h: usize, now: SimTime) {
        let host = &mut self.hosts[h];
        let q = host.source.queued_cells();
        if q > host.max_source_queue {
            host.max_source_queue = q;
        }
        if self.record_series && h < self.n {
            let due = host
                .last_queue_sample
                .is_none_or(|t| now.saturating_sub(t) >= self.trace_interval);
            if due {
                host.last_queue_sample = Some(now);
                self.series.source_queue[h].push((now, q));
            }
        }
    }

    fn kick_source(&mut self, h: usize, sched: &mut Scheduler<Event>) -> Result<()> {
        let host = &mut self.hosts[h];
        if host.emit_pending || !host.source.has_work() {
            return Ok(());
        }
        host.emit_pending = true;
        let at = host.source.next_allowed.max(sched.now());
        sched.schedule(at, Event::SourceEmit(h))
    }

    fn on_source_emit(&mut self, h: usize, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        let host = &mut self.hosts[h];
        host.emit_pending = false;
        let before = host.source.queued_cells();
        let Some(cell) = host.source.emit_next(now) else {
            return Ok(());
        };
        let after = host.source.queued_cells();
        if host.source.greedy.is_none() {
            self.queued_total = self.queued_total + after - before;
        }
        if h < self.n {
            let gap = host.source.next_allowed - now;
            host.bursts.on_emit(now, gap);
        }
        let port = host.port;
        self.sample_source_queue(h, now);
        self.vc_stats[cell.vc as usize].emitted += 1;
        self.cells_sent += 1;
        self.offer(port, cell, sched)?;
        self.kick_source(h, sched)
    }

    /// Drops the first cell of the first transmission of segment `seg_index`
    /// of connection `conn` at the bottleneck. Retransmissions pass.
    pub fn inject_loss(&mut self, conn: ConnId, seg_index: u64) {
        self.injected_losses.push((fwd_vc(conn as usize), seg_index));
    }

    fn take_injected_loss(&mut self, p: PortId, cell: &Cell) -> bool {
        if p != self.bottleneck || self.injected_losses.is_empty() {
            return false;
        }
        let Some(d) = cell.data() else { return false };
        if d.segment.is_ack || d.index != 0 {
            return false;
        }
        let key = (cell.vc, d.segment.seg_index);
        match self.injected_losses.iter().position(|&l| l == key) {
            Some(i) => {
                self.injected_losses.swap_remove(i);
                true
            }
            None => false,
        }
    }

    /// Hands a cell to an output port: measurement, admission, and service.
    fn offer(&mut self, p: PortId, cell: Cell, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        let vc = cell.vc as usize;
        if self.take_injected_loss(p, &cell) {
            self.vc_stats[vc].dropped += 1;
            self.cells_dropped += 1;
            return Ok(());
        }
        let port = &mut self.ports[p];
        if let Some(e) = port.erica.as_mut() {
            if e.on_cell(&cell) {
                e.end_interval(now);
                if let Some(t) = e.timer.take() {
                    sched.cancel(t);
                }
                e.timer = Some(sched.schedule_cancellable(now + e.params.interval, Event::IntervalEnd(p))?);
            }
        }
        if let Admission::Dropped(_) = port.buffer.enqueue(cell) {
            self.vc_stats[vc].dropped += 1;
            self.cells_dropped += 1;
            return Ok(());
        }
        let idle = !port.drain_pending;
        let busy_until = port.busy_until;
        self.queued_total += 1;
        self.note_total_queue();
        if idle {
            let port = &mut self.ports[p];
            if now >= busy_until {
                self.transmit(p, sched)?;
            } else {
                port.drain_pending = true;
                sched.schedule(busy_until, Event::PortDrain(p))?;
            }
        }
        self.sample_port(p, now);
        Ok(())
    }

    fn sample_port(&mut self, p: PortId, now: SimTime) {
        let port = &mut self.ports[p];
        let q = port.buffer.len() as u64;
        let new_max = q > port.max_queue;
        if new_max {
            port.max_queue = q;
        }
        if self.record_series && p == self.bottleneck {
            let due = self
                .last_bottleneck_sample
                .is_none_or(|t| now.saturating_sub(t) >= self.trace_interval);
            if due || new_max {
                self.last_bottleneck_sample = Some(now);
                self.series.bottleneck_queue.push((now, q));
            }
        }
    }

    fn transmit(&mut self, p: PortId, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        let port = &mut self.ports[p];
        let Some(cell) = port.buffer.dequeue() else {
            return Ok(());
        };
        self.queued_total -= 1;
        port.busy_until = now + port.cell_time;
        sched.schedule(port.busy_until + port.prop, Event::Arrival { node: port.to, cell })?;
        if !port.buffer.is_empty() {
            port.drain_pending = true;
            sched.schedule(port.busy_until, Event::PortDrain(p))?;
        }
        self.sample_port(p, now);
        Ok(())
    }

    fn on_switch_arrival(&mut self, s: usize, mut cell: Cell, sched: &mut Scheduler<Event>) -> Result<()> {
        let vc = cell.vc as usize;
        let out = match &mut cell.body {
            CellBody::Rm(rm) if rm.direction == Direction::Backward => {
                let fwd_port = self.switches[s].forward[vc];
                if let Some(e) = &self.ports[fwd_port].erica {
                    let stamped = e.stamp_rm(cell.vc, rm);
                    self.rm_stamps += 1;
                    if stamped.er > rm.er {
                        self.er_increases += 1;
                    }
                    *rm = stamped;
                }
                self.switches[s].backward[vc]
            }
            _ => self.switches[s].forward[vc],
        };
        self.offer(out, cell, sched)
    }

    fn on_host_arrival(&mut self, h: usize, cell: Cell, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        self.vc_stats[cell.vc as usize].absorbed += 1;
        match cell.body {
            CellBody::Data(d) => {
                if let Some(seg) = self.hosts[h].reassembler.on_cell_arrival(cell.vc, &d) {
                    self.on_packet(h, seg, sched)?;
                }
            }
            CellBody::Rm(rm) if rm.direction == Direction::Forward => {
                let back = Cell::rm(cell.vc, destination_turnaround(rm));
                self.vc_stats[cell.vc as usize].emitted += 1;
                self.cells_sent += 1;
                let port = self.hosts[h].port;
                self.offer(port, back, sched)?;
            }
            CellBody::Rm(rm) => {
                let src = &mut self.hosts[h].source;
                if src.vc != cell.vc {
                    return Err(SimError::fault(
                        format!("host {h}"),
                        format!("backward RM for vc {} reached the wrong source", cell.vc),
                    ));
                }
                let before = src.acr;
                let acr = src.on_backward_rm(&rm);
                self.acr_updates += 1;
                if !(src.mcr <= acr && acr <= src.pcr) {
                    self.acr_bound_violations += 1;
                }
                if self.record_series && acr != before {
                    self.series.acr[cell.vc as usize].push((now, acr));
                }
            }
        }
        Ok(())
    }

    fn on_packet(&mut self, h: usize, seg: TcpSegment, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        match self.hosts[h].role {
            Role::Receiver(c) => {
                if seg.is_ack {
                    return Err(SimError::fault(format!("host {h}"), "ack arrived at a receiver"));
                }
                let conn = &mut self.conns[c as usize];
                let delivered = if self.traffic == Traffic::Greedy {
                    seg.payload_len as u64
                } else {
                    let out = conn.rx.on_data_segment(&seg);
                    let dst = conn.dst;
                    let host = &mut self.hosts[dst];
                    let cells = host.source.enqueue_packet(out.ack) as u64;
                    self.queued_total += cells;
                    self.note_total_queue();
                    self.sample_source_queue(dst, now);
                    self.kick_source(dst, sched)?;
                    out.delivered_bytes
                };
                let conn = &mut self.conns[c as usize];
                conn.delivered_total += delivered;
                if now >= self.warmup {
                    conn.delivered_after_warmup += delivered;
                }
            }
            Role::Sender(c) => {
                if !seg.is_ack {
                    return Err(SimError::fault(format!("host {h}"), "data arrived at a sender"));
                }
                let conn = &mut self.conns[c as usize];
                let out = conn
                    .tcp
                    .on_ack(seg.ack_index)
                    .map_err(|e| SimError::fault(format!("tcp conn {c}"), e.to_string()))?;
                if out.newly_acked > 0 {
                    self.record_cwnd(c, now);
                }
                match out.timer {
                    TimerAction::Restart => self.restart_timer(c, sched)?,
                    TimerAction::Cancel => self.cancel_timer(c, sched),
                    TimerAction::Keep => {}
                }
                self.send_segments(c, out.send, sched)?;
            }
        }
        Ok(())
    }

    fn record_cwnd(&mut self, c: ConnId, now: SimTime) {
        if self.record_series {
            let cwnd = self.conns[c as usize].tcp.cwnd;
            self.series.cwnd[c as usize].push((now, cwnd));
        }
    }

    fn restart_timer(&mut self, c: ConnId, sched: &mut Scheduler<Event>) -> Result<()> {
        self.cancel_timer(c, sched);
        let tcp = &mut self.conns[c as usize].tcp;
        let at = sched.now() + tcp.retransmit_timer_value();
        tcp.rto_pending = Some(sched.schedule_cancellable(at, Event::RetransmitTimeout(c))?);
        Ok(())
    }

    fn cancel_timer(&mut self, c: ConnId, sched: &mut Scheduler<Event>) {
        if let Some(h) = self.conns[c as usize].tcp.rto_pending.take() {
            sched.cancel(h);
        }
    }

    fn send_segments(
        &mut self,
        c: ConnId,
        range: std::ops::Range<u64>,
        sched: &mut Scheduler<Event>,
    ) -> Result<()> {
        if range.is_empty() {
            return Ok(());
        }
        let now = sched.now();
        let conn = &self.conns[c as usize];
        let (src, mss) = (conn.src, conn.tcp.mss);
        let host = &mut self.hosts[src];
        for idx in range {
            let cells = host.source.enqueue_packet(TcpSegment::data(c, idx, mss));
            self.queued_total += cells as u64;
        }
        self.note_total_queue();
        self.sample_source_queue(src, now);
        if self.conns[c as usize].tcp.rto_pending.is_none() {
            self.restart_timer(c, sched)?;
        }
        self.kick_source(src, sched)
    }

    fn on_app_start(&mut self, c: ConnId, sched: &mut Scheduler<Event>) -> Result<()> {
        let src = self.conns[c as usize].src;
        match self.traffic {
            Traffic::Tcp => {
                self.record_cwnd(c, sched.now());
                let range = self.conns[c as usize].tcp.admit();
                self.send_segments(c, range, sched)
            }
            Traffic::Greedy => {
                let mss = self.conns[c as usize].tcp.mss;
                self.hosts[src].source.greedy = Some(GreedySupply::new(c, mss));
                self.kick_source(src, sched)
            }
        }
    }

    fn on_timeout(&mut self, c: ConnId, sched: &mut Scheduler<Event>) -> Result<()> {
        let conn = &mut self.conns[c as usize];
        conn.tcp.rto_pending = None;
        if conn.tcp.on_timeout().is_none() {
            return Ok(());
        }
        self.record_cwnd(c, sched.now());
        let range = self.conns[c as usize].tcp.admit();
        self.restart_timer(c, sched)?;
        self.send_segments(c, range, sched)
    }

    fn on_interval_end(&mut self, p: PortId, sched: &mut Scheduler<Event>) -> Result<()> {
        let now = sched.now();
        if let Some(e) = self.ports[p].erica.as_mut() {
            e.end_interval(now);
            e.timer = Some(sched.schedule_cancellable(now + e.params.interval, Event::IntervalEnd(p))?);
        }
        Ok(())
    }

    /// Collects the run's measurements. `pending` must be the scheduler's
    /// still-pending events so that cells on the wire are accounted for.
    pub fn finish<'a>(
        mut self,
        pending: impl Iterator<Item = &'a Event>,
        events_processed: u64,
    ) -> RunMetrics {
        let mut conservation = self.vc_stats.clone();
        for ev in pending {
            if let Event::Arrival { cell, .. } = ev {
                conservation[cell.vc as usize].in_flight += 1;
            }
        }
        for port in &self.ports {
            for cell in port.buffer.iter() {
                conservation[cell.vc as usize].in_flight += 1;
            }
        }
        for h in &mut self.hosts {
            h.bursts.close();
        }
        let span = self.horizon.saturating_sub(self.warmup).as_secs_f64().max(1e-12);
        let goodput_mbps = self
            .conns
            .iter()
            .map(|c| c.delivered_after_warmup as f64 * 8.0 / span / 1e6)
            .collect();
        RunMetrics {
            horizon: self.horizon,
            warmup: self.warmup,
            rtt: self.rtt,
            feedback_delay: self.feedback_delay,
            link_rate_bps: self.link_rate_bps,
            bottleneck_max_queue: self.ports[self.bottleneck].max_queue,
            port_max_queue: self.ports.iter().map(|p| p.max_queue).collect(),
            source_max_queue: self.hosts[..self.n].iter().map(|h| h.max_source_queue).collect(),
            max_total_queue: self.max_total_queue,
            goodput_mbps,
            delivered_bytes: self.conns.iter().map(|c| c.delivered_total).collect(),
            cells_sent: self.cells_sent,
            cells_dropped: self.cells_dropped,
            packets_dropped_reassembly: self.hosts.iter().map(|h| h.reassembler.dropped_packets).sum(),
            duplicates_discarded: self.conns.iter().map(|c| c.rx.duplicates_discarded).sum(),
            timeouts: self.conns.iter().map(|c| c.tcp.timeouts).sum(),
            rm_stamps: self.rm_stamps,
            er_increases: self.er_increases,
            acr_updates: self.acr_updates,
            acr_bound_violations: self.acr_bound_violations,
            events_processed,
            conservation,
            bursts: self.hosts[..self.n]
                .iter_mut()
                .map(|h| std::mem::take(&mut h.bursts.log))
                .collect(),
            series: self.series,
            in_order: self
                .conns
                .iter()
                .all(|c| c.rx.delivered_bytes == c.rx.next_expected * c.tcp.mss as u64),
        }
    }
}

impl Model for Network {
    type Event = Event;

    fn handle(&mut self, event: Event, sched: &mut Scheduler<Event>) -> Result<()> {
        match event {
            Event::Arrival { node: NodeId::Switch(s), cell } => self.on_switch_arrival(s, cell, sched),
            Event::Arrival { node: NodeId::Host(h), cell } => self.on_host_arrival(h, cell, sched),
            Event::PortDrain(p) => {
                self.ports[p].drain_pending = false;
                self.transmit(p, sched)
            }
            Event::SourceEmit(h) => self.on_source_emit(h, sched),
            Event::RetransmitTimeout(c) => self.on_timeout(c, sched),
            Event::IntervalEnd(p) => self.on_interval_end(p, sched),
            Event::AppStart(c) => self.on_app_start(c, sched),
        }
    }
}

/// Builds, runs and measures one configuration.
pub fn simulate(cfg: &NSourceConfig) -> Result<RunMetrics> {
    run(Network::build(cfg)?, cfg.seed)
}

/// Runs an already built network to its horizon.
pub fn run(net: Network, seed: u64) -> Result<RunMetrics> {
    let horizon = net.horizon();
    let mut sim = Simulation::new(net, seed);
    sim.model.start(&mut sim.sched)?;
    let outcome = sim.run_until(horizon)?;
    let Simulation { model, sched } = sim;
    Ok(model.finish(sched.pending(), outcome.events_processed))
}
