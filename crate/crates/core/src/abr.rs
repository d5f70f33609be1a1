//! ABR end-system behaviour and the ERICA explicit-rate switch algorithm.

use std::collections::VecDeque;

use crate::aal::{self, Cell, SegmentCells, VcId};
use crate::kernel::{EventHandle, SimTime};
use crate::tcp::TcpSegment;

/// Data cells between consecutive forward RM cells.
pub const DEFAULT_NRM: u32 = 31;
pub const DEFAULT_RIF: f64 = 1.0 / 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmPayload {
    /// Explicit rate, cells/s.
    pub er: f64,
    /// Source's current ACR at emission, cells/s.
    pub ccr: f64,
    pub direction: Direction,
}

/// The destination returns forward RM cells unchanged apart from direction.
pub fn destination_turnaround(rm: RmPayload) -> RmPayload {
    RmPayload {
        direction: Direction::Backward,
        ..rm
    }
}

/// Pacing interval for a rate in cells/s, rounded to the nearest nanosecond.
pub fn cell_gap(rate: f64) -> SimTime {
    SimTime::from_nanos((1e9 / rate).round() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbrSourceParams {
    pub pcr: f64,
    pub mcr: f64,
    pub icr: f64,
    pub rif: f64,
    pub nrm: u32,
    /// Whether forward RM cells are inserted at all (off for UBR and for
    /// unconstrained ack paths).
    pub rm_enabled: bool,
}

impl AbrSourceParams {
    pub fn for_link(pcr: f64) -> Self {
        AbrSourceParams {
            pcr,
            mcr: 0.0,
            icr: pcr,
            rif: DEFAULT_RIF,
            nrm: DEFAULT_NRM,
            rm_enabled: true,
        }
    }

    /// A source that always runs at the peak rate and sends no RM cells.
    pub fn unconstrained(pcr: f64) -> Self {
        AbrSourceParams {
            rm_enabled: false,
            ..Self::for_link(pcr)
        }
    }
}

/// Endless supply of full-size packets for saturating test sources.
#[derive(Clone, Copy, Debug)]
pub struct GreedySupply {
    pub conn: u32,
    pub mss: u32,
    next_seg: u64,
}

impl GreedySupply {
    pub fn new(conn: u32, mss: u32) -> Self {
        GreedySupply {
            conn,
            mss,
            next_seg: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AbrSourceState {
    pub vc: VcId,
    pub acr: f64,
    pub pcr: f64,
    pub mcr: f64,
    pub icr: f64,
    pub rif: f64,
    pub nrm: u32,
    pub rm_enabled: bool,
    pub data_cells_since_rm: u32,
    queue: VecDeque<SegmentCells>,
    queued_cells: u64,
    next_packet_id: u64,
    /// Earliest time the next cell may leave.
    pub next_allowed: SimTime,
    pub greedy: Option<GreedySupply>,
    pub rm_sent: u64,
    pub data_sent: u64,
}

impl AbrSourceState {
    pub fn new(vc: VcId, params: &AbrSourceParams) -> Self {
        AbrSourceState {
            vc,
            acr: params.icr.clamp(params.mcr, params.pcr),
            pcr: params.pcr,
            mcr: params.mcr,
            icr: params.icr,
            rif: params.rif,
            nrm: params.nrm,
            rm_enabled: params.rm_enabled,
            data_cells_since_rm: 0,
            queue: VecDeque::new(),
            queued_cells: 0,
            next_packet_id: 0,
            next_allowed: SimTime::ZERO,
            greedy: None,
            rm_sent: 0,
            data_sent: 0,
        }
    }

    /// Cells waiting in the source queue.
    pub fn queued_cells(&self) -> u64 {
        self.queued_cells
    }

    /// Segments the packet into the source queue. Returns the number of cells
    /// added.
    pub fn enqueue_packet(&mut self, seg: TcpSegment) -> u32 {
        let cells = aal::segment(self.vc, self.next_packet_id, seg);
        self.next_packet_id += 1;
        let n = cells.total();
        self.queued_cells += n as u64;
        self.queue.push_back(cells);
        n
    }

    pub fn rm_due(&self) -> bool {
        self.rm_enabled && self.data_cells_since_rm >= self.nrm
    }

    pub fn has_work(&self) -> bool {
        self.queued_cells > 0 || self.rm_due() || self.greedy.is_some()
    }

    /// Applies feedback from a backward RM cell. Decreases are immediate;
    /// increases are bounded by `rif * pcr` per RM cell.
    pub fn on_backward_rm(&mut self, rm: &RmPayload) -> f64 {
        if rm.er < self.acr {
            self.acr = rm.er.max(self.mcr);
        } else if rm.er > self.acr {
            self.acr = rm.er.min(self.acr + self.rif * self.pcr).min(self.pcr);
        }
        self.acr = self.acr.clamp(self.mcr, self.pcr);
        self.acr
    }

    /// Emits the next cell at `now` and moves the pacing slot forward by
    /// `1/acr`. A forward RM cell replaces the data cell once `nrm` data
    /// cells have gone out since the last one.
    pub fn emit_next(&mut self, now: SimTime) -> Option<Cell> {
        let cell = if self.rm_due() {
            self.data_cells_since_rm = 0;
            self.rm_sent += 1;
            Cell::rm(
                self.vc,
                RmPayload {
                    er: self.pcr,
                    ccr: self.acr,
                    direction: Direction::Forward,
                },
            )
        } else {
            if self.queue.is_empty() {
                if let Some(g) = self.greedy.as_mut() {
                    let seg = TcpSegment::data(g.conn, g.next_seg, g.mss);
                    g.next_seg += 1;
                    self.enqueue_packet(seg);
                }
            }
            let head = self.queue.front_mut()?;
            let cell = head.next().expect("queued packet has cells");
            if head.remaining() == 0 {
                self.queue.pop_front();
            }
            self.queued_cells -= 1;
            self.data_sent += 1;
            if self.rm_enabled {
                self.data_cells_since_rm += 1;
            }
            cell
        };
        self.next_allowed = now + cell_gap(self.acr);
        Some(cell)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EricaParams {
    pub target_utilization: f64,
    pub interval: SimTime,
    pub interval_cells: u32,
}

impl Default for EricaParams {
    fn default() -> Self {
        EricaParams {
            target_utilization: 0.90,
            interval: SimTime::from_millis(1),
            interval_cells: 100,
        }
    }
}

/// Measurement and allocation state of one switch output port.
#[derive(Clone, Debug)]
pub struct EricaPortState {
    pub params: EricaParams,
    pub link_cell_rate: f64,
    pub target_rate: f64,
    pub interval_start: SimTime,
    pub input_cells: u64,
    active: Vec<bool>,
    active_count: usize,
    last_ccr: Vec<Option<f64>>,
    allocation: Vec<Option<f64>>,
    pub load_factor: f64,
    pub fair_share: f64,
    pub timer: Option<EventHandle>,
    pub intervals: u64,
}

impl EricaPortState {
    pub fn new(params: EricaParams, link_cell_rate: f64, start: SimTime) -> Self {
        let target_rate = params.target_utilization * link_cell_rate;
        EricaPortState {
            params,
            link_cell_rate,
            target_rate,
            interval_start: start,
            input_cells: 0,
            active: Vec::new(),
            active_count: 0,
            last_ccr: Vec::new(),
            allocation: Vec::new(),
            load_factor: 0.0,
            fair_share: target_rate,
            timer: None,
            intervals: 0,
        }
    }

    fn slot<T: Clone>(v: &mut Vec<T>, vc: VcId, fill: T) -> &mut T {
        let i = vc as usize;
        if i >= v.len() {
            v.resize(i + 1, fill);
        }
        &mut v[i]
    }

    /// Counts a cell entering the port. Forward-direction cells mark their VC
    /// active and forward RM cells refresh its CCR. Returns true once the
    /// interval's cell budget is exhausted.
    pub fn on_cell(&mut self, cell: &Cell) -> bool {
        self.input_cells += 1;
        let forward = match &cell.body {
            aal::CellBody::Data(_) => true,
            aal::CellBody::Rm(rm) if rm.direction == Direction::Forward => {
                *Self::slot(&mut self.last_ccr, cell.vc, None) = Some(rm.ccr);
                true
            }
            aal::CellBody::Rm(_) => false,
        };
        if forward {
            let a = Self::slot(&mut self.active, cell.vc, false);
            if !*a {
                *a = true;
                self.active_count += 1;
            }
        }
        self.input_cells >= self.params.interval_cells as u64
    }

    pub fn active_vcs(&self) -> usize {
        self.active_count
    }

    /// Closes the averaging interval at `now` and recomputes allocations.
    pub fn end_interval(&mut self, now: SimTime) {
        self.intervals += 1;
        let elapsed = now.saturating_sub(self.interval_start).as_nanos().max(1) as f64 / 1e9;
        if self.input_cells > 0 {
            let input_rate = self.input_cells as f64 / elapsed;
            self.load_factor = input_rate / self.target_rate;
            if self.active_count > 0 {
                self.fair_share = self.target_rate / self.active_count as f64;
                let z = self.load_factor;
                let fair = self.fair_share;
                if self.allocation.len() < self.last_ccr.len() {
                    self.allocation.resize(self.last_ccr.len(), None);
                }
                // CCRs persist across intervals, so VCs idle this interval
                // are re-allocated against the new load factor as well.
                for (alloc, ccr) in self.allocation.iter_mut().zip(self.last_ccr.iter()) {
                    if let Some(ccr) = ccr {
                        *alloc = Some(fair.max(ccr / z));
                    }
                }
            }
        }
        self.input_cells = 0;
        self.active.iter_mut().for_each(|a| *a = false);
        self.active_count = 0;
        self.interval_start = now;
    }

    pub fn allocation(&self, vc: VcId) -> Option<f64> {
        self.allocation.get(vc as usize).copied().flatten()
    }

    /// Lowers the ER field to this port's allocation for the VC, or the
    /// current fair share if none has been computed yet. Never raises it.
    pub fn stamp_rm(&self, vc: VcId, rm: &RmPayload) -> RmPayload {
        let alloc = self.allocation(vc).unwrap_or(self.fair_share);
        RmPayload {
            er: rm.er.min(alloc).min(self.link_cell_rate),
            ..*rm
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aal::CellBody;
    use proptest::prelude::*;

    const PCR: f64 = 366_792.0;

    fn source() -> AbrSourceState {
        AbrSourceState::new(0, &AbrSourceParams::for_link(PCR))
    }

    fn brm(er: f64) -> RmPayload {
        RmPayload {
            er,
            ccr: 0.0,
            direction: Direction::Backward,
        }
    }

    #[test]
    fn decrease_adopts_er() {
        let mut s = source();
        s.acr = 100_000.0;
        assert_eq!(s.on_backward_rm(&brm(60_000.0)), 60_000.0);
    }

    #[test]
    fn increase_is_bounded_by_rif() {
        let mut s = source();
        s.acr = 60_000.0;
        let expected = 60_000.0 + PCR / 16.0;
        assert_eq!(s.on_backward_rm(&brm(200_000.0)), expected);
        assert!((expected - 82_924.0).abs() < 1.0);
    }

    #[test]
    fn equal_er_is_a_fixed_point() {
        let mut s = source();
        s.acr = 123_456.0;
        assert_eq!(s.on_backward_rm(&brm(123_456.0)), 123_456.0);
    }

    #[test]
    fn acr_never_below_mcr() {
        let mut s = AbrSourceState::new(
            0,
            &AbrSourceParams {
                mcr: 1000.0,
                ..AbrSourceParams::for_link(PCR)
            },
        );
        assert_eq!(s.on_backward_rm(&brm(10.0)), 1000.0);
    }

    #[test]
    fn forward_rm_after_every_31_data_cells() {
        let mut s = source();
        for i in 0..3u64 {
            s.enqueue_packet(TcpSegment::data(0, i, 512));
        }
        let mut kinds = vec![];
        let mut t = SimTime::ZERO;
        while s.has_work() {
            let c = s.emit_next(t).unwrap();
            kinds.push(c.is_rm());
            t = s.next_allowed;
        }
        assert_eq!(kinds.len(), 37);
        assert!(kinds[..31].iter().all(|rm| !rm));
        assert!(kinds[31]);
        assert_eq!(s.data_cells_since_rm, 5);
        assert!(kinds[32..].iter().all(|rm| !rm));
    }

    #[test]
    fn rm_due_is_sent_even_with_empty_queue() {
        let mut s = source();
        s.data_cells_since_rm = 31;
        assert!(s.has_work());
        let c = s.emit_next(SimTime::ZERO).unwrap();
        assert!(c.is_rm());
        assert_eq!(s.data_cells_since_rm, 0);
        assert!(!s.has_work());
        assert!(s.emit_next(SimTime::ZERO).is_none());
    }

    #[test]
    fn forward_rm_carries_pcr_and_current_acr() {
        let mut s = source();
        s.acr = 5000.0;
        s.data_cells_since_rm = 31;
        match s.emit_next(SimTime::ZERO).unwrap().body {
            CellBody::Rm(rm) => {
                assert_eq!(rm.er, PCR);
                assert_eq!(rm.ccr, 5000.0);
                assert_eq!(rm.direction, Direction::Forward);
            }
            _ => panic!("expected RM cell"),
        }
    }

    #[test]
    fn pacing_gap_at_line_rate() {
        assert_eq!(cell_gap(PCR), SimTime(2726));
        let mut s = source();
        s.enqueue_packet(TcpSegment::data(0, 0, 512));
        s.emit_next(SimTime(1000)).unwrap();
        assert_eq!(s.next_allowed, SimTime(3726));
    }

    #[test]
    fn turnaround_flips_direction_only() {
        let f = RmPayload {
            er: 42.0,
            ccr: 7.0,
            direction: Direction::Forward,
        };
        let b = destination_turnaround(f);
        assert_eq!(b.er, 42.0);
        assert_eq!(b.ccr, 7.0);
        assert_eq!(b.direction, Direction::Backward);
    }

    // Port with link rate 1000 cells/s so that target = 900 cells/s.
    fn port() -> EricaPortState {
        EricaPortState::new(
            EricaParams {
                target_utilization: 0.9,
                interval: SimTime::from_millis(1000),
                interval_cells: u32::MAX,
            },
            1000.0,
            SimTime::ZERO,
        )
    }

    fn data(vc: VcId) -> Cell {
        crate::aal::segment(vc, 0, TcpSegment::data(0, 0, 512))
            .next()
            .unwrap()
    }

    fn frm(vc: VcId, ccr: f64) -> Cell {
        Cell::rm(
            vc,
            RmPayload {
                er: 1000.0,
                ccr,
                direction: Direction::Forward,
            },
        )
    }

    /// Feeds `cells` cells per VC over one second, one of which is a forward
    /// RM carrying that VC's CCR.
    fn feed(p: &mut EricaPortState, per_vc: &[(VcId, u64, f64)]) {
        for &(vc, cells, ccr) in per_vc {
            p.on_cell(&frm(vc, ccr));
            for _ in 1..cells {
                p.on_cell(&data(vc));
            }
        }
        p.end_interval(SimTime::from_millis(1000));
    }

    #[test]
    fn equal_overloading_sources_get_target_over_n() {
        let mut p = port();
        // 10 VCs at 0.12 target each: 1080 cells/s = 1.2 x target.
        let vcs: Vec<_> = (0..10).map(|vc| (vc, 108, 108.0)).collect();
        feed(&mut p, &vcs);
        assert!((p.load_factor - 1.2).abs() < 1e-12);
        let allocs: Vec<f64> = (0..10).map(|vc| p.allocation(vc).unwrap()).collect();
        // Oracle: each source's share of the target when all are identical.
        let oracle = 900.0 / 10.0;
        for a in &allocs {
            assert!((a - oracle).abs() < 1e-9);
        }
        assert!((allocs.iter().sum::<f64>() - 900.0).abs() < 1e-6);
        assert!((p.fair_share * 10.0 - 900.0).abs() < 1e-9);
    }

    #[test]
    fn vc_share_beats_fair_share() {
        let mut p = port();
        // z = 2: 1800 cells in one second.
        feed(&mut p, &[(0, 900, 1350.0), (1, 900, 450.0)]);
        assert!((p.load_factor - 2.0).abs() < 1e-12);
        assert!((p.allocation(0).unwrap() - 675.0).abs() < 1e-9);
        assert!((p.allocation(1).unwrap() - 450.0).abs() < 1e-9);
    }

    #[test]
    fn lone_underloading_source_is_offered_target() {
        let mut p = port();
        feed(&mut p, &[(0, 450, 450.0)]);
        assert!((p.load_factor - 0.5).abs() < 1e-12);
        assert!((p.allocation(0).unwrap() - 900.0).abs() < 1e-9);
    }

    #[test]
    fn idle_interval_retains_allocations() {
        let mut p = port();
        feed(&mut p, &[(0, 450, 450.0)]);
        let before = (p.allocation(0), p.fair_share, p.load_factor);
        p.end_interval(SimTime::from_millis(2000));
        assert_eq!(before, (p.allocation(0), p.fair_share, p.load_factor));
    }

    #[test]
    fn interval_ends_on_cell_budget() {
        let mut p = EricaPortState::new(EricaParams::default(), PCR, SimTime::ZERO);
        for i in 0..100 {
            assert_eq!(p.on_cell(&data(0)), i == 99);
        }
    }

    #[test]
    fn stamping_only_lowers_er() {
        let mut p = port();
        let vcs: Vec<_> = (0..10).map(|vc| (vc, 108, 108.0)).collect();
        feed(&mut p, &vcs);
        let stamped = p.stamp_rm(3, &brm(PCR));
        assert!((stamped.er - 90.0).abs() < 1e-9);
        let low = p.stamp_rm(3, &brm(10.0));
        assert_eq!(low.er, 10.0);
        // unknown VC falls back to the fair share
        assert!((p.stamp_rm(77, &brm(PCR)).er - 90.0).abs() < 1e-9);
    }

    #[test]
    fn path_minimum_reaches_source() {
        let target = 900.0;
        let mut a = port();
        let mut b = port();
        feed(&mut a, &[(0, 300, 300.0)]);
        feed(&mut b, &[(0, 300, 300.0)]);
        a.allocation[0] = Some(0.3 * target);
        b.allocation[0] = Some(0.2 * target);
        let rm = a.stamp_rm(0, &brm(PCR));
        let rm = b.stamp_rm(0, &rm);
        let mut s = source();
        s.on_backward_rm(&rm);
        assert!((s.acr - 0.2 * target).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn acr_stays_within_bounds(ers in proptest::collection::vec(0.0f64..1e6, 1..50),
                                   mcr in 0.0f64..1000.0) {
            let mut s = AbrSourceState::new(0, &AbrSourceParams { mcr, ..AbrSourceParams::for_link(PCR) });
            for er in ers {
                let acr = s.on_backward_rm(&brm(er));
                prop_assert!(mcr <= acr && acr <= PCR);
            }
        }

        #[test]
        fn er_is_non_increasing_along_any_path(
            loads in proptest::collection::vec((1u64..2000, 1.0f64..2000.0), 1..6),
            er in 0.0f64..1e6,
        ) {
            let mut rm = brm(er);
            for (cells, ccr) in loads {
                let mut p = port();
                feed(&mut p, &[(0, cells, ccr)]);
                let next = p.stamp_rm(0, &rm);
                prop_assert!(next.er <= rm.er);
                rm = next;
            }
        }
    }
}
