//! Output-buffered FIFO port with tail-drop or Early Packet Discard
//! admission. ABR ports reuse the same buffer with an unbounded capacity.

use std::collections::VecDeque;

use crate::aal::{Cell, CellBody, VcId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropPolicy {
    TailDrop,
    /// Reject whole packets whose first cell finds `threshold` or more cells
    /// queued.
    Epd { threshold: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropCause {
    Overflow,
    Epd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Dropped(DropCause),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VcCounters {
    pub cells_in: u64,
    pub cells_out: u64,
    pub dropped: u64,
    pub queued: u64,
}

#[derive(Clone, Copy, Debug)]
struct Discarding {
    packet_id: u64,
    cause: DropCause,
}

#[derive(Clone, Debug)]
pub struct UbrPortState {
    pub capacity: usize,
    pub policy: DropPolicy,
    queue: VecDeque<Cell>,
    discarding: Vec<Option<Discarding>>,
    per_vc: Vec<VcCounters>,
    pub drops_overflow: u64,
    pub drops_epd: u64,
}

impl UbrPortState {
    pub fn new(capacity: usize, policy: DropPolicy) -> Self {
        UbrPortState {
            capacity,
            policy,
            queue: VecDeque::new(),
            discarding: Vec::new(),
            per_vc: Vec::new(),
            drops_overflow: 0,
            drops_epd: 0,
        }
    }

    pub fn unbounded() -> Self {
        Self::new(usize::MAX, DropPolicy::TailDrop)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cell> {
        self.queue.iter()
    }

    pub fn counters(&self, vc: VcId) -> VcCounters {
        self.per_vc.get(vc as usize).copied().unwrap_or_default()
    }

    pub fn dropped_total(&self) -> u64 {
        self.drops_overflow + self.drops_epd
    }

    fn vc_counters(&mut self, vc: VcId) -> &mut VcCounters {
        let i = vc as usize;
        if i >= self.per_vc.len() {
            self.per_vc.resize(i + 1, VcCounters::default());
            self.discarding.resize(i + 1, None);
        }
        &mut self.per_vc[i]
    }

    pub fn enqueue(&mut self, cell: Cell) -> Admission {
        self.vc_counters(cell.vc).cells_in += 1;
        let verdict = self.admit(&cell);
        let c = &mut self.per_vc[cell.vc as usize];
        match verdict {
            Admission::Accepted => {
                c.queued += 1;
                self.queue.push_back(cell);
            }
            Admission::Dropped(cause) => {
                c.dropped += 1;
                match cause {
                    DropCause::Overflow => self.drops_overflow += 1,
                    DropCause::Epd => self.drops_epd += 1,
                }
            }
        }
        verdict
    }

    fn admit(&mut self, cell: &Cell) -> Admission {
        let len = self.queue.len();
        let slot = cell.vc as usize;
        let data = match &cell.body {
            CellBody::Data(d) => d,
            CellBody::Rm(_) => {
                return if len < self.capacity {
                    Admission::Accepted
                } else {
                    Admission::Dropped(DropCause::Overflow)
                };
            }
        };

        if let Some(d) = self.discarding[slot] {
            if d.packet_id == data.packet_id {
                if data.last {
                    self.discarding[slot] = None;
                }
                return Admission::Dropped(d.cause);
            }
            // A newer packet: the discarded one's tail never reached us.
            self.discarding[slot] = None;
        }

        let threshold = match self.policy {
            DropPolicy::Epd { threshold } => Some(threshold),
            DropPolicy::TailDrop => None,
        };
        if let Some(r) = threshold {
            if data.index == 0 && len >= r {
                if !data.last {
                    self.discarding[slot] = Some(Discarding {
                        packet_id: data.packet_id,
                        cause: DropCause::Epd,
                    });
                }
                return Admission::Dropped(DropCause::Epd);
            }
        }
        if len >= self.capacity {
            // Under EPD an overflow poisons the rest of the packet.
            if threshold.is_some() && !data.last {
                self.discarding[slot] = Some(Discarding {
                    packet_id: data.packet_id,
                    cause: DropCause::Overflow,
                });
            }
            return Admission::Dropped(DropCause::Overflow);
        }
        Admission::Accepted
    }

    pub fn dequeue(&mut self) -> Option<Cell> {
        let cell = self.queue.pop_front()?;
        let c = &mut self.per_vc[cell.vc as usize];
        c.queued -= 1;
        c.cells_out += 1;
        Some(cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aal::segment;
    use crate::tcp::TcpSegment;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn packet(vc: VcId, id: u64) -> Vec<Cell> {
        segment(vc, id, TcpSegment::data(0, id, 512)).collect()
    }

    fn fill(p: &mut UbrPortState, n: usize) {
        // Fill with single-cell packets on a filler VC.
        for i in 0..n {
            let c = segment(99, 1_000_000 + i as u64, TcpSegment::ack(0, 0))
                .next()
                .unwrap();
            assert_eq!(p.enqueue(c), Admission::Accepted);
        }
    }

    #[test]
    fn epd_below_threshold_accepts_whole_packet() {
        let mut p = UbrPortState::new(2000, DropPolicy::Epd { threshold: 1000 });
        fill(&mut p, 999);
        for c in packet(1, 0) {
            assert_eq!(p.enqueue(c), Admission::Accepted);
        }
        assert_eq!(p.len(), 1011);
    }

    #[test]
    fn epd_at_threshold_rejects_whole_packet_only() {
        let mut p = UbrPortState::new(2000, DropPolicy::Epd { threshold: 999 });
        fill(&mut p, 998);
        // VC 2 starts a packet just below the threshold.
        let other = packet(2, 0);
        assert_eq!(p.enqueue(other[0]), Admission::Accepted);
        // VC 1's new packet now finds the queue at the threshold.
        let mine = packet(1, 0);
        for c in &mine {
            assert_eq!(p.enqueue(*c), Admission::Dropped(DropCause::Epd));
            assert!(p.dequeue().is_some());
            p.enqueue(segment(99, 7, TcpSegment::ack(0, 0)).next().unwrap());
        }
        // VC 2's in-flight packet is unaffected.
        for c in &other[1..] {
            assert_eq!(p.enqueue(*c), Admission::Accepted);
        }
        assert_eq!(p.counters(1).dropped, 12);
        assert_eq!(p.counters(2).dropped, 0);
        assert_eq!(p.drops_epd, 12);
    }

    #[test]
    fn epd_rejects_when_queue_reaches_threshold() {
        let mut p = UbrPortState::new(2000, DropPolicy::Epd { threshold: 1000 });
        fill(&mut p, 1000);
        let v: Vec<_> = packet(1, 0).into_iter().map(|c| p.enqueue(c)).collect();
        assert!(v.iter().all(|a| *a == Admission::Dropped(DropCause::Epd)));
        assert_eq!(p.len(), 1000);
    }

    #[test]
    fn tail_drop_on_full_buffer() {
        let mut p = UbrPortState::new(5, DropPolicy::TailDrop);
        let cells = packet(1, 0);
        let verdicts: Vec<_> = cells.iter().map(|c| p.enqueue(*c)).collect();
        assert!(verdicts[..5].iter().all(|a| *a == Admission::Accepted));
        assert!(verdicts[5..]
            .iter()
            .all(|a| *a == Admission::Dropped(DropCause::Overflow)));
        // Mid-packet overflow yields a packet the reassembler will discard.
        let mut r = crate::aal::Reassembler::new();
        let mut delivered = false;
        while let Some(c) = p.dequeue() {
            delivered |= r.on_cell_arrival(c.vc, c.data().unwrap()).is_some();
        }
        let next = packet(1, 1);
        r.on_cell_arrival(1, next[0].data().unwrap());
        assert!(!delivered);
        assert_eq!(r.dropped_packets, 1);
    }

    #[test]
    fn epd_overflow_poisons_rest_of_packet() {
        let mut p = UbrPortState::new(5, DropPolicy::Epd { threshold: 5 });
        let cells = packet(1, 0);
        let verdicts: Vec<_> = cells[..6].iter().map(|c| p.enqueue(*c)).collect();
        assert!(verdicts[..5].iter().all(|a| *a == Admission::Accepted));
        assert_eq!(verdicts[5], Admission::Dropped(DropCause::Overflow));
        // free space appears, but the packet stays poisoned
        p.dequeue();
        p.dequeue();
        for c in &cells[6..] {
            assert_eq!(p.enqueue(*c), Admission::Dropped(DropCause::Overflow));
        }
        // the next packet starts clean
        assert_eq!(p.enqueue(packet(1, 1)[0]), Admission::Accepted);
    }

    #[test]
    fn fifo_order() {
        let mut p = UbrPortState::unbounded();
        let a = packet(1, 0)[0];
        let b = packet(2, 0)[0];
        let c = packet(3, 0)[0];
        for x in [a, b, c] {
            p.enqueue(x);
        }
        let out: Vec<_> = std::iter::from_fn(|| p.dequeue()).map(|c| c.vc).collect();
        assert_eq!(out, vec![1, 2, 3]);
        assert!(p.dequeue().is_none());
    }

    #[derive(Clone, Debug)]
    enum Step {
        Cell(usize),
        Serve(usize),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            3 => (0usize..4).prop_map(Step::Cell),
            1 => (0usize..30).prop_map(Step::Serve),
        ]
    }

    proptest! {
        /// Interleaves packets from four VCs with random service bursts and
        /// checks per-packet atomicity plus per-VC conservation.
        #[test]
        fn epd_packets_are_atomic(capacity in 12usize..200, headroom in 0usize..30,
                                  steps in proptest::collection::vec(step(), 1..600)) {
            let threshold = capacity.saturating_sub(headroom);
            let mut p = UbrPortState::new(capacity, DropPolicy::Epd { threshold });
            let mut streams: Vec<(u64, Vec<Cell>)> = (0..4).map(|vc| (0, packet(vc as VcId, 0))).collect();
            let mut accepted: HashMap<(VcId, u64), Vec<u32>> = HashMap::new();
            let mut first_epd: HashMap<(VcId, u64), bool> = HashMap::new();
            for s in steps {
                match s {
                    Step::Cell(vc) => {
                        let (id, cells) = &mut streams[vc];
                        let c = cells.remove(0);
                        let d = *c.data().unwrap();
                        let verdict = p.enqueue(c);
                        prop_assert!(p.len() <= capacity);
                        if d.index == 0 {
                            first_epd.insert((c.vc, d.packet_id), verdict == Admission::Dropped(DropCause::Epd));
                        }
                        if verdict == Admission::Accepted {
                            accepted.entry((c.vc, d.packet_id)).or_default().push(d.index);
                        }
                        if cells.is_empty() {
                            *id += 1;
                            *cells = packet(vc as VcId, *id);
                        }
                    }
                    Step::Serve(k) => {
                        for _ in 0..k {
                            p.dequeue();
                        }
                    }
                }
            }
            for (key, idx) in &accepted {
                let prefix: Vec<u32> = (0..idx.len() as u32).collect();
                prop_assert_eq!(idx, &prefix);
                prop_assert!(!first_epd.get(key).copied().unwrap_or(false));
            }
            for vc in 0..4 {
                let c = p.counters(vc);
                prop_assert_eq!(c.cells_in, c.cells_out + c.dropped + c.queued);
            }
        }
    }
}
