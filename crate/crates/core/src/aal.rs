//! AAL5-style segmentation of TCP/IP packets into 53-byte cells and
//! reassembly with whole-packet discard on any missing cell.

use crate::abr::RmPayload;
use crate::tcp::TcpSegment;

pub const CELL_BYTES: u32 = 53;
pub const CELL_PAYLOAD_BYTES: u32 = 48;
pub const CELL_BITS: u32 = CELL_BYTES * 8;
pub const AAL5_TRAILER_BYTES: u32 = 8;

pub type VcId = u32;

/// Number of cells carrying a packet with `payload_len` bytes of TCP payload.
pub fn cells_per_packet(payload_len: u32) -> u32 {
    (payload_len + crate::tcp::TCPIP_HEADER_BYTES + AAL5_TRAILER_BYTES).div_ceil(CELL_PAYLOAD_BYTES)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataCell {
    pub packet_id: u64,
    pub index: u32,
    pub last: bool,
    /// Identity of the packet this cell belongs to. Only the lengths and
    /// identities are simulated, not payload bytes.
    pub segment: TcpSegment,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellBody {
    Data(DataCell),
    Rm(RmPayload),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub vc: VcId,
    pub body: CellBody,
}

impl Cell {
    pub const fn wire_size(&self) -> u32 {
        CELL_BYTES
    }

    pub fn rm(vc: VcId, rm: RmPayload) -> Self {
        Cell {
            vc,
            body: CellBody::Rm(rm),
        }
    }

    pub fn is_rm(&self) -> bool {
        matches!(self.body, CellBody::Rm(_))
    }

    pub fn data(&self) -> Option<&DataCell> {
        match &self.body {
            CellBody::Data(d) => Some(d),
            CellBody::Rm(_) => None,
        }
    }
}

/// Lazily yields the cells of one packet. Source queues hold these rather
/// than materialized cells.
#[derive(Clone, Debug)]
pub struct SegmentCells {
    vc: VcId,
    packet_id: u64,
    segment: TcpSegment,
    next: u32,
    total: u32,
}

impl SegmentCells {
    pub fn remaining(&self) -> u32 {
        self.total - self.next
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn segment(&self) -> &TcpSegment {
        &self.segment
    }
}

impl Iterator for SegmentCells {
    type Item = Cell;

    fn next(&mut self) -> Option<Cell> {
        if self.next == self.total {
            return None;
        }
        let index = self.next;
        self.next += 1;
        Some(Cell {
            vc: self.vc,
            body: CellBody::Data(DataCell {
                packet_id: self.packet_id,
                index,
                last: self.next == self.total,
                segment: self.segment,
            }),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.remaining() as usize;
        (r, Some(r))
    }
}

impl ExactSizeIterator for SegmentCells {}

pub fn segment(vc: VcId, packet_id: u64, seg: TcpSegment) -> SegmentCells {
    SegmentCells {
        vc,
        packet_id,
        segment: seg,
        next: 0,
        total: cells_per_packet(seg.payload_len),
    }
}

#[derive(Clone, Copy, Debug)]
struct Progress {
    packet_id: u64,
    expected_next: u32,
    corrupted: bool,
}

/// Per-VC reassembly. Cells of a VC arrive in FIFO order, so one packet is in
/// progress per VC at a time; a cell of a newer packet abandons the old one.
#[derive(Clone, Debug, Default)]
pub struct Reassembler {
    progress: Vec<Option<Progress>>,
    pub delivered_packets: u64,
    pub dropped_packets: u64,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_cell_arrival(&mut self, vc: VcId, cell: &DataCell) -> Option<TcpSegment> {
        let slot = vc as usize;
        if slot >= self.progress.len() {
            self.progress.resize(slot + 1, None);
        }
        let entry = &mut self.progress[slot];
        match entry {
            Some(p) if p.packet_id == cell.packet_id => {}
            Some(_) => {
                // The previous packet lost its tail.
                self.dropped_packets += 1;
                *entry = None;
            }
            None => {}
        }
        let p = entry.get_or_insert(Progress {
            packet_id: cell.packet_id,
            expected_next: 0,
            corrupted: false,
        });
        if cell.index != p.expected_next {
            p.corrupted = true;
        }
        p.expected_next = cell.index + 1;
        if !cell.last {
            return None;
        }
        let corrupted = p.corrupted;
        *entry = None;
        if corrupted {
            self.dropped_packets += 1;
            None
        } else {
            self.delivered_packets += 1;
            Some(cell.segment)
        }
    }
}
