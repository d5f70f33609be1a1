//! Timeout-driven TCP with slow start, congestion avoidance and go-back-N.
//!
//! Windows are kept in segment (MSS) units as reals so that the `1/w` growth
//! of the linear phase is exact; transmission quantizes with `floor`.

use std::collections::BTreeSet;

use crate::error::{Result, SimError};
use crate::kernel::{EventHandle, SimTime};

pub const TCPIP_HEADER_BYTES: u32 = 40;
pub const DEFAULT_MSS: u32 = 512;
/// Default maximum window without scaling (64 kB).
pub const DEFAULT_MAXWIN: u64 = 65_536;

pub type ConnId = u32;

/// One TCP/IP packet. Data segments carry a full MSS; pure acks carry none.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcpSegment {
    pub conn: ConnId,
    pub seg_index: u64,
    pub payload_len: u32,
    pub is_ack: bool,
    /// Next expected segment; meaningful on acks only.
    pub ack_index: u64,
}

impl TcpSegment {
    pub fn data(conn: ConnId, seg_index: u64, mss: u32) -> Self {
        TcpSegment {
            conn,
            seg_index,
            payload_len: mss,
            is_ack: false,
            ack_index: 0,
        }
    }

    pub fn ack(conn: ConnId, ack_index: u64) -> Self {
        TcpSegment {
            conn,
            seg_index: 0,
            payload_len: 0,
            is_ack: true,
            ack_index,
        }
    }

    pub fn header_len(&self) -> u32 {
        TCPIP_HEADER_BYTES
    }

    pub fn total_len(&self) -> u32 {
        self.payload_len + TCPIP_HEADER_BYTES
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcpParams {
    pub mss: u32,
    pub max_window_bytes: u64,
    pub rtx_timeout: SimTime,
    pub timer_granularity: SimTime,
}

impl Default for TcpParams {
    fn default() -> Self {
        TcpParams {
            mss: DEFAULT_MSS,
            max_window_bytes: 16 * DEFAULT_MAXWIN,
            rtx_timeout: SimTime::from_millis(500),
            timer_granularity: SimTime::from_millis(100),
        }
    }
}

impl TcpParams {
    /// Receiver window in segments.
    pub fn rcvr_window(&self) -> u64 {
        self.max_window_bytes / self.mss as u64
    }
}

/// What the caller should do with the retransmission timer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerAction {
    Keep,
    Restart,
    Cancel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AckOutcome {
    pub newly_acked: u64,
    /// Segment indices the window now admits, in send order.
    pub send: std::ops::Range<u64>,
    pub timer: TimerAction,
}

/// Sender-side congestion state of one connection.
#[derive(Clone, Debug)]
pub struct TcpConnState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub rcvr_window: u64,
    pub mss: u32,
    pub max_window: u64,
    pub snd_una: u64,
    pub snd_nxt: u64,
    /// Highest segment index ever sent, plus one.
    pub snd_max: u64,
    pub rto_pending: Option<EventHandle>,
    pub timer_granularity: SimTime,
    pub rtx_timeout: SimTime,
    pub timeouts: u64,
}

impl TcpConnState {
    pub fn new(params: &TcpParams) -> Self {
        let rcvr_window = params.rcvr_window().max(1);
        TcpConnState {
            cwnd: 1.0,
            ssthresh: rcvr_window as f64,
            rcvr_window,
            mss: params.mss,
            max_window: params.max_window_bytes,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            rto_pending: None,
            timer_granularity: params.timer_granularity,
            rtx_timeout: params.rtx_timeout,
            timeouts: 0,
        }
    }

    /// `floor(min(cwnd, W_rcvr))` in segments.
    pub fn effective_window(&self) -> u64 {
        (self.cwnd.min(self.rcvr_window as f64)).floor() as u64
    }

    pub fn outstanding(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    /// Advances `snd_nxt` over everything the window admits.
    pub fn admit(&mut self) -> std::ops::Range<u64> {
        let start = self.snd_nxt;
        let limit = self.snd_una + self.effective_window();
        if limit > self.snd_nxt {
            self.snd_nxt = limit;
        }
        self.snd_max = self.snd_max.max(self.snd_nxt);
        start..self.snd_nxt
    }

    pub fn on_ack(&mut self, ack_index: u64) -> Result<AckOutcome> {
        if ack_index > self.snd_max {
            return Err(SimError::fault(
                "tcp",
                format!(
                    "ack for never-sent data: ack={} snd_max={}",
                    ack_index, self.snd_max
                ),
            ));
        }
        if ack_index <= self.snd_una {
            return Ok(AckOutcome {
                newly_acked: 0,
                send: self.snd_nxt..self.snd_nxt,
                timer: TimerAction::Keep,
            });
        }
        let newly_acked = ack_index - self.snd_una;
        for _ in 0..newly_acked {
            if self.cwnd < self.ssthresh {
                self.cwnd += 1.0;
            } else {
                self.cwnd += 1.0 / self.cwnd;
            }
        }
        self.snd_una = ack_index;
        // After go-back-N the receiver may ack past what was resent.
        if self.snd_nxt < ack_index {
            self.snd_nxt = ack_index;
        }
        let send = self.admit();
        let timer = if self.snd_nxt > self.snd_una {
            TimerAction::Restart
        } else {
            TimerAction::Cancel
        };
        Ok(AckOutcome {
            newly_acked,
            send,
            timer,
        })
    }

    /// Applies a retransmission timeout. Returns the go-back-N restart index,
    /// or `None` for a stale timer with nothing outstanding.
    pub fn on_timeout(&mut self) -> Option<u64> {
        if self.snd_una >= self.snd_max {
            return None;
        }
        let half = self.cwnd / 2.0;
        self.ssthresh = half.min(self.rcvr_window as f64).max(2.0);
        self.cwnd = 1.0;
        self.snd_nxt = self.snd_una;
        self.timeouts += 1;
        Some(self.snd_una)
    }

    /// Base timeout rounded up to the timer granularity.
    pub fn retransmit_timer_value(&self) -> SimTime {
        round_up_to(self.rtx_timeout, self.timer_granularity)
    }
}

pub fn round_up_to(value: SimTime, granularity: SimTime) -> SimTime {
    let g = granularity.as_nanos();
    if g == 0 {
        return value;
    }
    SimTime(value.as_nanos().div_ceil(g) * g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RxOutcome {
    pub ack: TcpSegment,
    pub delivered_bytes: u64,
    pub duplicate: bool,
}

/// Receiver with an out-of-order store and strictly in-order delivery.
#[derive(Clone, Debug, Default)]
pub struct TcpRxState {
    pub next_expected: u64,
    pub out_of_order: BTreeSet<u64>,
    pub delivered_bytes: u64,
    pub duplicates_discarded: u64,
}

impl TcpRxState {
    pub fn on_data_segment(&mut self, seg: &TcpSegment) -> RxOutcome {
        let mut delivered = 0u64;
        let mut duplicate = false;
        if seg.seg_index == self.next_expected {
            self.next_expected += 1;
            delivered += seg.payload_len as u64;
            while self.out_of_order.remove(&self.next_expected) {
                self.next_expected += 1;
                delivered += seg.payload_len as u64;
            }
        } else if seg.seg_index < self.next_expected || !self.out_of_order.insert(seg.seg_index) {
            self.duplicates_discarded += 1;
            duplicate = true;
        }
        self.delivered_bytes += delivered;
        RxOutcome {
            ack: TcpSegment::ack(seg.conn, self.next_expected),
            delivered_bytes: delivered,
            duplicate,
        }
    }
}
