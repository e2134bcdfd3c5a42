//! Reliable byte-stream sender and receiver.
//!
//! The sender keeps a per-segment scoreboard fed by cumulative ACKs plus
//! the echo of the segment that triggered each ACK. Every transmission
//! carries a per-flow ordinal; a transmission is declared lost once one
//! sent three or more transmissions later has been delivered. For a single
//! hole in a window of originals this is exactly the third duplicate ACK,
//! and it also catches lost retransmissions. Loss episodes call
//! [`CubicState::on_loss`] once; every newly acknowledged segment calls
//! [`CubicState::on_ack`] once.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubic::{CubicParams, CubicState, MIN_CWND};
use crate::error::RangeError;
use crate::time::SimTime;

/// Segment payload size in bytes.
pub const MSS: u32 = 1000;
/// Number of acknowledged segments above a hole that declare it lost.
pub const DUPACK_THRESHOLD: u32 = 3;
/// RTO used before the first RTT sample.
pub const INITIAL_RTO_S: f64 = 1.0;
pub const MAX_RTO_S: f64 = 60.0;
pub const DEFAULT_RTO_MIN_MS: u32 = 200;
pub const DEFAULT_INITCWND: u32 = 10;
pub const RTO_MIN_MS_MAX: u32 = 60_000;
pub const INITCWND_MAX: u32 = 10_000;

pub type FlowId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteParams {
    rto_min_ms: u32,
    initcwnd: u32,
}

impl Default for RouteParams {
    fn default() -> Self {
        Self {
            rto_min_ms: DEFAULT_RTO_MIN_MS,
            initcwnd: DEFAULT_INITCWND,
        }
    }
}

impl RouteParams {
    pub fn new(rto_min_ms: i64, initcwnd: i64) -> Result<Self, RangeError> {
        let mut route = Self::default();
        route.set_rto_min_ms(rto_min_ms)?;
        route.set_initcwnd(initcwnd)?;
        Ok(route)
    }

    pub fn set_rto_min_ms(&mut self, value: i64) -> Result<(), RangeError> {
        self.rto_min_ms =
            RangeError::check("rto_min_ms", value as f64, 1.0, RTO_MIN_MS_MAX as f64)? as u32;
        Ok(())
    }

    pub fn set_initcwnd(&mut self, value: i64) -> Result<(), RangeError> {
        self.initcwnd =
            RangeError::check("initcwnd", value as f64, 2.0, INITCWND_MAX as f64)? as u32;
        Ok(())
    }

    pub fn rto_min_ms(&self) -> u32 {
        self.rto_min_ms
    }

    pub fn initcwnd(&self) -> u32 {
        self.initcwnd
    }

    pub fn rto_min_s(&self) -> f64 {
        f64::from(self.rto_min_ms) / 1000.0
    }
}

/// Retransmission timeout in seconds.
pub fn rto_value(srtt: Option<f64>, rttvar: Option<f64>, route: &RouteParams, backoff: u32) -> f64 {
    let base = match (srtt, rttvar) {
        (Some(srtt), Some(rttvar)) => srtt + 4.0 * rttvar,
        _ => INITIAL_RTO_S,
    };
    let scaled = base.max(route.rto_min_s()) * 2f64.powi(backoff.min(32) as i32);
    scaled.min(MAX_RTO_S)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub flow_id: FlowId,
    pub seq: u64,
    pub len: u32,
    pub is_retransmit: bool,
    pub sent_at: SimTime,
    /// Per-flow transmission counter, retransmissions included.
    pub tx_ord: u64,
}

/// Cumulative acknowledgment plus the header of the segment that caused it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub flow_id: FlowId,
    pub cum_ack: u64,
    pub echo: Segment,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("flow {flow_id}: ack {ack} beyond highest sent byte {snd_nxt}")]
    AckBeyondSent {
        flow_id: FlowId,
        ack: u64,
        snd_nxt: u64,
    },
    #[error(transparent)]
    Range(#[from] RangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegState {
    InFlight,
    Sacked,
    Lost,
}

#[derive(Debug, Clone, Copy)]
struct SegMeta {
    state: SegState,
    tx_ord: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlowCounters {
    pub segments_sent: u64,
    pub retransmits: u64,
    pub bytes_sent: u64,
    pub loss_events: u64,
    pub rto_events: u64,
}

/// Sender half of a flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub flow_id: FlowId,
    pub cc: CubicState,
    pub params: CubicParams,
    pub route: RouteParams,
    pub counters: FlowCounters,
    pub dupack_count: u32,
    bytes_goal: Option<u64>,
    snd_una: u64,
    snd_nxt: u64,
    board: VecDeque<SegMeta>,
    pipe: u32,
    sacked: u32,
    lost_queue: VecDeque<u64>,
    /// `(tx_ord, segment index)` of transmissions not yet judged.
    send_order: VecDeque<(u64, u64)>,
    next_ord: u64,
    delivered_ord: Option<u64>,
    in_recovery_until: Option<u64>,
    srtt: Option<f64>,
    rttvar: Option<f64>,
    rto_deadline: Option<SimTime>,
    rto_backoff: u32,
    completed_at: Option<SimTime>,
    window_violation: bool,
}

impl FlowState {
    pub fn new(
        flow_id: FlowId,
        params: CubicParams,
        route: RouteParams,
        bytes_goal: Option<u64>,
    ) -> Result<Self, RangeError> {
        if let Some(goal) = bytes_goal {
            RangeError::check("bytes_goal", goal as f64, 1.0, f64::MAX)?;
        }
        Ok(Self {
            flow_id,
            cc: CubicState::new(f64::from(route.initcwnd()))?,
            params,
            route,
            counters: FlowCounters::default(),
            dupack_count: 0,
            bytes_goal,
            snd_una: 0,
            snd_nxt: 0,
            board: VecDeque::new(),
            pipe: 0,
            sacked: 0,
            lost_queue: VecDeque::new(),
            send_order: VecDeque::new(),
            next_ord: 0,
            delivered_ord: None,
            in_recovery_until: None,
            srtt: None,
            rttvar: None,
            rto_deadline: None,
            rto_backoff: 0,
            completed_at: None,
            window_violation: false,
        })
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn bytes_goal(&self) -> Option<u64> {
        self.bytes_goal
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    pub fn rttvar(&self) -> Option<f64> {
        self.rttvar
    }

    pub fn rto_backoff(&self) -> u32 {
        self.rto_backoff
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    pub fn in_recovery(&self) -> bool {
        self.in_recovery_until.is_some()
    }

    pub fn in_recovery_until(&self) -> Option<u64> {
        self.in_recovery_until
    }

    /// Segments the sender believes are still in the network.
    pub fn pipe(&self) -> u32 {
        self.pipe
    }

    pub fn completed_at(&self) -> Option<SimTime> {
        self.completed_at
    }

    pub fn is_complete(&self) -> bool {
        self.completed_at.is_some()
    }

    pub fn current_rto(&self) -> f64 {
        rto_value(self.srtt, self.rttvar, &self.route, self.rto_backoff)
    }

    /// Feeds one RTT sample into the smoothed estimator.
    pub fn update_rtt(&mut self, sample: f64) -> Result<(), RangeError> {
        if !(sample > 0.0) {
            return Err(RangeError {
                name: "rtt_sample",
                value: sample,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        match (self.srtt, self.rttvar) {
            (Some(srtt), Some(rttvar)) => {
                self.rttvar = Some(0.75 * rttvar + 0.25 * (srtt - sample).abs());
                self.srtt = Some(0.875 * srtt + 0.125 * sample);
            }
            _ => {
                self.srtt = Some(sample);
                self.rttvar = Some(sample / 2.0);
            }
        }
        self.rto_backoff = 0;
        Ok(())
    }

    fn una_idx(&self) -> u64 {
        self.snd_una.div_ceil(u64::from(MSS))
    }

    fn seg_len(&self, idx: u64) -> u32 {
        let seq = idx * u64::from(MSS);
        match self.bytes_goal {
            Some(goal) => (goal - seq).min(u64::from(MSS)) as u32,
            None => MSS,
        }
    }

    fn has_new_data(&self) -> bool {
        self.bytes_goal.is_none_or(|goal| self.snd_nxt < goal)
    }

    fn window_open(&self) -> bool {
        f64::from(self.pipe) + 1.0 <= self.cc.cwnd + 1e-9
    }

    /// Sends the initial window.
    pub fn start(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        self.fill(now, out, false);
    }

    /// Processes one ACK and appends any resulting transmissions to `out`.
    pub fn on_ack_segment(
        &mut self,
        ack: &Ack,
        now: SimTime,
        out: &mut Vec<Segment>,
    ) -> Result<(), TransportError> {
        let ack_seq = ack.cum_ack;
        if ack_seq > self.snd_nxt {
            return Err(TransportError::AckBeyondSent {
                flow_id: self.flow_id,
                ack: ack_seq,
                snd_nxt: self.snd_nxt,
            });
        }
        if ack_seq < self.snd_una {
            return Ok(());
        }

        let mss = u64::from(MSS);
        let echo_idx = ack.echo.seq / mss;
        self.delivered_ord = self.delivered_ord.max(Some(ack.echo.tx_ord));
        let mut newly_acked = 0u32;
        let mut echo_new = false;

        // Selective part: the echoed segment arrived even if it sits above a hole.
        if ack.echo.seq >= ack_seq {
            if let Some(offset) = echo_idx.checked_sub(self.una_idx()) {
                if let Some(meta) = self.board.get_mut(offset as usize) {
                    match meta.state {
                        SegState::InFlight => {
                            self.pipe -= 1;
                            meta.state = SegState::Sacked;
                            self.sacked += 1;
                            newly_acked += 1;
                            echo_new = true;
                        }
                        SegState::Lost => {
                            meta.state = SegState::Sacked;
                            self.sacked += 1;
                            newly_acked += 1;
                            echo_new = true;
                        }
                        SegState::Sacked => {}
                    }
                }
            }
        }

        // Cumulative part.
        let advanced = ack_seq > self.snd_una;
        if advanced {
            let new_una_idx = ack_seq.div_ceil(mss);
            for idx in self.una_idx()..new_una_idx {
                let meta = self
                    .board
                    .pop_front()
                    .expect("scoreboard covers snd_una..snd_nxt");
                match meta.state {
                    SegState::InFlight => {
                        self.pipe -= 1;
                        newly_acked += 1;
                        if idx == echo_idx {
                            echo_new = true;
                        }
                    }
                    SegState::Lost => {
                        newly_acked += 1;
                        if idx == echo_idx {
                            echo_new = true;
                        }
                    }
                    SegState::Sacked => {
                        self.sacked -= 1;
                    }
                }
            }
            self.snd_una = ack_seq;
            self.dupack_count = 0;
        } else if !self.board.is_empty() {
            self.dupack_count += 1;
        }

        if let Some(recover) = self.in_recovery_until {
            if ack_seq >= recover {
                self.in_recovery_until = None;
            }
        }

        let sample = if echo_new && !ack.echo.is_retransmit {
            let rtt = now.saturating_sub(ack.echo.sent_at).as_secs_f64();
            if rtt > 0.0 {
                self.update_rtt(rtt)?;
                Some(rtt)
            } else {
                None
            }
        } else {
            None
        };

        for _ in 0..newly_acked {
            self.cc.on_ack(&self.params, now.as_secs_f64(), sample)?;
        }

        if advanced {
            self.rto_deadline = if self.board.is_empty() {
                None
            } else {
                Some(now + SimTime::from_secs_f64(self.current_rto()))
            };
        }

        let newly_lost = self.detect_losses();
        let mut fast_retransmit = false;
        if newly_lost > 0 && self.in_recovery_until.is_none() {
            self.in_recovery_until = Some(self.snd_nxt);
            self.cc.on_loss(&self.params);
            self.counters.loss_events += 1;
            fast_retransmit = true;
        }

        self.fill(now, out, fast_retransmit);

        if let Some(goal) = self.bytes_goal {
            if self.snd_una >= goal && self.completed_at.is_none() {
                self.completed_at = Some(now);
                self.rto_deadline = None;
            }
        }
        Ok(())
    }

    /// Handles an expired retransmission timer.
    pub fn on_rto(&mut self, now: SimTime, out: &mut Vec<Segment>) {
        if self.board.is_empty() {
            self.rto_deadline = None;
            return;
        }
        if self.in_recovery_until.is_none() {
            self.cc.on_loss(&self.params);
            self.counters.loss_events += 1;
        }
        self.cc.cwnd = MIN_CWND;
        self.cc.epoch_start = None;
        self.rto_backoff += 1;
        self.counters.rto_events += 1;
        self.dupack_count = 0;

        self.lost_queue.clear();
        let una_idx = self.una_idx();
        for (offset, meta) in self.board.iter_mut().enumerate() {
            if meta.state != SegState::Sacked {
                meta.state = SegState::Lost;
                self.lost_queue.push_back(una_idx + offset as u64);
            }
        }
        self.pipe = 0;
        self.in_recovery_until = Some(self.snd_nxt);

        self.fill(now, out, true);
        self.rto_deadline = Some(now + SimTime::from_secs_f64(self.current_rto()));
    }

    /// Marks in-flight transmissions followed by at least
    /// `DUPACK_THRESHOLD` later-sent delivered ones as lost. Returns how
    /// many were newly marked.
    fn detect_losses(&mut self) -> u32 {
        let Some(delivered) = self.delivered_ord else {
            return 0;
        };
        let una_idx = self.una_idx();
        let mut marked = 0;
        while let Some(&(ord, idx)) = self.send_order.front() {
            if ord + u64::from(DUPACK_THRESHOLD) > delivered {
                break;
            }
            self.send_order.pop_front();
            let Some(offset) = idx.checked_sub(una_idx) else {
                continue;
            };
            if let Some(meta) = self.board.get_mut(offset as usize) {
                if meta.state == SegState::InFlight && meta.tx_ord == ord {
                    meta.state = SegState::Lost;
                    self.pipe -= 1;
                    self.lost_queue.push_back(idx);
                    marked += 1;
                }
            }
        }
        marked
    }

    fn next_lost(&mut self) -> Option<u64> {
        let una_idx = self.una_idx();
        while let Some(&idx) = self.lost_queue.front() {
            let live = idx >= una_idx
                && self
                    .board
                    .get((idx - una_idx) as usize)
                    .is_some_and(|m| m.state == SegState::Lost);
            if live {
                return Some(idx);
            }
            self.lost_queue.pop_front();
        }
        None
    }

    fn fill(&mut self, now: SimTime, out: &mut Vec<Segment>, mut force: bool) {
        loop {
            if !force && !self.window_open() {
                break;
            }
            if let Some(idx) = self.next_lost() {
                self.lost_queue.pop_front();
                let offset = (idx - self.una_idx()) as usize;
                let ord = self.next_ord;
                let meta = &mut self.board[offset];
                meta.state = SegState::InFlight;
                meta.tx_ord = ord;
                self.pipe += 1;
                self.counters.retransmits += 1;
                self.emit(idx, true, now, out);
            } else if !force && self.has_new_data() {
                let idx = self.snd_nxt / u64::from(MSS);
                self.board.push_back(SegMeta {
                    state: SegState::InFlight,
                    tx_ord: self.next_ord,
                });
                self.pipe += 1;
                let len = self.seg_len(idx);
                self.snd_nxt += u64::from(len);
                self.emit(idx, false, now, out);
            } else {
                break;
            }
            if !force && f64::from(self.pipe) > self.cc.cwnd + 1.0 + 1e-9 {
                self.window_violation = true;
            }
            force = false;
        }
        if self.rto_deadline.is_none() && !self.board.is_empty() {
            self.rto_deadline = Some(now + SimTime::from_secs_f64(self.current_rto()));
        }
    }

    fn emit(&mut self, idx: u64, is_retransmit: bool, now: SimTime, out: &mut Vec<Segment>) {
        let len = self.seg_len(idx);
        let tx_ord = self.next_ord;
        self.next_ord += 1;
        self.send_order.push_back((tx_ord, idx));
        self.counters.segments_sent += 1;
        self.counters.bytes_sent += u64::from(len);
        out.push(Segment {
            flow_id: self.flow_id,
            seq: idx * u64::from(MSS),
            len,
            is_retransmit,
            sent_at: now,
            tx_ord,
        });
    }

    /// Checks the sender's structural invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let id = self.flow_id;
        if self.snd_una > self.snd_nxt {
            return Err(format!(
                "flow {id}: snd_una {} > snd_nxt {}",
                self.snd_una, self.snd_nxt
            ));
        }
        if self.cc.cwnd < MIN_CWND || !self.cc.cwnd.is_finite() {
            return Err(format!("flow {id}: cwnd {} below floor", self.cc.cwnd));
        }
        if self.cc.k_seconds < 0.0 || !self.cc.k_seconds.is_finite() {
            return Err(format!("flow {id}: K = {}", self.cc.k_seconds));
        }
        if self.window_violation {
            return Err(format!("flow {id}: sent beyond cwnd + 1 segment"));
        }
        let in_flight = self
            .board
            .iter()
            .filter(|m| m.state == SegState::InFlight)
            .count();
        let sacked = self
            .board
            .iter()
            .filter(|m| m.state == SegState::Sacked)
            .count();
        if in_flight != self.pipe as usize || sacked != self.sacked as usize {
            return Err(format!(
                "flow {id}: scoreboard drift (pipe {} vs {in_flight}, sacked {} vs {sacked})",
                self.pipe, self.sacked
            ));
        }
        if let Some(recover) = self.in_recovery_until {
            if recover > self.snd_nxt {
                return Err(format!("flow {id}: recovery point beyond snd_nxt"));
            }
        }
        Ok(())
    }
}

/// Receiver half of a flow: reassembles in order and ACKs every segment.
#[derive(Debug, Clone, Default)]
pub struct Receiver {
    flow_id: FlowId,
    rcv_nxt: u64,
    out_of_order: BTreeMap<u64, u32>,
    unique: u64,
}

impl Receiver {
    pub fn new(flow_id: FlowId) -> Self {
        Self {
            flow_id,
            ..Self::default()
        }
    }

    pub fn on_segment(&mut self, seg: &Segment) -> Ack {
        if seg.seq >= self.rcv_nxt && !self.out_of_order.contains_key(&seg.seq) {
            self.unique += u64::from(seg.len);
        }
        if seg.seq == self.rcv_nxt {
            self.rcv_nxt += u64::from(seg.len);
            while let Some(len) = self.out_of_order.remove(&self.rcv_nxt) {
                self.rcv_nxt += u64::from(len);
            }
        } else if seg.seq > self.rcv_nxt {
            self.out_of_order.insert(seg.seq, seg.len);
        }
        Ack {
            flow_id: self.flow_id,
            cum_ack: self.rcv_nxt,
            echo: *seg,
        }
    }

    /// Unique in-order bytes handed to the application.
    pub fn delivered_bytes(&self) -> u64 {
        self.rcv_nxt
    }

    /// Bytes received for the first time, in or out of order. Goodput is
    /// measured on this so a filled hole does not show up as a burst.
    pub fn unique_bytes(&self) -> u64 {
        self.unique
    }

    pub fn buffered_segments(&self) -> usize {
        self.out_of_order.len()
    }
}
