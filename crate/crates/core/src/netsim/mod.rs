//! Deterministic discrete-event simulator.
//!
//! Senders sit directly in front of the bottleneck queue. Data crosses the
//! link after serialization plus half the RTT; ACKs return over a pure
//! delay of the other half with no queue and no loss. Events are ordered by
//! `(fire_at, ordinal)` so ties resolve in insertion order.
//!
//! Each flow starts up to [`START_JITTER_US`] after its configured time,
//! drawn from a stream derived from the link seed. Without it a lossless
//! link would behave identically for every seed.
//!
//! Every segment also reaches the queue after a seeded host delay below one
//! MSS serialization time, never overtaking an earlier segment of the same
//! flow. Without it, sends clocked by ACKs would claim freed queue slots in
//! a fixed order and a full queue would admit each flow at the share it had
//! when the queue filled, whatever its window.

mod link;
mod telemetry;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

pub use link::{DropReason, Enqueued, Link, LinkConfig, LinkCounters};
pub(crate) use telemetry::write_row;
pub use telemetry::{write_csv, FlowSample, TelemetrySample, CSV_HEADER, TELEMETRY_INTERVAL_MS};

use crate::cubic::{CubicParams, CubicState};
use crate::error::RangeError;
use crate::params::{ParamError, ParamUpdate, ParamValues, Scope, Setting};
use crate::time::SimTime;
use crate::transport::{Ack, FlowId, FlowState, Receiver, RouteParams, Segment, TransportError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: {at} < {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("run target {until} is before the clock {now}")]
    ClockRewind { until: SimTime, now: SimTime },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// What to start: everything a sender needs plus when to start it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub start: SimTime,
    pub params: CubicParams,
    pub route: RouteParams,
    pub bytes_goal: Option<u64>,
    pub label: String,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            start: SimTime::ZERO,
            params: CubicParams::default(),
            route: RouteParams::default(),
            bytes_goal: None,
            label: "cubic".to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    Handoff(Segment),
    SegmentArrival(Segment),
    AckArrival(Ack),
    DequeueComplete,
    RtoFire(FlowId),
    TelemetryTick,
    ParamUpdate(ParamUpdate),
    FlowStart(FlowId),
}

impl EventKind {
    fn tag(&self) -> u64 {
        match self {
            EventKind::SegmentArrival(_) => 1,
            EventKind::AckArrival(_) => 2,
            EventKind::DequeueComplete => 3,
            EventKind::RtoFire(_) => 4,
            EventKind::TelemetryTick => 5,
            EventKind::ParamUpdate(_) => 6,
            EventKind::FlowStart(_) => 7,
            EventKind::Handoff(_) => 8,
        }
    }
}

#[derive(Debug)]
struct Event {
    fire_at: SimTime,
    ordinal: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.ordinal) == (other.fire_at, other.ordinal)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.ordinal).cmp(&(other.fire_at, other.ordinal))
    }
}

#[derive(Debug, Clone)]
pub struct FlowSlot {
    pub config: FlowConfig,
    pub sender: FlowState,
    pub receiver: Receiver,
    pub started: bool,
    rto_scheduled: Option<SimTime>,
    last_delivered: u64,
    last_acked: u64,
    last_handoff: SimTime,
}

impl FlowSlot {
    pub fn flow_id(&self) -> FlowId {
        self.sender.flow_id
    }
}

pub struct Simulator {
    now: SimTime,
    events: BinaryHeap<Reverse<Event>>,
    next_ordinal: u64,
    link: Link,
    flows: Vec<FlowSlot>,
    global_params: CubicParams,
    global_route: RouteParams,
    telemetry: Vec<TelemetrySample>,
    last_tick: Option<SimTime>,
    events_processed: u64,
    trace_digest: u64,
    scratch: Vec<Segment>,
    jitter: Xoshiro256PlusPlus,
    handoff_jitter_us: u64,
}

/// Upper bound on the seeded start offset added to every flow.
pub const START_JITTER_US: u64 = 1_000;

const JITTER_STREAM: u64 = 0x005e_ed0f_f5e7;

/// One MSS serialization time at the link rate, at least 1 µs.
fn handoff_jitter_us(link: &LinkConfig) -> u64 {
    let us = f64::from(crate::transport::MSS) * 8.0 * 1e6 / link.rate_bps as f64;
    (us.floor() as u64).max(1)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_fold(mut hash: u64, value: u64) -> u64 {
    for byte in value.to_le_bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

impl Simulator {
    pub fn new(link: LinkConfig) -> Result<Self, SimError> {
        link.validate()?;
        let mut sim = Self {
            now: SimTime::ZERO,
            events: BinaryHeap::new(),
            next_ordinal: 0,
            link: Link::new(link),
            flows: Vec::new(),
            global_params: CubicParams::default(),
            global_route: RouteParams::default(),
            telemetry: Vec::new(),
            last_tick: None,
            events_processed: 0,
            trace_digest: FNV_OFFSET,
            scratch: Vec::new(),
            jitter: Xoshiro256PlusPlus::seed_from_u64(link.seed ^ JITTER_STREAM),
            handoff_jitter_us: handoff_jitter_us(&link),
        };
        sim.schedule(SimTime::ZERO, EventKind::TelemetryTick)?;
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn flows(&self) -> &[FlowSlot] {
        &self.flows
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowSlot> {
        self.flows.iter().find(|f| f.flow_id() == id)
    }

    pub fn telemetry(&self) -> &[TelemetrySample] {
        &self.telemetry
    }

    /// Removes and returns all samples collected so far.
    pub fn drain_telemetry(&mut self) -> Vec<TelemetrySample> {
        std::mem::take(&mut self.telemetry)
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// Running hash over every processed `(fire_at, ordinal, kind)`.
    pub fn trace_digest(&self) -> u64 {
        self.trace_digest
    }

    pub fn global_values(&self) -> ParamValues {
        ParamValues::from_parts(&self.global_params, &self.global_route)
    }

    /// Sets the values used for flows added with unspecified parameters.
    pub fn set_global(&mut self, params: CubicParams, route: RouteParams) {
        self.global_params = params;
        self.global_route = route;
    }

    pub fn global_params(&self) -> (CubicParams, RouteParams) {
        (self.global_params, self.global_route)
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::PastEvent { at, now: self.now });
        }
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.events.push(Reverse(Event {
            fire_at: at,
            ordinal,
            kind,
        }));
        Ok(())
    }

    /// Registers a flow; it starts at `max(config.start, now)` plus the
    /// seeded jitter.
    pub fn add_flow(&mut self, config: FlowConfig) -> Result<FlowId, SimError> {
        let id = self.flows.len() as FlowId + 1;
        let sender = FlowState::new(id, config.params, config.route, config.bytes_goal)?;
        let offset = SimTime(self.jitter.random_range(0..START_JITTER_US));
        let start = config.start.max(self.now) + offset;
        self.flows.push(FlowSlot {
            config,
            sender,
            receiver: Receiver::new(id),
            started: false,
            rto_scheduled: None,
            last_delivered: 0,
            last_acked: 0,
            last_handoff: SimTime::ZERO,
        });
        self.schedule(start, EventKind::FlowStart(id))?;
        Ok(id)
    }

    /// Queues a parameter change to take effect at the current event
    /// boundary. Returns the simulated time at which it applies.
    pub fn apply_param_update(&mut self, update: ParamUpdate) -> Result<SimTime, ParamError> {
        if let Scope::Flow(id) = update.scope {
            if self.flow(id).is_none() {
                return Err(ParamError::UnknownFlow(id));
            }
        }
        let at = self.now;
        self.schedule(at, EventKind::ParamUpdate(update))
            .expect("scheduling at the current time cannot be in the past");
        Ok(at)
    }

    /// Processes every event with `fire_at <= until`, then parks the clock
    /// at `until`.
    pub fn run(&mut self, until: SimTime) -> Result<(), SimError> {
        if until < self.now {
            return Err(SimError::ClockRewind {
                until,
                now: self.now,
            });
        }
        while let Some(Reverse(head)) = self.events.peek() {
            if head.fire_at > until {
                break;
            }
            let Reverse(event) = self.events.pop().expect("peeked");
            self.now = event.fire_at;
            self.events_processed += 1;
            self.trace_digest = fnv_fold(self.trace_digest, event.fire_at.as_micros());
            self.trace_digest = fnv_fold(self.trace_digest, event.ordinal);
            self.trace_digest = fnv_fold(self.trace_digest, event.kind.tag());
            self.handle(event.kind)?;
        }
        self.now = until;
        Ok(())
    }

    /// Time of the next pending event, if any.
    pub fn next_event_at(&self) -> Option<SimTime> {
        self.events.peek().map(|Reverse(e)| e.fire_at)
    }

    fn slot_index(&self, id: FlowId) -> usize {
        (id - 1) as usize
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Handoff(seg) => {
                if let Enqueued::Accepted(Some(done)) = self.link.enqueue(seg, self.now) {
                    self.schedule(done, EventKind::DequeueComplete)?;
                }
            }
            EventKind::SegmentArrival(seg) => {
                let idx = self.slot_index(seg.flow_id);
                let ack = self.flows[idx].receiver.on_segment(&seg);
                let at = self.now + self.link.config().one_way_delay();
                self.schedule(at, EventKind::AckArrival(ack))?;
            }
            EventKind::AckArrival(ack) => {
                let idx = self.slot_index(ack.flow_id);
                let mut out = std::mem::take(&mut self.scratch);
                self.flows[idx]
                    .sender
                    .on_ack_segment(&ack, self.now, &mut out)?;
                self.transmit(&mut out)?;
                self.scratch = out;
                self.sync_rto(idx)?;
            }
            EventKind::DequeueComplete => {
                if let Some((seg, next)) = self.link.dequeue(self.now) {
                    let at = self.now + self.link.config().one_way_delay();
                    self.schedule(at, EventKind::SegmentArrival(seg))?;
                    if let Some(t) = next {
                        self.schedule(t, EventKind::DequeueComplete)?;
                    }
                }
            }
            EventKind::RtoFire(id) => {
                let idx = self.slot_index(id);
                self.flows[idx].rto_scheduled = None;
                match self.flows[idx].sender.rto_deadline() {
                    Some(deadline) if deadline <= self.now => {
                        let mut out = std::mem::take(&mut self.scratch);
                        self.flows[idx].sender.on_rto(self.now, &mut out);
                        self.transmit(&mut out)?;
                        self.scratch = out;
                    }
                    _ => {}
                }
                self.sync_rto(idx)?;
            }
            EventKind::TelemetryTick => {
                let sample = self.sample_telemetry();
                self.telemetry.push(sample);
                let next = self.now + SimTime::from_millis(TELEMETRY_INTERVAL_MS);
                self.schedule(next, EventKind::TelemetryTick)?;
            }
            EventKind::ParamUpdate(update) => self.apply_now(update),
            EventKind::FlowStart(id) => {
                let idx = self.slot_index(id);
                let slot = &mut self.flows[idx];
                slot.started = true;
                let mut out = std::mem::take(&mut self.scratch);
                slot.sender.start(self.now, &mut out);
                self.transmit(&mut out)?;
                self.scratch = out;
                self.sync_rto(idx)?;
            }
        }
        Ok(())
    }

    fn transmit(&mut self, out: &mut Vec<Segment>) -> Result<(), SimError> {
        for seg in out.drain(..) {
            let idx = self.slot_index(seg.flow_id);
            let delay = SimTime(self.jitter.random_range(0..self.handoff_jitter_us));
            let at = (self.now + delay).max(self.flows[idx].last_handoff);
            self.flows[idx].last_handoff = at;
            self.schedule(at, EventKind::Handoff(seg))?;
        }
        Ok(())
    }

    /// Keeps at most one pending timer event per flow, no later than the
    /// sender's current deadline.
    fn sync_rto(&mut self, idx: usize) -> Result<(), SimError> {
        let slot = &self.flows[idx];
        if let Some(deadline) = slot.sender.rto_deadline() {
            if slot.rto_scheduled.is_none_or(|s| s > deadline) {
                let id = slot.flow_id();
                let at = deadline.max(self.now);
                self.flows[idx].rto_scheduled = Some(at);
                self.schedule(at, EventKind::RtoFire(id))?;
            }
        }
        Ok(())
    }

    fn apply_now(&mut self, update: ParamUpdate) {
        let setting = update.setting;
        match update.scope {
            Scope::Global => {
                setting.apply_cubic(&mut self.global_params);
                setting.apply_route(&mut self.global_route);
                for slot in &mut self.flows {
                    apply_to_slot(slot, setting);
                }
            }
            Scope::Flow(id) => {
                let idx = self.slot_index(id);
                apply_to_slot(&mut self.flows[idx], setting);
            }
        }
    }

    /// Snapshot of every flow and the queue, with goodput over the interval
    /// since the previous sample.
    pub fn sample_telemetry(&mut self) -> TelemetrySample {
        let interval = self
            .last_tick
            .map(|t| (self.now - t).as_secs_f64())
            .unwrap_or(0.0);
        self.last_tick = Some(self.now);
        let flows = self
            .flows
            .iter_mut()
            .map(|slot| {
                let delivered = slot.receiver.unique_bytes();
                let goodput_bps = if interval > 0.0 {
                    (delivered - slot.last_delivered) as f64 * 8.0 / interval
                } else {
                    0.0
                };
                slot.last_delivered = delivered;
                let sender = &slot.sender;
                FlowSample {
                    flow_id: sender.flow_id,
                    cwnd_segments: sender.cc.cwnd,
                    goodput_bps,
                    srtt_ms: sender.srtt().map(|s| s * 1000.0),
                    retransmit_count: sender.counters.retransmits,
                    delivered_bytes: delivered,
                    sent_bytes: sender.counters.bytes_sent,
                    loss_events: sender.counters.loss_events,
                    rto_events: sender.counters.rto_events,
                    started: slot.started,
                }
            })
            .collect();
        let counters = self.link.counters;
        TelemetrySample {
            t_ms: self.now.as_millis(),
            flows,
            queue_occupancy_bytes: self.link.occupancy(),
            drops_tail: counters.drops_tail,
            drops_random: counters.drops_random,
            offered_bytes: counters.offered_bytes,
        }
    }

    /// Checks link, transport and congestion-control invariants.
    pub fn check_invariants(&mut self) -> Result<(), String> {
        self.link.check_invariants()?;
        for slot in &mut self.flows {
            slot.sender.check_invariants()?;
            let id = slot.flow_id();
            let delivered = slot.receiver.delivered_bytes();
            if slot.receiver.unique_bytes() > slot.sender.counters.bytes_sent {
                return Err(format!("flow {id}: received more unique bytes than sent"));
            }
            if delivered > slot.receiver.unique_bytes() {
                return Err(format!(
                    "flow {id}: delivered {delivered} > unique bytes received"
                ));
            }
            if slot.sender.snd_una() > delivered {
                return Err(format!("flow {id}: sender acked beyond receiver"));
            }
            if delivered < slot.last_acked {
                return Err(format!("flow {id}: cumulative ack went backwards"));
            }
            slot.last_acked = delivered;
            let cc: &CubicState = &slot.sender.cc;
            if let Some(start) = cc.epoch_start {
                if start > self.now.as_secs_f64() + 1e-9 {
                    return Err(format!("flow {id}: epoch starts in the future"));
                }
            }
        }
        Ok(())
    }
}

fn apply_to_slot(slot: &mut FlowSlot, setting: Setting) {
    if setting.apply_cubic(&mut slot.sender.params) {
        slot.config.params = slot.sender.params;
        return;
    }
    match setting {
        Setting::Initcwnd(n) => {
            // Affects flows that have not started yet.
            if !slot.started && slot.config.route.set_initcwnd(i64::from(n)).is_ok() {
                slot.sender.route = slot.config.route;
                slot.sender.cc.cwnd = f64::from(n);
            }
        }
        _ => {
            setting.apply_route(&mut slot.sender.route);
            slot.config
                .route
                .set_rto_min_ms(i64::from(slot.sender.route.rto_min_ms()))
                .ok();
        }
    }
}
