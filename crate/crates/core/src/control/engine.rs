//! The thread that owns the simulator.
//!
//! Commands arrive on a single inbox and are applied between events, in
//! arrival order. Telemetry leaves through a broadcast channel as ready
//! JSON frames. Invariants are checked at every telemetry tick.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::{broadcast, oneshot};

use super::protocol::{ClientMessage, FlowParams, ServerMessage};
use crate::netsim::{Simulator, TelemetrySample, TELEMETRY_INTERVAL_MS};
use crate::params::{ParamUpdate, ParamValues};
use crate::predictor::{predict_trace, PredictorModel};
use crate::scenarios::{FlowSpec, Scenario, ScenarioError};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pace {
    /// Simulated time tracks wall-clock time.
    Realtime,
    /// Events run back to back.
    Fast,
}

impl std::str::FromStr for Pace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(Pace::Realtime),
            "fast" => Ok(Pace::Fast),
            other => Err(format!(
                "unknown pace {other:?} (expected realtime or fast)"
            )),
        }
    }
}

pub struct Command {
    pub message: ClientMessage,
    pub reply: oneshot::Sender<ServerMessage>,
}

/// What the engine observed over its lifetime.
#[derive(Debug, Clone, Default)]
pub struct EngineReport {
    pub telemetry: Vec<TelemetrySample>,
    pub invariant_violations: Vec<String>,
    pub applied_at_ms: Vec<u64>,
    pub sim_error: Option<String>,
}

pub struct EngineHandle {
    pub inbox: mpsc::Sender<Command>,
    pub outbox: broadcast::Sender<Arc<str>>,
    pub done: oneshot::Receiver<EngineReport>,
}

const OUTBOX_CAPACITY: usize = 1024;

fn tick() -> SimTime {
    SimTime::from_millis(TELEMETRY_INTERVAL_MS)
}

struct Engine {
    sim: Simulator,
    scenario: Scenario,
    pace: Pace,
    outbox: broadcast::Sender<Arc<str>>,
    report: EngineReport,
    wall_start: Instant,
    started: bool,
}

/// Validates the scenario and starts the engine thread.
pub fn spawn(scenario: Scenario, pace: Pace) -> Result<EngineHandle, ScenarioError> {
    let sim = scenario.simulator()?;
    let (inbox, commands) = mpsc::channel();
    let (outbox, _) = broadcast::channel(OUTBOX_CAPACITY);
    let (done_tx, done) = oneshot::channel();
    let engine = Engine {
        sim,
        scenario,
        pace,
        outbox: outbox.clone(),
        report: EngineReport::default(),
        wall_start: Instant::now(),
        started: false,
    };
    std::thread::Builder::new()
        .name("tunerlab-engine".to_owned())
        .spawn(move || {
            let report = engine.run(commands);
            let _ = done_tx.send(report);
        })
        .expect("spawn engine thread");
    Ok(EngineHandle {
        inbox,
        outbox,
        done,
    })
}

impl Engine {
    fn run(mut self, commands: mpsc::Receiver<Command>) -> EngineReport {
        let duration = self.scenario.duration();
        self.wall_start = Instant::now();
        if self.step_to(SimTime::ZERO).is_err() {
            return self.report;
        }
        loop {
            let target = match self.pace {
                Pace::Fast => (self.sim.now() + tick()).min(duration),
                Pace::Realtime => self.wall_clock().min(duration),
            };
            if self.step_to(target).is_err() {
                break;
            }
            let received = if self.sim.now() >= duration {
                commands.recv().map_err(|_| RecvTimeoutError::Disconnected)
            } else {
                match self.pace {
                    Pace::Fast => commands.try_recv().map_err(|e| match e {
                        mpsc::TryRecvError::Empty => RecvTimeoutError::Timeout,
                        mpsc::TryRecvError::Disconnected => RecvTimeoutError::Disconnected,
                    }),
                    Pace::Realtime => commands.recv_timeout(self.until_next_tick()),
                }
            };
            match received {
                Ok(command) => {
                    if self.pace == Pace::Realtime {
                        let now = self.wall_clock().min(duration);
                        if self.step_to(now).is_err() {
                            break;
                        }
                    }
                    let stop = command.message == ClientMessage::Stop;
                    let reply = self.handle(command.message);
                    let _ = command.reply.send(reply);
                    if stop {
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    // Nobody can steer any more; a fast run still finishes.
                    if self.pace == Pace::Fast {
                        let _ = self.step_to(duration);
                    }
                    break;
                }
            }
        }
        log::info!(
            "engine stopped at {} after {} ticks",
            self.sim.now(),
            self.report.telemetry.len()
        );
        self.report
    }

    fn wall_clock(&self) -> SimTime {
        SimTime::from_secs_f64(self.wall_start.elapsed().as_secs_f64())
    }

    fn until_next_tick(&self) -> Duration {
        let next = (self.sim.now().as_micros() / tick().as_micros() + 1) * tick().as_micros();
        let wall = self.wall_start + Duration::from_micros(next);
        wall.saturating_duration_since(Instant::now())
    }

    /// Runs to `target`, stopping at every tick boundary to publish the
    /// sample and check invariants. The first call also processes time zero.
    fn step_to(&mut self, target: SimTime) -> Result<(), ()> {
        while !self.started || self.sim.now() < target {
            let step = if self.started {
                let tick_us = tick().as_micros();
                SimTime((self.sim.now().as_micros() / tick_us + 1) * tick_us).min(target)
            } else {
                SimTime::ZERO
            };
            self.started = true;
            if let Err(e) = self.sim.run(step) {
                let message = format!("simulation halted: {e}");
                log::error!("{message}");
                self.broadcast(&ServerMessage::error(&message));
                self.report.sim_error = Some(message);
                return Err(());
            }
            for sample in self.sim.drain_telemetry() {
                if let Err(violation) = self.sim.check_invariants() {
                    let message = format!("invariant violated at {} ms: {violation}", sample.t_ms);
                    log::error!("{message}");
                    self.broadcast(&ServerMessage::error(&message));
                    self.report.invariant_violations.push(message);
                }
                self.broadcast(&ServerMessage::telemetry(&sample));
                self.report.telemetry.push(sample);
            }
        }
        Ok(())
    }

    fn broadcast(&self, message: &ServerMessage) {
        // No subscribers is fine.
        let _ = self.outbox.send(Arc::from(message.to_json()));
    }

    fn params_snapshot(&self) -> ServerMessage {
        ServerMessage::Params {
            global: self.sim.global_values(),
            flows: self
                .sim
                .flows()
                .iter()
                .map(|slot| FlowParams {
                    id: slot.flow_id(),
                    values: ParamValues::from_parts(&slot.sender.params, &slot.config.route),
                })
                .collect(),
        }
    }

    fn handle(&mut self, message: ClientMessage) -> ServerMessage {
        match message {
            ClientMessage::SetParam { scope, name, value } => {
                let result = ParamUpdate::parse(&scope, &name, value)
                    .and_then(|update| self.sim.apply_param_update(update));
                match result {
                    Ok(at) => {
                        log::debug!("{scope} {name} = {value} at {at}");
                        self.report.applied_at_ms.push(at.as_millis());
                        ServerMessage::Ack {
                            applied_at_ms: at.as_millis(),
                            flow_id: None,
                        }
                    }
                    Err(e) => ServerMessage::error(e),
                }
            }
            ClientMessage::GetParams => self.params_snapshot(),
            ClientMessage::AddFlow { flow } => self.add_flow(flow),
            ClientMessage::Stop => ServerMessage::Ack {
                applied_at_ms: self.sim.now().as_millis(),
                flow_id: None,
            },
            ClientMessage::GetPrediction => {
                let (params, route) = self.sim.global_params();
                let mut model = PredictorModel::new(
                    params,
                    *self.sim.link().config(),
                    self.scenario.duration_s,
                );
                model.initcwnd = f64::from(route.initcwnd());
                ServerMessage::Prediction {
                    series: predict_trace(&model).series,
                }
            }
        }
    }

    fn add_flow(&mut self, fields: serde_json::Map<String, serde_json::Value>) -> ServerMessage {
        let base = FlowSpec::from_values(&self.sim.global_values());
        let mut merged = match serde_json::to_value(base) {
            Ok(serde_json::Value::Object(map)) => map,
            _ => unreachable!("flow spec serializes to an object"),
        };
        merged.extend(fields);
        let spec: FlowSpec = match serde_json::from_value(serde_json::Value::Object(merged)) {
            Ok(spec) => spec,
            Err(e) => return ServerMessage::error(format!("invalid flow: {e}")),
        };
        let config = match spec.to_config() {
            Ok(config) => config,
            Err(e) => return ServerMessage::error(e),
        };
        match self.sim.add_flow(config) {
            Ok(id) => ServerMessage::Ack {
                applied_at_ms: self.sim.now().as_millis(),
                flow_id: Some(id),
            },
            Err(e) => ServerMessage::error(e),
        }
    }
}
