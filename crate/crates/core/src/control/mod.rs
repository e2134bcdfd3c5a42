//! Live control: a simulator paced against the wall clock, steered over a
//! WebSocket with JSON frames.

mod engine;
pub mod protocol;
mod server;

pub use engine::{spawn as spawn_engine, Command, EngineHandle, EngineReport, Pace};
pub use protocol::{ClientMessage, FlowParams, ServerMessage, WireFlow};
pub use server::{serve, ControlError, Server};
