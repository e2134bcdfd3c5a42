//! Simulator, tunable CUBIC sender and control plane for congestion-control
//! experiments on a single bottleneck link.

pub mod control;
pub mod cubic;
pub mod error;
pub mod netsim;
pub mod params;
pub mod predictor;
pub mod scenarios;
pub mod time;
pub mod transport;

pub use cubic::{CubicParams, CubicState};
pub use error::RangeError;
pub use time::SimTime;
