//! JSON frames exchanged with control clients, one message per frame.

use serde::{Deserialize, Serialize};

use crate::netsim::TelemetrySample;
use crate::params::ParamValues;
use crate::transport::FlowId;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetParam {
        scope: String,
        name: String,
        value: i64,
    },
    GetParams,
    /// A scenario flow object; omitted fields take the current global values.
    AddFlow {
        #[serde(default)]
        flow: serde_json::Map<String, serde_json::Value>,
    },
    Stop,
    GetPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub id: FlowId,
    #[serde(flatten)]
    pub values: ParamValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFlow {
    pub id: FlowId,
    pub cwnd: f64,
    pub goodput_bps: f64,
    /// `null` until the first RTT sample.
    pub srtt_ms: Option<f64>,
    pub retx: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack {
        applied_at_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flow_id: Option<FlowId>,
    },
    Params {
        global: ParamValues,
        flows: Vec<FlowParams>,
    },
    Telemetry {
        t_ms: u64,
        flows: Vec<WireFlow>,
        queue_bytes: u64,
    },
    Prediction {
        series: Vec<(f64, f64)>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn error(message: impl ToString) -> Self {
        ServerMessage::Error {
            message: message.to_string(),
        }
    }

    pub fn telemetry(sample: &TelemetrySample) -> Self {
        ServerMessage::Telemetry {
            t_ms: sample.t_ms,
            flows: sample
                .flows
                .iter()
                .map(|f| WireFlow {
                    id: f.flow_id,
                    cwnd: f.cwnd_segments,
                    goodput_bps: f.goodput_bps,
                    srtt_ms: f.srtt_ms,
                    retx: f.retransmit_count,
                })
                .collect(),
            queue_bytes: sample.queue_occupancy_bytes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}
