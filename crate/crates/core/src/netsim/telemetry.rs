use std::io::{self, Write};

use serde::Serialize;

use crate::transport::FlowId;

/// Telemetry cadence: five samples per second.
pub const TELEMETRY_INTERVAL_MS: u64 = 200;

pub const CSV_HEADER: &str =
    "t_ms,flow_id,cwnd_segments,goodput_bps,srtt_ms,retx_total,queue_bytes";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSample {
    pub flow_id: FlowId,
    pub cwnd_segments: f64,
    /// Goodput over the interval ending at this sample.
    pub goodput_bps: f64,
    pub srtt_ms: Option<f64>,
    pub retransmit_count: u64,
    /// Bytes received for the first time; the basis of goodput.
    pub delivered_bytes: u64,
    pub sent_bytes: u64,
    pub loss_events: u64,
    pub rto_events: u64,
    pub started: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetrySample {
    pub t_ms: u64,
    pub flows: Vec<FlowSample>,
    pub queue_occupancy_bytes: u64,
    pub drops_tail: u64,
    pub drops_random: u64,
    pub offered_bytes: u64,
}

impl TelemetrySample {
    pub fn flow(&self, id: FlowId) -> Option<&FlowSample> {
        self.flows.iter().find(|f| f.flow_id == id)
    }

    pub fn drops(&self) -> u64 {
        self.drops_tail + self.drops_random
    }
}

/// Writes one row per flow per sample. Floats use fixed precision so the
/// output is byte-stable.
pub fn write_csv<W: Write>(samples: &[TelemetrySample], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for sample in samples {
        for flow in &sample.flows {
            write_row(
                &mut out,
                sample.t_ms,
                &flow.flow_id.to_string(),
                flow.cwnd_segments,
                flow.goodput_bps,
                flow.srtt_ms,
                flow.retransmit_count,
                sample.queue_occupancy_bytes,
            )?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write_row<W: Write>(
    out: &mut W,
    t_ms: u64,
    flow_id: &str,
    cwnd: f64,
    goodput_bps: f64,
    srtt_ms: Option<f64>,
    retx: u64,
    queue_bytes: u64,
) -> io::Result<()> {
    let srtt = srtt_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
    writeln!(
        out,
        "{t_ms},{flow_id},{cwnd:.4},{goodput_bps:.1},{srtt},{retx},{queue_bytes}"
    )
}
