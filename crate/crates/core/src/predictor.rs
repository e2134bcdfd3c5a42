//! Closed-form sketch of the congestion window over time.
//!
//! Assumes a single flow whose only losses come from overflowing the tail
//! drop queue, with fast convergence and the friendly floor both off. The
//! trace is a slow-start ramp followed by identical cubic epochs, each
//! starting at a reduction from the ceiling and ending when the curve
//! climbs back to it.

use std::io::{self, Write};

use serde::Serialize;

use crate::cubic::{CubicParams, CubicState};
use crate::netsim::{write_row, LinkConfig, TELEMETRY_INTERVAL_MS};
use crate::transport::MSS;

pub const PREDICTED_FLOW_ID: &str = "predicted";

/// Epochs longer than this many `K` are cut short.
pub const TRUNCATE_K_MULTIPLE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorModel {
    pub params: CubicParams,
    pub link: LinkConfig,
    pub mss: u32,
    pub duration_s: f64,
    pub initcwnd: f64,
    pub include_slow_start: bool,
}

impl PredictorModel {
    pub fn new(params: CubicParams, link: LinkConfig, duration_s: f64) -> Self {
        let mut params = params;
        params.fast_convergence = false;
        params.tcp_friendliness = false;
        Self {
            params,
            link,
            mss: MSS,
            duration_s,
            initcwnd: 10.0,
            include_slow_start: true,
        }
    }

    fn rtt_s(&self) -> f64 {
        self.link.rtt_ms / 1000.0
    }
}

/// Window at which pipe plus queue overflow, in segments.
pub fn peak_window(link: &LinkConfig, mss: u32) -> f64 {
    (link.bdp_bytes() + link.queue_bytes as f64) / f64::from(mss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Concave approach to a plateau at or below the ceiling.
    Sawtooth,
    /// `alpha > 1`: the plateau lies above the ceiling, so every epoch ends
    /// while still concave.
    PlateauAboveCap,
    /// `alpha < beta`: the reduced window already exceeds the recorded
    /// maximum, so each epoch probes convexly from where it starts.
    ConvexOnly,
    /// `beta = 1`: no reduction, the window sits at the ceiling.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMeta {
    pub w_cap: f64,
    pub regime: Regime,
    /// Steady-state epoch length, absent when the window never reduces.
    pub period_s: Option<f64>,
    pub k_seconds: f64,
    /// Time of the first loss.
    pub first_loss_s: f64,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// `(t_s, cwnd_segments)` every 200 ms.
    pub series: Vec<(f64, f64)>,
    pub meta: TraceMeta,
}

/// Shape of one steady-state epoch: `(state at epoch start, duration)`.
fn steady_epoch(model: &PredictorModel, w_cap: f64) -> (CubicState, f64) {
    let params = &model.params;
    let mut state = CubicState::new(w_cap.max(2.0)).expect("ceiling is at least two segments");
    state.cwnd = w_cap;
    state.on_loss(params);
    state.epoch_begin(params, 0.0);
    let duration = state.k_seconds + ((w_cap - state.origin_point) / params.c_scale()).cbrt();
    (state, duration)
}

pub fn predict_trace(model: &PredictorModel) -> Prediction {
    let w_cap = peak_window(&model.link, model.mss);
    let params = &model.params;
    let (alpha, beta) = (params.alpha(), params.beta());
    let mut diagnostics = Vec::new();

    let ramp = if model.include_slow_start && model.initcwnd < w_cap {
        model.rtt_s() * (w_cap / model.initcwnd).log2()
    } else {
        0.0
    };

    let (epoch_state, mut epoch_len) = steady_epoch(model, w_cap);
    let k = epoch_state.k_seconds;
    let flat = epoch_state.cwnd >= w_cap || epoch_len <= 0.0;
    let regime = if flat {
        Regime::Flat
    } else if alpha < beta {
        Regime::ConvexOnly
    } else if alpha > 1.0 {
        Regime::PlateauAboveCap
    } else {
        Regime::Sawtooth
    };
    if !flat && k > 0.0 && epoch_len > TRUNCATE_K_MULTIPLE * k {
        diagnostics.push(format!(
            "curve needs {epoch_len:.3} s to return to {w_cap:.1} segments; epoch truncated at {:.3} s",
            TRUNCATE_K_MULTIPLE * k
        ));
        epoch_len = TRUNCATE_K_MULTIPLE * k;
    }

    let at = |t: f64| -> f64 {
        if t < ramp {
            return model.initcwnd * 2f64.powf(t / model.rtt_s());
        }
        if flat {
            return w_cap;
        }
        let into = (t - ramp) % epoch_len;
        epoch_state.cubic_target(params, into).min(w_cap)
    };

    let step = TELEMETRY_INTERVAL_MS as f64 / 1000.0;
    let samples = (model.duration_s / step).floor() as usize;
    let series = (0..=samples)
        .map(|i| {
            let t = i as f64 * step;
            (t, at(t))
        })
        .collect();

    Prediction {
        series,
        meta: TraceMeta {
            w_cap,
            regime,
            period_s: (!flat).then_some(epoch_len),
            k_seconds: k,
            first_loss_s: ramp,
            diagnostics,
        },
    }
}

/// Writes the trace in telemetry CSV layout with flow id `predicted`.
/// Goodput, RTT and queue columns come from a fluid view of the link.
pub fn write_prediction_csv<W: Write>(
    model: &PredictorModel,
    prediction: &Prediction,
    mut out: W,
) -> io::Result<()> {
    writeln!(out, "{}", crate::netsim::CSV_HEADER)?;
    let bdp = model.link.bdp_bytes();
    let rate = model.link.rate_bps as f64;
    for &(t, cwnd) in &prediction.series {
        let bytes = cwnd * f64::from(model.mss);
        let queue = (bytes - bdp).clamp(0.0, model.link.queue_bytes as f64);
        let rtt_s = model.rtt_s() + queue * 8.0 / rate;
        let goodput = (bytes * 8.0 / rtt_s).min(rate);
        write_row(
            &mut out,
            (t * 1000.0).round() as u64,
            PREDICTED_FLOW_ID,
            cwnd,
            goodput,
            Some(rtt_s * 1000.0),
            0,
            queue.round() as u64,
        )?;
    }
    Ok(())
}
