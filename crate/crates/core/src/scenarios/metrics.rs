use thiserror::Error;

use super::ExperimentResult;
use crate::netsim::TELEMETRY_INTERVAL_MS;
use crate::transport::FlowId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("fairness is undefined for an empty or all-zero allocation")]
    Undefined,
    #[error("negative or non-finite throughput {0}")]
    BadValue(f64),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("window must be a positive multiple of {TELEMETRY_INTERVAL_MS} ms, got {0}")]
    BadWindow(u64),
    #[error("measurement window contains no telemetry")]
    EmptyWindow,
}

/// Jain's index `(sum x)^2 / (n * sum x^2)`.
pub fn jain_fairness(goodputs: &[f64]) -> Result<f64, MetricError> {
    if let Some(&bad) = goodputs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(MetricError::BadValue(bad));
    }
    let sum: f64 = goodputs.iter().sum();
    let sum_sq: f64 = goodputs.iter().map(|x| x * x).sum();
    if goodputs.is_empty() || sum_sq == 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok(sum * sum / (goodputs.len() as f64 * sum_sq))
}

/// Goodput of one flow re-binned into `window_ms` bins. Each point is the
/// bin's end time and its mean rate. A trailing partial bin is averaged
/// over the samples it has.
pub fn throughput_series(
    result: &ExperimentResult,
    flow: FlowId,
    window_ms: u64,
) -> Result<Vec<(u64, f64)>, MetricError> {
    if window_ms == 0 || !window_ms.is_multiple_of(TELEMETRY_INTERVAL_MS) {
        return Err(MetricError::BadWindow(window_ms));
    }
    let per_bin = (window_ms / TELEMETRY_INTERVAL_MS) as usize;
    let mut rates = Vec::with_capacity(result.telemetry.len());
    for sample in result.telemetry.iter().filter(|s| s.t_ms > 0) {
        let f = sample.flow(flow).ok_or(MetricError::UnknownFlow(flow))?;
        rates.push((sample.t_ms, f.goodput_bps));
    }
    if result
        .telemetry
        .first()
        .is_some_and(|s| s.flow(flow).is_none())
    {
        return Err(MetricError::UnknownFlow(flow));
    }
    Ok(rates
        .chunks(per_bin)
        .map(|bin| {
            let mean = bin.iter().map(|(_, r)| r).sum::<f64>() / bin.len() as f64;
            (bin[bin.len() - 1].0, mean)
        })
        .collect())
}
