//! Declarative experiments: scenario files, presets, metrics and export.

mod metrics;
mod presets;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{jain_fairness, throughput_series, MetricError};
pub use presets::{
    by_name, fairness, oversubscribed, takeover, transfer, yielding, PRESET_NAMES, STAGGER_S,
    SWEEP_BETAS,
};

use crate::cubic::CubicParams;
use crate::netsim::{write_csv, FlowConfig, LinkConfig, SimError, Simulator, TelemetrySample};
use crate::params::ParamValues;
use crate::time::SimTime;
use crate::transport::{FlowId, RouteParams, DEFAULT_INITCWND, DEFAULT_RTO_MIN_MS};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("flow did not finish within {cap_s} s (seed {seed}, {delivered_bytes} of {goal_bytes} bytes delivered)")]
    Timeout {
        seed: u64,
        cap_s: f64,
        delivered_bytes: u64,
        goal_bytes: u64,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub rate_mbps: f64,
    pub rtt_ms: f64,
    pub queue_bytes: u64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LinkSpec {
    pub fn to_config(&self) -> LinkConfig {
        LinkConfig {
            rate_bps: (self.rate_mbps * 1e6).round() as u64,
            rtt_ms: self.rtt_ms,
            queue_bytes: self.queue_bytes,
            loss_prob: self.loss_prob,
            seed: self.seed,
        }
    }

    pub fn from_config(link: &LinkConfig) -> Self {
        Self {
            rate_mbps: link.rate_bps as f64 / 1e6,
            rtt_ms: link.rtt_ms,
            queue_bytes: link.queue_bytes,
            loss_prob: link.loss_prob,
            seed: link.seed,
        }
    }
}

fn default_alpha() -> i64 {
    512
}

fn default_beta() -> i64 {
    717
}

fn default_true() -> bool {
    true
}

fn default_rto_min() -> i64 {
    i64::from(DEFAULT_RTO_MIN_MS)
}

fn default_initcwnd() -> i64 {
    i64::from(DEFAULT_INITCWND)
}

/// One flow as written in a scenario file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "default_alpha")]
    pub alpha_q512: i64,
    #[serde(default = "default_beta")]
    pub beta_q1024: i64,
    #[serde(default = "default_true")]
    pub fast_convergence: bool,
    #[serde(default = "default_true")]
    pub tcp_friendliness: bool,
    #[serde(default = "default_rto_min")]
    pub rto_min_ms: i64,
    #[serde(default = "default_initcwnd")]
    pub initcwnd: i64,
    #[serde(default)]
    pub bytes_goal: Option<u64>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            start_s: 0.0,
            alpha_q512: default_alpha(),
            beta_q1024: default_beta(),
            fast_convergence: true,
            tcp_friendliness: true,
            rto_min_ms: default_rto_min(),
            initcwnd: default_initcwnd(),
            bytes_goal: None,
        }
    }
}

impl FlowSpec {
    /// A flow using the given parameter values as defaults.
    pub fn from_values(values: &ParamValues) -> Self {
        Self {
            alpha_q512: i64::from(values.alpha),
            beta_q1024: i64::from(values.beta),
            fast_convergence: values.fast_convergence != 0,
            tcp_friendliness: values.tcp_friendliness != 0,
            rto_min_ms: i64::from(values.rto_min_ms),
            initcwnd: i64::from(values.initcwnd),
            ..Self::default()
        }
    }

    pub fn with_params(mut self, alpha_q512: i64, beta_q1024: i64) -> Self {
        self.alpha_q512 = alpha_q512;
        self.beta_q1024 = beta_q1024;
        self
    }

    pub fn starting_at(mut self, start_s: f64) -> Self {
        self.start_s = start_s;
        self
    }

    /// Decodes and validates, pushing one message per bad field.
    fn check(&self, i: usize, errors: &mut Vec<String>) -> Option<FlowConfig> {
        let n = errors.len();
        let params = CubicParams::decode(
            self.alpha_q512,
            self.beta_q1024,
            self.fast_convergence,
            self.tcp_friendliness,
        );
        // Report alpha and beta independently.
        if let Err(e) = CubicParams::decode(self.alpha_q512, 512, true, true) {
            errors.push(format!("flows[{i}].alpha_q512: {e}"));
        }
        if let Err(e) = CubicParams::decode(512, self.beta_q1024, true, true) {
            errors.push(format!("flows[{i}].beta_q1024: {e}"));
        }
        let mut route = RouteParams::default();
        if let Err(e) = route.set_rto_min_ms(self.rto_min_ms) {
            errors.push(format!("flows[{i}].rto_min_ms: {e}"));
        }
        if let Err(e) = route.set_initcwnd(self.initcwnd) {
            errors.push(format!("flows[{i}].initcwnd: {e}"));
        }
        if !(self.start_s >= 0.0 && self.start_s.is_finite()) {
            errors.push(format!("flows[{i}].start_s: {} must be >= 0", self.start_s));
        }
        if self.bytes_goal == Some(0) {
            errors.push(format!("flows[{i}].bytes_goal: must be > 0"));
        }
        if errors.len() > n {
            return None;
        }
        Some(FlowConfig {
            start: SimTime::from_secs_f64(self.start_s),
            params: params.ok()?,
            route,
            bytes_goal: self.bytes_goal,
            label: if self.beta_q1024 == 717 && self.alpha_q512 == 512 {
                "cubic".to_owned()
            } else {
                "tuned".to_owned()
            },
        })
    }

    /// Validates this flow on its own.
    pub fn to_config(&self) -> Result<FlowConfig, ScenarioError> {
        let mut errors = Vec::new();
        self.check(0, &mut errors)
            .ok_or(ScenarioError::Invalid(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub link: LinkSpec,
    pub duration_s: f64,
    pub flows: Vec<FlowSpec>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn seed(&self) -> u64 {
        self.link.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.link.seed = seed;
        self
    }

    /// Validates every field and returns the simulator inputs, or an error
    /// naming all offending fields.
    pub fn build(&self) -> Result<(LinkConfig, Vec<FlowConfig>), ScenarioError> {
        let mut errors = Vec::new();
        let link = self.link.to_config();
        if !(self.link.rate_mbps > 0.0 && self.link.rate_mbps.is_finite()) || link.rate_bps == 0 {
            errors.push(format!(
                "link.rate_mbps: {} must be > 0",
                self.link.rate_mbps
            ));
        }
        if !(self.link.rtt_ms > 0.0 && self.link.rtt_ms.is_finite()) {
            errors.push(format!("link.rtt_ms: {} must be > 0", self.link.rtt_ms));
        }
        if let Err(e) = crate::error::RangeError::check(
            "queue_bytes",
            self.link.queue_bytes as f64,
            f64::from(crate::transport::MSS),
            f64::MAX,
        ) {
            errors.push(format!("link.queue_bytes: {e}"));
        }
        if !(0.0..1.0).contains(&self.link.loss_prob) {
            errors.push(format!(
                "link.loss_prob: {} must be in [0, 1)",
                self.link.loss_prob
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            errors.push(format!("duration_s: {} must be > 0", self.duration_s));
        }
        if self.flows.is_empty() {
            errors.push("flows: at least one flow is required".to_owned());
        }
        let mut flows = Vec::with_capacity(self.flows.len());
        for (i, flow) in self.flows.iter().enumerate() {
            if flow.start_s > self.duration_s {
                errors.push(format!(
                    "flows[{i}].start_s: {} is after duration_s {}",
                    flow.start_s, self.duration_s
                ));
            }
            if let Some(config) = flow.check(i, &mut errors) {
                flows.push(config);
            }
        }
        if errors.is_empty() {
            Ok((link, flows))
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Builds a simulator with every flow registered at time zero.
    pub fn simulator(&self) -> Result<Simulator, ScenarioError> {
        let (link, flows) = self.build()?;
        let mut sim = Simulator::new(link)?;
        for flow in flows {
            sim.add_flow(flow)?;
        }
        Ok(sim)
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub flow_id: FlowId,
    pub label: String,
    pub alpha_q512: u16,
    pub beta_q1024: u16,
    pub start_s: f64,
    /// Mean goodput over `window_s`.
    pub mean_goodput_bps: f64,
    pub window_s: (f64, f64),
    pub completion_s: Option<f64>,
    pub retransmits: u64,
    pub loss_events: u64,
    pub rto_events: u64,
    pub delivered_bytes: u64,
    pub sent_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub rate_bps: u64,
    /// Offered (send) rate over `window_s`, including retransmissions and
    /// segments the queue dropped.
    pub offered_rate_bps: f64,
    pub window_s: (f64, f64),
    pub drops_tail: u64,
    pub drops_random: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Jain index of per-flow goodput over the final half, when defined.
    pub jain_final_half: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub duration_s: f64,
    pub flows: Vec<FlowSummary>,
    pub link: LinkSummary,
    pub metrics: Metrics,
}

/// Telemetry plus the flow metadata needed to interpret it. The series is
/// the source of truth; every summary is recomputed from it.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub telemetry: Vec<TelemetrySample>,
    pub completions: Vec<Option<f64>>,
    pub rto_events: Vec<u64>,
}

impl ExperimentResult {
    pub fn link_rate_bps(&self) -> u64 {
        self.scenario.link.to_config().rate_bps
    }

    pub fn flow_ids(&self) -> Vec<FlowId> {
        (1..=self.scenario.flows.len() as FlowId).collect()
    }

    /// Nearest sample at or before `t_s`.
    fn sample_at(&self, t_s: f64) -> Option<&TelemetrySample> {
        let t_ms = (t_s * 1000.0).round() as u64;
        let idx = self.telemetry.partition_point(|s| s.t_ms <= t_ms);
        idx.checked_sub(1).map(|i| &self.telemetry[i])
    }

    fn window(&self, from_s: f64, to_s: f64) -> Option<(&TelemetrySample, &TelemetrySample)> {
        let a = self.sample_at(from_s)?;
        let b = self.sample_at(to_s)?;
        (b.t_ms > a.t_ms).then_some((a, b))
    }

    /// Mean goodput of `flow` between two instants, from delivered bytes.
    pub fn mean_goodput(&self, flow: FlowId, from_s: f64, to_s: f64) -> Result<f64, MetricError> {
        let (a, b) = self.window(from_s, to_s).ok_or(MetricError::EmptyWindow)?;
        let da = a.flow(flow).ok_or(MetricError::UnknownFlow(flow))?;
        let db = b.flow(flow).ok_or(MetricError::UnknownFlow(flow))?;
        let secs = (b.t_ms - a.t_ms) as f64 / 1000.0;
        Ok((db.delivered_bytes - da.delivered_bytes) as f64 * 8.0 / secs)
    }

    /// Aggregate offered rate into the bottleneck between two instants.
    pub fn offered_rate(&self, from_s: f64, to_s: f64) -> Result<f64, MetricError> {
        let (a, b) = self.window(from_s, to_s).ok_or(MetricError::EmptyWindow)?;
        let secs = (b.t_ms - a.t_ms) as f64 / 1000.0;
        Ok((b.offered_bytes - a.offered_bytes) as f64 * 8.0 / secs)
    }

    /// Cumulative drop count at each telemetry tick.
    pub fn drop_series(&self) -> Vec<(u64, u64)> {
        self.telemetry.iter().map(|s| (s.t_ms, s.drops())).collect()
    }

    /// Summaries over the final third of the run, fairness over the final half.
    pub fn summary(&self) -> Summary {
        let end = self.scenario.duration_s;
        let from = end * 2.0 / 3.0;
        let last = self.telemetry.last();
        let flows = self
            .scenario
            .flows
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let id = i as FlowId + 1;
                let sample = last.and_then(|s| s.flow(id));
                FlowSummary {
                    flow_id: id,
                    label: spec
                        .check(i, &mut Vec::new())
                        .map(|c| c.label)
                        .unwrap_or_default(),
                    alpha_q512: spec.alpha_q512 as u16,
                    beta_q1024: spec.beta_q1024 as u16,
                    start_s: spec.start_s,
                    mean_goodput_bps: self.mean_goodput(id, from, end).unwrap_or(0.0),
                    window_s: (from, end),
                    completion_s: self.completions.get(i).copied().flatten(),
                    retransmits: sample.map_or(0, |f| f.retransmit_count),
                    loss_events: sample.map_or(0, |f| f.loss_events),
                    rto_events: self.rto_events.get(i).copied().unwrap_or(0),
                    delivered_bytes: sample.map_or(0, |f| f.delivered_bytes),
                    sent_bytes: sample.map_or(0, |f| f.sent_bytes),
                }
            })
            .collect();
        let goodputs: Vec<f64> = self
            .flow_ids()
            .into_iter()
            .filter_map(|id| self.mean_goodput(id, end / 2.0, end).ok())
            .collect();
        Summary {
            seed: self.scenario.seed(),
            duration_s: end,
            flows,
            link: LinkSummary {
                rate_bps: self.link_rate_bps(),
                offered_rate_bps: self.offered_rate(from, end).unwrap_or(0.0),
                window_s: (from, end),
                drops_tail: last.map_or(0, |s| s.drops_tail),
                drops_random: last.map_or(0, |s| s.drops_random),
            },
            metrics: Metrics {
                jain_final_half: jain_fairness(&goodputs).ok(),
            },
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(&self.telemetry, out)
    }

    /// Writes `telemetry.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir)?;
        let csv = std::fs::File::create(dir.join("telemetry.csv"))?;
        self.write_csv(std::io::BufWriter::new(csv))?;
        let summary = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(dir.join("summary.json"), summary + "\n")?;
        Ok(())
    }
}

/// Runs a scenario to its duration.
pub fn run_scenario(scenario: &Scenario) -> Result<ExperimentResult, ScenarioError> {
    let mut sim = scenario.simulator()?;
    sim.run(scenario.duration())?;
    log::info!(
        "scenario seed {} finished: {} events",
        scenario.seed(),
        sim.events_processed()
    );
    Ok(ExperimentResult {
        scenario: scenario.clone(),
        completions: sim
            .flows()
            .iter()
            .map(|f| f.sender.completed_at().map(SimTime::as_secs_f64))
            .collect(),
        rto_events: sim
            .flows()
            .iter()
            .map(|f| f.sender.counters.rto_events)
            .collect(),
        telemetry: sim.drain_telemetry(),
    })
}

/// Completion time of a single byte-limited flow, one per seed.
pub fn transfer_time(
    link: &LinkConfig,
    params: CubicParams,
    route: RouteParams,
    bytes_goal: u64,
    seeds: &[u64],
) -> Result<Vec<f64>, ScenarioError> {
    if bytes_goal == 0 {
        return Err(ScenarioError::Invalid(vec![
            "bytes_goal: must be > 0".to_owned()
        ]));
    }
    link.validate()
        .map_err(|e| ScenarioError::Invalid(vec![format!("link: {e}")]))?;
    let floor = bytes_goal as f64 * 8.0 / link.rate_bps as f64;
    let cap = SimTime::from_secs_f64(10.0 * (floor + 1.0 + link.rtt_ms / 1000.0));
    seeds
        .iter()
        .map(|&seed| {
            let mut sim = Simulator::new(LinkConfig { seed, ..*link })?;
            sim.add_flow(FlowConfig {
                params,
                route,
                bytes_goal: Some(bytes_goal),
                ..FlowConfig::default()
            })?;
            let step = SimTime::from_millis(100);
            loop {
                let slot = &sim.flows()[0];
                if let Some(done) = slot.sender.completed_at() {
                    return Ok(done.as_secs_f64());
                }
                if sim.now() >= cap {
                    return Err(ScenarioError::Timeout {
                        seed,
                        cap_s: cap.as_secs_f64(),
                        delivered_bytes: slot.receiver.delivered_bytes(),
                        goal_bytes: bytes_goal,
                    });
                }
                let next = (sim.now() + step).min(cap);
                sim.run(next)?;
                sim.drain_telemetry();
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta_q1024: u16,
    pub seed: u64,
    pub transfer_s: f64,
}

/// Transfer-time sweep over `beta` for the first flow of `scenario`, which
/// must be byte-limited. Seeds run from the scenario seed upward. Points
/// run on separate threads; output order is fixed.
pub fn beta_sweep(
    scenario: &Scenario,
    betas: &[i64],
    seeds: u64,
) -> Result<Vec<SweepRow>, ScenarioError> {
    let (link, flows) = scenario.build()?;
    let flow = &flows[0];
    let goal = flow.bytes_goal.ok_or_else(|| {
        ScenarioError::Invalid(vec!["flows[0].bytes_goal: required for a sweep".to_owned()])
    })?;
    let mut errors = Vec::new();
    let mut points = Vec::new();
    for &beta in betas {
        let mut params = flow.params;
        match params.set_beta_q1024(beta) {
            Ok(()) => points.push(params),
            Err(e) => errors.push(format!("beta {beta}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(ScenarioError::Invalid(errors));
    }
    let seed_list: Vec<u64> = (0..seeds).map(|i| link.seed.wrapping_add(i)).collect();
    let results: Vec<Result<Vec<f64>, ScenarioError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .map(|&params| {
                let seeds = &seed_list;
                let link = &link;
                let route = flow.route;
                scope.spawn(move || transfer_time(link, params, route, goal, seeds))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::new();
    for (params, times) in points.iter().zip(results) {
        for (&seed, transfer_s) in seed_list.iter().zip(times?) {
            rows.push(SweepRow {
                beta_q1024: params.beta_q1024(),
                seed,
                transfer_s,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "beta_q1024,seed,transfer_s";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for row in rows {
        writeln!(out, "{},{},{:.6}", row.beta_q1024, row.seed, row.transfer_s)?;
    }
    Ok(())
}

/// Median of each beta's transfer times, in input order.
pub fn sweep_medians(rows: &[SweepRow]) -> Vec<(u16, f64)> {
    let mut betas: Vec<u16> = Vec::new();
    for row in rows {
        if !betas.contains(&row.beta_q1024) {
            betas.push(row.beta_q1024);
        }
    }
    betas
        .into_iter()
        .map(|beta| {
            let mut times: Vec<f64> = rows
                .iter()
                .filter(|r| r.beta_q1024 == beta)
                .map(|r| r.transfer_s)
                .collect();
            times.sort_by(f64::total_cmp);
            let n = times.len();
            let median = if n % 2 == 1 {
                times[n / 2]
            } else {
                (times[n / 2 - 1] + times[n / 2]) / 2.0
            };
            (beta, median)
        })
        .collect()
}
