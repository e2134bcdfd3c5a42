//! Python bindings: the cubic arithmetic, scenario runs, sweeps and the
//! predictor. Scenarios cross the boundary as JSON text.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use tunerlab_core::cubic;
use tunerlab_core::predictor::{predict_trace, PredictorModel};
use tunerlab_core::scenarios::{self, Scenario};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "CubicParams", module = "tunerlab", from_py_object)]
#[derive(Clone, Copy)]
struct PyCubicParams(cubic::CubicParams);

#[pymethods]
impl PyCubicParams {
    #[new]
    #[pyo3(signature = (alpha_q512=512, beta_q1024=717, fast_convergence=true, tcp_friendliness=true))]
    fn new(
        alpha_q512: i64,
        beta_q1024: i64,
        fast_convergence: bool,
        tcp_friendliness: bool,
    ) -> PyResult<Self> {
        cubic::CubicParams::decode(alpha_q512, beta_q1024, fast_convergence, tcp_friendliness)
            .map(Self)
            .map_err(value_error)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c_scale()
    }

    #[getter]
    fn fast_convergence(&self) -> bool {
        self.0.fast_convergence
    }

    #[getter]
    fn tcp_friendliness(&self) -> bool {
        self.0.tcp_friendliness
    }

    /// `(alpha_q512, beta_q1024)`.
    fn encode(&self) -> (u16, u16) {
        self.0.encode()
    }

    fn __repr__(&self) -> String {
        let (a, b) = self.0.encode();
        format!(
            "CubicParams(alpha_q512={a}, beta_q1024={b}, fast_convergence={}, tcp_friendliness={})",
            self.0.fast_convergence, self.0.tcp_friendliness
        )
    }
}

#[pyclass(name = "CubicState", module = "tunerlab")]
struct PyCubicState(cubic::CubicState);

#[pymethods]
impl PyCubicState {
    #[new]
    #[pyo3(signature = (cwnd=10.0))]
    fn new(cwnd: f64) -> PyResult<Self> {
        cubic::CubicState::new(cwnd).map(Self).map_err(value_error)
    }

    #[getter]
    fn cwnd(&self) -> f64 {
        self.0.cwnd
    }

    #[setter]
    fn set_cwnd(&mut self, value: f64) {
        self.0.cwnd = value;
    }

    #[getter]
    fn ssthresh(&self) -> f64 {
        self.0.ssthresh
    }

    #[setter]
    fn set_ssthresh(&mut self, value: f64) {
        self.0.ssthresh = value;
    }

    #[getter]
    fn last_max(&self) -> f64 {
        self.0.last_max
    }

    #[setter]
    fn set_last_max(&mut self, value: f64) {
        self.0.last_max = value;
    }

    #[getter]
    fn k_seconds(&self) -> f64 {
        self.0.k_seconds
    }

    #[getter]
    fn origin_point(&self) -> f64 {
        self.0.origin_point
    }

    #[getter]
    fn epoch_start(&self) -> Option<f64> {
        self.0.epoch_start
    }

    fn epoch_begin(&mut self, params: PyCubicParams, now_s: f64) {
        self.0.epoch_begin(&params.0, now_s);
    }

    fn cubic_target(&self, params: PyCubicParams, t: f64) -> f64 {
        self.0.cubic_target(&params.0, t)
    }

    #[pyo3(signature = (params, now_s, rtt_s=None))]
    fn on_ack(&mut self, params: PyCubicParams, now_s: f64, rtt_s: Option<f64>) -> PyResult<()> {
        self.0.on_ack(&params.0, now_s, rtt_s).map_err(value_error)
    }

    fn on_loss(&mut self, params: PyCubicParams) {
        self.0.on_loss(&params.0);
    }

    fn friendly_floor(&self, params: PyCubicParams) -> f64 {
        self.0.friendly_floor(&params.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "CubicState(cwnd={:.4}, ssthresh={}, last_max={:.4}, k_seconds={:.4})",
            self.0.cwnd, self.0.ssthresh, self.0.last_max, self.0.k_seconds
        )
    }
}

fn parse(scenario_json: &str) -> PyResult<Scenario> {
    Scenario::from_json(scenario_json).map_err(value_error)
}

/// Scenario JSON for a named preset.
#[pyfunction]
#[pyo3(signature = (name, seed=1))]
fn preset(name: &str, seed: u64) -> PyResult<String> {
    scenarios::by_name(name, seed)
        .map(|s| s.to_json())
        .ok_or_else(|| PyKeyError::new_err(format!("unknown preset {name:?}")))
}

/// Runs a scenario; returns `(summary_json, telemetry_csv)`.
#[pyfunction]
fn run_scenario(py: Python<'_>, scenario_json: &str) -> PyResult<(String, String)> {
    let scenario = parse(scenario_json)?;
    py.detach(|| {
        let result = scenarios::run_scenario(&scenario).map_err(value_error)?;
        let summary = serde_json::to_string(&result.summary()).map_err(value_error)?;
        let mut csv = Vec::new();
        result.write_csv(&mut csv).map_err(value_error)?;
        Ok((summary, String::from_utf8(csv).expect("csv is utf-8")))
    })
}

/// Transfer-time sweep over `beta`; returns `(beta_q1024, seed, transfer_s)` rows.
#[pyfunction]
fn beta_sweep(
    py: Python<'_>,
    scenario_json: &str,
    betas: Vec<i64>,
    seeds: u64,
) -> PyResult<Vec<(u16, u64, f64)>> {
    let scenario = parse(scenario_json)?;
    py.detach(|| {
        scenarios::beta_sweep(&scenario, &betas, seeds)
            .map(|rows| {
                rows.into_iter()
                    .map(|r| (r.beta_q1024, r.seed, r.transfer_s))
                    .collect()
            })
            .map_err(value_error)
    })
}

/// Predicted `(t_s, cwnd)` series for the first flow of a scenario.
#[pyfunction]
fn predict(scenario_json: &str) -> PyResult<Vec<(f64, f64)>> {
    let scenario = parse(scenario_json)?;
    let (link, flows) = scenario.build().map_err(value_error)?;
    let flow = flows
        .first()
        .ok_or_else(|| PyValueError::new_err("scenario has no flows"))?;
    let mut model = PredictorModel::new(flow.params, link, scenario.duration_s);
    model.initcwnd = f64::from(flow.route.initcwnd());
    Ok(predict_trace(&model).series)
}

#[pyfunction]
fn jain_fairness(throughputs: Vec<f64>) -> PyResult<f64> {
    scenarios::jain_fairness(&throughputs).map_err(value_error)
}

#[pymodule]
fn tunerlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCubicParams>()?;
    m.add_class::<PyCubicState>()?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(beta_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(jain_fairness, m)?)?;
    Ok(())
}
