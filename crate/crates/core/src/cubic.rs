//! Tunable CUBIC congestion control.
//!
//! The controller is a plain value type driven through two hooks:
//! [`CubicState::on_ack`] for every MSS of newly acknowledged data and
//! [`CubicState::on_loss`] once per loss episode. Nothing in here reads a
//! clock or holds entropy, so identical inputs always produce identical
//! windows.
//!
//! Parameters use the integer encoding exposed to operators: `alpha` is a
//! multiple of 1/512 and `beta` a multiple of 1/1024, both in `1..=1024`.

use serde::{Deserialize, Serialize};

use crate::error::RangeError;

/// Denominator of the `alpha` encoding.
pub const ALPHA_SCALE: u16 = 512;
/// Denominator of the `beta` encoding.
pub const BETA_SCALE: u16 = 1024;
/// Largest encoded value accepted for either `alpha` or `beta`.
pub const PARAM_Q_MAX: u16 = 1024;
/// Default cubic scaling constant, segments per second cubed.
pub const DEFAULT_C: f64 = 0.4;
/// Smallest window the controller will ever hand back.
pub const MIN_CWND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicParams {
    alpha_q512: u16,
    beta_q1024: u16,
    pub fast_convergence: bool,
    pub tcp_friendliness: bool,
    c_scale: f64,
}

impl Default for CubicParams {
    /// Stock CUBIC: alpha 1.0, beta 717/1024, both toggles on.
    fn default() -> Self {
        Self {
            alpha_q512: ALPHA_SCALE,
            beta_q1024: 717,
            fast_convergence: true,
            tcp_friendliness: true,
            c_scale: DEFAULT_C,
        }
    }
}

fn check_q(name: &'static str, value: i64) -> Result<u16, RangeError> {
    RangeError::check(name, value as f64, 1.0, PARAM_Q_MAX as f64).map(|v| v as u16)
}

impl CubicParams {
    /// Builds parameters from their integer encoding.
    pub fn decode(
        alpha_q512: i64,
        beta_q1024: i64,
        fast_convergence: bool,
        tcp_friendliness: bool,
    ) -> Result<Self, RangeError> {
        Ok(Self {
            alpha_q512: check_q("alpha", alpha_q512)?,
            beta_q1024: check_q("beta", beta_q1024)?,
            fast_convergence,
            tcp_friendliness,
            c_scale: DEFAULT_C,
        })
    }

    /// Returns `(alpha_q512, beta_q1024)`.
    pub fn encode(&self) -> (u16, u16) {
        (self.alpha_q512, self.beta_q1024)
    }

    pub fn with_c_scale(mut self, c_scale: f64) -> Result<Self, RangeError> {
        if !(c_scale > 0.0 && c_scale.is_finite()) {
            return Err(RangeError {
                name: "c_scale",
                value: c_scale,
                min: f64::MIN_POSITIVE,
                max: f64::MAX,
            });
        }
        self.c_scale = c_scale;
        Ok(self)
    }

    pub fn set_alpha_q512(&mut self, value: i64) -> Result<(), RangeError> {
        self.alpha_q512 = check_q("alpha", value)?;
        Ok(())
    }

    pub fn set_beta_q1024(&mut self, value: i64) -> Result<(), RangeError> {
        self.beta_q1024 = check_q("beta", value)?;
        Ok(())
    }

    pub fn alpha_q512(&self) -> u16 {
        self.alpha_q512
    }

    pub fn beta_q1024(&self) -> u16 {
        self.beta_q1024
    }

    pub fn alpha(&self) -> f64 {
        f64::from(self.alpha_q512) / f64::from(ALPHA_SCALE)
    }

    pub fn beta(&self) -> f64 {
        f64::from(self.beta_q1024) / f64::from(BETA_SCALE)
    }

    pub fn c_scale(&self) -> f64 {
        self.c_scale
    }
}

/// Per-ACK growth of the standard-TCP estimate, in segments per RTT, for a
/// given decrease factor. An AIMD flow with this slope and decrease `beta`
/// has the same average rate as classic Reno.
pub fn friendly_slope(beta: f64) -> f64 {
    3.0 * (1.0 - beta) / (1.0 + beta)
}

/// Congestion state of one flow. Windows are in segments, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubicState {
    pub cwnd: f64,
    pub ssthresh: f64,
    /// Window recorded at the last loss, after fast convergence and alpha.
    pub last_max: f64,
    /// Start of the current growth epoch; `None` until the first
    /// congestion-avoidance ACK after a loss.
    pub epoch_start: Option<f64>,
    pub origin_point: f64,
    pub k_seconds: f64,
    pub tcp_cwnd: f64,
    pub ack_cnt: u64,
    pub min_rtt: f64,
}

impl CubicState {
    pub fn new(initcwnd: f64) -> Result<Self, RangeError> {
        let cwnd = RangeError::check("initcwnd", initcwnd, MIN_CWND, f64::MAX)?;
        Ok(Self {
            cwnd,
            ssthresh: f64::INFINITY,
            last_max: 0.0,
            epoch_start: None,
            origin_point: 0.0,
            k_seconds: 0.0,
            tcp_cwnd: 0.0,
            ack_cnt: 0,
            min_rtt: f64::INFINITY,
        })
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    /// Window on the cubic curve `elapsed` seconds into the epoch.
    ///
    /// The signed cube covers both sides of the plateau, so the concave
    /// branch `origin - C|t-K|^3` and the convex branch `origin + C|t-K|^3`
    /// are the same expression.
    pub fn cubic_target(&self, params: &CubicParams, elapsed: f64) -> f64 {
        let offset = elapsed - self.k_seconds;
        self.origin_point + params.c_scale * offset * offset * offset
    }

    /// Opens a growth epoch at `now`.
    pub fn epoch_begin(&mut self, params: &CubicParams, now: f64) {
        self.epoch_start = Some(now);
        self.ack_cnt = 1;
        self.tcp_cwnd = self.cwnd;
        if self.cwnd < self.last_max {
            self.origin_point = self.last_max;
            self.k_seconds = ((self.last_max - self.cwnd) / params.c_scale).cbrt();
        } else {
            self.origin_point = self.cwnd;
            self.k_seconds = 0.0;
        }
    }

    /// Standard-TCP window estimate used as a floor on the cubic target.
    pub fn friendly_floor(&self, _params: &CubicParams) -> f64 {
        self.tcp_cwnd
    }

    /// Growth hook, called once per MSS of newly acknowledged data.
    ///
    /// `rtt_sample` is `None` when the ACK carried no valid timing (Karn).
    pub fn on_ack(
        &mut self,
        params: &CubicParams,
        now: f64,
        rtt_sample: Option<f64>,
    ) -> Result<(), RangeError> {
        if let Some(rtt) = rtt_sample {
            if !(rtt > 0.0) {
                return Err(RangeError {
                    name: "rtt_sample",
                    value: rtt,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
            self.min_rtt = self.min_rtt.min(rtt);
        }

        if self.in_slow_start() {
            self.cwnd += 1.0;
            return Ok(());
        }

        let epoch_start = match self.epoch_start {
            Some(start) => {
                self.ack_cnt += 1;
                start
            }
            None => {
                self.epoch_begin(params, now);
                now
            }
        };

        let lookahead = if self.min_rtt.is_finite() {
            self.min_rtt
        } else {
            0.0
        };
        let mut target = self.cubic_target(params, now - epoch_start + lookahead);

        if params.tcp_friendliness {
            self.tcp_cwnd += friendly_slope(params.beta()) / self.cwnd;
            target = target.max(self.friendly_floor(params));
        }

        if target > self.cwnd {
            self.cwnd += (target - self.cwnd) / self.cwnd;
        } else {
            self.cwnd += 1.0 / (100.0 * self.cwnd);
        }
        Ok(())
    }

    /// Reduction hook, called at most once per loss episode.
    pub fn on_loss(&mut self, params: &CubicParams) {
        let w = self.cwnd;
        let beta = params.beta();
        let base = if params.fast_convergence && w < self.last_max {
            w * (1.0 + beta) / 2.0
        } else {
            w
        };
        self.last_max = base * params.alpha();
        self.ssthresh = (w * beta).max(MIN_CWND);
        self.cwnd = self.ssthresh;
        self.epoch_start = None;
    }
}
