//! Runtime-tunable parameters, addressed by the names operators use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cubic::CubicParams;
use crate::error::RangeError;
use crate::transport::{FlowId, RouteParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter {0:?} (expected one of alpha, beta, fast_convergence, tcp_friendliness, rto_min_ms, initcwnd)")]
    UnknownParameter(String),
    #[error("unknown scope {0:?} (expected \"global\" or \"flow:<id>\")")]
    BadScope(String),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error(transparent)]
    Range(#[from] RangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Global,
    Flow(FlowId),
}

impl FromStr for Scope {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "global" {
            return Ok(Scope::Global);
        }
        s.strip_prefix("flow:")
            .and_then(|id| id.parse().ok())
            .map(Scope::Flow)
            .ok_or_else(|| ParamError::BadScope(s.to_owned()))
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => f.write_str("global"),
            Scope::Flow(id) => write!(f, "flow:{id}"),
        }
    }
}

/// One validated parameter assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Alpha(u16),
    Beta(u16),
    FastConvergence(bool),
    TcpFriendliness(bool),
    RtoMinMs(u32),
    Initcwnd(u32),
}

fn flag(name: &'static str, value: i64) -> Result<bool, RangeError> {
    RangeError::check(name, value as f64, 0.0, 1.0).map(|v| v == 1.0)
}

impl Setting {
    /// Validates a `name = value` pair against the same bounds as the
    /// parameter constructors.
    pub fn parse(name: &str, value: i64) -> Result<Self, ParamError> {
        // Route through the real setters so the bounds live in one place.
        let mut cubic = CubicParams::default();
        let mut route = RouteParams::default();
        let setting = match name {
            "alpha" => {
                cubic.set_alpha_q512(value)?;
                Setting::Alpha(cubic.alpha_q512())
            }
            "beta" => {
                cubic.set_beta_q1024(value)?;
                Setting::Beta(cubic.beta_q1024())
            }
            "fast_convergence" => Setting::FastConvergence(flag("fast_convergence", value)?),
            "tcp_friendliness" => Setting::TcpFriendliness(flag("tcp_friendliness", value)?),
            "rto_min_ms" => {
                route.set_rto_min_ms(value)?;
                Setting::RtoMinMs(route.rto_min_ms())
            }
            "initcwnd" => {
                route.set_initcwnd(value)?;
                Setting::Initcwnd(route.initcwnd())
            }
            other => return Err(ParamError::UnknownParameter(other.to_owned())),
        };
        Ok(setting)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Setting::Alpha(_) => "alpha",
            Setting::Beta(_) => "beta",
            Setting::FastConvergence(_) => "fast_convergence",
            Setting::TcpFriendliness(_) => "tcp_friendliness",
            Setting::RtoMinMs(_) => "rto_min_ms",
            Setting::Initcwnd(_) => "initcwnd",
        }
    }

    /// Applies the congestion-control part of the setting. Returns `false`
    /// when the setting is a route parameter.
    pub fn apply_cubic(&self, params: &mut CubicParams) -> bool {
        match *self {
            Setting::Alpha(q) => params.set_alpha_q512(i64::from(q)).is_ok(),
            Setting::Beta(q) => params.set_beta_q1024(i64::from(q)).is_ok(),
            Setting::FastConvergence(on) => {
                params.fast_convergence = on;
                true
            }
            Setting::TcpFriendliness(on) => {
                params.tcp_friendliness = on;
                true
            }
            Setting::RtoMinMs(_) | Setting::Initcwnd(_) => false,
        }
    }

    pub fn apply_route(&self, route: &mut RouteParams) -> bool {
        match *self {
            Setting::RtoMinMs(ms) => route.set_rto_min_ms(i64::from(ms)).is_ok(),
            Setting::Initcwnd(n) => route.set_initcwnd(i64::from(n)).is_ok(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamUpdate {
    pub scope: Scope,
    pub setting: Setting,
}

impl ParamUpdate {
    pub fn parse(scope: &str, name: &str, value: i64) -> Result<Self, ParamError> {
        Ok(Self {
            scope: scope.parse()?,
            setting: Setting::parse(name, value)?,
        })
    }
}

/// Parameter values as they appear on the wire, booleans as 0/1 integers
/// like the sysfs files they mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamValues {
    pub alpha: u16,
    pub beta: u16,
    pub fast_convergence: u8,
    pub tcp_friendliness: u8,
    pub rto_min_ms: u32,
    pub initcwnd: u32,
}

impl ParamValues {
    pub fn from_parts(params: &CubicParams, route: &RouteParams) -> Self {
        Self {
            alpha: params.alpha_q512(),
            beta: params.beta_q1024(),
            fast_convergence: u8::from(params.fast_convergence),
            tcp_friendliness: u8::from(params.tcp_friendliness),
            rto_min_ms: route.rto_min_ms(),
            initcwnd: route.initcwnd(),
        }
    }
}
