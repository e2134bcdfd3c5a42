use thiserror::Error;

/// A named quantity fell outside its accepted bounds.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{name} = {value} is out of range (valid: {min}..={max})")]
pub struct RangeError {
    pub name: &'static str,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl RangeError {
    pub(crate) fn check(name: &'static str, value: f64, min: f64, max: f64) -> Result<f64, Self> {
        if value.is_nan() || value < min || value > max {
            Err(Self {
                name,
                value,
                min,
                max,
            })
        } else {
            Ok(value)
        }
    }
}
