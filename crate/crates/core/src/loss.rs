//! Per-sample losses `l(r, y)` with their first two derivatives in `r`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDerivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// A twice-differentiable per-sample loss.
pub trait ScalarLoss: Send + Sync + fmt::Debug {
    fn value(&self, r: f64, y: f64) -> f64;
    fn first(&self, r: f64, y: f64) -> f64;
    fn second(&self, r: f64, y: f64) -> f64;

    fn derivatives(&self, r: f64, y: f64) -> LossDerivatives {
        LossDerivatives {
            value: self.value(r, y),
            first: self.first(r, y),
            second: self.second(r, y),
        }
    }
}

/// `sign` with `sign(0) = +1`, so labels are always `±1`.
pub fn label(pre_activation: f64) -> f64 {
    if pre_activation >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Logistic loss `log(1 + e^{-y r})`, evaluated without overflow for any `r`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl ScalarLoss for Logistic {
    fn value(&self, r: f64, y: f64) -> f64 {
        let z = y * r;
        (-z).max(0.0) + (-z.abs()).exp().ln_1p()
    }

    fn first(&self, r: f64, y: f64) -> f64 {
        // -y * sigmoid(-y r)
        let z = y * r;
        let sig_neg = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        -y * sig_neg
    }

    fn second(&self, r: f64, y: f64) -> f64 {
        let e = (-(y * r).abs()).exp();
        e / ((1.0 + e) * (1.0 + e))
    }
}

/// Square loss `(r - y)^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Square;

impl ScalarLoss for Square {
    fn value(&self, r: f64, y: f64) -> f64 {
        0.5 * (r - y) * (r - y)
    }
    fn first(&self, r: f64, y: f64) -> f64 {
        r - y
    }
    fn second(&self, _r: f64, _y: f64) -> f64 {
        1.0
    }
}

/// Loss choice carried by the model parameters. `Custom` plugs in any
/// [`ScalarLoss`]; it cannot be read back from a config file.
#[derive(Clone, Default)]
pub enum LossSpec {
    #[default]
    Logistic,
    Square,
    Custom(Arc<dyn ScalarLoss>),
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Logistic => "logistic",
            LossSpec::Square => "square",
            LossSpec::Custom(_) => "custom",
        }
    }

    pub fn derivatives(&self, r: f64, y: f64) -> LossDerivatives {
        ScalarLoss::derivatives(self, r, y)
    }
}

impl ScalarLoss for LossSpec {
    fn value(&self, r: f64, y: f64) -> f64 {
        match self {
            LossSpec::Logistic => Logistic.value(r, y),
            LossSpec::Square => Square.value(r, y),
            LossSpec::Custom(l) => l.value(r, y),
        }
    }
    fn first(&self, r: f64, y: f64) -> f64 {
        match self {
            LossSpec::Logistic => Logistic.first(r, y),
            LossSpec::Square => Square.first(r, y),
            LossSpec::Custom(l) => l.first(r, y),
        }
    }
    fn second(&self, r: f64, y: f64) -> f64 {
        match self {
            LossSpec::Logistic => Logistic.second(r, y),
            LossSpec::Square => Square.second(r, y),
            LossSpec::Custom(l) => l.second(r, y),
        }
    }
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Custom(l) => write!(f, "Custom({l:?})"),
            other => f.write_str(other.name()),
        }
    }
}

impl PartialEq for LossSpec {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (LossSpec::Custom(a), LossSpec::Custom(b)) => Arc::ptr_eq(a, b),
            (a, b) => a.name() == b.name(),
        }
    }
}

impl Serialize for LossSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LossSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        match name.as_str() {
            "logistic" => Ok(LossSpec::Logistic),
            "square" => Ok(LossSpec::Square),
            other => Err(serde::de::Error::custom(format!(
                "unknown loss `{other}` (expected `logistic` or `square`)"
            ))),
        }
    }
}
