//! Special functions, torus quadrature and dense PSD linear algebra.

pub mod bessel;
pub mod linalg;
pub mod quadrature;
pub(crate) mod tensor;

use serde::{Deserialize, Serialize};
use std::fmt;

/// A real number that may also be `+inf` or `-inf`.
///
/// Serialized as a JSON number when finite and as the strings `"+inf"` / `"-inf"`
/// otherwise, so documents never carry raw IEEE infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
    NegInfinity,
}

impl ExtReal {
    pub fn from_f64(x: f64) -> Option<Self> {
        if x.is_nan() {
            None
        } else if x == f64::INFINITY {
            Some(ExtReal::PosInfinity)
        } else if x == f64::NEG_INFINITY {
            Some(ExtReal::NegInfinity)
        } else {
            Some(ExtReal::Finite(x))
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(x) => x,
            ExtReal::PosInfinity => f64::INFINITY,
            ExtReal::NegInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{:.16e}", x),
            ExtReal::PosInfinity => f.write_str("+inf"),
            ExtReal::NegInfinity => f.write_str("-inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => s.serialize_f64(*x),
            ExtReal::PosInfinity => s.serialize_str("+inf"),
            ExtReal::NegInfinity => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(ExtReal::Finite(x)),
            Raw::Text(t) => match t.as_str() {
                "+inf" | "inf" => Ok(ExtReal::PosInfinity),
                "-inf" => Ok(ExtReal::NegInfinity),
                other => Err(serde::de::Error::custom(format!("not an extended real: {other}"))),
            },
        }
    }
}

/// Result of an adaptive numerical procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Absolute error estimate.
    pub error: f64,
    pub converged: bool,
}

impl Estimate {
    /// Value, or a numeric error when the estimate did not converge.
    pub fn require_converged(self, what: &str) -> crate::Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(crate::Error::Numeric(format!(
                "{what}: quadrature did not converge (value {:.6e}, error estimate {:.3e})",
                self.value, self.error
            )))
        }
    }
}
