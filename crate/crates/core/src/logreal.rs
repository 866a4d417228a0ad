//! Nonnegative reals stored by their natural logarithm.
//!
//! The Cⁿ-norm constants of trained networks easily exceed `f64::MAX`, so
//! the bound assembly works on logarithms and only exponentiates for display.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Serialized as `{"log10": x}`, with `null` for zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogReal {
    /// Natural log of the value; `-inf` encodes zero.
    ln: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal {
        ln: f64::NEG_INFINITY,
    };
    pub const ONE: LogReal = LogReal { ln: 0.0 };

    pub fn from_ln(ln: f64) -> Self {
        assert!(!ln.is_nan(), "LogReal from NaN");
        LogReal { ln }
    }

    pub fn new(value: f64) -> Self {
        assert!(value >= 0.0, "LogReal requires a nonnegative value, got {value}");
        LogReal { ln: value.ln() }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// Plain value; `inf` when it does not fit in an `f64`.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }

    pub fn powf(self, p: f64) -> Self {
        if self.is_zero() {
            return if p == 0.0 { Self::ONE } else { Self::ZERO };
        }
        LogReal { ln: self.ln * p }
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    /// `self − rhs`, or `None` when that would be negative.
    pub fn checked_sub(self, rhs: LogReal) -> Option<LogReal> {
        if rhs.is_zero() {
            return Some(self);
        }
        if rhs.ln > self.ln {
            return None;
        }
        let ratio = (rhs.ln - self.ln).exp();
        if ratio >= 1.0 {
            return Some(Self::ZERO);
        }
        Some(LogReal {
            ln: self.ln + (-ratio).ln_1p(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LogRealRepr {
    log10: Option<f64>,
}

impl Serialize for LogReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let log10 = if self.is_zero() { None } else { Some(self.log10()) };
        LogRealRepr { log10 }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LogReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = LogRealRepr::deserialize(d)?;
        match r.log10 {
            None => Ok(LogReal::ZERO),
            Some(v) if v.is_finite() => Ok(LogReal::from_ln(v * std::f64::consts::LN_10)),
            Some(v) => Err(serde::de::Error::custom(format!("log10 {v} is not finite"))),
        }
    }
}

impl Add for LogReal {
    type Output = LogReal;

    fn add(self, rhs: LogReal) -> LogReal {
        let (hi, lo) = if self.ln >= rhs.ln { (self, rhs) } else { (rhs, self) };
        if lo.is_zero() {
            return hi;
        }
        LogReal {
            ln: hi.ln + (lo.ln - hi.ln).exp().ln_1p(),
        }
    }
}

impl Mul for LogReal {
    type Output = LogReal;

    fn mul(self, rhs: LogReal) -> LogReal {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        LogReal {
            ln: self.ln + rhs.ln,
        }
    }
}

impl std::iter::Sum for LogReal {
    fn sum<I: Iterator<Item = LogReal>>(iter: I) -> LogReal {
        iter.fold(LogReal::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for LogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            write!(f, "0")
        } else {
            write!(f, "10^{:.4}", self.log10())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_matches_plain_floats() {
        let a = LogReal::new(3.5);
        let b = LogReal::new(0.25);
        assert!(((a + b).value() - 3.75).abs() < 1e-14);
        assert!(((a * b).value() - 0.875).abs() < 1e-14);
        assert!((a.powf(3.0).value() - 42.875).abs() < 1e-12);
        assert_eq!((a + LogReal::ZERO).value(), a.value());
        assert!((LogReal::ZERO * a).is_zero());
    }

    #[test]
    fn subtraction_and_serde() {
        let a = LogReal::new(5.0);
        assert!((a.checked_sub(LogReal::new(2.0)).unwrap().value() - 3.0).abs() < 1e-14);
        assert!(LogReal::new(2.0).checked_sub(a).is_none());
        assert!(a.checked_sub(a).unwrap().is_zero());
        for v in [LogReal::ZERO, a, LogReal::from_ln(5000.0)] {
            let json = serde_json::to_string(&v).unwrap();
            let back: LogReal = serde_json::from_str(&json).unwrap();
            assert!(back == v || (back.ln() - v.ln()).abs() < 1e-12 * v.ln().abs());
        }
        assert_eq!(serde_json::to_string(&LogReal::ZERO).unwrap(), r#"{"log10":null}"#);
    }

    #[test]
    fn huge_values_stay_finite_in_log() {
        let big = LogReal::from_ln(2000.0);
        let sum = big + big;
        assert!((sum.ln() - (2000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(sum.value().is_infinite());
    }
}
