//! Exact non-negative rationals for times and logic constants.

use std::fmt;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Parses `"3"`, `"1/4"`, `"0.125"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || Error::InvalidConfig(format!("not a rational number: {text:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    if frac_part.len() > 17 {
        return Err(bad());
    }
    let denom = 10i64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
    let int_val: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let frac_val: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let numer = int_val
        .checked_mul(denom)
        .and_then(|v| v.checked_add(frac_val))
        .ok_or_else(bad)?;
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Converts a float to the rational its shortest decimal representation names.
pub fn rational_from_f64(value: f64) -> Result<Rational> {
    if !value.is_finite() {
        return Err(Error::InvalidConfig(format!("non-finite number {value}")));
    }
    parse_rational(&format!("{value}"))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Rational in `[0, 1]`.
pub fn unit_interval(r: Rational) -> Result<Rational> {
    if r < Rational::zero() || r > Rational::from_integer(1) {
        return Err(Error::ConstantOutOfRange(display(&r).to_string()));
    }
    Ok(r)
}

pub fn display(r: &Rational) -> RationalDisplay<'_> {
    RationalDisplay(r)
}

/// Prints integers bare and everything else as `p/q`.
pub struct RationalDisplay<'a>(&'a Rational);

impl fmt::Display for RationalDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Accepts either a JSON number or a string such as `"1/2"`.
pub mod serde_rational {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{display, parse_rational, rational_from_f64, Rational};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&display(r).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => rational_from_f64(v),
            Raw::Text(t) => parse_rational(&t),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}
