//! Time grids and truncation horizons.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::{display, Rational};

/// Uniform rational time grid `0, step, 2 step, ...` truncated at a horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    #[serde(serialize_with = "ser_times")]
    times: Vec<Rational>,
    #[serde(serialize_with = "ser_time")]
    horizon: Rational,
}

fn ser_times<S: serde::Serializer>(times: &[Rational], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(times.iter().map(|t| display(t).to_string()))
}

fn ser_time<S: serde::Serializer>(t: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&display(t).to_string())
}

impl TimeGrid {
    /// Arbitrary grid; must start at 0, increase strictly and stay below `horizon`.
    pub fn from_times(times: Vec<Rational>, horizon: Rational) -> Result<Self> {
        match times.first() {
            None => return Err(Error::InvalidGrid("empty time grid".into())),
            Some(t) if *t != Rational::from_integer(0) => {
                return Err(Error::InvalidGrid("time grid must start at 0".into()))
            }
            _ => {}
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("time grid must be strictly increasing".into()));
        }
        if times.last().is_some_and(|t| *t > horizon) {
            return Err(Error::InvalidGrid("time grid exceeds its horizon".into()));
        }
        Ok(Self { times, horizon })
    }

    /// `0, step, ..., k step` with `k step <= horizon`.
    pub fn uniform(step: Rational, horizon: Rational) -> Result<Self> {
        if step <= Rational::from_integer(0) {
            return Err(Error::InvalidStep(format!("time step {} must be positive", display(&step))));
        }
        if horizon < Rational::from_integer(0) {
            return Err(Error::InvalidGrid("negative horizon".into()));
        }
        let count = (horizon / step).floor().to_integer();
        let times = (0..=count).map(|k| step * k).collect();
        Self::from_times(times, horizon)
    }

    pub fn times(&self) -> &[Rational] {
        &self.times
    }

    pub fn horizon(&self) -> Rational {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn contains(&self, t: &Rational) -> bool {
        self.times.binary_search(t).is_ok()
    }

    pub fn index_of(&self, t: &Rational) -> Option<usize> {
        self.times.binary_search(t).ok()
    }

    /// Same horizon, every step split in two.
    pub fn refined(&self) -> Result<Self> {
        let mut times = Vec::with_capacity(2 * self.times.len());
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push((w[0] + w[1]) / 2);
        }
        times.extend(self.times.last().copied());
        Self::from_times(times, self.horizon)
    }

    /// `c^t` for every grid time.
    pub fn discounts(&self, c: f64) -> Vec<f64> {
        self.times.iter().map(|t| discount_factor(c, t)).collect()
    }
}

pub fn check_discount(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(c))
    }
}

/// `c^t` for a rational time.
pub fn discount_factor(c: f64, t: &Rational) -> f64 {
    if t.is_integer() {
        let k = t.to_integer();
        if let Ok(k) = i32::try_from(k) {
            return c.powi(k);
        }
    }
    c.powf(crate::rational::to_f64(t))
}

/// Smallest integer `T` with `c^T <= epsilon`.
pub fn horizon_for(c: f64, epsilon: f64) -> Result<Rational> {
    check_discount(c)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidTolerance(format!("epsilon {epsilon} must be positive")));
    }
    if epsilon >= 1.0 {
        return Ok(Rational::from_integer(0));
    }
    let estimate = (epsilon.ln() / c.ln()).ceil().max(0.0) as i64;
    // Correct floating error of the logarithm ratio in either direction.
    let mut k = estimate;
    while k > 0 && c.powi((k - 1) as i32) <= epsilon {
        k -= 1;
    }
    while c.powi(k as i32) > epsilon {
        k += 1;
    }
    Ok(Rational::from_integer(k))
}

/// Uniform grid up to [`horizon_for`]`(c, epsilon_time)`.
pub fn build_time_grid(c: f64, epsilon_time: f64, step: Rational) -> Result<TimeGrid> {
    if step <= Rational::from_integer(0) {
        return Err(Error::InvalidStep(format!("time step {} must be positive", display(&step))));
    }
    let horizon = horizon_for(c, epsilon_time)?;
    TimeGrid::uniform(step, horizon)
}
