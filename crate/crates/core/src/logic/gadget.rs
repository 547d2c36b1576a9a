//! Two-point approximation: a formula matching prescribed values at two points.
//!
//! Given `f` and targets `h(z)`, `h(z')` with `|h(z) - h(z')| <= |f(z) - f(z')|`,
//! the formula `g = min(f (-) p, q) (+) r` with `p ~ f(z')`, `q ~ h(z) - h(z')`
//! and `r ~ h(z')` takes values within `2 delta` of `h` at both points (after
//! swapping the points so that `h(z) >= h(z')` and negating `f` if needed).

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::rational::{display, to_f64, Rational};

use super::eval::Evaluator;
use super::syntax::{Logic, PathFormula, StateFormula};

/// Slack allowed on the premise `|dh| <= |df|` for floating-point inputs.
const PREMISE_SLACK: f64 = 1e-12;

/// Rationals of the construction, on the dyadic grid `1/2^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GadgetConstants {
    /// Whether `1 - f` is used in place of `f`.
    pub negated: bool,
    pub p: Rational,
    pub q: Rational,
    pub r: Rational,
}

/// Smallest power of two `D >= 2^20` with `1/D <= delta`.
fn denominator(delta: Rational) -> Result<i64> {
    if delta <= Rational::zero() {
        return Err(Error::InvalidTolerance(format!("delta {} must be positive", display(&delta))));
    }
    let mut d: i64 = 1 << 20;
    while Rational::new(1, d) > delta {
        d = d.checked_mul(2).filter(|d| *d <= 1 << 62).ok_or_else(|| {
            Error::InvalidTolerance(format!("delta {} is too small", display(&delta)))
        })?;
    }
    Ok(d)
}

fn floor_to(x: f64, d: i64) -> Rational {
    Rational::new(((x * d as f64).floor() as i64).clamp(0, d), d)
}

fn ceil_to(x: f64, d: i64) -> Rational {
    Rational::new(((x * d as f64).ceil() as i64).clamp(0, d), d)
}

fn check_target(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::PreconditionFailed(format!("target value {v} outside [0,1]")));
    }
    Ok(())
}

/// Chooses `p`, `q`, `r` given `f` and `h` at points `a`, `b` with `h(a) >= h(b)`.
///
/// `f_a`, `f_b` are the values of the base formula before any negation.
pub fn gadget_constants(f_a: f64, f_b: f64, h_a: f64, h_b: f64, delta: Rational) -> Result<GadgetConstants> {
    check_target(h_a)?;
    check_target(h_b)?;
    if h_a < h_b {
        return Err(Error::PreconditionFailed("targets must satisfy h(a) >= h(b)".into()));
    }
    let dh = h_a - h_b;
    if dh > (f_a - f_b).abs() + PREMISE_SLACK {
        return Err(Error::PreconditionFailed(format!(
            "|h(z) - h(z')| = {dh} exceeds |f(z) - f(z')| = {}",
            (f_a - f_b).abs()
        )));
    }
    let d = denominator(delta)?;
    let negated = f_a < f_b;
    let f_b = if negated { 1.0 - f_b } else { f_b };
    Ok(GadgetConstants { negated, p: floor_to(f_b, d), q: floor_to(dh, d), r: ceil_to(h_b, d) })
}

fn check_errors(got: (f64, f64), h: (f64, f64), delta: Rational, formula: &dyn std::fmt::Display) -> Result<()> {
    let bound = 2.0 * to_f64(&delta) + PREMISE_SLACK;
    let (e0, e1) = ((got.0 - h.0).abs(), (got.1 - h.1).abs());
    if e0 > bound || e1 > bound {
        return Err(Error::Solver(format!("approximation {formula} misses its targets by ({e0}, {e1}), bound {bound}")));
    }
    Ok(())
}

/// State form in the kernel logic: `g(z) ~ h.0`, `g(z') ~ h.1` within `2 delta`.
pub fn gadget(ev: &Evaluator, f: &StateFormula, z: usize, z2: usize, h: (f64, f64), delta: Rational) -> Result<StateFormula> {
    if f.validate()? == Some(Logic::Sigma) {
        return Err(Error::MixedGrammar(format!("state approximation needs a kernel-logic formula, got {f}")));
    }
    let values = ev.state_values(f)?;
    let (fz, fz2) = (value_at(&values, z)?, value_at(&values, z2)?);
    let (a, b, fa, fb, ha, hb) = if h.0 >= h.1 { (z, z2, fz, fz2, h.0, h.1) } else { (z2, z, fz2, fz, h.1, h.0) };
    let k = gadget_constants(fa, fb, ha, hb, delta)?;
    let g = if k.q.is_zero() {
        StateFormula::Const(k.r)
    } else {
        let base = if k.negated { StateFormula::neg(f.clone()) } else { f.clone() };
        let inner = StateFormula::min(StateFormula::minus_q(base, k.p)?, StateFormula::Const(k.q));
        StateFormula::plus_q(inner, k.r)?
    };
    let gv = ev.state_values(&g)?;
    let got = if (a, b) == (z, z2) { (gv[a], gv[b]) } else { (gv[b], gv[a]) };
    check_errors(got, h, delta, &g)?;
    Ok(g)
}

/// Trajectory form: `g = min((f @ s) (-) p, q) (+) r` with `g(omega) ~ h.0`, `g(omega') ~ h.1`.
pub fn gadget_path(
    ev: &Evaluator,
    f: &StateFormula,
    s: Rational,
    omega: &[usize],
    omega2: &[usize],
    h: (f64, f64),
    delta: Rational,
) -> Result<PathFormula> {
    if f.validate()? == Some(Logic::Lambda) {
        return Err(Error::MixedGrammar(format!("trajectory approximation needs a trajectory-logic formula, got {f}")));
    }
    let at_s = PathFormula::eval(f.clone(), s)?;
    let (fw, fw2) = (ev.traj_value(&at_s, omega)?, ev.traj_value(&at_s, omega2)?);
    let swapped = h.0 < h.1;
    let (fa, fb, ha, hb) = if swapped { (fw2, fw, h.1, h.0) } else { (fw, fw2, h.0, h.1) };
    let k = gadget_constants(fa, fb, ha, hb, delta)?;
    let constant = |q: Rational| PathFormula::eval(StateFormula::Const(q), Rational::zero());
    let g = if k.q.is_zero() {
        constant(k.r)?
    } else {
        // `1 - f` at time `s` is `c^s - c^s f`, not `1 - c^s f`, so the
        // negated base needs `p` recomputed from its own value.
        let (base, p) = if k.negated {
            let nb = PathFormula::eval(StateFormula::neg(f.clone()), s)?;
            let vb = ev.traj_value(&nb, if swapped { omega } else { omega2 })?;
            (nb, floor_to(vb, denominator(delta)?))
        } else {
            (at_s, k.p)
        };
        PathFormula::plus_q(PathFormula::min(PathFormula::minus_q(base, p)?, constant(k.q)?), k.r)?
    };
    let got = (ev.traj_value(&g, omega)?, ev.traj_value(&g, omega2)?);
    check_errors(got, h, delta, &g)?;
    Ok(g)
}

fn value_at(values: &[f64], x: usize) -> Result<f64> {
    values.get(x).copied().ok_or_else(|| Error::Shape(format!("state {x} out of range for {} states", values.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::TimeGrid;
    use crate::logic::syntax::parse_state;
    use crate::metrics::PathMode;
    use crate::process::ProcessModel;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn chain() -> ProcessModel {
        let m = vec![
            vec![0.5, 0.25, 0.25, 0.0, 0.0],
            vec![0.1, 0.6, 0.1, 0.1, 0.1],
            vec![0.0, 0.2, 0.3, 0.5, 0.0],
            vec![0.25, 0.0, 0.0, 0.5, 0.25],
            vec![0.0, 0.0, 0.4, 0.2, 0.4],
        ];
        ProcessModel::finite_chain(m, r(1, 1), vec![0.0, 0.2, 0.5, 0.9, 1.0]).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::uniform(r(1, 1), r(2, 1)).unwrap()
    }

    #[test]
    fn constant_target_gives_constant() {
        let m = chain();
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        let f = parse_state("<1> obs").unwrap();
        let g = gadget(&ev, &f, 0, 3, (0.3, 0.3), r(1, 100)).unwrap();
        match g {
            StateFormula::Const(q) => assert!((to_f64(&q) - 0.3).abs() <= 0.01),
            other => panic!("expected a constant, got {other}"),
        }
    }

    #[test]
    fn reproduces_f_itself() {
        let m = chain();
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        let f = parse_state("<1> obs").unwrap();
        let v = ev.state_values(&f).unwrap();
        for (z, z2) in [(0, 3), (4, 1), (2, 2)] {
            let g = gadget(&ev, &f, z, z2, (v[z], v[z2]), r(1, 100)).unwrap();
            let gv = ev.state_values(&g).unwrap();
            assert!((gv[z] - v[z]).abs() <= 0.02 && (gv[z2] - v[z2]).abs() <= 0.02);
        }
    }

    #[test]
    fn negates_when_f_is_reversed() {
        let m = chain();
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        let g = gadget(&ev, &StateFormula::Obs, 0, 4, (0.9, 0.2), r(1, 64)).unwrap();
        let gv = ev.state_values(&g).unwrap();
        assert!((gv[0] - 0.9).abs() <= 2.0 / 64.0);
        assert!((gv[4] - 0.2).abs() <= 2.0 / 64.0);
    }

    #[test]
    fn rejects_violated_premise() {
        let m = chain();
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        let res = gadget(&ev, &StateFormula::Obs, 1, 2, (0.0, 0.9), r(1, 100));
        assert!(matches!(res, Err(Error::PreconditionFailed(_))));
        assert!(matches!(gadget_constants(0.5, 0.2, 0.4, 0.3, r(0, 1)), Err(Error::InvalidTolerance(_))));
    }

    #[test]
    fn path_form_hits_targets() {
        let m = chain();
        let g = grid();
        let ev = Evaluator::new(&m, 0.9, &g, PathMode::Exact).unwrap();
        let (w, w2) = ([0usize, 1, 3], [2usize, 4, 4]);
        let f = StateFormula::Obs;
        for s in [r(0, 1), r(1, 1), r(2, 1)] {
            let at = PathFormula::eval(f.clone(), s).unwrap();
            let (a, b) = (ev.traj_value(&at, &w).unwrap(), ev.traj_value(&at, &w2).unwrap());
            for h in [(a, b), (b, a), (0.5 * (a + b), 0.5 * (a + b)), (0.1 + 0.5 * a.min(b), 0.1 + 0.5 * a.max(b))] {
                let gp = gadget_path(&ev, &f, s, &w, &w2, h, r(1, 200)).unwrap();
                assert!((ev.traj_value(&gp, &w).unwrap() - h.0).abs() <= 0.01 + 1e-12);
                assert!((ev.traj_value(&gp, &w2).unwrap() - h.1).abs() <= 0.01 + 1e-12);
            }
        }
    }
}
