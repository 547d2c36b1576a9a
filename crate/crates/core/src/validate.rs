//! Invariant suite run against a configured instance.

use serde::Serialize;

use crate::config::ResolvedRun;
use crate::error::{Error, Result};
use crate::logic::{estimate_with, Evaluator, Logic};
use crate::metrics::{
    apply_f, check_ordering, iterate_to_fixpoint, obs_metric, FixpointReport, Functional, PathMode, Prepared,
    PseudometricMatrix, AXIOM_TOL,
};
use crate::process::ProcessModel;
use crate::rational::display;
use crate::transport::{solve_ot, stable_sum, verify_duality, MASS_TOL};

/// Tolerance of the `F <= G` and logic-bound comparisons, on top of sampling noise.
pub const ORDER_TOL: f64 = 1e-6;

/// Semigroup tolerance for finite chains.
pub const SEMIGROUP_TOL: f64 = 1e-10;

/// Duality gap tolerance of the sampled transport problems.
pub const DUALITY_TOL: f64 = 1e-9;

/// State pairs sampled for the transport checks.
const DUALITY_PAIRS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub max_violation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, max_violation: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let max_violation = max_violation.max(0.0);
        Self { name: name.into(), pass: max_violation <= tolerance, max_violation, tolerance, detail: detail.into() }
    }

    fn flag(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, max_violation: if pass { 0.0 } else { 1.0 }, tolerance: 0.0, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        let violations: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
        Self { pass: violations.is_empty(), checks, violations }
    }

    /// Report for a configuration rejected because its process loses mass.
    pub fn honesty_failure(err: &Error) -> Self {
        Self::from_checks(vec![Check::flag("honesty", false, err.to_string())])
    }
}

fn kernel_checks(model: &ProcessModel, run: &ResolvedRun, checks: &mut Vec<Check>) -> Result<()> {
    let times = run.grid.times();
    let table = model.kernel_table(times)?;
    let n = model.num_states();
    let (mut mass, mut identity) = (0.0f64, 0.0f64);
    for (k, t) in times.iter().enumerate() {
        for x in 0..n {
            let d = table.get(k, x);
            mass = mass.max((stable_sum(d.weights().iter().copied()) - 1.0).abs());
            if *t.numer() == 0 {
                identity = identity.max((d.mass_at(x) - 1.0).abs());
            }
        }
    }
    checks.push(Check::new("honesty", mass, MASS_TOL, format!("kernel mass at {} grid times", times.len())));
    checks.push(Check::new("identity-at-zero", identity, MASS_TOL, "P_0 is the identity"));
    if model.is_finite_chain() {
        let steps: Vec<_> = times.iter().skip(1).take(3).copied().collect();
        let mut worst = 0.0f64;
        for s in &steps {
            for t in &steps {
                let whole = model.kernel_row_all(s + t)?;
                let first = model.kernel_row_all(*s)?;
                let second = model.kernel_row_all(*t)?;
                for x in 0..n {
                    let mut composed = vec![0.0; n];
                    for (y, w) in first[x].iter() {
                        for (z, v) in second[y].iter() {
                            composed[z] += w * v;
                        }
                    }
                    let direct = whole[x].to_dense(n);
                    for z in 0..n {
                        worst = worst.max((composed[z] - direct[z]).abs());
                    }
                }
            }
        }
        checks.push(Check::new("semigroup", worst, SEMIGROUP_TOL, format!("P_(s+t) = P_s P_t for {} step pairs", steps.len().pow(2))));
    }
    let mut base = 0.0f64;
    let space = model.space();
    for x in 0..n {
        for y in 0..n {
            let d = space.base_metric(x, y);
            base = base.max((d - space.base_metric(y, x)).abs()).max(d - 1.0).max(-d);
            for z in 0..n {
                base = base.max(d - space.base_metric(x, z) - space.base_metric(z, y));
            }
        }
    }
    checks.push(Check::new("base-metric", base, AXIOM_TOL, "base metric is a 1-bounded pseudometric"));
    Ok(())
}

fn fixpoint_checks(name: &str, report: &FixpointReport, extra: &PseudometricMatrix, eps: f64, checks: &mut Vec<Check>) {
    let bad = report.iterates.iter().position(|m| m.validate(AXIOM_TOL).is_err());
    checks.push(Check::flag(
        format!("{name}-iterates-pseudometric"),
        bad.is_none(),
        bad.map_or_else(|| format!("{} iterates", report.iterates.len()), |k| format!("iterate {k} violates the axioms")),
    ));
    let mut expansive = 0.0f64;
    for w in report.iterates.windows(2) {
        expansive = expansive.max(w[0].max_excess_over(&w[1]).0);
    }
    expansive = expansive.max(report.final_matrix().max_excess_over(extra).0);
    checks.push(Check::new(format!("{name}-expansive"), expansive, AXIOM_TOL, "m <= Phi(m) along the iteration"));
    checks.push(Check::flag(
        format!("{name}-converged"),
        report.converged,
        format!("{} applications, last change {:.3e}", report.iterations(), report.residual),
    ));
    let change = extra.sup_distance(report.final_matrix());
    checks.push(Check::new(format!("{name}-fixpoint"), change, 2.0 * eps, "one more application after convergence"));
    let first = &report.iterates[1.min(report.iterates.len() - 1)];
    let (mono, _) = first.max_excess_over(extra);
    checks.push(Check::new(format!("{name}-monotone"), mono, AXIOM_TOL, "obs metric <= fixpoint implies Phi(obs) <= Phi(fixpoint)"));
}

fn duality_check(model: &ProcessModel, run: &ResolvedRun, m: &PseudometricMatrix) -> Result<Check> {
    let n = model.num_states();
    let times = run.grid.times();
    let picks: Vec<_> = [times.get(1), times.get(times.len() / 2)].into_iter().flatten().copied().collect();
    let cost = m.to_cost();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|x| (x + 1..n).map(move |y| (x, y))).collect();
    let stride = (pairs.len() / DUALITY_PAIRS).max(1);
    let (mut gap, mut lip, mut marg, mut count) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for t in &picks {
        let rows = model.kernel_row_all(*t)?;
        for &(x, y) in pairs.iter().step_by(stride) {
            let res = solve_ot(&rows[x], &rows[y], &cost)?;
            let rep = verify_duality(&res, &rows[x], &rows[y], &cost, DUALITY_TOL);
            gap = gap.max(rep.gap).max((rep.primal - rep.coupling_cost).abs());
            lip = lip.max(rep.max_lipschitz_violation);
            marg = marg.max(rep.max_marginal_error);
            count += 1;
        }
    }
    let times_text: Vec<String> = picks.iter().map(|t| display(t).to_string()).collect();
    Ok(Check::new(
        "transport-duality",
        gap.max(lip).max(marg),
        DUALITY_TOL,
        format!(
            "{count} solves at t in [{}]: gap {gap:.2e}, Lipschitz {lip:.2e}, marginals {marg:.2e}",
            times_text.join(", ")
        ),
    ))
}

fn worst_at(at: Option<(usize, usize)>) -> String {
    at.map(|(x, y)| format!(", worst at ({x}, {y})")).unwrap_or_default()
}

/// Runs every invariant on the configured instance.
pub fn validate_run(run: &ResolvedRun) -> Result<ValidationReport> {
    let model = &run.model;
    let cfg = &run.config;
    let c = cfg.discount;
    let eps = cfg.epsilon_fixpoint;
    let mut checks = Vec::new();
    kernel_checks(model, run, &mut checks)?;

    let mut fixpoints: Vec<(Functional, FixpointReport, PseudometricMatrix)> = Vec::new();
    for functional in cfg.functional.functionals() {
        let report = iterate_to_fixpoint(functional, model, &run.grid, c, eps, cfg.max_iter, run.mode)?;
        let extra = Prepared::new(functional, model, &run.grid, c, run.mode)?.apply(report.final_matrix())?;
        fixpoint_checks(&functional.to_string(), &report, &extra, eps, &mut checks);
        fixpoints.push((functional, report, extra));
    }
    if let Some((_, f, _)) = fixpoints.iter().find(|(k, ..)| *k == Functional::F) {
        checks.push(duality_check(model, run, f.final_matrix())?);
    }
    let noise = fixpoints.iter().filter_map(|(_, r, _)| r.noise_estimate).fold(0.0, f64::max);
    if let [(_, f, _), (_, g, _)] = fixpoints.as_slice() {
        let tol = ORDER_TOL + noise;
        let ord = check_ordering(f.final_matrix(), g.final_matrix(), tol)?;
        checks.push(Check::new("ordering", ord.max_violation, tol, format!("F fixpoint <= G fixpoint{}", worst_at(ord.location))));
        let obs = obs_metric(model);
        let fo = apply_f(&obs, model, &run.grid, c)?;
        let go = &g.iterates[1.min(g.iterates.len() - 1)];
        let step = check_ordering(&fo, go, tol)?;
        checks.push(Check::new("F-below-G", step.max_violation, tol, "F(obs) <= G(obs)"));
    }
    for logic in &cfg.logic.logics {
        let functional = match logic {
            Logic::Lambda => Functional::F,
            Logic::Sigma => Functional::G,
        };
        let Some((_, report, _)) = fixpoints.iter().find(|(k, ..)| *k == functional) else { continue };
        let ev = Evaluator::new(model, c, &run.grid, run.mode)?;
        let est = estimate_with(&ev, *logic, run.budget())?;
        let tol = ORDER_TOL + report.noise_estimate.unwrap_or(0.0)
            + if matches!(run.mode, PathMode::MonteCarlo { .. }) && *logic == Logic::Sigma { noise } else { 0.0 };
        let bound = bound_tolerance(report, c, run) + tol;
        let (excess, at) = est.matrix.max_excess_over(report.final_matrix());
        checks.push(Check::new(
            format!("logic-bound-{logic}"),
            excess,
            bound,
            format!("{} formulas{}", est.formulas_evaluated, worst_at(at)),
        ));
    }
    Ok(ValidationReport::from_checks(checks))
}

/// How far the computed fixpoint may sit below the exact one, from its last change.
///
/// One application of either functional contracts distances that persist
/// past the first grid step by `c^step`, so stopping after a change of
/// `eps` leaves at most `eps c^step / (1 - c^step)` to go.
pub fn bound_tolerance(report: &FixpointReport, c: f64, run: &ResolvedRun) -> f64 {
    let step = run.grid.times().get(1).map_or(1.0, crate::rational::to_f64);
    let k = c.powf(step);
    report.residual * k / (1.0 - k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn chain_instance_passes() {
        let text = r#"{
            "process": { "kind": "finite-chain", "matrix": [[0.5,0.5,0],[0,0.5,0.5],[0.5,0,0.5]], "observable": [0,0.5,1] },
            "discount": 0.8, "epsilon_time": 0.2, "functional": "both",
            "logic": { "logics": ["lambda", "sigma"], "max_formulas": 3000 }
        }"#;
        let run = RunConfig::from_json(text).unwrap().resolve().unwrap();
        let report = validate_run(&run).unwrap();
        assert!(report.pass, "{:#?}", report.violations);
        for name in ["honesty", "semigroup", "F-fixpoint", "G-fixpoint", "ordering", "transport-duality", "logic-bound-sigma"] {
            assert!(report.checks.iter().any(|c| c.name == name), "missing {name}");
        }
    }
}
