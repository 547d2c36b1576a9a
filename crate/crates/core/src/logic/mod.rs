//! Real-valued modal logics whose formulas bound the behavioural metrics from below.
//!
//! The kernel logic evaluates `<t> f` as `c^t` times the expectation of `f`
//! under `P_t(x)`. The trajectory logic evaluates `int g` as the expectation
//! of a path formula `g` under the path law from `x`, where `f @ t` reads
//! `c^t f(omega(t))`. Every formula is non-expansive for the matching
//! fixpoint metric, so the largest separation `|f(x) - f(y)|` found by
//! [`estimate_logic_metric`] is a lower bound for it.

mod eval;
mod gadget;
mod search;
mod syntax;

pub use eval::{eval_state, eval_traj, Evaluator, PathValues};
pub use gadget::{gadget, gadget_constants, gadget_path, GadgetConstants};
pub use search::{
    estimate_logic_metric, estimate_with, search_formulas, separation, Budget, FormulaSearch, GeneratedFormula,
    GeneratedPathFormula, LogicEstimate, Witness,
};
pub use syntax::{parse, parse_in, parse_lines, parse_state, Formula, Logic, PathFormula, StateFormula};
