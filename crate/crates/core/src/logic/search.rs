//! Budgeted search for separating formulas, giving lower bounds on the metrics.
//!
//! Formulas are generated layer by layer in order of depth, each one built
//! from already evaluated subformulas, so evaluating a candidate costs one
//! operator application. Candidates whose value vector (over all states, or
//! over all trajectories for trajectory formulas) was already produced are
//! discarded. After the enumeration, the remaining budget goes to random
//! mutations of the current per-pair witnesses.
//!
//! The candidate stream depends only on the model, the logic, the depth, the
//! constants and the seed; `max_formulas` truncates it. Raising
//! `max_formulas` therefore never lowers any entry of the estimate.

use std::collections::HashSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::TimeGrid;
use crate::error::{Error, Result};
use crate::metrics::{PathMode, PseudometricMatrix};
use crate::process::ProcessModel;
use crate::rational::Rational;

use super::eval::{map_paths, minus_q, negate, zip_paths, Evaluator, PathValues};
use super::syntax::{Logic, PathFormula, StateFormula};

/// Candidates evaluated in parallel per batch.
const BATCH: usize = 512;

/// Resolution used to recognise duplicate value vectors.
const KEY_SCALE: f64 = (1u64 << 40) as f64;

/// Limits of a formula search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Depth of the exhaustive phase; `q` and `obs` have depth 1.
    pub max_depth: usize,
    /// Total number of candidate formulas evaluated, over both phases.
    pub max_formulas: usize,
    /// Constants are `k / rational_denominator_cap` for `0 <= k <= cap`.
    pub rational_denominator_cap: i64,
    /// Number of random mutations after the exhaustive phase.
    pub mutations: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_depth: 3, max_formulas: 20_000, rational_denominator_cap: 8, mutations: 2_000, seed: 0 }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("logic budget max_depth must be at least 1".into()));
        }
        if self.rational_denominator_cap < 1 {
            return Err(Error::InvalidConfig("logic budget rational_denominator_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// A retained state formula with its values at every state.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFormula {
    pub formula: StateFormula,
    pub values: Vec<f64>,
}

/// A retained trajectory formula with its values on every enumerated or sampled path.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPathFormula {
    pub formula: PathFormula,
    pub values: PathValues,
}

/// Everything a search produced.
#[derive(Debug, Clone)]
pub struct FormulaSearch {
    pub logic: Logic,
    /// Distinct state formulas, in generation order.
    pub state: Vec<GeneratedFormula>,
    /// Distinct trajectory formulas (trajectory logic only).
    pub path: Vec<GeneratedPathFormula>,
    pub evaluated: usize,
    /// Number of state formulas produced by the exhaustive phase.
    pub enumerated: usize,
}

/// Best separating formula for one pair of states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub pair: [usize; 2],
    pub value: f64,
    pub formula: String,
}

/// Lower bound on `lambda^c` or `l^c` with witnesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogicEstimate {
    pub logic: Logic,
    pub budget: Budget,
    #[serde(skip)]
    pub matrix: PseudometricMatrix,
    pub witnesses: Vec<Witness>,
    pub formulas_evaluated: usize,
    pub formulas_retained: usize,
}

#[derive(Debug, Clone, Copy)]
enum Cand {
    Const(Rational),
    Obs,
    Neg(usize),
    MinusQ(usize, Rational),
    Diamond(Rational, usize),
    Min(usize, usize),
    Integral(usize),
    IntegralAt(usize, Rational),
    IntegralMin(usize, Rational, usize, Rational),
    IntegralMax(usize, Rational, usize, Rational),
}

#[derive(Debug, Clone, Copy)]
enum PathCand {
    Eval(usize, Rational),
    Min(usize, usize),
    Max(usize, usize),
    MinusQ(usize, Rational),
    PlusQ(usize, Rational),
}

fn key(values: impl Iterator<Item = f64>) -> Vec<i64> {
    values.map(|v| (v * KEY_SCALE).round() as i64).collect()
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|x| (x + 1..n).map(move |y| (x, y))).collect()
}

struct Search<'e, 'a> {
    ev: &'e Evaluator<'a>,
    logic: Logic,
    budget: Budget,
    consts: Vec<Rational>,
    times: Vec<Rational>,
    state: Vec<GeneratedFormula>,
    path: Vec<GeneratedPathFormula>,
    seen_state: HashSet<Vec<i64>>,
    seen_path: HashSet<Vec<i64>>,
    evaluated: usize,
    pairs: Vec<(usize, usize)>,
    best: Vec<Option<(f64, usize)>>,
}

impl<'e, 'a> Search<'e, 'a> {
    fn new(ev: &'e Evaluator<'a>, logic: Logic, budget: Budget) -> Self {
        let d = budget.rational_denominator_cap;
        let pairs = upper_pairs(ev.num_states());
        Self {
            ev,
            logic,
            budget,
            consts: (0..=d).map(|k| Rational::new(k, d)).collect(),
            times: ev.grid().times().to_vec(),
            state: Vec::new(),
            path: Vec::new(),
            seen_state: HashSet::new(),
            seen_path: HashSet::new(),
            evaluated: 0,
            best: vec![None; pairs.len()],
            pairs,
        }
    }

    fn room(&self) -> usize {
        self.budget.max_formulas.saturating_sub(self.evaluated)
    }

    fn build_state(&self, c: Cand) -> Result<GeneratedFormula> {
        let ev = self.ev;
        let s = |i: usize| &self.state[i];
        let (formula, values) = match c {
            Cand::Const(q) => (StateFormula::Const(q), vec![crate::rational::to_f64(&q); ev.num_states()]),
            Cand::Obs => (StateFormula::Obs, ev.model().observable().values().to_vec()),
            Cand::Neg(i) => (StateFormula::neg(s(i).formula.clone()), negate(&s(i).values)),
            Cand::MinusQ(i, q) => {
                (StateFormula::minus_q(s(i).formula.clone(), q)?, minus_q(&s(i).values, crate::rational::to_f64(&q)))
            }
            Cand::Diamond(t, i) => (StateFormula::diamond(t, s(i).formula.clone())?, ev.diamond(t, &s(i).values)?),
            Cand::Min(i, j) => (
                StateFormula::min(s(i).formula.clone(), s(j).formula.clone()),
                s(i).values.iter().zip(&s(j).values).map(|(a, b)| a.min(*b)).collect(),
            ),
            Cand::Integral(p) => {
                let g = &self.path[p];
                (StateFormula::integral(g.formula.clone()), ev.integral(&g.values)?)
            }
            Cand::IntegralAt(i, t) => {
                let g = PathFormula::eval(s(i).formula.clone(), t)?;
                (StateFormula::integral(g), ev.integral(&ev.eval_at(&s(i).values, t)?)?)
            }
            Cand::IntegralMin(i, t, j, u) | Cand::IntegralMax(i, t, j, u) => {
                let (gi, gj) = (PathFormula::eval(s(i).formula.clone(), t)?, PathFormula::eval(s(j).formula.clone(), u)?);
                let (vi, vj) = (ev.eval_at(&s(i).values, t)?, ev.eval_at(&s(j).values, u)?);
                let (g, v) = if matches!(c, Cand::IntegralMin(..)) {
                    (PathFormula::min(gi, gj), zip_paths(&vi, &vj, f64::min))
                } else {
                    (PathFormula::max(gi, gj), zip_paths(&vi, &vj, f64::max))
                };
                (StateFormula::integral(g), ev.integral(&v)?)
            }
        };
        Ok(GeneratedFormula { formula, values })
    }

    fn build_path(&self, c: PathCand) -> Result<GeneratedPathFormula> {
        let ev = self.ev;
        let p = |i: usize| &self.path[i];
        let (formula, values) = match c {
            PathCand::Eval(i, t) => {
                let s = &self.state[i];
                (PathFormula::eval(s.formula.clone(), t)?, ev.eval_at(&s.values, t)?)
            }
            PathCand::Min(i, j) => {
                (PathFormula::min(p(i).formula.clone(), p(j).formula.clone()), zip_paths(&p(i).values, &p(j).values, f64::min))
            }
            PathCand::Max(i, j) => {
                (PathFormula::max(p(i).formula.clone(), p(j).formula.clone()), zip_paths(&p(i).values, &p(j).values, f64::max))
            }
            PathCand::MinusQ(i, q) => {
                let qf = crate::rational::to_f64(&q);
                (PathFormula::minus_q(p(i).formula.clone(), q)?, map_paths(&p(i).values, |v| (v - qf).max(0.0)))
            }
            PathCand::PlusQ(i, q) => {
                let qf = crate::rational::to_f64(&q);
                (PathFormula::plus_q(p(i).formula.clone(), q)?, map_paths(&p(i).values, |v| (v + qf).min(1.0)))
            }
        };
        Ok(GeneratedPathFormula { formula, values })
    }

    fn insert_state(&mut self, g: GeneratedFormula) {
        if !self.seen_state.insert(key(g.values.iter().copied())) {
            return;
        }
        let idx = self.state.len();
        for (slot, &(x, y)) in self.best.iter_mut().zip(&self.pairs) {
            let d = (g.values[x] - g.values[y]).abs();
            if slot.is_none_or(|(b, _)| d > b) {
                *slot = Some((d, idx));
            }
        }
        self.state.push(g);
    }

    fn insert_path(&mut self, g: GeneratedPathFormula) {
        if self.seen_path.insert(key(g.values.iter().flatten().copied())) {
            self.path.push(g);
        }
    }

    /// Evaluates candidates in order until the stream or the budget runs out.
    fn run_state(&mut self, cands: impl Iterator<Item = Cand>) -> Result<Range<usize>> {
        let start = self.state.len();
        let mut cands = cands.peekable();
        while self.room() > 0 && cands.peek().is_some() {
            let batch: Vec<Cand> = cands.by_ref().take(BATCH.min(self.room())).collect();
            let built = batch.par_iter().map(|&c| self.build_state(c)).collect::<Result<Vec<_>>>()?;
            for g in built {
                self.evaluated += 1;
                self.insert_state(g);
            }
        }
        Ok(start..self.state.len())
    }

    fn run_path(&mut self, cands: impl Iterator<Item = PathCand>) -> Result<Range<usize>> {
        let start = self.path.len();
        let mut cands = cands.peekable();
        while self.room() > 0 && cands.peek().is_some() {
            let batch: Vec<PathCand> = cands.by_ref().take(BATCH.min(self.room())).collect();
            let built = batch.par_iter().map(|&c| self.build_path(c)).collect::<Result<Vec<_>>>()?;
            for g in built {
                self.evaluated += 1;
                self.insert_path(g);
            }
        }
        Ok(start..self.path.len())
    }

    fn leaves(&self) -> impl Iterator<Item = Cand> {
        self.consts.clone().into_iter().map(Cand::Const).chain(std::iter::once(Cand::Obs))
    }

    fn unary(&self, layer: Range<usize>) -> impl Iterator<Item = Cand> {
        let consts: Vec<Rational> = self.consts.iter().copied().filter(|q| *q > Rational::from_integer(0)).collect();
        let times: Vec<Rational> = match self.logic {
            Logic::Lambda => self.times.iter().copied().filter(|t| *t > Rational::from_integer(0)).collect(),
            Logic::Sigma => Vec::new(),
        };
        layer.flat_map(move |i| {
            std::iter::once(Cand::Neg(i))
                .chain(consts.clone().into_iter().map(move |q| Cand::MinusQ(i, q)))
                .chain(times.clone().into_iter().map(move |t| Cand::Diamond(t, i)))
        })
    }

    fn enumerate_lambda(&mut self) -> Result<()> {
        let mut layer = self.run_state(self.leaves().collect::<Vec<_>>().into_iter())?;
        for _ in 2..=self.budget.max_depth {
            let unary: Vec<Cand> = self.unary(layer.clone()).collect();
            let binary = layer.clone().flat_map(|i| (0..i).map(move |j| Cand::Min(j, i)));
            layer = self.run_state(unary.into_iter().chain(binary))?;
            if self.room() == 0 {
                break;
            }
        }
        Ok(())
    }

    fn evals(&self, layer: Range<usize>) -> Vec<PathCand> {
        layer.flat_map(|i| self.times.iter().map(move |&t| PathCand::Eval(i, t))).collect()
    }

    fn enumerate_sigma(&mut self) -> Result<()> {
        let depth = self.budget.max_depth;
        let mut layer = self.run_state(self.leaves().collect::<Vec<_>>().into_iter())?;
        let mut path_layer = 0..0;
        if depth >= 2 {
            path_layer = self.run_path(self.evals(layer.clone()).into_iter())?;
        }
        for n in 2..=depth {
            let mut cands: Vec<Cand> = self.unary(layer.clone()).collect();
            cands.extend(path_layer.clone().map(Cand::Integral));
            layer = self.run_state(cands.into_iter())?;
            if self.room() == 0 {
                break;
            }
            if n < depth {
                let mut pc = self.evals(layer.clone());
                let consts: Vec<Rational> = self.consts.iter().copied().filter(|q| *q > Rational::from_integer(0)).collect();
                for i in path_layer.clone() {
                    for q in &consts {
                        pc.push(PathCand::MinusQ(i, *q));
                        pc.push(PathCand::PlusQ(i, *q));
                    }
                }
                let binary = path_layer.clone().flat_map(|i| (0..i).flat_map(move |j| [PathCand::Min(j, i), PathCand::Max(j, i)]));
                path_layer = self.run_path(pc.into_iter().chain(binary))?;
            }
        }
        Ok(())
    }

    fn mutation_depth(&self, c: Cand) -> usize {
        let d = |i: usize| self.state[i].formula.depth();
        match c {
            Cand::Neg(i) | Cand::MinusQ(i, _) | Cand::Diamond(_, i) | Cand::IntegralAt(i, _) => d(i) + 1,
            Cand::Min(i, j) => d(i).max(d(j)) + 1,
            Cand::IntegralMin(i, _, j, _) | Cand::IntegralMax(i, _, j, _) => d(i).max(d(j)) + 2,
            _ => usize::MAX,
        }
    }

    fn mutate(&mut self) -> Result<()> {
        if self.pairs.is_empty() || self.state.is_empty() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.budget.seed);
        let consts: Vec<Rational> = self.consts.iter().copied().filter(|q| *q > Rational::from_integer(0)).collect();
        for _ in 0..self.budget.mutations {
            if self.room() == 0 {
                break;
            }
            let pair = rng.random_range(0..self.pairs.len());
            let w = self.best[pair].map_or(0, |(_, i)| i);
            let other = rng.random_range(0..self.state.len());
            let q = consts[rng.random_range(0..consts.len())];
            let t = self.times[rng.random_range(0..self.times.len())];
            let u = self.times[rng.random_range(0..self.times.len())];
            let cand = match (self.logic, rng.random_range(0..5u8)) {
                (_, 0) => Cand::Neg(w),
                (_, 1) => Cand::MinusQ(w, q),
                (Logic::Lambda, 2) => Cand::Diamond(t, w),
                (Logic::Lambda, 3) => Cand::Min(w, other),
                (Logic::Lambda, _) => Cand::Diamond(t, other),
                (Logic::Sigma, 2) => Cand::IntegralAt(w, t),
                (Logic::Sigma, 3) => Cand::IntegralMin(w, t, other, u),
                (Logic::Sigma, _) => Cand::IntegralMax(w, t, other, u),
            };
            if matches!(cand, Cand::Diamond(t, _) if t == Rational::from_integer(0)) {
                continue;
            }
            if self.mutation_depth(cand) > self.budget.max_depth {
                continue;
            }
            let g = self.build_state(cand)?;
            self.evaluated += 1;
            self.insert_state(g);
        }
        Ok(())
    }
}

/// Runs the enumeration and mutation phases and returns every retained formula.
pub fn search_formulas(ev: &Evaluator, logic: Logic, budget: Budget) -> Result<FormulaSearch> {
    budget.validate()?;
    let mut s = Search::new(ev, logic, budget);
    match logic {
        Logic::Lambda => s.enumerate_lambda()?,
        Logic::Sigma => s.enumerate_sigma()?,
    }
    let enumerated = s.state.len();
    s.mutate()?;
    Ok(FormulaSearch { logic, state: s.state, path: s.path, evaluated: s.evaluated, enumerated })
}

/// Largest `|f(x) - f(y)|` per pair over `formulas`, with the first formula attaining it.
pub fn separation(n: usize, formulas: &[GeneratedFormula]) -> Result<(PseudometricMatrix, Vec<Witness>)> {
    let pairs = upper_pairs(n);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; pairs.len()];
    for (idx, g) in formulas.iter().enumerate() {
        for (slot, &(x, y)) in best.iter_mut().zip(&pairs) {
            let d = (g.values[x] - g.values[y]).abs();
            if slot.is_none_or(|(b, _)| d > b) {
                *slot = Some((d, idx));
            }
        }
    }
    let mut values = vec![0.0; n * n];
    let mut witnesses = Vec::new();
    for (slot, &(x, y)) in best.iter().zip(&pairs) {
        if let Some((d, idx)) = slot {
            values[x * n + y] = *d;
            values[y * n + x] = *d;
            witnesses.push(Witness { pair: [x, y], value: *d, formula: formulas[*idx].formula.to_string() });
        }
    }
    Ok((PseudometricMatrix::new(n, values)?, witnesses))
}

/// Lower bound on the logical distance from the formulas an evaluator's search finds.
pub fn estimate_with(ev: &Evaluator, logic: Logic, budget: Budget) -> Result<LogicEstimate> {
    let search = search_formulas(ev, logic, budget)?;
    let (matrix, witnesses) = separation(ev.num_states(), &search.state)?;
    Ok(LogicEstimate {
        logic,
        budget,
        matrix,
        witnesses,
        formulas_evaluated: search.evaluated,
        formulas_retained: search.state.len(),
    })
}

/// Lower bound on `lambda^c` (kernel logic) or `l^c` (trajectory logic).
pub fn estimate_logic_metric(
    logic: Logic,
    model: &ProcessModel,
    c: f64,
    grid: &TimeGrid,
    budget: Budget,
    mode: PathMode,
) -> Result<LogicEstimate> {
    let ev = Evaluator::new(model, c, grid, mode)?;
    estimate_with(&ev, logic, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::obs_metric;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn chain3() -> ProcessModel {
        let m = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
        ProcessModel::finite_chain(m, r(1, 1), vec![0.0, 0.5, 1.0]).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::uniform(r(1, 1), r(2, 1)).unwrap()
    }

    #[test]
    fn depth_one_gives_observable_distance() {
        let m = chain3();
        for logic in [Logic::Lambda, Logic::Sigma] {
            let budget = Budget { max_depth: 1, mutations: 0, ..Budget::default() };
            let est = estimate_logic_metric(logic, &m, 0.9, &grid(), budget, PathMode::Exact).unwrap();
            assert_eq!(est.matrix, obs_metric(&m));
        }
    }

    #[test]
    fn stationary_chain_witness_is_obs() {
        let m = ProcessModel::finite_chain(vec![vec![1.0, 0.0], vec![0.0, 1.0]], r(1, 1), vec![0.0, 1.0]).unwrap();
        let g = TimeGrid::uniform(r(1, 1), r(1, 1)).unwrap();
        let est = estimate_logic_metric(Logic::Lambda, &m, 0.5, &g, Budget::default(), PathMode::Exact).unwrap();
        assert_eq!(est.matrix.get(0, 1), 1.0);
        assert_eq!(est.witnesses[0].formula, "obs");
    }

    #[test]
    fn monotone_in_budget() {
        let m = chain3();
        for logic in [Logic::Lambda, Logic::Sigma] {
            let mut prev: Option<PseudometricMatrix> = None;
            for max_formulas in [5, 40, 300, 3000] {
                let budget = Budget { max_formulas, mutations: 500, ..Budget::default() };
                let est = estimate_logic_metric(logic, &m, 0.9, &grid(), budget, PathMode::Exact).unwrap();
                assert!(est.formulas_evaluated <= max_formulas);
                if let Some(p) = &prev {
                    assert!(p.dominated_by(&est.matrix, 0.0), "{logic} not monotone at {max_formulas}");
                }
                prev = Some(est.matrix);
            }
        }
    }

    #[test]
    fn deterministic_and_formulas_reparse() {
        let m = chain3();
        let budget = Budget { max_formulas: 2000, ..Budget::default() };
        let a = estimate_logic_metric(Logic::Sigma, &m, 0.9, &grid(), budget, PathMode::Exact).unwrap();
        let b = estimate_logic_metric(Logic::Sigma, &m, 0.9, &grid(), budget, PathMode::Exact).unwrap();
        assert_eq!(a, b);
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        for w in &a.witnesses {
            let f = crate::logic::parse_state(&w.formula).unwrap();
            let v = ev.state_values(&f).unwrap();
            assert!(((v[w.pair[0]] - v[w.pair[1]]).abs() - w.value).abs() < 1e-12);
        }
    }

    #[test]
    fn retained_formulas_stay_in_their_logic() {
        let m = chain3();
        let ev = Evaluator::new(&m, 0.9, &grid(), PathMode::Exact).unwrap();
        for logic in [Logic::Lambda, Logic::Sigma] {
            let s = search_formulas(&ev, logic, Budget { max_formulas: 3000, ..Budget::default() }).unwrap();
            for g in &s.state {
                assert_ne!(g.formula.logic().unwrap(), Some(if logic == Logic::Lambda { Logic::Sigma } else { Logic::Lambda }));
                assert!(g.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
