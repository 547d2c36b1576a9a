//! Pseudometric matrices and the two transport functionals on them.
//!
//! `F` lifts a state pseudometric through optimal transport between the
//! time-`t` marginals and takes the discounted maximum over the time grid.
//! `G` lifts it to trajectories with the discounted uniform cost and
//! transports between whole path laws. Both are iterated upward from the
//! observable distance until the sup-norm change is below tolerance.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{check_discount, TimeGrid};
use crate::error::{Error, Result};
use crate::process::{enumerate_trajectories, sample_trajectories, KernelTable, ProcessModel, TrajectoryEnsemble, ENUMERATION_CAP};
use crate::rational::display;
use crate::transport::{transport_cost_warm, CostMatrix, WarmStart};

/// Tolerance for pseudometric axioms.
pub const AXIOM_TOL: f64 = 1e-9;

/// Symmetric `[0,1]`-valued matrix with zero diagonal satisfying the triangle inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudometricMatrix {
    n: usize,
    values: Vec<f64>,
}

impl PseudometricMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::unchecked(n, values)?;
        m.validate(AXIOM_TOL)?;
        Ok(m)
    }

    /// Shape check only; the caller vouches for the axioms.
    pub fn unchecked(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{} entries for {n} states", values.len())));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(n, (0..n * n).map(|k| f(k / n, k % n)).collect())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// First violated axiom, if any, at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.n;
        for x in 0..n {
            if self.get(x, x).abs() > tol {
                return Err(Error::InvalidPseudometric(format!("diagonal entry ({x},{x}) = {}", self.get(x, x))));
            }
            for y in 0..n {
                let v = self.get(x, y);
                if !(v >= -tol && v <= 1.0 + tol) {
                    return Err(Error::InvalidPseudometric(format!("entry ({x},{y}) = {v} outside [0,1]")));
                }
                if (v - self.get(y, x)).abs() > tol {
                    return Err(Error::InvalidPseudometric(format!("asymmetric at ({x},{y})")));
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                let direct = self.get(x, y);
                for z in 0..n {
                    if direct > self.get(x, z) + self.get(z, y) + tol {
                        return Err(Error::InvalidPseudometric(format!(
                            "triangle inequality fails for ({x},{y}) through {z}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest `self - other` and where it occurs.
    pub fn max_excess_over(&self, other: &Self) -> (f64, Option<(usize, usize)>) {
        let mut worst = (0.0, None);
        for x in 0..self.n {
            for y in 0..self.n {
                let d = self.get(x, y) - other.get(x, y);
                if d > worst.0 {
                    worst = (d, Some((x, y)));
                }
            }
        }
        worst
    }

    /// Entrywise `self <= other + tol`.
    pub fn dominated_by(&self, other: &Self, tol: f64) -> bool {
        self.n == other.n && self.values.iter().zip(&other.values).all(|(a, b)| *a <= *b + tol)
    }

    pub fn to_cost(&self) -> CostMatrix {
        let values = self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        CostMatrix::new(self.n, self.n, values).expect("pseudometric entries lie in [0,1]")
    }

    /// CSV with state labels as row and column headers, 12 significant digits.
    pub fn write_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::Shape(format!("{} labels for {} states", labels.len(), self.n)));
        }
        let io = |e: csv::Error| Error::Io(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(labels.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for x in 0..self.n {
            let mut row = vec![labels[x].clone()];
            row.extend((0..self.n).map(|y| sig_digits(self.get(x, y), 12)));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(Error::from)
    }

    /// Reads a matrix written by [`Self::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Self)> {
        let io = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let labels: Vec<String> = r.headers().map_err(io)?.iter().skip(1).map(str::to_owned).collect();
        let n = labels.len();
        let mut values = Vec::with_capacity(n * n);
        for rec in r.records() {
            let rec = rec.map_err(io)?;
            for cell in rec.iter().skip(1) {
                values.push(cell.trim().parse::<f64>().map_err(|e| Error::InvalidConfig(format!("csv value: {e}")))?);
            }
        }
        Ok((labels, Self::new(n, values)?))
    }
}

/// Formats `v` with `digits` significant digits, trailing zeros trimmed.
pub fn sig_digits(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { format!("{v}") };
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).clamp(0, 40) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `|obs(x) - obs(y)|`.
pub fn obs_metric(model: &ProcessModel) -> PseudometricMatrix {
    let obs = model.observable().values();
    let n = obs.len();
    PseudometricMatrix { n, values: (0..n * n).map(|k| (obs[k / n] - obs[k % n]).abs()).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Functional {
    F,
    G,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::F => "F",
            Functional::G => "G",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PathMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl fmt::Display for PathMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathMode::Exact => f.write_str("exact"),
            PathMode::MonteCarlo { samples, .. } => write!(f, "mc:{samples}"),
        }
    }
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|x| (x + 1..n).map(move |y| (x, y))).collect()
}

fn symmetric_from_pairs(n: usize, pairs: &[(usize, usize)], values: &[f64]) -> PseudometricMatrix {
    let mut out = vec![0.0; n * n];
    for (&(x, y), &v) in pairs.iter().zip(values) {
        let v = v.clamp(0.0, 1.0);
        out[x * n + y] = v;
        out[y * n + x] = v;
    }
    PseudometricMatrix { n, values: out }
}

/// `F_c` prepared for a model and time grid: kernels and discounts are computed once.
#[derive(Debug, Clone)]
pub struct KernelFunctional {
    kernels: KernelTable,
    discounts: Vec<f64>,
    n: usize,
}

impl KernelFunctional {
    pub fn new(model: &ProcessModel, grid: &TimeGrid, c: f64) -> Result<Self> {
        check_discount(c)?;
        Ok(Self { kernels: model.kernel_table(grid.times())?, discounts: grid.discounts(c), n: model.num_states() })
    }

    /// Discounted transport term `c^t W(m)(P_t x, P_t y)` at grid index `k`.
    pub fn term(&self, cost: &CostMatrix, k: usize, x: usize, y: usize, warm: &mut WarmStart) -> Result<f64> {
        let (px, py) = (self.kernels.get(k, x), self.kernels.get(k, y));
        if px == py {
            return Ok(0.0);
        }
        Ok(self.discounts[k] * transport_cost_warm(px, py, cost, warm)?)
    }

    pub fn apply(&self, m: &PseudometricMatrix) -> Result<PseudometricMatrix> {
        self.apply_warm(m, &mut WarmCache::default())
    }

    /// Applies `F`, reusing optimal bases from earlier applications stored in `cache`.
    pub fn apply_warm(&self, m: &PseudometricMatrix, cache: &mut WarmCache) -> Result<PseudometricMatrix> {
        if m.len() != self.n {
            return Err(Error::Shape(format!("matrix over {} states, model has {}", m.len(), self.n)));
        }
        let cost = m.to_cost();
        let top = m.max_entry();
        let pairs = upper_pairs(self.n);
        cache.resize(pairs.len(), self.discounts.len());
        let values = pairs
            .par_iter()
            .zip(cache.slots.par_iter_mut())
            .map(|(&(x, y), slots)| {
                // Bounds from the previous application: its duals stay feasible since the
                // iterates only grow, and its plans stay feasible since the kernels are fixed.
                let bounds: Vec<Option<(f64, f64)>> = (0..self.discounts.len())
                    .map(|k| slots[k].bounds(self.kernels.get(k, x), self.kernels.get(k, y), &cost))
                    .collect();
                let mut best = bounds
                    .iter()
                    .zip(&self.discounts)
                    .filter_map(|(b, d)| b.map(|(lo, _)| d * lo))
                    .fold(0.0f64, f64::max);
                for k in 0..self.discounts.len() {
                    // Remaining terms are bounded by c^t * max m.
                    if self.discounts[k] * top <= best {
                        break;
                    }
                    if bounds[k].is_some_and(|(_, hi)| self.discounts[k] * hi <= best) {
                        continue;
                    }
                    best = best.max(self.term(&cost, k, x, y, &mut slots[k])?);
                }
                Ok(best)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(symmetric_from_pairs(self.n, &pairs, &values))
    }

    pub fn kernels(&self) -> &KernelTable {
        &self.kernels
    }
}

/// Warm-start bases per state pair (and per time for `F`).
#[derive(Debug, Clone, Default)]
pub struct WarmCache {
    slots: Vec<Vec<WarmStart>>,
}

impl WarmCache {
    fn resize(&mut self, pairs: usize, per_pair: usize) {
        if self.slots.len() != pairs || self.slots.first().is_some_and(|s| s.len() != per_pair) {
            self.slots = vec![vec![WarmStart::default(); per_pair]; pairs];
        }
    }
}

/// Trajectory ensembles per start state for `G_c`.
#[derive(Debug, Clone)]
pub struct PathFunctional {
    ensembles: Vec<TrajectoryEnsemble>,
    discounts: Vec<f64>,
    n: usize,
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Path ensembles from every state, exact or sampled.
pub fn ensembles_for(model: &ProcessModel, grid: &TimeGrid, mode: PathMode) -> Result<Vec<TrajectoryEnsemble>> {
    (0..model.num_states())
        .map(|x| match mode {
            PathMode::Exact => enumerate_trajectories(model, x, grid.times(), ENUMERATION_CAP),
            PathMode::MonteCarlo { samples, seed } => {
                sample_trajectories(model, x, grid.times(), samples, derive_seed(seed, x as u64))
            }
        })
        .collect()
}

impl PathFunctional {
    pub fn new(model: &ProcessModel, grid: &TimeGrid, c: f64, mode: PathMode) -> Result<Self> {
        check_discount(c)?;
        Ok(Self { ensembles: ensembles_for(model, grid, mode)?, discounts: grid.discounts(c), n: model.num_states() })
    }

    pub fn ensembles(&self) -> &[TrajectoryEnsemble] {
        &self.ensembles
    }

    /// `U_c(m)(a, b) = max_k c^{t_k} m(a_k, b_k)`.
    pub fn uniform_cost(&self, m: &PseudometricMatrix, a: &[usize], b: &[usize]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.discounts)
            .map(|((&p, &q), d)| d * m.get(p, q))
            .fold(0.0, f64::max)
    }

    /// Cost matrix `U_c(m)` between the ensembles from `x` and from `y`.
    pub fn pair_cost(&self, m: &PseudometricMatrix, x: usize, y: usize) -> Result<CostMatrix> {
        let (ex, ey) = (&self.ensembles[x], &self.ensembles[y]);
        CostMatrix::from_fn(ex.len(), ey.len(), |i, j| {
            self.uniform_cost(m, &ex.trajectories()[i], &ey.trajectories()[j]).clamp(0.0, 1.0)
        })
    }

    pub fn pair(&self, m: &PseudometricMatrix, x: usize, y: usize, warm: &mut WarmStart) -> Result<f64> {
        let cost = self.pair_cost(m, x, y)?;
        let (ex, ey) = (&self.ensembles[x], &self.ensembles[y]);
        transport_cost_warm(&ex.as_distribution(), &ey.as_distribution(), &cost, warm)
    }

    pub fn apply(&self, m: &PseudometricMatrix) -> Result<PseudometricMatrix> {
        self.apply_warm(m, &mut WarmCache::default())
    }

    pub fn apply_warm(&self, m: &PseudometricMatrix, cache: &mut WarmCache) -> Result<PseudometricMatrix> {
        if m.len() != self.n {
            return Err(Error::Shape(format!("matrix over {} states, model has {}", m.len(), self.n)));
        }
        let pairs = upper_pairs(self.n);
        cache.resize(pairs.len(), 1);
        let values = pairs
            .par_iter()
            .zip(cache.slots.par_iter_mut())
            .map(|(&(x, y), slots)| self.pair(m, x, y, &mut slots[0]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(symmetric_from_pairs(self.n, &pairs, &values))
    }
}

pub fn apply_f(m: &PseudometricMatrix, model: &ProcessModel, grid: &TimeGrid, c: f64) -> Result<PseudometricMatrix> {
    KernelFunctional::new(model, grid, c)?.apply(m)
}

pub fn apply_g(
    m: &PseudometricMatrix,
    model: &ProcessModel,
    grid: &TimeGrid,
    c: f64,
    mode: PathMode,
) -> Result<PseudometricMatrix> {
    PathFunctional::new(model, grid, c, mode)?.apply(m)
}

/// Half-width of the range of `G(m)` over five independent sample seeds, maximized over pairs.
pub fn monte_carlo_noise(
    m: &PseudometricMatrix,
    model: &ProcessModel,
    grid: &TimeGrid,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let runs = (0..5u64)
        .map(|k| apply_g(m, model, grid, c, PathMode::MonteCarlo { samples, seed: derive_seed(seed, 1_000 + k) }))
        .collect::<Result<Vec<_>>>()?;
    let n = m.len();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            let vals = runs.iter().map(|r| r.get(x, y));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            worst = worst.max(0.5 * (hi - lo));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixpointConfig {
    pub functional: Functional,
    pub discount: f64,
    pub times: Vec<String>,
    pub epsilon_fix: f64,
    pub max_iter: usize,
    pub path_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixpointReport {
    pub config: FixpointConfig,
    /// `m_0, m_1, ..., m_N`.
    #[serde(skip)]
    pub iterates: Vec<PseudometricMatrix>,
    /// Sup-norm change of each application.
    pub deltas: Vec<f64>,
    /// Last sup-norm change, `|Phi(m_{N-1}) - m_{N-1}|`.
    pub residual: f64,
    pub converged: bool,
    /// Whether every iterate dominates its predecessor within the axiom tolerance.
    pub monotone: bool,
    /// Sampling noise estimate of the final matrix (Monte Carlo mode only).
    pub noise_estimate: Option<f64>,
}

impl FixpointReport {
    pub fn final_matrix(&self) -> &PseudometricMatrix {
        self.iterates.last().expect("iteration starts from the observable distance")
    }

    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    /// Report JSON including the final matrix.
    pub fn to_json(&self, labels: &[String]) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report is serializable");
        let m = self.final_matrix();
        let rows: Vec<Vec<f64>> = (0..m.len()).map(|x| (0..m.len()).map(|y| m.get(x, y)).collect()).collect();
        v["iterations"] = serde_json::json!(self.iterations());
        v["labels"] = serde_json::json!(labels);
        v["final_matrix"] = serde_json::json!(rows);
        v
    }
}

/// Either functional, prepared for repeated application with warm starts.
pub struct Prepared {
    kind: PreparedKind,
    cache: WarmCache,
}

enum PreparedKind {
    F(KernelFunctional),
    G(PathFunctional),
}

impl Prepared {
    pub fn new(functional: Functional, model: &ProcessModel, grid: &TimeGrid, c: f64, mode: PathMode) -> Result<Self> {
        let kind = match functional {
            Functional::F => PreparedKind::F(KernelFunctional::new(model, grid, c)?),
            Functional::G => PreparedKind::G(PathFunctional::new(model, grid, c, mode)?),
        };
        Ok(Self { kind, cache: WarmCache::default() })
    }

    pub fn apply(&mut self, m: &PseudometricMatrix) -> Result<PseudometricMatrix> {
        match &self.kind {
            PreparedKind::F(f) => f.apply_warm(m, &mut self.cache),
            PreparedKind::G(g) => g.apply_warm(m, &mut self.cache),
        }
    }
}

/// Iterates `functional` upward from the observable distance.
pub fn iterate_to_fixpoint(
    functional: Functional,
    model: &ProcessModel,
    grid: &TimeGrid,
    c: f64,
    epsilon_fix: f64,
    max_iter: usize,
    mode: PathMode,
) -> Result<FixpointReport> {
    check_discount(c)?;
    if !(epsilon_fix > 0.0) {
        return Err(Error::InvalidTolerance(format!("epsilon_fix {epsilon_fix} must be positive")));
    }
    let mut prepared = Prepared::new(functional, model, grid, c, mode)?;
    let mut iterates = vec![obs_metric(model)];
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut monotone = true;
    for _ in 0..max_iter {
        let current = iterates.last().expect("nonempty");
        let next = prepared.apply(current)?;
        let delta = next.sup_distance(current);
        monotone &= current.dominated_by(&next, AXIOM_TOL);
        deltas.push(delta);
        iterates.push(next);
        if delta <= epsilon_fix {
            converged = true;
            break;
        }
    }
    let noise_estimate = match (functional, mode) {
        (Functional::G, PathMode::MonteCarlo { samples, seed }) => {
            let last = iterates.last().expect("nonempty");
            Some(monte_carlo_noise(last, model, grid, c, samples, seed)?)
        }
        _ => None,
    };
    let residual = deltas.last().copied().unwrap_or(0.0);
    Ok(FixpointReport {
        config: FixpointConfig {
            functional,
            discount: c,
            times: grid.times().iter().map(|t| display(t).to_string()).collect(),
            epsilon_fix,
            max_iter,
            path_mode: mode.to_string(),
        },
        iterates,
        deltas,
        residual,
        converged,
        monotone,
        noise_estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub pass: bool,
    pub max_violation: f64,
    pub location: Option<(usize, usize)>,
    pub tolerance: f64,
}

/// Checks `lower <= upper` entrywise within `tol`.
pub fn check_ordering(lower: &PseudometricMatrix, upper: &PseudometricMatrix, tol: f64) -> Result<OrderingReport> {
    if lower.len() != upper.len() {
        return Err(Error::Shape("ordering check needs matrices of the same size".into()));
    }
    let (max_violation, location) = lower.max_excess_over(upper);
    Ok(OrderingReport { pass: max_violation <= tol, max_violation, location, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_time_grid;
    use crate::rational::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn grid(times: &[i64]) -> TimeGrid {
        let ts: Vec<Rational> = times.iter().map(|&t| r(t, 1)).collect();
        let h = *ts.last().unwrap();
        TimeGrid::from_times(ts, h).unwrap()
    }

    fn stationary() -> ProcessModel {
        ProcessModel::finite_chain(vec![vec![1.0, 0.0], vec![0.0, 1.0]], r(1, 1), vec![0.0, 1.0]).unwrap()
    }

    fn mixing() -> ProcessModel {
        ProcessModel::finite_chain(vec![vec![0.5, 0.5], vec![0.5, 0.5]], r(1, 1), vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn obs_metric_examples() {
        let constant = ProcessModel::finite_chain(vec![vec![1.0, 0.0], vec![0.0, 1.0]], r(1, 1), vec![0.3, 0.3]).unwrap();
        assert_eq!(obs_metric(&constant), PseudometricMatrix::zeros(2));

        let indicator = ProcessModel::finite_chain(vec![vec![1.0 / 3.0; 3]; 3], r(1, 1), vec![0.0, 1.0, 0.0]).unwrap();
        let m = obs_metric(&indicator);
        assert_eq!((m.get(0, 1), m.get(1, 2), m.get(0, 2)), (1.0, 1.0, 0.0));

        let linear = ProcessModel::finite_chain(vec![vec![1.0 / 3.0; 3]; 3], r(1, 1), vec![0.0, 0.25, 1.0]).unwrap();
        let m = obs_metric(&linear);
        assert_eq!((m.get(0, 1), m.get(0, 2), m.get(1, 2)), (0.25, 1.0, 0.75));
        m.validate(0.0).unwrap();
    }

    #[test]
    fn pseudometric_validation() {
        assert!(PseudometricMatrix::new(2, vec![0.0, 0.5, 0.4, 0.0]).is_err());
        assert!(PseudometricMatrix::new(2, vec![0.1, 0.5, 0.5, 0.0]).is_err());
        assert!(PseudometricMatrix::new(3, vec![0.0, 0.1, 0.9, 0.1, 0.0, 0.1, 0.9, 0.1, 0.0]).is_err());
        assert!(PseudometricMatrix::new(2, vec![0.0, 1.5, 1.5, 0.0]).is_err());
        assert!(PseudometricMatrix::new(2, vec![0.0, 0.5, 0.5, 0.0]).is_ok());
    }

    #[test]
    fn f_of_zero_is_zero() {
        let g = grid(&[0, 1, 2]);
        let out = apply_f(&PseudometricMatrix::zeros(2), &mixing(), &g, 0.5).unwrap();
        assert_eq!(out, PseudometricMatrix::zeros(2));
        let out = apply_g(&PseudometricMatrix::zeros(2), &mixing(), &g, 0.5, PathMode::Exact).unwrap();
        assert_eq!(out, PseudometricMatrix::zeros(2));
    }

    #[test]
    fn identical_kernels_give_zero_beyond_time_zero() {
        // From t = 1 on both states have the uniform law, so only t = 0 contributes.
        let m = PseudometricMatrix::new(2, vec![0.0, 0.3, 0.3, 0.0]).unwrap();
        let f = KernelFunctional::new(&mixing(), &grid(&[0, 1, 2]), 0.5).unwrap();
        let cost = m.to_cost();
        assert_eq!(f.term(&cost, 1, 0, 1, &mut WarmStart::default()).unwrap(), 0.0);
        assert_eq!(f.term(&cost, 2, 0, 1, &mut WarmStart::default()).unwrap(), 0.0);
        assert_eq!(f.apply(&m).unwrap().get(0, 1), 0.3);
    }

    #[test]
    fn stationary_chain_f_example() {
        let out = apply_f(&obs_metric(&stationary()), &stationary(), &grid(&[0, 1]), 0.5).unwrap();
        assert_eq!(out.get(0, 1), 1.0);
    }

    #[test]
    fn single_time_g_is_the_input() {
        let m = PseudometricMatrix::new(2, vec![0.0, 0.4, 0.4, 0.0]).unwrap();
        let g = TimeGrid::from_times(vec![r(0, 1)], r(0, 1)).unwrap();
        assert_eq!(apply_g(&m, &mixing(), &g, 0.5, PathMode::Exact).unwrap(), m);
        assert_eq!(apply_f(&m, &mixing(), &g, 0.5).unwrap(), m);
    }

    #[test]
    fn mixing_chain_g_example() {
        let m = obs_metric(&mixing());
        let out = apply_g(&m, &mixing(), &grid(&[0, 1]), 0.5, PathMode::Exact).unwrap();
        assert_eq!(out.get(0, 1), 1.0);
    }

    #[test]
    fn fixpoint_of_constant_observable() {
        let model = ProcessModel::finite_chain(vec![vec![0.2, 0.8], vec![0.6, 0.4]], r(1, 1), vec![0.5, 0.5]).unwrap();
        let g = build_time_grid(0.5, 0.01, r(1, 1)).unwrap();
        for functional in [Functional::F, Functional::G] {
            let rep = iterate_to_fixpoint(functional, &model, &g, 0.5, 1e-6, 100, PathMode::Exact).unwrap();
            assert!(rep.converged);
            assert_eq!(rep.iterations(), 1);
            assert_eq!(rep.final_matrix(), &PseudometricMatrix::zeros(2));
        }
    }

    #[test]
    fn fixpoint_of_stationary_chain() {
        let rep = iterate_to_fixpoint(Functional::F, &stationary(), &grid(&[0, 1]), 0.5, 1e-6, 100, PathMode::Exact).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterates.len(), 2);
        assert_eq!(rep.final_matrix().get(0, 1), 1.0);
    }

    #[test]
    fn larger_discount_gives_larger_fixpoint() {
        let model =
            ProcessModel::finite_chain(vec![vec![0.9, 0.1, 0.0], vec![0.1, 0.8, 0.1], vec![0.0, 0.2, 0.8]], r(1, 1), vec![
                0.0, 0.5, 1.0,
            ])
            .unwrap();
        let g = grid(&[0, 1, 2, 3, 4, 5, 6]);
        let low = iterate_to_fixpoint(Functional::F, &model, &g, 0.5, 1e-9, 200, PathMode::Exact).unwrap();
        let high = iterate_to_fixpoint(Functional::F, &model, &g, 0.9, 1e-9, 200, PathMode::Exact).unwrap();
        assert!(low.final_matrix().dominated_by(high.final_matrix(), 1e-9));
    }

    #[test]
    fn ordering_reports() {
        let a = PseudometricMatrix::new(2, vec![0.0, 0.4, 0.4, 0.0]).unwrap();
        let rep = check_ordering(&a, &a, 0.0).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.max_violation, 0.0);
        let b = PseudometricMatrix::new(2, vec![0.0, 0.3, 0.3, 0.0]).unwrap();
        let rep = check_ordering(&a, &b, 1e-6).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.location, Some((0, 1)));
        assert!(check_ordering(&a, &b, 0.2).unwrap().pass);
    }

    #[test]
    fn monte_carlo_noise_is_within_tolerance_contract() {
        let model = ProcessModel::finite_chain(vec![vec![0.7, 0.3], vec![0.4, 0.6]], r(1, 1), vec![0.0, 1.0]).unwrap();
        let g = grid(&[0, 1, 2]);
        let exact_f = iterate_to_fixpoint(Functional::F, &model, &g, 0.7, 1e-6, 100, PathMode::Exact).unwrap();
        let mode = PathMode::MonteCarlo { samples: 200, seed: 11 };
        let mc = iterate_to_fixpoint(Functional::G, &model, &g, 0.7, 1e-6, 100, mode).unwrap();
        let noise = mc.noise_estimate.unwrap();
        assert!(noise >= 0.0);
        let rep = check_ordering(exact_f.final_matrix(), mc.final_matrix(), noise.max(0.05)).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn csv_round_trip_and_digits() {
        assert_eq!(sig_digits(0.25, 12), "0.25");
        assert_eq!(sig_digits(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(sig_digits(0.0, 12), "0");
        let m = PseudometricMatrix::new(2, vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&["a".into(), "b".into()], &mut buf).unwrap();
        let (labels, back) = PseudometricMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(labels, vec!["a", "b"]);
        assert!(back.sup_distance(&m) < 1e-12);
    }
}
