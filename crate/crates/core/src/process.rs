//! State spaces, observables, Markov kernel families and trajectory ensembles.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::{display, to_f64, Rational};
use crate::transport::{stable_sum, DiscreteDistribution, MASS_TOL};

/// Default cap on the number of candidate paths for exact enumeration.
pub const ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BaseMetric {
    /// `min(1, |x - y| / scale)`.
    ScaledDistance { scale: f64 },
    /// 1 between distinct states.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSpace {
    points: Vec<f64>,
    labels: Vec<String>,
    metric: BaseMetric,
}

impl StateSpace {
    /// Uniform grid `min, min + step, ..., max`, built in exact arithmetic.
    pub fn uniform_grid(min: Rational, max: Rational, step: Rational) -> Result<Self> {
        if step <= Rational::from_integer(0) {
            return Err(Error::InvalidGrid(format!("grid step {} must be positive", display(&step))));
        }
        if max < min {
            return Err(Error::InvalidGrid("grid max below grid min".into()));
        }
        let span = (max - min) / step;
        if !span.is_integer() {
            return Err(Error::InvalidGrid(format!(
                "grid span {} is not a multiple of the step {}",
                display(&(max - min)),
                display(&step)
            )));
        }
        let count = *span.numer() + 1;
        if count > 100_000 {
            return Err(Error::InvalidGrid(format!("{count} grid points")));
        }
        let points: Vec<f64> = (0..count).map(|k| to_f64(&(min + step * k))).collect();
        let labels = points.iter().map(|p| format!("{p}")).collect();
        let scale = to_f64(&(max - min));
        let metric = if scale > 0.0 { BaseMetric::ScaledDistance { scale } } else { BaseMetric::Discrete };
        Self::new(points, labels, metric)
    }

    /// `n` abstract states labelled `0..n`, discrete base metric.
    pub fn finite(n: usize) -> Result<Self> {
        Self::new((0..n).map(|k| k as f64).collect(), (0..n).map(|k| k.to_string()).collect(), BaseMetric::Discrete)
    }

    pub fn new(points: Vec<f64>, labels: Vec<String>, metric: BaseMetric) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("empty state space".into()));
        }
        if labels.len() != points.len() {
            return Err(Error::InvalidGrid("one label per state required".into()));
        }
        let mut sorted = points.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("state coordinates must be distinct and finite".into()));
        }
        Ok(Self { points, labels, metric })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn base_metric(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return 0.0;
        }
        match self.metric {
            BaseMetric::ScaledDistance { scale } => ((self.points[x] - self.points[y]).abs() / scale).min(1.0),
            BaseMetric::Discrete => 1.0,
        }
    }

    /// Spacing of an equally spaced grid.
    pub fn uniform_spacing(&self) -> Result<f64> {
        if self.points.len() < 2 {
            return Err(Error::InvalidGrid("a uniform grid needs at least two points".into()));
        }
        let h = self.points[1] - self.points[0];
        let tol = 1e-9 * h.abs().max(1e-300);
        let uniform = h > 0.0 && self.points.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= tol.max(1e-12 * w[1].abs()));
        if !uniform {
            return Err(Error::InvalidGrid("grid spacing is not uniform".into()));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    values: Vec<f64>,
}

impl Observable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("observable value {v} outside [0,1]")));
        }
        Ok(Self { values })
    }

    /// `clamp((x - lo) / (hi - lo), 0, 1)` evaluated at every point.
    pub fn clamp_linear(space: &StateSpace, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidConfig("clamp-linear needs hi > lo".into()));
        }
        Self::new(space.points().iter().map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
    }

    /// 1 on `[a, b]`, 0 elsewhere.
    pub fn indicator_interval(space: &StateSpace, a: f64, b: f64) -> Result<Self> {
        Self::new(space.points().iter().map(|x| if (a..=b).contains(x) { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize) -> f64 {
        self.values[x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessKind {
    /// Stochastic matrix applied once per `dt`.
    FiniteChain {
        matrix: Vec<Vec<f64>>,
        #[serde(with = "crate::rational::serde_rational")]
        dt: Rational,
    },
    Brownian { truncation_radius: f64 },
    OrnsteinUhlenbeck { theta: f64, sigma: f64, truncation_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessModel {
    space: StateSpace,
    observable: Observable,
    kind: ProcessKind,
}

fn check_stochastic(matrix: &[Vec<f64>]) -> Result<()> {
    let n = matrix.len();
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidConfig(format!("chain row {i} has {} entries, expected {n}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Honesty(format!("chain row {i} has negative entry {v}")));
        }
        let total = stable_sum(row.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Honesty(format!("chain row {i} sums to {total:.17}, mass is not conserved")));
        }
    }
    Ok(())
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| stable_sum((0..n).map(|k| a[i][k] * b[k][j]))).collect())
        .collect()
}

fn mat_pow(m: &[Vec<f64>], mut k: u64) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut result: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut base = m.to_vec();
    while k > 0 {
        if k & 1 == 1 {
            result = mat_mul(&result, &base);
        }
        k >>= 1;
        if k > 0 {
            base = mat_mul(&base, &base);
        }
    }
    result
}

fn row_distribution(row: &[f64]) -> Result<DiscreteDistribution> {
    let (support, masses): (Vec<usize>, Vec<f64>) =
        row.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).unzip();
    DiscreteDistribution::normalized(support, masses)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Gaussian `N(mean, variance)` integrated over the cells of a uniform grid within
/// `radius` of the mean, renormalized to total mass 1.
pub fn gaussian_cell_kernel(mean: f64, variance: f64, grid: &StateSpace, radius: f64) -> Result<DiscreteDistribution> {
    let h = grid.uniform_spacing()?;
    if !(variance > 0.0) {
        return Err(Error::InvalidTime(format!("variance {variance} must be positive")));
    }
    let sd = variance.sqrt();
    let mut support = Vec::new();
    let mut masses = Vec::new();
    for (j, &y) in grid.points().iter().enumerate() {
        if (y - mean).abs() > radius {
            continue;
        }
        let (lo, hi) = ((y - 0.5 * h - mean) / sd, (y + 0.5 * h - mean) / sd);
        // Mirror the upper tail so both tails subtract small numbers.
        let mass = if y > mean { std_normal_cdf(-lo) - std_normal_cdf(-hi) } else { std_normal_cdf(hi) - std_normal_cdf(lo) };
        if mass > 0.0 {
            support.push(j);
            masses.push(mass);
        }
    }
    if support.is_empty() {
        // The truncation window holds no cell with positive mass; fall back to the nearest cell.
        let nearest = grid
            .points()
            .iter()
            .enumerate()
            .filter(|(_, y)| (*y - mean).abs() <= radius)
            .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
            .map(|(j, _)| j)
            .ok_or_else(|| Error::InvalidGrid(format!("no grid point within {radius} of {mean}")))?;
        return Ok(DiscreteDistribution::dirac(nearest));
    }
    DiscreteDistribution::normalized(support, masses)
}

/// Brownian transition from `x` over time `t` discretized on `grid`.
pub fn brownian_kernel(x: f64, t: Rational, grid: &StateSpace, truncation_radius: f64) -> Result<DiscreteDistribution> {
    if t <= Rational::from_integer(0) {
        return Err(Error::InvalidTime(format!("time {} must be positive", display(&t))));
    }
    let tf = to_f64(&t);
    if truncation_radius < 4.0 * tf.sqrt() {
        return Err(Error::InvalidGrid(format!(
            "truncation radius {truncation_radius} below 4*sqrt(t) = {}",
            4.0 * tf.sqrt()
        )));
    }
    gaussian_cell_kernel(x, tf, grid, truncation_radius)
}

impl ProcessModel {
    pub fn new(space: StateSpace, observable: Observable, kind: ProcessKind) -> Result<Self> {
        if observable.values().len() != space.len() {
            return Err(Error::InvalidConfig(format!(
                "observable has {} values for {} states",
                observable.values().len(),
                space.len()
            )));
        }
        match &kind {
            ProcessKind::FiniteChain { matrix, dt } => {
                if matrix.len() != space.len() {
                    return Err(Error::InvalidConfig(format!(
                        "chain matrix has {} rows for {} states",
                        matrix.len(),
                        space.len()
                    )));
                }
                check_stochastic(matrix)?;
                if *dt <= Rational::from_integer(0) {
                    return Err(Error::InvalidStep(format!("chain step {} must be positive", display(dt))));
                }
            }
            ProcessKind::Brownian { truncation_radius } => {
                space.uniform_spacing()?;
                if !(*truncation_radius > 0.0) {
                    return Err(Error::InvalidGrid("truncation radius must be positive".into()));
                }
            }
            ProcessKind::OrnsteinUhlenbeck { theta, sigma, truncation_radius } => {
                space.uniform_spacing()?;
                if !(*theta > 0.0 && *sigma > 0.0 && *truncation_radius > 0.0) {
                    return Err(Error::InvalidConfig("OU parameters must be positive".into()));
                }
            }
        }
        Ok(Self { space, observable, kind })
    }

    pub fn finite_chain(matrix: Vec<Vec<f64>>, dt: Rational, observable: Vec<f64>) -> Result<Self> {
        let space = StateSpace::finite(matrix.len())?;
        Self::new(space, Observable::new(observable)?, ProcessKind::FiniteChain { matrix, dt })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn observable(&self) -> &Observable {
        &self.observable
    }

    pub fn kind(&self) -> &ProcessKind {
        &self.kind
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn is_finite_chain(&self) -> bool {
        matches!(self.kind, ProcessKind::FiniteChain { .. })
    }

    fn chain_steps(dt: &Rational, t: &Rational) -> Result<u64> {
        let k = t / dt;
        if !k.is_integer() || *k.numer() < 0 {
            return Err(Error::UnsupportedTime(format!(
                "{} is not a multiple of the chain step {}",
                display(t),
                display(dt)
            )));
        }
        Ok(*k.numer() as u64)
    }

    /// Transition distribution `P_t(x)`.
    pub fn kernel(&self, t: Rational, x: usize) -> Result<DiscreteDistribution> {
        Ok(self.kernel_row_all(t)?.swap_remove(x))
    }

    /// `P_t(x)` for every state `x`.
    pub fn kernel_row_all(&self, t: Rational) -> Result<Vec<DiscreteDistribution>> {
        if t < Rational::from_integer(0) {
            return Err(Error::InvalidTime(format!("negative time {}", display(&t))));
        }
        let n = self.num_states();
        if t == Rational::from_integer(0) {
            return Ok((0..n).map(DiscreteDistribution::dirac).collect());
        }
        match &self.kind {
            ProcessKind::FiniteChain { matrix, dt } => {
                let k = Self::chain_steps(dt, &t)?;
                let power = mat_pow(matrix, k);
                power.iter().map(|row| row_distribution(row)).collect()
            }
            ProcessKind::Brownian { truncation_radius } => {
                let tf = to_f64(&t);
                let radius = truncation_radius.max(4.0 * tf.sqrt());
                self.space.points().iter().map(|&x| gaussian_cell_kernel(x, tf, &self.space, radius)).collect()
            }
            ProcessKind::OrnsteinUhlenbeck { theta, sigma, truncation_radius } => {
                let tf = to_f64(&t);
                let decay = (-theta * tf).exp();
                let variance = sigma * sigma * (-(-2.0 * theta * tf).exp_m1()) / (2.0 * theta);
                let radius = truncation_radius.max(4.0 * variance.sqrt());
                self.space
                    .points()
                    .iter()
                    .map(|&x| gaussian_cell_kernel(x * decay, variance, &self.space, radius))
                    .collect()
            }
        }
    }

    /// Kernels for every time of `times`, indexed `[time][state]`.
    pub fn kernel_table(&self, times: &[Rational]) -> Result<KernelTable> {
        let rows = times.iter().map(|t| self.kernel_row_all(*t)).collect::<Result<Vec<_>>>()?;
        Ok(KernelTable { times: times.to_vec(), rows })
    }
}

#[derive(Debug, Clone)]
pub struct KernelTable {
    times: Vec<Rational>,
    rows: Vec<Vec<DiscreteDistribution>>,
}

impl KernelTable {
    pub fn times(&self) -> &[Rational] {
        &self.times
    }

    pub fn get(&self, time_index: usize, x: usize) -> &DiscreteDistribution {
        &self.rows[time_index][x]
    }

    pub fn index_of(&self, t: &Rational) -> Option<usize> {
        self.times.iter().position(|s| s == t)
    }
}

fn check_time_grid(time_grid: &[Rational]) -> Result<()> {
    let Some(first) = time_grid.first() else {
        return Err(Error::InvalidGrid("empty time grid".into()));
    };
    if *first != Rational::from_integer(0) {
        return Err(Error::InvalidGrid("time grid must start at 0".into()));
    }
    if time_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Grid-sampled paths with weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    #[serde(serialize_with = "serialize_times")]
    time_grid: Vec<Rational>,
    trajectories: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

fn serialize_times<S: serde::Serializer>(times: &[Rational], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(times.iter().map(|t| display(t).to_string()))
}

impl TrajectoryEnsemble {
    pub fn new(time_grid: Vec<Rational>, trajectories: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        check_time_grid(&time_grid)?;
        if trajectories.len() != weights.len() || trajectories.is_empty() {
            return Err(Error::InvalidDistribution("one weight per trajectory required".into()));
        }
        if trajectories.iter().any(|w| w.len() != time_grid.len()) {
            return Err(Error::InvalidGrid("trajectory length differs from the time grid".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution("negative trajectory weight".into()));
        }
        let total = stable_sum(weights.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("trajectory weights sum to {total:.17}")));
        }
        Ok(Self { time_grid, trajectories, weights })
    }

    pub fn time_grid(&self) -> &[Rational] {
        &self.time_grid
    }

    pub fn trajectories(&self) -> &[Vec<usize>] {
        &self.trajectories
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Distribution over trajectory indices.
    pub fn as_distribution(&self) -> DiscreteDistribution {
        DiscreteDistribution::new((0..self.len()).collect(), self.weights.clone())
            .expect("ensemble weights are validated on construction")
    }

    /// Law of the state at grid index `k`.
    pub fn marginal(&self, k: usize, n_states: usize) -> Result<DiscreteDistribution> {
        let mut masses = vec![0.0; n_states];
        for (path, w) in self.trajectories.iter().zip(&self.weights) {
            masses[path[k]] += w;
        }
        let (support, masses): (Vec<usize>, Vec<f64>) =
            masses.into_iter().enumerate().filter(|(_, w)| *w > 0.0).unzip();
        DiscreteDistribution::normalized(support, masses)
    }
}

fn step_kernels(model: &ProcessModel, time_grid: &[Rational]) -> Result<BTreeMap<Rational, Vec<DiscreteDistribution>>> {
    let mut table = BTreeMap::new();
    for w in time_grid.windows(2) {
        let dt = w[1] - w[0];
        if let std::collections::btree_map::Entry::Vacant(e) = table.entry(dt) {
            e.insert(model.kernel_row_all(dt)?);
        }
    }
    Ok(table)
}

/// Monte Carlo trajectories from `x`, one kernel draw per grid step.
pub fn sample_trajectories(
    model: &ProcessModel,
    x: usize,
    time_grid: &[Rational],
    n_samples: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    check_time_grid(time_grid)?;
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    if x >= model.num_states() {
        return Err(Error::InvalidConfig(format!("state {x} out of range")));
    }
    let kernels = step_kernels(model, time_grid)?;
    let mut samplers: BTreeMap<Rational, Vec<WeightedIndex<f64>>> = BTreeMap::new();
    for (dt, rows) in &kernels {
        let s = rows
            .iter()
            .map(|d| WeightedIndex::new(d.weights().iter().copied()).map_err(|e| Error::InvalidDistribution(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        samplers.insert(*dt, s);
    }
    let dts: Vec<Rational> = time_grid.windows(2).map(|w| w[1] - w[0]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut path = Vec::with_capacity(time_grid.len());
        let mut state = x;
        path.push(state);
        for dt in &dts {
            let idx = samplers[dt][state].sample(&mut rng);
            state = kernels[dt][state].support()[idx];
            path.push(state);
        }
        trajectories.push(path);
    }
    let w = 1.0 / n_samples as f64;
    TrajectoryEnsemble::new(time_grid.to_vec(), trajectories, vec![w; n_samples])
}

/// All positive-probability paths of a finite chain from `x`, with exact product weights.
pub fn enumerate_trajectories(
    model: &ProcessModel,
    x: usize,
    time_grid: &[Rational],
    cap: u64,
) -> Result<TrajectoryEnsemble> {
    check_time_grid(time_grid)?;
    if !model.is_finite_chain() {
        return Err(Error::InvalidConfig("exact path enumeration requires a finite chain".into()));
    }
    if x >= model.num_states() {
        return Err(Error::InvalidConfig(format!("state {x} out of range")));
    }
    let n = model.num_states() as u128;
    let bound = n.checked_pow(time_grid.len() as u32).unwrap_or(u128::MAX);
    if bound > cap as u128 {
        return Err(Error::EnumerationTooLarge { paths: bound, cap });
    }
    let kernels = step_kernels(model, time_grid)?;
    let dts: Vec<Rational> = time_grid.windows(2).map(|w| w[1] - w[0]).collect();

    let mut trajectories = Vec::new();
    let mut weights = Vec::new();
    let mut path = vec![x];
    fn walk(
        depth: usize,
        weight: f64,
        path: &mut Vec<usize>,
        dts: &[Rational],
        kernels: &BTreeMap<Rational, Vec<DiscreteDistribution>>,
        out: &mut (Vec<Vec<usize>>, Vec<f64>),
    ) {
        if depth == dts.len() {
            out.0.push(path.clone());
            out.1.push(weight);
            return;
        }
        let current = path[path.len() - 1];
        for (next, p) in kernels[&dts[depth]][current].iter() {
            if p > 0.0 {
                path.push(next);
                walk(depth + 1, weight * p, path, dts, kernels, out);
                path.pop();
            }
        }
    }
    let mut out = (Vec::new(), Vec::new());
    walk(0, 1.0, &mut path, &dts, &kernels, &mut out);
    trajectories.append(&mut out.0);
    weights.append(&mut out.1);
    // Products of normalized rows can drift by a few ulps; renormalize against the exact total.
    let total = stable_sum(weights.iter().copied());
    weights.iter_mut().for_each(|w| *w /= total);
    TrajectoryEnsemble::new(time_grid.to_vec(), trajectories, weights)
}
