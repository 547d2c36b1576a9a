//! Exact optimal transport between finite distributions.
//!
//! The solver is a primal transportation simplex on the bipartite support
//! graph: northwest-corner start, block-search pricing, and Bland's rule as a
//! fallback once degenerate pivots start to repeat. Node potentials at the
//! optimum give the Kantorovich dual; for square costs over a common ground
//! set they are folded into a single potential `h` via the c-transform.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance used by [`Coupling`] marginal checks.
pub const MARGINAL_TOL: f64 = 1e-9;

const REDUCED_COST_EPS: f64 = 1e-13;
const DEGENERATE_STREAK: usize = 64;

/// Neumaier-compensated sum.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    support: Vec<usize>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {w} is not a nonnegative number")));
        }
        let total = stable_sum(weights.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {total:.17}")));
        }
        Ok(Self { support, weights })
    }

    /// Builds a distribution from unnormalized nonnegative masses, dividing by their total.
    pub fn normalized(support: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        let total = stable_sum(masses.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!("total mass {total}")));
        }
        let weights = masses.into_iter().map(|m| m / total).collect();
        Self::new(support, weights)
    }

    pub fn dirac(point: usize) -> Self {
        Self { support: vec![point], weights: vec![1.0] }
    }

    pub fn uniform(support: Vec<usize>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let w = 1.0 / n as f64;
        Self::new(support, vec![w; n])
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        stable_sum(self.weights.iter().copied())
    }

    /// Total mass sitting on `point` (support entries may repeat).
    pub fn mass_at(&self, point: usize) -> f64 {
        stable_sum(self.iter().filter(|(p, _)| *p == point).map(|(_, w)| w))
    }

    /// Dense weight vector over a ground set of size `n`.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (p, w) in self.iter() {
            out[p] += w;
        }
        out
    }

    /// Expectation of `f` (indexed by ground point).
    pub fn expect(&self, f: &[f64]) -> f64 {
        stable_sum(self.iter().map(|(p, w)| w * f[p]))
    }

    /// Total-variation distance, computed on a ground set of size `n`.
    pub fn total_variation(&self, other: &Self, n: usize) -> f64 {
        let a = self.to_dense(n);
        let b = other.to_dense(n);
        0.5 * stable_sum(a.iter().zip(&b).map(|(x, y)| (x - y).abs()))
    }
}

/// Row-major cost matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidCost(format!(
                "{} entries for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidCost(format!("entry {v} outside [0,1]")));
        }
        Ok(Self { rows, cols, values })
    }

    /// Square cost over a common ground set; the diagonal must vanish.
    pub fn square(n: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::new(n, n, values)?;
        if let Some(i) = (0..n).find(|&i| m.get(i, i) != 0.0) {
            return Err(Error::InvalidCost(format!("nonzero diagonal entry at {i}")));
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entrywise `self <= other + tol`.
    pub fn dominated_by(&self, other: &Self, tol: f64) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.values.iter().zip(&other.values).all(|(a, b)| *a <= *b + tol)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.values.iter().map(|v| v * factor).collect())
    }
}

/// Transport plan between the supports of `mu` (rows) and `nu` (columns).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coupling {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
}

impl Coupling {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| stable_sum((0..self.cols).map(|j| self.get(i, j))))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| stable_sum((0..self.rows).map(|i| self.get(i, j))))
            .collect()
    }

    /// Largest deviation of the marginals from the weights of `mu` and `nu`.
    pub fn marginal_error(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> f64 {
        let rows = self.row_sums().into_iter().zip(mu.weights()).map(|(s, w)| (s - w).abs());
        let cols = self.col_sums().into_iter().zip(nu.weights()).map(|(s, w)| (s - w).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Writes the coupling as CSV with ground-point labels of both supports.
    pub fn write_csv<W: Write>(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec![String::from("from\\to")];
        header.extend(nu.support().iter().map(|p| p.to_string()));
        w.write_record(&header).map_err(io)?;
        for i in 0..self.rows {
            let mut row = vec![mu.support()[i].to_string()];
            row.extend((0..self.cols).map(|j| format!("{:.12e}", self.get(i, j))));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(Error::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportResult {
    pub cost: f64,
    pub coupling: Coupling,
    /// Dual variable per `mu` support entry.
    pub row_potential: Vec<f64>,
    /// Dual variable per `nu` support entry.
    pub col_potential: Vec<f64>,
    /// Single dual witness `h` over the ground set (square costs only), shifted to minimum 0.
    pub potential: Option<Vec<f64>>,
}

impl TransportResult {
    /// `|E_mu h - E_nu h|` for the single potential, if present.
    pub fn dual_value(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Option<f64> {
        self.potential.as_ref().map(|h| (mu.expect(h) - nu.expect(h)).abs())
    }
}

/// Solution of a dense transportation problem in compressed index space.
#[derive(Debug, Clone)]
pub(crate) struct DenseSolution {
    pub flows: Vec<(usize, usize, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cost: f64,
}

#[derive(Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

/// Transportation simplex for strictly positive `supply` and `demand` of (nearly) equal totals.
pub(crate) fn solve_dense(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<DenseSolution> {
    solve_dense_from(supply, demand, cost, None)
}

/// As [`solve_dense`], starting from `warm` when it is a basis of the same marginals.
pub(crate) fn solve_dense_from(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    warm: Option<&[(usize, usize, f64)]>,
) -> Result<DenseSolution> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);
    if m == 0 || n == 0 {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    let c = |i: usize, j: usize| cost[i * n + j];

    if m == 1 || n == 1 {
        let flows: Vec<_> = if m == 1 {
            (0..n).map(|j| (0, j, demand[j])).collect()
        } else {
            (0..m).map(|i| (i, 0, supply[i])).collect()
        };
        let total = stable_sum(flows.iter().map(|&(i, j, f)| f * c(i, j)));
        let (u, v) = if m == 1 {
            (vec![0.0], (0..n).map(|j| c(0, j)).collect())
        } else {
            ((0..m).map(|i| c(i, 0)).collect(), vec![0.0])
        };
        return Ok(DenseSolution { flows, u, v, cost: total });
    }

    let mut cells: Vec<Cell> = Vec::with_capacity(m + n - 1);
    if let Some(basis) = warm.filter(|b| b.len() == m + n - 1 && b.iter().all(|&(i, j, _)| i < m && j < n)) {
        cells.extend(basis.iter().map(|&(row, col, flow)| Cell { row, col, flow }));
    } else {
        // Northwest corner: a staircase of exactly m + n - 1 cells, hence a spanning tree.
        let (mut i, mut j) = (0usize, 0usize);
        let (mut ra, mut rb) = (supply[0], demand[0]);
        loop {
            let f = ra.min(rb);
            cells.push(Cell { row: i, col: j, flow: f });
            ra -= f;
            rb -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (ra <= rb && i < m - 1) {
                i += 1;
                ra = supply[i];
            } else {
                j += 1;
                rb = demand[j];
            }
        }
    }

    // Node ids: rows 0..m, columns m..m+n. adjacency holds cell slots.
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (slot, cell) in cells.iter().enumerate() {
        adj[cell.row].push(slot);
        adj[m + cell.col].push(slot);
    }

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut visited = vec![false; nodes];
    let mut stack: Vec<usize> = Vec::with_capacity(nodes);
    let mut parent_slot = vec![usize::MAX; nodes];

    let total_cells = m * n;
    let block = ((total_cells as f64).sqrt().ceil() as usize).max(16).min(total_cells);
    let mut scan_pos = 0usize;
    let mut degenerate_streak = 0usize;
    let max_pivots = 50 * total_cells + 10_000;
    let mut pivots = 0usize;

    loop {
        // Potentials from the basis tree rooted at row 0.
        visited.iter_mut().for_each(|x| *x = false);
        stack.clear();
        stack.push(0);
        visited[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &slot in &adj[node] {
                let cell = cells[slot];
                let other = if node < m { m + cell.col } else { cell.row };
                if visited[other] {
                    continue;
                }
                visited[other] = true;
                if node < m {
                    v[cell.col] = c(cell.row, cell.col) - u[cell.row];
                } else {
                    u[cell.row] = c(cell.row, cell.col) - v[cell.col];
                }
                stack.push(other);
            }
        }

        // Pricing.
        let bland = degenerate_streak >= DEGENERATE_STREAK;
        let mut entering: Option<(usize, usize)> = None;
        if bland {
            'outer: for i in 0..m {
                for j in 0..n {
                    if c(i, j) - u[i] - v[j] < -REDUCED_COST_EPS {
                        entering = Some((i, j));
                        break 'outer;
                    }
                }
            }
        } else {
            let mut scanned = 0usize;
            let mut best = -REDUCED_COST_EPS;
            while scanned < total_cells {
                let end = (scanned + block).min(total_cells);
                for _ in scanned..end {
                    let (i, j) = (scan_pos / n, scan_pos % n);
                    let rc = c(i, j) - u[i] - v[j];
                    if rc < best {
                        best = rc;
                        entering = Some((i, j));
                    }
                    scan_pos += 1;
                    if scan_pos == total_cells {
                        scan_pos = 0;
                    }
                }
                scanned = end;
                if entering.is_some() {
                    break;
                }
            }
        }
        let Some((p, q)) = entering else { break };

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("no convergence after {max_pivots} pivots ({m}x{n})")));
        }

        // Tree path from row p to column q.
        visited.iter_mut().for_each(|x| *x = false);
        stack.clear();
        stack.push(p);
        visited[p] = true;
        let target = m + q;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &slot in &adj[node] {
                let cell = cells[slot];
                let other = if node < m { m + cell.col } else { cell.row };
                if !visited[other] {
                    visited[other] = true;
                    parent_slot[other] = slot;
                    stack.push(other);
                }
            }
        }
        let mut path: Vec<usize> = Vec::new();
        let mut node = target;
        while node != p {
            let slot = parent_slot[node];
            path.push(slot);
            let cell = cells[slot];
            node = if node >= m { cell.row } else { m + cell.col };
        }
        path.reverse();
        // path[0] touches row p and gets -, alternating thereafter.

        let mut theta = f64::INFINITY;
        let mut leave_pos = 0usize;
        for (k, &slot) in path.iter().enumerate().step_by(2) {
            let flow = cells[slot].flow;
            let better = if bland {
                let var = |s: usize| cells[s].row * n + cells[s].col;
                flow < theta || (flow == theta && var(slot) < var(path[leave_pos]))
            } else {
                flow < theta
            };
            if better {
                theta = flow;
                leave_pos = k;
            }
        }
        let theta = theta.max(0.0);
        if theta <= 0.0 {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
        for (k, &slot) in path.iter().enumerate() {
            if k % 2 == 0 {
                cells[slot].flow = (cells[slot].flow - theta).max(0.0);
            } else {
                cells[slot].flow += theta;
            }
        }
        let leaving = path[leave_pos];
        let old = cells[leaving];
        adj[old.row].retain(|&s| s != leaving);
        adj[m + old.col].retain(|&s| s != leaving);
        cells[leaving] = Cell { row: p, col: q, flow: theta };
        adj[p].push(leaving);
        adj[m + q].push(leaving);
    }

    let flows: Vec<_> = cells.iter().map(|cell| (cell.row, cell.col, cell.flow)).collect();
    let total = stable_sum(flows.iter().map(|&(i, j, f)| f * c(i, j)));
    Ok(DenseSolution { flows, u, v, cost: total })
}

fn check_distribution(d: &DiscreteDistribution, bound: usize, what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what} has empty support")));
    }
    if let Some(p) = d.support().iter().find(|&&p| p >= bound) {
        return Err(Error::InvalidDistribution(format!("{what} support point {p} out of range {bound}")));
    }
    let total = d.total_mass();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution(format!("{what} has total mass {total:.17}")));
    }
    Ok(())
}

fn positive_entries(d: &DiscreteDistribution) -> Vec<usize> {
    (0..d.len()).filter(|&k| d.weights()[k] > 0.0).collect()
}

/// Optimal transport cost only, without coupling or potentials.
pub fn transport_cost(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: &CostMatrix) -> Result<f64> {
    check_distribution(mu, cost.rows(), "mu")?;
    check_distribution(nu, cost.cols(), "nu")?;
    let rows = positive_entries(mu);
    let cols = positive_entries(nu);
    let supply: Vec<f64> = rows.iter().map(|&k| mu.weights()[k]).collect();
    let demand: Vec<f64> = cols.iter().map(|&k| nu.weights()[k]).collect();
    let dense: Vec<f64> = rows
        .iter()
        .flat_map(|&a| cols.iter().map(move |&b| (a, b)))
        .map(|(a, b)| cost.get(mu.support()[a], nu.support()[b]))
        .collect();
    Ok(solve_dense(&supply, &demand, &dense)?.cost)
}

/// Optimal basis and duals of a previous solve, reusable while both marginals stay the same.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    basis: Option<Vec<(usize, usize, f64)>>,
    duals: Option<(Vec<f64>, Vec<f64>)>,
}

impl WarmStart {
    /// Bounds on the transport cost under `cost`, from the stored solve of the same marginals.
    ///
    /// The stored plan is feasible, so its cost bounds from above. The stored duals bound from
    /// below as long as `cost` dominates the cost they were computed for.
    pub fn bounds(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: &CostMatrix) -> Option<(f64, f64)> {
        let basis = self.basis.as_ref()?;
        let (u, v) = self.duals.as_ref()?;
        let rows = positive_entries(mu);
        let cols = positive_entries(nu);
        if rows.len() != u.len() || cols.len() != v.len() {
            return None;
        }
        let upper = stable_sum(
            basis.iter().map(|&(i, j, f)| f * cost.get(mu.support()[rows[i]], nu.support()[cols[j]])),
        );
        let lower = stable_sum(
            rows.iter().zip(u).map(|(&a, ui)| mu.weights()[a] * ui)
                .chain(cols.iter().zip(v).map(|(&b, vj)| nu.weights()[b] * vj)),
        );
        Some((lower.min(upper), upper))
    }
}

/// [`transport_cost`] seeded with, and updating, a warm-start basis.
pub fn transport_cost_warm(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &CostMatrix,
    warm: &mut WarmStart,
) -> Result<f64> {
    check_distribution(mu, cost.rows(), "mu")?;
    check_distribution(nu, cost.cols(), "nu")?;
    let rows = positive_entries(mu);
    let cols = positive_entries(nu);
    let supply: Vec<f64> = rows.iter().map(|&k| mu.weights()[k]).collect();
    let demand: Vec<f64> = cols.iter().map(|&k| nu.weights()[k]).collect();
    let dense: Vec<f64> = rows
        .iter()
        .flat_map(|&a| cols.iter().map(move |&b| (a, b)))
        .map(|(a, b)| cost.get(mu.support()[a], nu.support()[b]))
        .collect();
    let sol = solve_dense_from(&supply, &demand, &dense, warm.basis.as_deref())?;
    let value = sol.cost;
    warm.basis = Some(sol.flows);
    warm.duals = Some((sol.u, sol.v));
    Ok(value)
}

/// Exact optimal transport from `mu` to `nu` under `cost`.
///
/// `mu` indexes the rows of `cost` and `nu` its columns. When `cost` is square the
/// two supports live on one ground set and a single potential is recovered as the
/// c-transform of the column duals, shifted so its minimum is 0.
pub fn solve_ot(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: &CostMatrix) -> Result<TransportResult> {
    check_distribution(mu, cost.rows(), "mu")?;
    check_distribution(nu, cost.cols(), "nu")?;
    let rows = positive_entries(mu);
    let cols = positive_entries(nu);
    let supply: Vec<f64> = rows.iter().map(|&k| mu.weights()[k]).collect();
    let demand: Vec<f64> = cols.iter().map(|&k| nu.weights()[k]).collect();
    let dense: Vec<f64> = rows
        .iter()
        .flat_map(|&a| cols.iter().map(move |&b| (a, b)))
        .map(|(a, b)| cost.get(mu.support()[a], nu.support()[b]))
        .collect();
    let sol = solve_dense(&supply, &demand, &dense)?;

    let (m, n) = (mu.len(), nu.len());
    let mut matrix = vec![0.0; m * n];
    for &(i, j, f) in &sol.flows {
        matrix[rows[i] * n + cols[j]] += f;
    }
    let coupling = Coupling { rows: m, cols: n, matrix };

    let pair_cost = |a: usize, b: usize| cost.get(mu.support()[a], nu.support()[b]);
    let mut col_potential = vec![f64::NAN; n];
    for (k, &b) in cols.iter().enumerate() {
        col_potential[b] = sol.v[k];
    }
    let mut row_potential = vec![f64::NAN; m];
    for (k, &a) in rows.iter().enumerate() {
        row_potential[a] = sol.u[k];
    }
    // Dual values for dropped zero-weight points keep the dual feasible.
    for a in 0..m {
        if row_potential[a].is_nan() {
            row_potential[a] = cols.iter().map(|&b| pair_cost(a, b) - col_potential[b]).fold(f64::INFINITY, f64::min);
        }
    }
    for b in 0..n {
        if col_potential[b].is_nan() {
            col_potential[b] = (0..m).map(|a| pair_cost(a, b) - row_potential[a]).fold(f64::INFINITY, f64::min);
        }
    }

    let potential = cost.is_square().then(|| {
        let ground = cost.rows();
        let mut h: Vec<f64> = (0..ground)
            .map(|z| {
                cols.iter()
                    .map(|&b| cost.get(z, nu.support()[b]) - col_potential[b])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        h.iter_mut().for_each(|x| *x -= lo);
        h
    });

    Ok(TransportResult { cost: sol.cost, coupling, row_potential, col_potential, potential })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub ok: bool,
    pub primal: f64,
    pub coupling_cost: f64,
    pub dual: f64,
    pub gap: f64,
    pub max_lipschitz_violation: f64,
    pub max_marginal_error: f64,
    pub potential_range: (f64, f64),
}

/// Checks primal/dual agreement, the Lipschitz property of the potential and the coupling marginals.
pub fn verify_duality(
    result: &TransportResult,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &CostMatrix,
    tol: f64,
) -> DualityReport {
    let (m, n) = result.coupling.shape();
    let coupling_cost = stable_sum(
        (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
            result.coupling.get(i, j) * cost.get(mu.support()[i], nu.support()[j])
        }),
    );
    let marginal = if m == mu.len() && n == nu.len() { result.coupling.marginal_error(mu, nu) } else { f64::INFINITY };
    let (dual, lipschitz, range) = match &result.potential {
        Some(h) if cost.is_square() && h.len() == cost.rows() => {
            let dual = mu.expect(h) - nu.expect(h);
            let g = h.len();
            let mut worst = 0.0f64;
            for x in 0..g {
                for y in 0..g {
                    worst = worst.max((h[x] - h[y]).abs() - cost.get(x, y));
                }
            }
            let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (dual.abs(), worst, (lo, hi))
        }
        _ => {
            let dual = stable_sum(
                mu.weights().iter().zip(&result.row_potential).map(|(w, u)| w * u)
                    .chain(nu.weights().iter().zip(&result.col_potential).map(|(w, v)| w * v)),
            );
            let mut worst = 0.0f64;
            for i in 0..m {
                for j in 0..n {
                    let c = cost.get(mu.support()[i], nu.support()[j]);
                    worst = worst.max(result.row_potential[i] + result.col_potential[j] - c);
                }
            }
            (dual, worst, (f64::NAN, f64::NAN))
        }
    };
    let gap = (result.cost - dual).abs();
    let ok = gap <= tol
        && (result.cost - coupling_cost).abs() <= tol.max(MARGINAL_TOL)
        && lipschitz <= tol
        && marginal <= MARGINAL_TOL;
    DualityReport {
        ok,
        primal: result.cost,
        coupling_cost,
        dual,
        gap,
        max_lipschitz_violation: lipschitz.max(0.0),
        max_marginal_error: marginal,
        potential_range: range,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub values: Vec<f64>,
    pub limit_value: f64,
    pub nondecreasing: bool,
    pub final_gap: f64,
    pub converged: bool,
}

/// Transport costs along an increasing cost sequence, compared with the cost under its limit.
pub fn wasserstein_limit_check(
    costs: &[CostMatrix],
    limit_cost: &CostMatrix,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    tol: f64,
) -> Result<LimitReport> {
    if costs.is_empty() {
        return Err(Error::InvalidSequence("empty cost sequence".into()));
    }
    for (k, pair) in costs.windows(2).enumerate() {
        if !pair[0].dominated_by(&pair[1], 0.0) {
            return Err(Error::InvalidSequence(format!("cost {k} is not below cost {}", k + 1)));
        }
    }
    if !costs[costs.len() - 1].dominated_by(limit_cost, 0.0) {
        return Err(Error::InvalidSequence("last cost exceeds the limit cost".into()));
    }
    let values = costs.iter().map(|c| transport_cost(mu, nu, c)).collect::<Result<Vec<_>>>()?;
    let limit_value = transport_cost(mu, nu, limit_cost)?;
    let nondecreasing = values.windows(2).all(|w| w[0] <= w[1] + 1e-12);
    let final_gap = (limit_value - values[values.len() - 1]).abs();
    Ok(LimitReport { nondecreasing, converged: nondecreasing && final_gap <= tol, values, limit_value, final_gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_cost() -> CostMatrix {
        CostMatrix::square(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let mu = DiscreteDistribution::new(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        let cost = CostMatrix::square(3, vec![0.0, 0.4, 1.0, 0.4, 0.0, 0.6, 1.0, 0.6, 0.0]).unwrap();
        let r = solve_ot(&mu, &mu, &cost).unwrap();
        assert_eq!(r.cost, 0.0);
        for i in 0..3 {
            assert!((r.coupling.get(i, i) - mu.weights()[i]).abs() < 1e-15);
        }
        let rep = verify_duality(&r, &mu, &mu, &cost, 1e-12);
        assert!(rep.ok, "{rep:?}");
        assert_eq!(rep.gap, 0.0);
    }

    #[test]
    fn diracs_use_the_product_coupling() {
        let cost = CostMatrix::square(3, vec![0.0, 0.4, 0.7, 0.4, 0.0, 0.5, 0.7, 0.5, 0.0]).unwrap();
        let r = solve_ot(&DiscreteDistribution::dirac(0), &DiscreteDistribution::dirac(2), &cost).unwrap();
        assert_eq!(r.cost, 0.7);
        assert_eq!(r.coupling.get(0, 0), 1.0);
    }

    #[test]
    fn two_point_instance_is_total_variation() {
        let mu = DiscreteDistribution::new(vec![0, 1], vec![0.7, 0.3]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1], vec![0.4, 0.6]).unwrap();
        let cost = two_point_cost();
        let r = solve_ot(&mu, &nu, &cost).unwrap();
        assert!((r.cost - 0.3).abs() < 1e-12);
        assert!(verify_duality(&r, &mu, &nu, &cost, 1e-9).ok);
    }

    #[test]
    fn perturbed_potential_fails_the_lipschitz_check() {
        let mu = DiscreteDistribution::new(vec![0, 1], vec![0.7, 0.3]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1], vec![0.4, 0.6]).unwrap();
        let cost = CostMatrix::square(2, vec![0.0, 0.6, 0.6, 0.0]).unwrap();
        let mut r = solve_ot(&mu, &nu, &cost).unwrap();
        r.potential.as_mut().unwrap()[0] += 0.5;
        let rep = verify_duality(&r, &mu, &nu, &cost, 1e-9);
        assert!(!rep.ok);
        assert!(rep.max_lipschitz_violation > 0.4);
    }

    #[test]
    fn zero_weight_points_are_reinserted() {
        let mu = DiscreteDistribution::new(vec![0, 1, 2], vec![0.5, 0.0, 0.5]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1, 2], vec![0.0, 1.0, 0.0]).unwrap();
        let cost = CostMatrix::square(3, vec![0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0]).unwrap();
        let r = solve_ot(&mu, &nu, &cost).unwrap();
        assert!((r.cost - 0.5).abs() < 1e-12);
        assert_eq!(r.coupling.shape(), (3, 3));
        assert_eq!(r.coupling.row_sums()[1], 0.0);
        assert!(verify_duality(&r, &mu, &nu, &cost, 1e-9).ok);
    }

    #[test]
    fn rejects_unnormalized_input() {
        let bad = DiscreteDistribution { support: vec![0, 1], weights: vec![0.5, 0.6] };
        let err = solve_ot(&bad, &bad, &two_point_cost()).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution(_)));
        assert!(DiscreteDistribution::new(vec![0], vec![0.9]).is_err());
        assert!(DiscreteDistribution::new(vec![0, 1], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn rejects_costs_outside_unit_interval() {
        assert!(CostMatrix::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(CostMatrix::square(2, vec![0.1, 1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn rectangular_costs_report_row_and_column_duals() {
        let mu = DiscreteDistribution::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        let cost = CostMatrix::new(2, 3, vec![0.1, 0.9, 0.4, 0.8, 0.2, 0.3]).unwrap();
        let r = solve_ot(&mu, &nu, &cost).unwrap();
        assert!(r.potential.is_none());
        let rep = verify_duality(&r, &mu, &nu, &cost, 1e-12);
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn constant_and_trivial_limit_sequences() {
        let mu = DiscreteDistribution::new(vec![0, 1], vec![0.7, 0.3]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1], vec![0.4, 0.6]).unwrap();
        let c = two_point_cost();
        let rep = wasserstein_limit_check(&[c.clone(), c.clone(), c.clone()], &c, &mu, &nu, 1e-12).unwrap();
        assert!(rep.values.iter().all(|v| *v == rep.values[0]));
        let rep = wasserstein_limit_check(&[c.scaled(0.5).unwrap(), c.clone()], &c, &mu, &mu, 1e-12).unwrap();
        assert!(rep.values.iter().all(|v| *v == 0.0));
        let err = wasserstein_limit_check(&[c.clone(), c.scaled(0.5).unwrap()], &c, &mu, &nu, 1e-12).unwrap_err();
        assert!(matches!(err, Error::InvalidSequence(_)));
    }

    #[test]
    fn coupling_csv_dump() {
        let mu = DiscreteDistribution::new(vec![0, 1], vec![0.7, 0.3]).unwrap();
        let nu = DiscreteDistribution::new(vec![0, 1], vec![0.4, 0.6]).unwrap();
        let r = solve_ot(&mu, &nu, &two_point_cost()).unwrap();
        let mut buf = Vec::new();
        r.coupling.write_csv(&mu, &nu, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("from\\to,0,1"));
    }
}
