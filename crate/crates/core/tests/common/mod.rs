//! Independent oracles and generators shared by the integration tests.
//!
//! Nothing here calls the library's solvers: transport costs come from
//! vertex enumeration of the coupling polytope, kernels from dense matrix
//! powers and trajectory laws from explicit path products.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves a square system by Gaussian elimination with partial pivoting; `None` if singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        subsets(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Minimal transport cost by enumerating every basic solution of the coupling polytope.
///
/// The polytope `{pi >= 0, row sums = mu, column sums = nu}` has rank `m + n - 1`;
/// every vertex is the unique solution supported on some `m + n - 1` cells.
pub fn vertex_ot(mu: &[f64], nu: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let (m, n) = (mu.len(), nu.len());
    let k = m + n - 1;
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    subsets(cells.len(), k, 0, &mut Vec::new(), &mut |chosen| {
        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for (col, &c) in chosen.iter().enumerate() {
            let (i, j) = cells[c];
            a[i][col] = 1.0;
            if j + 1 < n {
                a[m + j][col] = 1.0;
            }
        }
        b[..m].copy_from_slice(mu);
        b[m..].copy_from_slice(&nu[..n - 1]);
        if let Some(x) = solve_square(a, b) {
            if x.iter().all(|v| *v >= -1e-12) {
                let total: f64 = chosen.iter().zip(&x).map(|(&c, v)| v * cost(cells[c].0, cells[c].1)).sum();
                best = best.min(total);
            }
        }
    });
    best
}

/// Random probability vector of length `n`, with zeros when `sparse`.
pub fn random_weights(r: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if sparse && r.random_bool(0.3) { 0.0 } else { r.random_range(0.05..1.0) })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.iter().map(|v| v / s).collect();
        }
    }
}

/// Random 1-bounded pseudometric: shortest-path closure of random edge weights, some of them zero.
pub fn random_pseudometric(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let w = if r.random_bool(0.15) { 0.0 } else { r.random_range(0.0..1.0) };
            d[i * n + j] = w;
            d[j * n + i] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Random row-stochastic matrix with some zero entries.
pub fn random_chain(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_weights(r, n, true)).collect()
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

pub fn mat_pow(p: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = p.len();
    let mut out: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..k {
        out = mat_mul(&out, p);
    }
    out
}

/// `W_m` between two dense distributions over `0..n`, by min-cost flow on their supports.
pub fn dense_ot(mu: &[f64], nu: &[f64], m: &[f64]) -> f64 {
    let n = mu.len();
    let su: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0).collect();
    let sv: Vec<usize> = (0..n).filter(|&j| nu[j] > 0.0).collect();
    let wu: Vec<f64> = su.iter().map(|&i| mu[i]).collect();
    let wv: Vec<f64> = sv.iter().map(|&j| nu[j]).collect();
    flow_ot(&wu, &wv, &|i, j| m[su[i] * n + sv[j]])
}

/// `F(m)` for a unit-step chain on integer grid times `0..=steps`.
pub fn oracle_f(p: &[Vec<f64>], m: &[f64], c: f64, steps: usize) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n * n];
    for k in 0..=steps {
        let pk = mat_pow(p, k);
        let disc = c.powi(k as i32);
        for x in 0..n {
            for y in 0..n {
                let w = disc * dense_ot(&pk[x], &pk[y], m);
                out[x * n + y] = f64::max(out[x * n + y], w);
            }
        }
    }
    out
}

/// All paths of a unit-step chain from `x` over times `0..=steps`, with their probabilities.
pub fn paths(p: &[Vec<f64>], x: usize, steps: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(vec![x], 1.0)];
    for _ in 0..steps {
        out = out
            .into_iter()
            .flat_map(|(path, w)| {
                let last = *path.last().unwrap();
                (0..p.len()).filter(move |&z| p[last][z] > 0.0).map(move |z| {
                    let mut q = path.clone();
                    q.push(z);
                    (q, w * p[last][z])
                })
            })
            .collect();
    }
    out
}

/// `U_c(m)` between two grid paths with unit steps.
pub fn uniform_metric(a: &[usize], b: &[usize], m: &[f64], n: usize, c: f64) -> f64 {
    a.iter().zip(b).enumerate().map(|(k, (&u, &v))| c.powi(k as i32) * m[u * n + v]).fold(0.0, f64::max)
}

/// `G(m)` for a unit-step chain, from explicit path laws.
pub fn oracle_g(p: &[Vec<f64>], m: &[f64], c: f64, steps: usize) -> Vec<f64> {
    let n = p.len();
    let laws: Vec<_> = (0..n).map(|x| paths(p, x, steps)).collect();
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        for y in x + 1..n {
            let (a, b) = (&laws[x], &laws[y]);
            let wa: Vec<f64> = a.iter().map(|(_, w)| *w).collect();
            let wb: Vec<f64> = b.iter().map(|(_, w)| *w).collect();
            let v = flow_ot(&wa, &wb, &|i, j| uniform_metric(&a[i].0, &b[j].0, m, n, c));
            out[x * n + y] = v;
            out[y * n + x] = v;
        }
    }
    out
}

/// Least fixpoint of `phi` above the observable distance, by plain iteration.
pub fn oracle_fixpoint(obs: &[f64], phi: &dyn Fn(&[f64]) -> Vec<f64>, eps: f64) -> Vec<f64> {
    let n = obs.len();
    let mut m: Vec<f64> = (0..n * n).map(|k| (obs[k / n] - obs[k % n]).abs()).collect();
    for _ in 0..10_000 {
        let next = phi(&m);
        let change = next.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        m = next;
        if change <= eps {
            break;
        }
    }
    m
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `a - b` entry.
pub fn max_excess(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
}

/// Minimal transport cost by successive shortest augmenting paths (Bellman-Ford on the residual graph).
pub fn flow_ot(mu: &[f64], nu: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let (m, n) = (mu.len(), nu.len());
    let (src, sink, nodes) = (m + n, m + n + 1, m + n + 2);
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj = vec![Vec::new(); nodes];
    let mut add = |a: usize, b: usize, cap: f64, c: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost: c });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0.0, cost: -c });
    };
    for (i, w) in mu.iter().enumerate() {
        add(src, i, *w, 0.0);
    }
    for (j, w) in nu.iter().enumerate() {
        add(m + j, sink, *w, 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            add(i, m + j, f64::INFINITY, cost(i, j));
        }
    }
    let mut total = 0.0;
    let mut sent = 0.0;
    while sent < 1.0 - 1e-12 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > 1e-14 && dist[u] + ed.cost < dist[ed.to] - 1e-12 {
                        dist[ed.to] = dist[u] + ed.cost;
                        via[ed.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != src {
            assert!(path.len() <= nodes, "augmenting path does not reach the source");
            let e = via[v];
            path.push(e);
            v = edges[e ^ 1].to;
        }
        let push = path.iter().map(|&e| edges[e].cap).fold(f64::INFINITY, f64::min);
        for &e in &path {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
        }
        total += push * dist[sink];
        sent += push;
    }
    total
}
