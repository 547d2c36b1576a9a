mod common;

use bisimetric::transport::{solve_ot, transport_cost, verify_duality, CostMatrix, DiscreteDistribution};
use common::{flow_ot, random_pseudometric, random_weights, rng, vertex_ot};
use proptest::prelude::*;

fn instance(seed: u64, ground: usize, sm: usize, sn: usize) -> (DiscreteDistribution, DiscreteDistribution, CostMatrix) {
    let mut r = rng(seed);
    let d = random_pseudometric(&mut r, ground);
    let pick = |r: &mut rand_chacha::ChaCha8Rng, k: usize| {
        let mut s: Vec<usize> = rand::seq::index::sample(r, ground, k).into_vec();
        s.sort_unstable();
        s
    };
    let (su, sv) = (pick(&mut r, sm), pick(&mut r, sn));
    let mu = DiscreteDistribution::new(su, random_weights(&mut r, sm, false)).unwrap();
    let nu = DiscreteDistribution::new(sv, random_weights(&mut r, sn, false)).unwrap();
    (mu, nu, CostMatrix::square(ground, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_matches_vertex_enumeration(seed in any::<u64>(), ground in 4usize..7, sm in 1usize..5, sn in 1usize..5) {
        let (mu, nu, cost) = instance(seed, ground, sm, sn);
        let res = solve_ot(&mu, &nu, &cost).unwrap();
        let oracle = vertex_ot(mu.weights(), nu.weights(), &|i, j| cost.get(mu.support()[i], nu.support()[j]));
        prop_assert!((res.cost - oracle).abs() <= 1e-9, "solver {} oracle {}", res.cost, oracle);
        let rep = verify_duality(&res, &mu, &nu, &cost, 1e-9);
        prop_assert!(rep.ok, "{:?}", rep);
        prop_assert!(rep.gap <= 1e-9);
    }

    #[test]
    fn rectangular_costs_match_oracle(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let mu = DiscreteDistribution::new((0..m).collect(), random_weights(&mut r, m, false)).unwrap();
        let nu = DiscreteDistribution::new((0..n).collect(), random_weights(&mut r, n, false)).unwrap();
        let values: Vec<f64> = (0..m * n).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let cost = CostMatrix::new(m, n, values).unwrap();
        let res = solve_ot(&mu, &nu, &cost).unwrap();
        prop_assert_eq!(res.potential.is_some(), m == n);
        let oracle = vertex_ot(mu.weights(), nu.weights(), &|i, j| cost.get(i, j));
        prop_assert!((res.cost - oracle).abs() <= 1e-9);
        prop_assert!(res.coupling.marginal_error(&mu, &nu) <= 1e-9);
        let dual: f64 = res.row_potential.iter().zip(mu.weights()).map(|(u, w)| u * w).sum::<f64>()
            + res.col_potential.iter().zip(nu.weights()).map(|(v, w)| v * w).sum::<f64>();
        prop_assert!((dual - res.cost).abs() <= 1e-9);
        for i in 0..m {
            for j in 0..n {
                prop_assert!(res.row_potential[i] + res.col_potential[j] <= cost.get(i, j) + 1e-9);
            }
        }
    }
}

#[test]
fn degenerate_marginals() {
    let mu = DiscreteDistribution::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
    let nu = DiscreteDistribution::new(vec![2, 3], vec![0.5, 0.5]).unwrap();
    let cost = CostMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 }).unwrap();
    let res = solve_ot(&mu, &nu, &cost).unwrap();
    assert!((res.cost - 1.0).abs() < 1e-15);
    assert!(verify_duality(&res, &mu, &nu, &cost, 1e-12).ok);
    let same = transport_cost(&mu, &mu, &cost).unwrap();
    assert_eq!(same, 0.0);
}

#[test]
fn known_three_point_line() {
    let d = |i: usize, j: usize| (i as f64 - j as f64).abs() / 2.0;
    let cost = CostMatrix::from_fn(3, 3, d).unwrap();
    let mu = DiscreteDistribution::dirac(0);
    let nu = DiscreteDistribution::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    let res = solve_ot(&mu, &nu, &cost).unwrap();
    assert!((res.cost - 0.75).abs() < 1e-15);
    let h = res.potential.as_ref().unwrap();
    assert!(((h[0] - h[1]).abs() - 0.5).abs() < 1e-12 && ((h[0] - h[2]).abs() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flow_oracle_agrees_with_vertex_oracle(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let (mu, nu) = (random_weights(&mut r, m, false), random_weights(&mut r, n, false));
        let values: Vec<f64> = (0..m * n).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let cost = |i: usize, j: usize| values[i * n + j];
        prop_assert!((flow_ot(&mu, &nu, &cost) - vertex_ot(&mu, &nu, &cost)).abs() <= 1e-9);
    }
}
