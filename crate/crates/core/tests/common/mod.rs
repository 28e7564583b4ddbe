//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use mblb_core::mdp::{TabularMdp, TabularPolicy};
use rand::{Rng, RngCore};

pub fn random_simplex(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Simplex draw with some entries forced to zero, so supports differ.
pub fn sparse_simplex(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = rng.random_range(0..n);
    let mut p: Vec<f64> = (0..n)
        .map(|i| if i == keep || rng.random_bool(0.7) { -(1.0 - rng.random::<f64>()).ln() } else { 0.0 })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

pub fn random_kernel(ns: usize, na: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..ns * na).flat_map(|_| sparse_simplex(ns, rng)).collect()
}

pub fn random_mdp(ns: usize, na: usize, gamma: f64, rng: &mut dyn RngCore) -> TabularMdp {
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let s0 = rng.random_range(0..ns);
    TabularMdp::new(ns, na, random_kernel(ns, na, rng), reward, gamma, s0).unwrap()
}

pub fn random_policy(ns: usize, na: usize, rng: &mut dyn RngCore) -> TabularPolicy {
    let probs = (0..ns).flat_map(|_| random_simplex(na, rng)).collect();
    TabularPolicy::new(ns, na, probs).unwrap()
}

/// Iterated Bellman backups until the sup change drops below 1e-15.
pub fn oracle_value(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
    let (ns, na, g) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    let mut v = vec![0.0; ns];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let ev: f64 = (0..ns).map(|x| mdp.prob(s, a, x) * v[x]).sum();
                        pi.prob(s, a) * (mdp.reward(s, a) + g * ev)
                    })
                    .sum()
            })
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-15 {
            break;
        }
    }
    v
}

/// `(1 - gamma) sum_h gamma^h Pr(s_h, a_h)` by forward propagation.
pub fn oracle_occupancy(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
    let (ns, na, g) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    let mut d = vec![0.0; ns];
    d[mdp.initial_state()] = 1.0;
    let mut rho = vec![0.0; ns * na];
    let mut weight = 1.0 - g;
    while weight > 1e-18 {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let m = d[s] * pi.prob(s, a);
                rho[s * na + a] += weight * m;
                for x in 0..ns {
                    next[x] += m * mdp.prob(s, a, x);
                }
            }
        }
        d = next;
        weight *= g;
    }
    rho
}

pub fn oracle_eta(mdp: &TabularMdp, pi: &TabularPolicy) -> f64 {
    oracle_value(mdp, pi)[mdp.initial_state()]
}

pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}
