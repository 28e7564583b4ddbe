//! Exact finite-MDP machinery.
//!
//! Everything here is computed in closed form by dense linear solves: state
//! values, state-action occupancy measures, simulation gaps and the
//! local misspecification diagnostics of a policy.
//!
//! Distances between next-state distributions are measured in L1
//! (`sum |p - q|`). The occupancy chain-rule bound
//! `|rho_T - rho_T'|_1 <= E_{rho_T}[d(T, T')] / (1 - gamma)` only holds with
//! that normalisation, so every diagnostic in the crate uses it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{truncated_weight, TruncationMode};

const ROW_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;
const POWER_ITER_CAP: usize = 1_000_000;

/// Finite MDP with a fixed initial state and state-action rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// Row-major `(s, a, s')`.
    transition: Vec<f64>,
    /// Row-major `(s, a)`.
    reward: Vec<f64>,
    gamma: f64,
    initial_state: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    initial_state: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_state: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Empty("state or action space"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::DimensionMismatch(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma {gamma} not in [0, 1)")));
        }
        if initial_state >= num_states {
            return Err(Error::InvalidParameter(format!("initial state {initial_state} out of range")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite reward {r}")));
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let row = &transition[(s * num_actions + a) * num_states..][..num_states];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > ROW_TOL {
                    return Err(Error::NonStochasticRow { state: s, action: a, sum });
                }
            }
        }
        Ok(Self { num_states, num_actions, transition, reward, gamma, initial_state })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Next-state distribution `T(. | s, a)`.
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.num_actions + a) * self.num_states..][..self.num_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_distribution(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn v_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma)
    }

    /// Same rewards, discount and start state with new dynamics.
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        Self::new(self.num_states, self.num_actions, transition, self.reward.clone(), self.gamma, self.initial_state)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let doc = MdpDocument {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            initial_state: self.initial_state,
            transition: self.transition.clone(),
            reward: self.reward.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: MdpDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(doc.num_states, doc.num_actions, doc.transition, doc.reward, doc.gamma, doc.initial_state)
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states != self.num_states || policy.num_actions != self.num_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.num_states, policy.num_actions, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    fn check_same_space(&self, other: &TabularMdp) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::DimensionMismatch(format!(
                "MDPs are {}x{} and {}x{}",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }

    /// State-to-state kernel and expected reward under `policy`.
    fn policy_chain(&self, policy: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_states;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                r[s] += pa * self.reward(s, a);
                for (next, t) in self.next_distribution(s, a).iter().enumerate() {
                    p[(s, next)] += pa * t;
                }
            }
        }
        (p, r)
    }
}

/// Stochastic policy `pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..][..num_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::NonStochasticPolicy { state: s, sum });
            }
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidParameter(format!("action {a} out of range")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self { num_states: actions.len(), num_actions, probs })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..][..self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Normalised discounted state-action visitation `rho(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    mass: Vec<f64>,
}

impl OccupancyMeasure {
    /// Wraps an arbitrary state-action distribution (for example a behavior
    /// density). Entries must be nonnegative and sum to one.
    pub fn from_mass(num_states: usize, num_actions: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "density has {} entries, expected {}",
                mass.len(),
                num_states * num_actions
            )));
        }
        let total: f64 = mass.iter().sum();
        if mass.iter().any(|m| *m < 0.0 || !m.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("density sums to {total}")));
        }
        Ok(Self { num_states, num_actions, mass })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mass[s * self.num_actions + a]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn l1_distance(&self, other: &OccupancyMeasure) -> f64 {
        self.mass.iter().zip(&other.mass).map(|(p, q)| (p - q).abs()).sum()
    }
}

/// State values `V(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest absolute entry.
    pub fn bound(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// State-action values `Q(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..][..self.num_actions]
    }
}

fn expect(dist: &[f64], values: &[f64]) -> f64 {
    dist.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// L1 distance between two next-state distributions.
pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

pub fn exact_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<ValueTable> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states;
    let gamma = mdp.gamma;
    let (p, r) = mdp.policy_chain(policy);
    let system = DMatrix::identity(n, n) - &p * gamma;
    let solved = system.clone().lu().solve(&r);

    let residual = |v: &DVector<f64>| (&system * v - &r).amax();
    let v = match solved {
        Some(v) if residual(&v) <= RESIDUAL_TOL => v,
        _ => {
            // Value iteration from zero; contraction modulus gamma.
            let mut v = DVector::zeros(n);
            let mut converged = false;
            for _ in 0..POWER_ITER_CAP {
                let next = &r + &p * &v * gamma;
                let delta = (&next - &v).amax();
                v = next;
                if delta <= 1e-12 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence { what: "policy evaluation", iterations: POWER_ITER_CAP });
            }
            v
        }
    };
    Ok(ValueTable::new(v.iter().copied().collect()))
}

pub fn exact_q(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<QTable> {
    let v = exact_value(mdp, policy)?;
    Ok(q_from_values(mdp, v.values()))
}

/// One-step lookahead `r(s, a) + gamma * E[V(s')]`.
pub fn q_from_values(mdp: &TabularMdp, values: &[f64]) -> QTable {
    let mut q = Vec::with_capacity(mdp.num_states * mdp.num_actions);
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            q.push(mdp.reward(s, a) + mdp.gamma * expect(mdp.next_distribution(s, a), values));
        }
    }
    QTable { num_actions: mdp.num_actions, values: q }
}

/// `rho(s, a) = (1 - gamma) sum_t gamma^t Pr(s_t = s, a_t = a | s_0)`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states;
    let gamma = mdp.gamma;
    let (p, _) = mdp.policy_chain(policy);
    let mut start = DVector::zeros(n);
    start[mdp.initial_state] = 1.0 - gamma;
    let system = DMatrix::identity(n, n) - p.transpose() * gamma;
    let residual = |d: &DVector<f64>| (&system * d - &start).amax();

    let state_mass = match system.clone().lu().solve(&start) {
        Some(d) if residual(&d) <= 1e-12 => d,
        _ => {
            let pt = p.transpose();
            let mut d = start.clone();
            let mut converged = false;
            for _ in 0..POWER_ITER_CAP {
                let next = &start + &pt * &d * gamma;
                let delta = (&next - &d).amax();
                d = next;
                if delta <= 1e-12 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence { what: "occupancy iteration", iterations: POWER_ITER_CAP });
            }
            d
        }
    };

    let mut mass = Vec::with_capacity(n * mdp.num_actions);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            mass.push((state_mass[s] * policy.prob(s, a)).max(0.0));
        }
    }
    Ok(OccupancyMeasure { num_states: n, num_actions: mdp.num_actions, mass })
}

/// Policy value at the initial state.
pub fn eta(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    Ok(exact_value(mdp, policy)?.get(mdp.initial_state))
}

/// `<rho, r> / (1 - gamma)`; equals [`eta`] by the occupancy identity.
pub fn eta_from_occupancy(mdp: &TabularMdp, rho: &OccupancyMeasure) -> f64 {
    rho.mass.iter().zip(&mdp.reward).map(|(m, r)| m * r).sum::<f64>() / (1.0 - mdp.gamma)
}

/// `gamma / (1 - gamma) * E_{rho^pi_model}[E_model V - E_true V]` with
/// `V = V^pi_true`. Equal to `eta(model) - eta(true)`.
pub fn simulation_gap(mdp_true: &TabularMdp, mdp_model: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    mdp_true.check_same_space(mdp_model)?;
    for s in 0..mdp_true.num_states {
        for a in 0..mdp_true.num_actions {
            if (mdp_true.reward(s, a) - mdp_model.reward(s, a)).abs() > 1e-12 {
                return Err(Error::RewardMismatch { state: s, action: a });
            }
        }
    }
    if (mdp_true.gamma - mdp_model.gamma).abs() > 0.0 {
        return Err(Error::InvalidParameter("discount factors differ".into()));
    }
    let v_true = exact_value(mdp_true, policy)?;
    let rho_model = exact_occupancy(mdp_model, policy)?;
    let mut acc = 0.0;
    for s in 0..mdp_true.num_states {
        for a in 0..mdp_true.num_actions {
            let m = rho_model.get(s, a);
            if m == 0.0 {
                continue;
            }
            let gap = expect(mdp_model.next_distribution(s, a), v_true.values())
                - expect(mdp_true.next_distribution(s, a), v_true.values());
            acc += m * gap;
        }
    }
    let gamma = mdp_true.gamma;
    Ok(gamma / (1.0 - gamma) * acc)
}

/// `E_{rho}[ |T(s,a) - T'(s,a)|_1 ]`.
pub fn expected_transition_l1(rho: &OccupancyMeasure, a: &TabularMdp, b: &TabularMdp) -> f64 {
    let mut acc = 0.0;
    for s in 0..a.num_states {
        for act in 0..a.num_actions {
            let m = rho.get(s, act);
            if m > 0.0 {
                acc += m * l1(a.next_distribution(s, act), b.next_distribution(s, act));
            }
        }
    }
    acc
}

/// Local misspecification of the dynamics, coverage and value classes for a
/// single policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalErrorDiagnostics {
    /// `inf_T E_{rho^pi_true}[d(T, T*)]`.
    pub eps_rho: f64,
    /// `rho^pi_true`-mass of pairs whose ratio to the behavior density exceeds `zeta / 2`.
    pub eps_mu: f64,
    /// Local value error evaluated at the `eps_rho` minimiser.
    pub eps_v: f64,
    /// Index in the dynamics class attaining `eps_rho`.
    pub best_model: usize,
    /// Largest absolute entry over the value class; the Open-Question bound used.
    pub value_bound: f64,
}

/// Exact truncated ratio weights `1{rho/mu <= zeta} rho/mu` per (s, a).
pub fn exact_truncated_weights(rho: &OccupancyMeasure, behavior: &OccupancyMeasure, zeta: f64) -> Vec<f64> {
    rho.mass
        .iter()
        .zip(&behavior.mass)
        .map(|(r, m)| truncated_weight(*r, *m, zeta, TruncationMode::Indicator))
        .collect()
}

/// `rho`-mass on pairs with `rho / mu > threshold` (`mu = 0 < rho` counts).
pub fn mismatch_mass(rho: &OccupancyMeasure, behavior: &OccupancyMeasure, threshold: f64) -> f64 {
    rho.mass
        .iter()
        .zip(&behavior.mass)
        .filter(|(r, m)| **r > 0.0 && (**m <= 0.0 || **r / **m > threshold))
        .fold(0.0, |acc, (r, _)| acc + r)
}

/// `inf_g |E_mu[w_{pi,T} (E_T[g - V] - E_T*[g - V])]|` with `V = V^pi_true`,
/// using the exact occupancy of `policy` under `model` for the weights.
pub fn local_value_error(
    mdp_true: &TabularMdp,
    model: &TabularMdp,
    value_class: &[ValueTable],
    policy: &TabularPolicy,
    behavior: &OccupancyMeasure,
    zeta: f64,
) -> Result<f64> {
    if value_class.is_empty() {
        return Err(Error::Empty("value class"));
    }
    mdp_true.check_same_space(model)?;
    let v_true = exact_value(mdp_true, policy)?;
    let rho_model = exact_occupancy(model, policy)?;
    let w = exact_truncated_weights(&rho_model, behavior, zeta);
    let mut best = f64::INFINITY;
    for g in value_class {
        if g.len() != mdp_true.num_states {
            return Err(Error::DimensionMismatch("value table length".into()));
        }
        let diff: Vec<f64> = g.values().iter().zip(v_true.values()).map(|(g, v)| g - v).collect();
        let mut acc = 0.0;
        for s in 0..mdp_true.num_states {
            for a in 0..mdp_true.num_actions {
                let idx = s * mdp_true.num_actions + a;
                let weight = behavior.mass[idx] * w[idx];
                if weight == 0.0 {
                    continue;
                }
                acc += weight
                    * (expect(model.next_distribution(s, a), &diff) - expect(mdp_true.next_distribution(s, a), &diff));
            }
        }
        best = best.min(acc.abs());
    }
    Ok(best)
}

pub fn local_errors(
    mdp_true: &TabularMdp,
    dynamics_class: &[TabularMdp],
    value_class: &[ValueTable],
    policy: &TabularPolicy,
    behavior: &OccupancyMeasure,
    zeta: f64,
) -> Result<LocalErrorDiagnostics> {
    if dynamics_class.is_empty() {
        return Err(Error::Empty("dynamics class"));
    }
    if value_class.is_empty() {
        return Err(Error::Empty("value class"));
    }
    if behavior.num_states != mdp_true.num_states || behavior.num_actions != mdp_true.num_actions {
        return Err(Error::DimensionMismatch("behavior density shape".into()));
    }
    let rho_true = exact_occupancy(mdp_true, policy)?;
    let mut eps_rho = f64::INFINITY;
    let mut best_model = 0;
    for (i, model) in dynamics_class.iter().enumerate() {
        mdp_true.check_same_space(model)?;
        let d = expected_transition_l1(&rho_true, model, mdp_true);
        if d < eps_rho {
            eps_rho = d;
            best_model = i;
        }
    }
    let eps_mu = mismatch_mass(&rho_true, behavior, zeta / 2.0);
    let eps_v = local_value_error(mdp_true, &dynamics_class[best_model], value_class, policy, behavior, zeta)?;
    let value_bound = value_class.iter().fold(0.0_f64, |m, g| m.max(g.bound()));
    Ok(LocalErrorDiagnostics { eps_rho, eps_mu, eps_v, best_model, value_bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![1.0], gamma, 0).unwrap()
    }

    fn chain(gamma: f64) -> TabularMdp {
        // s0 -> s1, s1 absorbing.
        TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0], gamma, 0).unwrap()
    }

    #[test]
    fn self_loop_value_is_geometric_series() {
        let mdp = self_loop(0.9);
        let pi = TabularPolicy::uniform(1, 1);
        let v = exact_value(&mdp, &pi).unwrap();
        assert!((v.get(0) - 10.0).abs() < 1e-10);
        assert!((eta(&mdp, &pi).unwrap() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn single_pair_occupancy_is_one() {
        let rho = exact_occupancy(&self_loop(0.9), &TabularPolicy::uniform(1, 1)).unwrap();
        assert!((rho.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_chain_occupancy() {
        let rho = exact_occupancy(&chain(0.5), &TabularPolicy::uniform(2, 1)).unwrap();
        assert!((rho.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((rho.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows_and_shapes() {
        assert!(matches!(TabularMdp::new(1, 1, vec![0.5], vec![1.0], 0.9, 0), Err(Error::NonStochasticRow { .. })));
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 1.0, 0).is_err());
        let mdp = chain(0.9);
        let wrong = TabularPolicy::uniform(3, 1);
        assert!(matches!(exact_value(&mdp, &wrong), Err(Error::DimensionMismatch(_))));
        assert!(TabularPolicy::new(1, 2, vec![0.3, 0.3]).is_err());
    }

    #[test]
    fn simulation_gap_zero_for_identical_models() {
        let mdp = chain(0.7);
        let pi = TabularPolicy::uniform(2, 1);
        assert!(simulation_gap(&mdp, &mdp, &pi).unwrap().abs() < 1e-12);
    }

    #[test]
    fn simulation_gap_rejects_reward_mismatch() {
        let a = chain(0.7);
        let b = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.5, 1.0], 0.7, 0).unwrap();
        assert!(matches!(simulation_gap(&a, &b, &TabularPolicy::uniform(2, 1)), Err(Error::RewardMismatch { .. })));
    }

    #[test]
    fn local_errors_zero_when_truth_in_class() {
        let mdp = chain(0.8);
        let pi = TabularPolicy::uniform(2, 1);
        let rho = exact_occupancy(&mdp, &pi).unwrap();
        let v = exact_value(&mdp, &pi).unwrap();
        let diag = local_errors(&mdp, std::slice::from_ref(&mdp), &[v], &pi, &rho, 2.0).unwrap();
        assert_eq!(diag.eps_rho, 0.0);
        assert_eq!(diag.eps_mu, 0.0);
        assert!(diag.eps_v.abs() < 1e-12);
    }

    #[test]
    fn local_errors_rejects_empty_classes() {
        let mdp = chain(0.8);
        let pi = TabularPolicy::uniform(2, 1);
        let rho = exact_occupancy(&mdp, &pi).unwrap();
        assert!(local_errors(&mdp, &[], &[ValueTable::new(vec![0.0, 0.0])], &pi, &rho, 2.0).is_err());
        assert!(local_errors(&mdp, std::slice::from_ref(&mdp), &[], &pi, &rho, 2.0).is_err());
    }

    #[test]
    fn zero_behavior_mass_counts_as_mismatch() {
        let mdp = chain(0.5);
        let pi = TabularPolicy::uniform(2, 1);
        let rho = exact_occupancy(&mdp, &pi).unwrap();
        let mu = OccupancyMeasure::from_mass(2, 1, vec![1.0, 0.0]).unwrap();
        assert!((mismatch_mass(&rho, &mu, 1e9) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let mdp = chain(0.9);
        let text = mdp.to_toml_string().unwrap();
        assert!(text.contains("num_states"));
        assert_eq!(TabularMdp::from_toml_str(&text).unwrap(), mdp);
        assert!(TabularMdp::from_toml_str("num_states = 1\nbogus = 2").is_err());
    }
}
