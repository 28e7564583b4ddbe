//! Partitioned-state counterexample where every model in a parametric class
//! is accurate on only one part of the state space.
//!
//! Layout for `d` arms: state `0` is the start, states `1..=d` are the arm
//! states, `d + 1` is the goal and `d + 2` the trap. There are `d` actions;
//! reward is 1 at the goal. From the start, action `j` moves to arm `j`; at arm
//! `i`, action `j` reaches the goal iff `i == j`. Goal and trap are absorbing.
//! Model `T_theta` replaces the arm-state rows by a goal probability
//! `(1 + theta_j) / 2` that ignores which arm the agent is in.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::TransitionDataset;
use crate::mdp::{
    exact_occupancy, exact_value, q_from_values, OccupancyMeasure, TabularMdp, TabularPolicy, ValueTable,
};

const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardInstanceSpec {
    d: usize,
    gamma: f64,
}

impl HardInstanceSpec {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 arms, got {d}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma {gamma} not in [0, 1)")));
        }
        Ok(Self { d, gamma })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_states(&self) -> usize {
        self.d + 3
    }

    pub fn num_actions(&self) -> usize {
        self.d
    }

    pub fn start(&self) -> usize {
        0
    }

    /// Arm state for zero-based arm `i`.
    pub fn arm(&self, i: usize) -> usize {
        1 + i
    }

    pub fn goal(&self) -> usize {
        self.d + 1
    }

    pub fn trap(&self) -> usize {
        self.d + 2
    }

    /// `max_pi eta(T*, pi) = gamma^2 / (1 - gamma)`.
    pub fn optimal_value(&self) -> f64 {
        self.gamma * self.gamma / (1.0 - self.gamma)
    }

    /// Floor on the greedy-from-model gap: `(A - 1) gamma^2 / (A (1 - gamma))`.
    pub fn gap_floor(&self) -> f64 {
        let a = self.d as f64;
        (a - 1.0) * self.gamma * self.gamma / (a * (1.0 - self.gamma))
    }

    /// Floor on the best-model MML loss: `gamma / (8 (1 - gamma))`.
    pub fn mml_floor(&self) -> f64 {
        self.gamma / (8.0 * (1.0 - self.gamma))
    }
}

/// Nonnegative unit vector parameterising one model of the class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaDynamics {
    theta: Vec<f64>,
}

impl ThetaDynamics {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParameter("theta entries must be finite and nonnegative".into()));
        }
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("theta must have unit norm, got {norm}")));
        }
        Ok(Self { theta })
    }

    /// Rescales a nonnegative, nonzero vector onto the unit sphere.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|t| t * t).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("theta must be nonzero".into()));
        }
        Self::new(raw.iter().map(|t| t / norm).collect())
    }

    /// Standard basis vector `e_j` (zero-based).
    pub fn basis(d: usize, j: usize) -> Result<Self> {
        if j >= d {
            return Err(Error::InvalidParameter(format!("basis index {j} out of range for d = {d}")));
        }
        let mut theta = vec![0.0; d];
        theta[j] = 1.0;
        Self::new(theta)
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Index of the strictly largest entry, if there is one.
    pub fn unique_argmax(&self) -> Option<usize> {
        let max = self.theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hits: Vec<usize> = (0..self.theta.len()).filter(|i| self.theta[*i] >= max - 1e-12).collect();
        (hits.len() == 1).then(|| hits[0])
    }
}

fn dense_transition(spec: &HardInstanceSpec, arm_row: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let (ns, na) = (spec.num_states(), spec.num_actions());
    let mut t = vec![0.0; ns * na * ns];
    let idx = |s: usize, a: usize, n: usize| (s * na + a) * ns + n;
    for a in 0..na {
        t[idx(spec.start(), a, spec.arm(a))] = 1.0;
        t[idx(spec.goal(), a, spec.goal())] = 1.0;
        t[idx(spec.trap(), a, spec.trap())] = 1.0;
        for i in 0..spec.d {
            let p = arm_row(i, a);
            t[idx(spec.arm(i), a, spec.goal())] = p;
            t[idx(spec.arm(i), a, spec.trap())] = 1.0 - p;
        }
    }
    t
}

fn rewards(spec: &HardInstanceSpec) -> Vec<f64> {
    let (ns, na) = (spec.num_states(), spec.num_actions());
    let mut r = vec![0.0; ns * na];
    for a in 0..na {
        r[spec.goal() * na + a] = 1.0;
    }
    r
}

pub fn build_true_mdp(spec: &HardInstanceSpec) -> Result<TabularMdp> {
    let t = dense_transition(spec, |i, a| if i == a { 1.0 } else { 0.0 });
    TabularMdp::new(spec.num_states(), spec.num_actions(), t, rewards(spec), spec.gamma, spec.start())
}

pub fn build_theta_mdp(spec: &HardInstanceSpec, theta: &ThetaDynamics) -> Result<TabularMdp> {
    if theta.dim() != spec.d {
        return Err(Error::DimensionMismatch(format!("theta has {} entries, expected {}", theta.dim(), spec.d)));
    }
    let t = dense_transition(spec, |_, a| 0.5 * (1.0 + theta.theta[a]));
    TabularMdp::new(spec.num_states(), spec.num_actions(), t, rewards(spec), spec.gamma, spec.start())
}

/// Deterministic policy taking `first` at the start, `then` at every arm
/// state, and action 0 at the goal and trap.
pub fn two_stage_policy(spec: &HardInstanceSpec, first: usize, then: usize) -> Result<TabularPolicy> {
    if first >= spec.d || then >= spec.d {
        return Err(Error::InvalidParameter("action index out of range".into()));
    }
    let mut actions = vec![0; spec.num_states()];
    actions[spec.start()] = first;
    for i in 0..spec.d {
        actions[spec.arm(i)] = then;
    }
    TabularPolicy::deterministic(spec.num_actions(), &actions)
}

/// Policy taking arm `x` everywhere except the absorbing states.
pub fn arm_policy(spec: &HardInstanceSpec, x: usize) -> Result<TabularPolicy> {
    two_stage_policy(spec, x, x)
}

/// All `d^2` two-stage policies, index `first * d + then`.
pub fn extended_policies(spec: &HardInstanceSpec) -> Result<Vec<TabularPolicy>> {
    let mut out = Vec::with_capacity(spec.d * spec.d);
    for first in 0..spec.d {
        for then in 0..spec.d {
            out.push(two_stage_policy(spec, first, then)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HardFamily {
    pub true_mdp: TabularMdp,
    /// One policy per arm.
    pub policies: Vec<TabularPolicy>,
    /// True value of each arm policy.
    pub values: Vec<ValueTable>,
}

pub fn build_hard_family(spec: &HardInstanceSpec) -> Result<HardFamily> {
    let true_mdp = build_true_mdp(spec)?;
    let policies = (0..spec.d).map(|x| arm_policy(spec, x)).collect::<Result<Vec<_>>>()?;
    let values = policies.iter().map(|p| exact_value(&true_mdp, p)).collect::<Result<Vec<_>>>()?;
    Ok(HardFamily { true_mdp, policies, values })
}

const PI_CAP: usize = 10_000;

/// Optimal state values by policy iteration over deterministic policies.
/// An action is switched only when it improves Q by more than a relative 1e-12.
pub fn optimal_values(mdp: &TabularMdp) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let eps = 1e-12 * mdp.v_max().max(1.0);
    let mut actions = vec![0usize; ns];
    for _ in 0..PI_CAP {
        let v = exact_value(mdp, &TabularPolicy::deterministic(na, &actions)?)?;
        let q = q_from_values(mdp, v.values());
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            let row = q.row(s);
            let (best, best_q) =
                row.iter()
                    .enumerate()
                    .fold((*current, row[*current]), |acc, (a, x)| if *x > acc.1 { (a, *x) } else { acc });
            if best_q > row[*current] + eps {
                *current = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(v.values().to_vec());
        }
    }
    Err(Error::NoConvergence { what: "policy iteration", iterations: PI_CAP })
}

/// Optimal policy of `mdp`, uniform over actions whose Q is within 1e-9 of
/// the best.
pub fn greedy_policy(mdp: &TabularMdp) -> Result<TabularPolicy> {
    let v = optimal_values(mdp)?;
    let q = q_from_values(mdp, &v);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        let row = q.row(s);
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..na).filter(|a| row[*a] >= best - TIE_TOL).collect();
        for a in &tied {
            probs[s * na + a] = 1.0 / tied.len() as f64;
        }
    }
    TabularPolicy::new(ns, na, probs)
}

/// `max_pi eta(T*, pi) - eta(T*, greedy(T_theta))`.
pub fn suboptimality_gap(spec: &HardInstanceSpec, theta: &ThetaDynamics) -> Result<f64> {
    let true_mdp = build_true_mdp(spec)?;
    let best = optimal_values(&true_mdp)?[spec.start()];
    gap_against(spec, &true_mdp, best, theta)
}

/// [`suboptimality_gap`] for every grid point, solving the true MDP once.
pub fn suboptimality_gaps(spec: &HardInstanceSpec, grid: &[ThetaDynamics]) -> Result<Vec<f64>> {
    let true_mdp = build_true_mdp(spec)?;
    let best = optimal_values(&true_mdp)?[spec.start()];
    grid.par_iter().map(|theta| gap_against(spec, &true_mdp, best, theta)).collect()
}

fn gap_against(spec: &HardInstanceSpec, true_mdp: &TabularMdp, best: f64, theta: &ThetaDynamics) -> Result<f64> {
    let greedy = greedy_policy(&build_theta_mdp(spec, theta)?)?;
    Ok(best - crate::mdp::eta(true_mdp, &greedy)?)
}

/// Exact population loss `|E_mu[w (E_T g - E_T* g)]|` with `mu` uniform over
/// all state-action pairs, `w = rho / ((1 - gamma) mu)` for the occupancy of
/// arm policy `weight_arm` under the true dynamics, and `g` the true value
/// of arm policy `value_arm`.
pub fn mml_population_loss_pair(
    spec: &HardInstanceSpec,
    theta: &ThetaDynamics,
    weight_arm: usize,
    value_arm: usize,
) -> Result<f64> {
    let family = build_hard_family(spec)?;
    let model = build_theta_mdp(spec, theta)?;
    population_loss(&family, &model, weight_arm, value_arm)
}

fn population_loss(family: &HardFamily, model: &TabularMdp, weight_arm: usize, value_arm: usize) -> Result<f64> {
    let truth = &family.true_mdp;
    let (ns, na) = (truth.num_states(), truth.num_actions());
    let gamma = truth.gamma();
    let mu = 1.0 / (ns * na) as f64;
    let rho = exact_occupancy(truth, &family.policies[weight_arm])?;
    let g = family.values[value_arm].values();
    let mut acc = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let w = rho.get(s, a) / ((1.0 - gamma) * mu);
            if w == 0.0 {
                continue;
            }
            let diff: f64 = (0..ns).map(|n| (model.prob(s, a, n) - truth.prob(s, a, n)) * g[n]).sum();
            acc += mu * w * diff;
        }
    }
    Ok(acc.abs())
}

/// Loss of arm `x` probed with its own weight and value function; equals
/// `gamma (1 - theta_x) / (2 (1 - gamma))`.
pub fn mml_population_loss(spec: &HardInstanceSpec, theta: &ThetaDynamics, x: usize) -> Result<f64> {
    if x >= spec.d {
        return Err(Error::InvalidParameter(format!("arm {x} out of range")));
    }
    mml_population_loss_pair(spec, theta, x, x)
}

/// `max_{w, g} |loss|` over the arm-induced weights and arm value functions.
pub fn mml_max_loss(spec: &HardInstanceSpec, theta: &ThetaDynamics) -> Result<f64> {
    let family = build_hard_family(spec)?;
    let model = build_theta_mdp(spec, theta)?;
    let mut best = 0.0_f64;
    for w in 0..spec.d {
        for g in 0..spec.d {
            best = best.max(population_loss(&family, &model, w, g)?);
        }
    }
    Ok(best)
}

/// Nonnegative vectors with entries on a grid of `steps` equal spacings of
/// `[0, 1]`, projected to the unit sphere. Directions are deduplicated by
/// keeping only integer vectors with coprime entries.
pub fn theta_grid(d: usize, steps: usize) -> Result<Vec<ThetaDynamics>> {
    if d == 0 || steps == 0 {
        return Err(Error::InvalidParameter("grid needs d >= 1 and steps >= 1".into()));
    }
    let total = (steps + 1).checked_pow(d as u32).ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
    let mut out = Vec::new();
    let mut digits = vec![0usize; d];
    for code in 0..total {
        let mut c = code;
        for slot in digits.iter_mut() {
            *slot = c % (steps + 1);
            c /= steps + 1;
        }
        let g = digits.iter().fold(0, |acc, x| gcd(acc, *x));
        if g != 1 {
            continue;
        }
        let raw: Vec<f64> = digits.iter().rev().map(|x| *x as f64 / steps as f64).collect();
        out.push(ThetaDynamics::normalized(&raw)?);
    }
    Ok(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta_index: usize,
    pub gap: f64,
    pub bound: f64,
    pub mml_loss: f64,
    pub mml_floor: f64,
}

pub fn sweep(spec: &HardInstanceSpec, grid: &[ThetaDynamics]) -> Result<Vec<SweepRow>> {
    let gaps = suboptimality_gaps(spec, grid)?;
    grid.par_iter()
        .enumerate()
        .map(|(i, theta)| {
            Ok(SweepRow {
                theta_index: i,
                gap: gaps[i],
                bound: spec.gap_floor(),
                mml_loss: mml_max_loss(spec, theta)?,
                mml_floor: spec.mml_floor(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Log-likelihood of the recorded next states under `model`.
pub fn log_likelihood(model: &TabularMdp, dataset: &TransitionDataset) -> f64 {
    dataset.records().iter().map(|r| model.prob(r.s as usize, r.a as usize, r.s_next as usize).ln()).sum()
}

/// Expected log-likelihood under the true next-state law with `(s, a)`
/// drawn from `behavior`.
pub fn population_log_likelihood(model: &TabularMdp, truth: &TabularMdp, behavior: &OccupancyMeasure) -> f64 {
    let (ns, na) = (truth.num_states(), truth.num_actions());
    let mut acc = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let m = behavior.get(s, a);
            if m == 0.0 {
                continue;
            }
            for n in 0..ns {
                let p = truth.prob(s, a, n);
                if p > 0.0 {
                    acc += m * p * model.prob(s, a, n).ln();
                }
            }
        }
    }
    acc
}

/// Model-then-plan baseline: the grid model with the highest likelihood on
/// `dataset`, and its greedy policy. Ties go to the lowest grid index.
pub fn fit_then_plan(
    spec: &HardInstanceSpec,
    grid: &[ThetaDynamics],
    dataset: &TransitionDataset,
) -> Result<(usize, TabularPolicy)> {
    if grid.is_empty() {
        return Err(Error::Empty("theta grid"));
    }
    let scores = grid
        .par_iter()
        .map(|theta| Ok(log_likelihood(&build_theta_mdp(spec, theta)?, dataset)))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let policy = greedy_policy(&build_theta_mdp(spec, &grid[best])?)?;
    Ok((best, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::eta;

    fn spec4() -> HardInstanceSpec {
        HardInstanceSpec::new(4, 0.9).unwrap()
    }

    #[test]
    fn two_arm_true_rows() {
        let spec = HardInstanceSpec::new(2, 0.9).unwrap();
        let t = build_true_mdp(&spec).unwrap();
        assert_eq!(t.prob(spec.arm(0), 0, spec.goal()), 1.0);
        assert_eq!(t.prob(spec.arm(0), 1, spec.trap()), 1.0);
    }

    #[test]
    fn arm_policies_are_optimal() {
        let spec = spec4();
        let fam = build_hard_family(&spec).unwrap();
        for (p, v) in fam.policies.iter().zip(&fam.values) {
            assert!((eta(&fam.true_mdp, p).unwrap() - 8.1).abs() < 1e-10);
            assert!((v.get(spec.goal()) - 10.0).abs() < 1e-10);
            assert!(v.get(spec.trap()).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_rows() {
        let spec = spec4();
        let e1 = build_theta_mdp(&spec, &ThetaDynamics::basis(4, 0).unwrap()).unwrap();
        for i in 0..4 {
            assert_eq!(e1.prob(spec.arm(i), 0, spec.goal()), 1.0);
        }
        let flat = build_theta_mdp(&spec, &ThetaDynamics::normalized(&[1.0; 4]).unwrap()).unwrap();
        assert!((flat.prob(spec.arm(2), 3, spec.goal()) - 0.75).abs() < 1e-12);
        assert!(ThetaDynamics::new(vec![0.5, 0.5]).is_err());
        assert!(ThetaDynamics::new(vec![-1.0, 0.0]).is_err());
    }

    #[test]
    fn greedy_on_truth_matches_arm() {
        let spec = spec4();
        let pi = greedy_policy(&build_true_mdp(&spec).unwrap()).unwrap();
        for i in 0..4 {
            assert_eq!(pi.prob(spec.arm(i), i), 1.0);
        }
    }

    #[test]
    fn greedy_ties_are_uniform() {
        let spec = spec4();
        let flat = build_theta_mdp(&spec, &ThetaDynamics::normalized(&[1.0; 4]).unwrap()).unwrap();
        let pi = greedy_policy(&flat).unwrap();
        for a in 0..4 {
            assert!((pi.prob(spec.arm(1), a) - 0.25).abs() < 1e-15);
            assert!((pi.prob(spec.start(), a) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_matches_floor() {
        let spec = spec4();
        let gap = suboptimality_gap(&spec, &ThetaDynamics::basis(4, 0).unwrap()).unwrap();
        assert!((gap - 6.075).abs() < 1e-8);
        let zero = HardInstanceSpec::new(4, 0.0).unwrap();
        assert!(suboptimality_gap(&zero, &ThetaDynamics::basis(4, 2).unwrap()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn population_loss_closed_form() {
        let spec = spec4();
        let flat = ThetaDynamics::normalized(&[1.0; 4]).unwrap();
        assert!((mml_population_loss(&spec, &flat, 0).unwrap() - 2.25).abs() < 1e-10);
        let e2 = ThetaDynamics::basis(4, 1).unwrap();
        assert!(mml_population_loss(&spec, &e2, 1).unwrap().abs() < 1e-12);
        let theta = ThetaDynamics::normalized(&[0.3, 0.1, 0.7, 0.2]).unwrap();
        for x in 0..4 {
            let want = 0.9 * (1.0 - theta.values()[x]) / (2.0 * 0.1);
            assert!((mml_population_loss(&spec, &theta, x).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_is_deduplicated() {
        let grid = theta_grid(2, 10).unwrap();
        // Coprime pairs in [0,10]^2 excluding the origin.
        let want =
            (0..=10usize).flat_map(|a| (0..=10usize).map(move |b| (a, b))).filter(|(a, b)| gcd(*a, *b) == 1).count();
        assert_eq!(grid.len(), want);
        assert!(grid.iter().any(|t| t.values() == [1.0, 0.0]));
    }
}
