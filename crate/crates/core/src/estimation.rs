//! Offline datasets, histogram densities, truncated density ratios and
//! Monte-Carlo / GAE value estimation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::rng::rng_for;

/// Trajectories per independently seeded batch. Fixed so that results do not
/// depend on the number of worker threads.
const BATCH: usize = 64;

/// State or action that can be placed on the real line for binning.
pub trait Coord: Copy + Send + Sync {
    fn coord(self) -> f64;
}

impl Coord for f64 {
    fn coord(self) -> f64 {
        self
    }
}

impl Coord for usize {
    fn coord(self) -> f64 {
        self as f64
    }
}

/// Dynamics that can be simulated from their own initial-state distribution.
pub trait RolloutEnv: Sync {
    type State: Coord;
    type Action: Coord;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Self::State;
    fn step(&self, s: Self::State, a: Self::Action, rng: &mut dyn RngCore) -> Self::State;
    fn reward(&self, s: Self::State, a: Self::Action) -> f64;
}

pub trait RolloutPolicy<S, A>: Sync {
    fn act(&self, s: S, rng: &mut dyn RngCore) -> A;
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: last index with positive mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

impl RolloutEnv for TabularMdp {
    type State = usize;
    type Action = usize;

    fn initial_state(&self, _rng: &mut dyn RngCore) -> usize {
        TabularMdp::initial_state(self)
    }

    fn step(&self, s: usize, a: usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(self.next_distribution(s, a), rng)
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        TabularMdp::reward(self, s, a)
    }
}

impl RolloutPolicy<usize, usize> for TabularPolicy {
    fn act(&self, s: usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(self.row(s), rng)
    }
}

/// One `(s, a, r, s')` step with trajectory bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub traj_id: u64,
    pub t: u32,
    pub s: f64,
    pub a: f64,
    pub r: f64,
    pub s_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Tabular { num_states: usize, num_actions: usize },
    Continuous1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    domain: Domain,
    records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(domain: Domain, records: Vec<Transition>) -> Result<Self> {
        for rec in &records {
            if !rec.r.is_finite() || !rec.s.is_finite() || !rec.a.is_finite() || !rec.s_next.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite record in trajectory {}", rec.traj_id)));
            }
            if let Domain::Tabular { num_states, num_actions } = domain {
                let ok_state = |x: f64| x >= 0.0 && x.fract() == 0.0 && (x as usize) < num_states;
                if !ok_state(rec.s) || !ok_state(rec.s_next) {
                    return Err(Error::InvalidParameter(format!("state index out of range: {rec:?}")));
                }
                if rec.a < 0.0 || rec.a.fract() != 0.0 || rec.a as usize >= num_actions {
                    return Err(Error::InvalidParameter(format!("action index out of range: {rec:?}")));
                }
            }
        }
        Ok(Self { domain, records })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Splits the records into maximal runs sharing a `traj_id`.
    pub fn trajectories(&self) -> Vec<&[Transition]> {
        self.records.chunk_by(|x, y| x.traj_id == y.traj_id).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for rec in &self.records {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(domain: Domain, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r.deserialize().collect::<std::result::Result<Vec<Transition>, _>>()?;
        Self::new(domain, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Runs `n_traj` independent rollouts of `horizon` steps.
pub fn collect_trajectories<E, P>(env: &E, policy: &P, n_traj: usize, horizon: usize, seed: u64) -> Vec<Vec<Transition>>
where
    E: RolloutEnv,
    P: RolloutPolicy<E::State, E::Action>,
{
    let batches = n_traj.div_ceil(BATCH);
    let per_batch: Vec<Vec<Vec<Transition>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, b as u64);
            let count = BATCH.min(n_traj - b * BATCH);
            (0..count)
                .map(|i| {
                    let traj_id = (b * BATCH + i) as u64;
                    let mut s = env.initial_state(&mut rng);
                    let mut steps = Vec::with_capacity(horizon);
                    for t in 0..horizon {
                        let a = policy.act(s, &mut rng);
                        let r = env.reward(s, a);
                        let next = env.step(s, a, &mut rng);
                        steps.push(Transition {
                            traj_id,
                            t: t as u32,
                            s: s.coord(),
                            a: a.coord(),
                            r,
                            s_next: next.coord(),
                        });
                        s = next;
                    }
                    steps
                })
                .collect()
        })
        .collect();
    per_batch.into_iter().flatten().collect()
}

/// Uniform-or-not grid over a 1-D state and 1-D action box.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    state_edges: Vec<f64>,
    action_edges: Vec<f64>,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("bin edges must be strictly increasing".into()));
    }
    Ok(())
}

fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

/// Index of the bin containing `x`; values outside the range clamp to the edge bins.
fn locate(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    let idx = edges.partition_point(|e| *e <= x);
    idx.saturating_sub(1).min(bins - 1)
}

impl Discretizer {
    pub fn new(state_edges: Vec<f64>, action_edges: Vec<f64>) -> Result<Self> {
        check_edges(&state_edges)?;
        check_edges(&action_edges)?;
        Ok(Self { state_edges, action_edges })
    }

    pub fn uniform(
        state_range: (f64, f64),
        action_range: (f64, f64),
        state_bins: usize,
        action_bins: usize,
    ) -> Result<Self> {
        if state_bins == 0 || action_bins == 0 {
            return Err(Error::InvalidParameter("bin count must be positive".into()));
        }
        Self::new(
            uniform_edges(state_range.0, state_range.1, state_bins),
            uniform_edges(action_range.0, action_range.1, action_bins),
        )
    }

    /// 10x10 bins over `[-1, 1] x [-2.5, 2.5]`.
    pub fn lqr_default() -> Self {
        Self::uniform((-1.0, 1.0), (-2.5, 2.5), 10, 10).expect("static edges")
    }

    pub fn state_bins(&self) -> usize {
        self.state_edges.len() - 1
    }

    pub fn action_bins(&self) -> usize {
        self.action_edges.len() - 1
    }
}

/// Maps a state-action pair to a flat bin index `bin_s * action_bins + bin_a`.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    Tabular { num_states: usize, num_actions: usize },
    Grid(Discretizer),
}

impl Binning {
    pub fn num_bins(&self) -> usize {
        let (s, a) = self.shape();
        s * a
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Binning::Tabular { num_states, num_actions } => (*num_states, *num_actions),
            Binning::Grid(d) => (d.state_bins(), d.action_bins()),
        }
    }

    pub fn bin(&self, s: f64, a: f64) -> usize {
        match self {
            Binning::Tabular { num_states, num_actions } => {
                let si = (s.max(0.0) as usize).min(num_states - 1);
                let ai = (a.max(0.0) as usize).min(num_actions - 1);
                si * num_actions + ai
            }
            Binning::Grid(d) => locate(&d.state_edges, s) * d.action_bins() + locate(&d.action_edges, a),
        }
    }
}

/// Probability per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    binning: Binning,
    mass: Vec<f64>,
}

impl HistogramDensity {
    pub fn new(binning: Binning, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != binning.num_bins() {
            return Err(Error::DimensionMismatch(format!("{} masses for {} bins", mass.len(), binning.num_bins())));
        }
        let total: f64 = mass.iter().sum();
        if mass.iter().any(|m| *m < 0.0 || !m.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("histogram sums to {total}")));
        }
        Ok(Self { binning, mass })
    }

    /// Normalises nonnegative weights into a density.
    fn from_weights(binning: Binning, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Empty("histogram weights"));
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { binning, mass })
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn at(&self, s: f64, a: f64) -> f64 {
        self.mass[self.binning.bin(s, a)]
    }

    /// `bin_s,bin_a,mass` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (_, na) = self.binning.shape();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_s", "bin_a", "mass"])?;
        for (i, m) in self.mass.iter().enumerate() {
            w.write_record([(i / na).to_string(), (i % na).to_string(), format!("{m:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative frequency of each bin over the dataset's `(s, a)` pairs.
pub fn fit_histogram(dataset: &TransitionDataset, binning: &Binning) -> Result<HistogramDensity> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut counts = vec![0.0; binning.num_bins()];
    for rec in dataset.records() {
        counts[binning.bin(rec.s, rec.a)] += 1.0;
    }
    HistogramDensity::from_weights(binning.clone(), counts)
}

/// Discount-weighted visitation histogram from simulated rollouts. Step `t`
/// carries weight `(1 - gamma) gamma^t`, normalised over the truncated horizon.
#[allow(clippy::too_many_arguments)]
pub fn estimate_occupancy<E, P>(
    env: &E,
    policy: &P,
    binning: &Binning,
    n_traj: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<HistogramDensity>
where
    E: RolloutEnv,
    P: RolloutPolicy<E::State, E::Action>,
{
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    if n_traj == 0 {
        return Err(Error::Empty("rollout batch"));
    }
    let trajectories = collect_trajectories(env, policy, n_traj, horizon, seed);
    let mut weights = vec![0.0; binning.num_bins()];
    for traj in &trajectories {
        let mut discount = 1.0 - gamma;
        for step in traj {
            weights[binning.bin(step.s, step.a)] += discount;
            discount *= gamma;
        }
    }
    HistogramDensity::from_weights(binning.clone(), weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// `1{ratio <= zeta} * ratio`.
    Indicator,
    /// `clamp(ratio, 0, zeta)`.
    Clip,
}

/// Truncated ratio `rho / mu`. A bin with `mu = 0 < rho` exceeds every cutoff.
pub fn truncated_weight(rho: f64, mu: f64, zeta: f64, mode: TruncationMode) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if mu <= 0.0 {
        return match mode {
            TruncationMode::Indicator => 0.0,
            TruncationMode::Clip => zeta,
        };
    }
    let ratio = rho / mu;
    match mode {
        TruncationMode::Indicator => {
            if ratio <= zeta {
                ratio
            } else {
                0.0
            }
        }
        TruncationMode::Clip => ratio.clamp(0.0, zeta),
    }
}

/// Per-bin truncated density ratio `w_{pi,T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRatio {
    binning: Binning,
    weights: Vec<f64>,
    zeta: f64,
    mode: TruncationMode,
}

impl TruncatedRatio {
    /// Weights supplied directly, e.g. hand-set test weights.
    pub fn from_weights(binning: Binning, weights: Vec<f64>, zeta: f64, mode: TruncationMode) -> Result<Self> {
        if weights.len() != binning.num_bins() {
            return Err(Error::DimensionMismatch("weight count".into()));
        }
        if weights.iter().any(|w| !(0.0..=zeta).contains(w)) {
            return Err(Error::InvalidParameter("weights must lie in [0, zeta]".into()));
        }
        Ok(Self { binning, weights, zeta, mode })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn mode(&self) -> TruncationMode {
        self.mode
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn at(&self, s: f64, a: f64) -> f64 {
        self.weights[self.binning.bin(s, a)]
    }

    /// Same bins, every weight multiplied by `c >= 0`; the cutoff grows with it.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            binning: self.binning.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
            zeta: self.zeta * c.max(1.0),
            mode: self.mode,
        }
    }
}

pub fn truncated_ratio(
    rho_hat: &HistogramDensity,
    mu_hat: &HistogramDensity,
    zeta: f64,
    mode: TruncationMode,
) -> Result<TruncatedRatio> {
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter(format!("zeta must be positive, got {zeta}")));
    }
    if rho_hat.binning != mu_hat.binning {
        return Err(Error::DimensionMismatch("densities use different bins".into()));
    }
    let weights = rho_hat.mass.iter().zip(&mu_hat.mass).map(|(r, m)| truncated_weight(*r, *m, zeta, mode)).collect();
    Ok(TruncatedRatio { binning: rho_hat.binning.clone(), weights, zeta, mode })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean discounted return over `horizon` steps and its standard error.
pub fn mc_eta<E, P>(env: &E, policy: &P, n_traj: usize, horizon: usize, gamma: f64, seed: u64) -> Result<McEstimate>
where
    E: RolloutEnv,
    P: RolloutPolicy<E::State, E::Action>,
{
    if n_traj == 0 {
        return Err(Error::Empty("rollout batch"));
    }
    let trajectories = collect_trajectories(env, policy, n_traj, horizon, seed);
    let returns: Vec<f64> = trajectories.iter().map(|traj| discounted_return(traj, gamma)).collect();
    Ok(mean_and_stderr(&returns))
}

pub(crate) fn discounted_return(traj: &[Transition], gamma: f64) -> f64 {
    let mut g = 0.0;
    for step in traj.iter().rev() {
        g = step.r + gamma * g;
    }
    g
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std_err = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    McEstimate { mean, std_err }
}

/// `A_t = sum_{k >= t} (gamma lambda)^{k - t} (r_k + gamma V(s_{k+1}) - V(s_k))`.
///
/// `values[t] = V(s_t)`, `next_values[t] = V(s_{t+1})`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], next_values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Value estimate `phi . (1, s, s^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFeatures {
    pub coefficients: [f64; 3],
}

impl QuadraticFeatures {
    pub fn value(&self, s: f64) -> f64 {
        let [c0, c1, c2] = self.coefficients;
        c0 + c1 * s + c2 * s * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeEstimate {
    /// Mean of `A_0 + V(s_0)` over trajectories.
    pub value: f64,
    pub fit: QuadraticFeatures,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl GaeConfig {
    pub fn new(gamma: f64, lambda: f64) -> Self {
        Self { gamma, lambda, tol: 1e-8, max_iter: 100 }
    }
}

fn least_squares_quadratic(xs: &[f64], ys: &[f64]) -> [f64; 3] {
    let mut gram = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (x, y) in xs.iter().zip(ys) {
        let f = Vector3::new(1.0, *x, x * x);
        gram += f * f.transpose();
        rhs += f * *y;
    }
    // Tiny ridge keeps the solve defined when all states coincide.
    gram += Matrix3::identity() * 1e-10;
    let sol = gram.lu().solve(&rhs).unwrap_or_else(Vector3::zeros);
    [sol[0], sol[1], sol[2]]
}

/// Fitted-value GAE estimate of the policy value at the initial-state
/// distribution. Alternates advantage computation with a least-squares refit
/// of `V` to the targets `A_t + V(s_t)` until the coefficients move less than
/// `tol` or `max_iter` is reached.
pub fn gae_eta(trajectories: &[&[Transition]], config: GaeConfig) -> Result<GaeEstimate> {
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    if !(0.0..=1.0).contains(&config.lambda) {
        return Err(Error::InvalidParameter(format!("lambda {} not in [0, 1]", config.lambda)));
    }
    for traj in trajectories {
        if traj.len() < 2 {
            return Err(Error::InvalidParameter("trajectories must have at least 2 steps".into()));
        }
        if traj.windows(2).any(|w| w[1].t != w[0].t + 1) {
            return Err(Error::InvalidParameter("trajectory time indices are not contiguous".into()));
        }
    }

    let mut fit = QuadraticFeatures { coefficients: [0.0; 3] };
    let mut iterations = 0;
    let targets_for = |fit: &QuadraticFeatures, traj: &[Transition]| -> Vec<f64> {
        let rewards: Vec<f64> = traj.iter().map(|x| x.r).collect();
        let values: Vec<f64> = traj.iter().map(|x| fit.value(x.s)).collect();
        let next: Vec<f64> = traj.iter().map(|x| fit.value(x.s_next)).collect();
        let adv = gae_advantages(&rewards, &values, &next, config.gamma, config.lambda);
        adv.iter().zip(&values).map(|(a, v)| a + v).collect()
    };

    let states: Vec<f64> = trajectories.iter().flat_map(|t| t.iter().map(|x| x.s)).collect();
    for it in 1..=config.max_iter {
        iterations = it;
        let targets: Vec<f64> = trajectories.iter().flat_map(|traj| targets_for(&fit, traj)).collect();
        let next = QuadraticFeatures { coefficients: least_squares_quadratic(&states, &targets) };
        let scale = next.coefficients.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        let change = next.coefficients.iter().zip(&fit.coefficients).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        fit = next;
        if change <= config.tol * scale {
            break;
        }
    }

    let value = trajectories.iter().map(|traj| targets_for(&fit, traj)[0]).sum::<f64>() / trajectories.len() as f64;
    Ok(GaeEstimate { value, fit, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(points: &[(f64, f64)]) -> TransitionDataset {
        let records = points
            .iter()
            .enumerate()
            .map(|(i, (s, a))| Transition { traj_id: i as u64, t: 0, s: *s, a: *a, r: 0.0, s_next: *s })
            .collect();
        TransitionDataset::new(Domain::Continuous1d, records).unwrap()
    }

    #[test]
    fn single_bin_histogram() {
        let ds = dataset(&[(0.05, 0.1), (0.07, 0.2), (0.1, 0.3)]);
        let h = fit_histogram(&ds, &Binning::Grid(Discretizer::lqr_default())).unwrap();
        assert_eq!(h.mass().iter().filter(|m| **m > 0.0).count(), 1);
        assert!((h.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h.at(0.05, 0.1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = TransitionDataset::new(Domain::Continuous1d, vec![]).unwrap();
        assert!(matches!(fit_histogram(&ds, &Binning::Grid(Discretizer::lqr_default())), Err(Error::Empty(_))));
    }

    #[test]
    fn out_of_range_clamps_to_edge_bins() {
        let b = Binning::Grid(Discretizer::lqr_default());
        assert_eq!(b.bin(-5.0, -9.0), 0);
        assert_eq!(b.bin(5.0, 9.0), 99);
        assert_eq!(b.bin(1.0, 2.5), 99);
        assert_eq!(b.bin(-1.0, -2.5), 0);
    }

    #[test]
    fn truncation_modes() {
        let mode_cases = [(3.0, TruncationMode::Indicator, 3.0), (3.0, TruncationMode::Clip, 3.0)];
        for (ratio, mode, want) in mode_cases {
            assert_eq!(truncated_weight(ratio * 0.01, 0.01, 50.0, mode), want);
        }
        assert_eq!(truncated_weight(0.6, 0.01, 50.0, TruncationMode::Indicator), 0.0);
        assert!((truncated_weight(0.6, 0.01, 50.0, TruncationMode::Clip) - 50.0).abs() < 1e-12);
        assert_eq!(truncated_weight(0.2, 0.0, 50.0, TruncationMode::Indicator), 0.0);
        assert_eq!(truncated_weight(0.2, 0.0, 50.0, TruncationMode::Clip), 50.0);
        assert_eq!(truncated_weight(0.0, 0.0, 50.0, TruncationMode::Clip), 0.0);
    }

    #[test]
    fn truncated_ratio_requires_positive_zeta() {
        let b = Binning::Tabular { num_states: 1, num_actions: 1 };
        let h = HistogramDensity::new(b, vec![1.0]).unwrap();
        assert!(truncated_ratio(&h, &h, 0.0, TruncationMode::Clip).is_err());
    }

    #[test]
    fn gae_lambda_zero_is_td_residual() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.2, 0.1];
        let nv = [0.2, 0.1, 0.7];
        let adv = gae_advantages(&r, &v, &nv, 0.9, 0.0);
        for t in 0..3 {
            assert!((adv[t] - (r[t] + 0.9 * nv[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_lambda_one_zero_value_is_return() {
        let r = [1.0, 2.0, 3.0];
        let zeros = [0.0; 3];
        let adv = gae_advantages(&r, &zeros, &zeros, 0.5, 1.0);
        assert!((adv[0] - (1.0 + 0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-15);
        assert!((adv[1] - (2.0 + 0.5 * 3.0)).abs() < 1e-15);
        assert!((adv[2] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn gae_rejects_short_trajectories() {
        let one = [Transition { traj_id: 0, t: 0, s: 0.0, a: 0.0, r: 1.0, s_next: 0.0 }];
        assert!(gae_eta(&[&one], GaeConfig::new(0.9, 0.95)).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let ds = dataset(&[(0.1, -0.2), (0.3, 0.4)]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("traj_id,t,s,a,r,s_next"));
        let back = TransitionDataset::read_csv(Domain::Continuous1d, buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }
}
