//! Scalar linear-quadratic world with a deliberately weak transition class.
//!
//! Dynamics are `s' = A(x) s + b a + noise` with `A(x) = 1 + x/10`,
//! `B(x) = -0.5 - x/10`, and `b = -B` or `b = B` depending on the sign
//! convention. Reward is `-(Q s^2 + R a^2)`. Each windowed model follows the
//! noise-free dynamics on `[u, u + 1]` and freezes the state elsewhere.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{NextStateLaw, TestFunction, TransitionModel};
use crate::error::{Error, Result};
use crate::estimation::{collect_trajectories, Domain, RolloutEnv, RolloutPolicy, TransitionDataset};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `s' = A s + B a`.
    PlusB,
    /// `s' = A s - B a`.
    MinusB,
}

impl std::str::FromStr for SignConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus_B" | "plus_b" => Ok(SignConvention::PlusB),
            "minus_B" | "minus_b" => Ok(SignConvention::MinusB),
            other => Err(Error::Parse(format!("unknown sign convention `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lqr1DParams {
    pub x: f64,
    pub q_cost: f64,
    pub r_cost: f64,
    /// Standard deviation of the additive state noise.
    pub noise_std: f64,
    pub gamma: f64,
    pub state_clip: Option<(f64, f64)>,
    pub sign: SignConvention,
    pub init_mean: f64,
    pub init_std: f64,
}

impl Default for Lqr1DParams {
    fn default() -> Self {
        Self {
            x: 6.0,
            q_cost: 1.0,
            r_cost: 1.0,
            noise_std: 0.05_f64.sqrt(),
            gamma: 0.9,
            state_clip: Some((-1.0, 1.0)),
            sign: SignConvention::MinusB,
            init_mean: 0.5,
            init_std: 0.2,
        }
    }
}

impl Lqr1DParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.q_cost, self.r_cost, self.noise_std, self.gamma, self.init_mean, self.init_std];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("LQR parameters must be finite".into()));
        }
        if self.q_cost < 0.0 || self.r_cost < 0.0 {
            return Err(Error::InvalidParameter("Q and R must be nonnegative".into()));
        }
        if self.noise_std < 0.0 || self.init_std < 0.0 {
            return Err(Error::InvalidParameter("noise scales must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if let Some((lo, hi)) = self.state_clip {
            if !(lo < hi) {
                return Err(Error::InvalidParameter("state clip interval is empty".into()));
            }
        }
        Ok(())
    }

    pub fn with_x(&self, x: f64) -> Self {
        Self { x, ..*self }
    }

    pub fn a_coef(&self) -> f64 {
        1.0 + self.x / 10.0
    }

    pub fn b_coef(&self) -> f64 {
        -0.5 - self.x / 10.0
    }

    /// Coefficient multiplying the action in the state update.
    pub fn input_gain(&self) -> f64 {
        match self.sign {
            SignConvention::PlusB => self.b_coef(),
            SignConvention::MinusB => -self.b_coef(),
        }
    }

    pub fn mean_next(&self, s: f64, a: f64) -> f64 {
        self.a_coef() * s + self.input_gain() * a
    }

    pub fn clip(&self, s: f64) -> f64 {
        match self.state_clip {
            Some((lo, hi)) => s.clamp(lo, hi),
            None => s,
        }
    }

    pub fn reward(&self, s: f64, a: f64) -> f64 {
        -(self.q_cost * s * s + self.r_cost * a * a)
    }

    /// `max |r|` over `|s| <= s_bound`, `|a| <= a_bound`, divided by `1 - gamma`.
    pub fn v_max(&self, s_bound: f64, a_bound: f64) -> f64 {
        (self.q_cost * s_bound * s_bound + self.r_cost * a_bound * a_bound) / (1.0 - self.gamma)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.clip(self.init_mean + self.init_std * z)
    }
}

/// True stochastic dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrWorld {
    pub params: Lqr1DParams,
}

impl LqrWorld {
    pub fn new(params: Lqr1DParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl RolloutEnv for LqrWorld {
    type State = f64;
    type Action = f64;

    fn initial_state(&self, rng: &mut dyn RngCore) -> f64 {
        self.params.sample_initial(rng)
    }

    fn step(&self, s: f64, a: f64, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.params.clip(self.params.mean_next(s, a) + self.params.noise_std * z)
    }

    fn reward(&self, s: f64, a: f64) -> f64 {
        self.params.reward(s, a)
    }
}

impl TransitionModel for LqrWorld {
    /// Gaussian only when states are not clipped.
    fn law(&self, s: f64, a: f64) -> Option<NextStateLaw> {
        if self.params.state_clip.is_some() {
            return None;
        }
        let var = self.params.noise_std * self.params.noise_std;
        Some(NextStateLaw::Gaussian { mean: self.params.mean_next(s, a), var })
    }

    fn sample_next(&self, s: f64, a: f64, rng: &mut dyn RngCore) -> f64 {
        self.step(s, a, rng)
    }
}

/// Deterministic model accurate only for states in `[u, u + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseTransition {
    pub u: f64,
    pub params: Lqr1DParams,
}

impl PiecewiseTransition {
    pub fn new(u: f64, params: Lqr1DParams) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::InvalidParameter("window start must be finite".into()));
        }
        params.validate()?;
        Ok(Self { u, params })
    }

    pub fn next(&self, s: f64, a: f64) -> f64 {
        if (self.u..=self.u + 1.0).contains(&s) {
            self.params.clip(self.params.mean_next(s, a))
        } else {
            s
        }
    }
}

impl RolloutEnv for PiecewiseTransition {
    type State = f64;
    type Action = f64;

    fn initial_state(&self, rng: &mut dyn RngCore) -> f64 {
        self.params.sample_initial(rng)
    }

    fn step(&self, s: f64, a: f64, _rng: &mut dyn RngCore) -> f64 {
        self.next(s, a)
    }

    fn reward(&self, s: f64, a: f64) -> f64 {
        self.params.reward(s, a)
    }
}

impl TransitionModel for PiecewiseTransition {
    fn law(&self, s: f64, a: f64) -> Option<NextStateLaw> {
        Some(NextStateLaw::Discrete(vec![(self.next(s, a), 1.0)]))
    }

    fn sample_next(&self, s: f64, a: f64, _rng: &mut dyn RngCore) -> f64 {
        self.next(s, a)
    }
}

/// `a = slope (s - v) + N(0, action_noise_std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearPolicy {
    pub v: f64,
    pub slope: f64,
    pub action_noise_std: f64,
}

impl LinearPolicy {
    /// Target-seeking policy with slope -1.1 and action noise std 0.1.
    pub fn targeting(v: f64) -> Self {
        Self { v, slope: -1.1, action_noise_std: 0.1 }
    }

    pub fn mean_action(&self, s: f64) -> f64 {
        self.slope * (s - self.v)
    }
}

impl RolloutPolicy<f64, f64> for LinearPolicy {
    fn act(&self, s: f64, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean_action(s) + self.action_noise_std * z
    }
}

/// `V(s) = U s^2 + q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticValueFn {
    pub curvature: f64,
    pub offset: f64,
}

impl TestFunction for QuadraticValueFn {
    fn eval(&self, s: f64) -> f64 {
        self.curvature * s * s + self.offset
    }

    fn quadratic(&self) -> Option<(f64, f64, f64)> {
        Some((self.curvature, 0.0, self.offset))
    }
}

/// Value of the noise-free feedback `a = k s` under unclipped dynamics.
pub fn riccati_policy_eval(params: &Lqr1DParams, k: f64) -> Result<QuadraticValueFn> {
    params.validate()?;
    let c = params.a_coef() + params.input_gain() * k;
    let contraction = params.gamma * c * c;
    if contraction >= 1.0 {
        return Err(Error::UnstableClosedLoop(contraction));
    }
    let u = -(params.q_cost + params.r_cost * k * k) / (1.0 - contraction);
    let q = params.gamma * params.noise_std * params.noise_std * u / (1.0 - params.gamma);
    Ok(QuadraticValueFn { curvature: u, offset: q })
}

const RICCATI_CAP: usize = 100_000;

/// Discounted scalar Riccati iteration. Returns the optimal feedback slope
/// `k` (so `a = k s`) and its value.
pub fn riccati_optimal(params: &Lqr1DParams) -> Result<(f64, QuadraticValueFn)> {
    params.validate()?;
    let (a, b, g) = (params.a_coef(), params.input_gain(), params.gamma);
    let (q, r) = (params.q_cost, params.r_cost);
    let mut p = 0.0_f64;
    for _ in 0..RICCATI_CAP {
        let denom = r + g * b * b * p;
        let next = if denom > 0.0 { q + g * a * a * p - (g * a * b * p).powi(2) / denom } else { q + g * a * a * p };
        if !next.is_finite() {
            break;
        }
        let done = (next - p).abs() <= 1e-12 * next.abs().max(1.0);
        p = next;
        if done {
            let denom = r + g * b * b * p;
            let k = if denom > 0.0 { -g * a * b * p / denom } else { 0.0 };
            let value =
                QuadraticValueFn { curvature: -p, offset: -g * params.noise_std * params.noise_std * p / (1.0 - g) };
            return Ok((k, value));
        }
    }
    Err(Error::NoConvergence { what: "Riccati iteration", iterations: RICCATI_CAP })
}

/// Candidate classes for selection.
#[derive(Debug, Clone)]
pub struct LqrClasses {
    pub transitions: Vec<PiecewiseTransition>,
    pub policies: Vec<LinearPolicy>,
    pub values: Vec<QuadraticValueFn>,
    /// `(x, K)` behind each value function.
    pub value_params: Vec<(f64, f64)>,
}

pub const WINDOW_STARTS: [f64; 5] = [-0.75, -0.5, -0.25, 0.0, 0.25];
pub const POLICY_TARGETS: [f64; 7] = [-0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6];
pub const VALUE_XS: [f64; 3] = [2.0, 4.0, 10.0];
pub const VALUE_GAINS: [f64; 3] = [-1.1, -0.9, -0.7];

/// Slope realising gain `K` under the sign convention: `a = K s` when the
/// action enters with `-B`, `a = -K s` when it enters with `+B`.
pub fn gain_slope(sign: SignConvention, gain: f64) -> f64 {
    match sign {
        SignConvention::MinusB => gain,
        SignConvention::PlusB => -gain,
    }
}

pub fn build_lqr_classes(params: &Lqr1DParams) -> Result<LqrClasses> {
    let transitions =
        WINDOW_STARTS.iter().map(|u| PiecewiseTransition::new(*u, *params)).collect::<Result<Vec<_>>>()?;
    let policies = POLICY_TARGETS.iter().map(|v| LinearPolicy::targeting(*v)).collect();
    let mut values = Vec::new();
    let mut value_params = Vec::new();
    for x in VALUE_XS {
        for k in VALUE_GAINS {
            values.push(riccati_policy_eval(&params.with_x(x), gain_slope(params.sign, k))?);
            value_params.push((x, k));
        }
    }
    Ok(LqrClasses { transitions, policies, values, value_params })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorConfig {
    pub targets: Vec<f64>,
    pub n_traj_per_policy: usize,
    pub horizon: usize,
    pub action_noise_std: f64,
    pub slope: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            targets: vec![-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75],
            n_traj_per_policy: 2000,
            horizon: 20,
            action_noise_std: 0.5,
            slope: -1.1,
        }
    }
}

/// Rollouts of every behavior target under the true dynamics, concatenated
/// with globally unique trajectory ids.
pub fn generate_behavior_dataset(
    params: &Lqr1DParams,
    config: &BehaviorConfig,
    seed: u64,
) -> Result<TransitionDataset> {
    let world = LqrWorld::new(*params)?;
    if config.targets.is_empty() || config.n_traj_per_policy == 0 || config.horizon == 0 {
        return Err(Error::Empty("behavior configuration"));
    }
    let mut records = Vec::with_capacity(config.targets.len() * config.n_traj_per_policy * config.horizon);
    for (k, v) in config.targets.iter().enumerate() {
        let policy = LinearPolicy { v: *v, slope: config.slope, action_noise_std: config.action_noise_std };
        let trajs = collect_trajectories(
            &world,
            &policy,
            config.n_traj_per_policy,
            config.horizon,
            derive_seed(seed, k as u64),
        );
        let offset = (k * config.n_traj_per_policy) as u64;
        for traj in trajs {
            for mut step in traj {
                step.traj_id += offset;
                records.push(step);
            }
        }
    }
    TransitionDataset::new(Domain::Continuous1d, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn bellman_residual(params: &Lqr1DParams, k: f64, v: &QuadraticValueFn) -> f64 {
        // One-step backup at a few states under unclipped Gaussian dynamics.
        [-1.0, -0.3, 0.0, 0.4, 2.0]
            .iter()
            .map(|s| {
                let a = k * s;
                let m = params.mean_next(*s, a);
                let next = v.curvature * (m * m + params.noise_std.powi(2)) + v.offset;
                (params.reward(*s, a) + params.gamma * next - v.eval(*s)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn geometric_policy_value() {
        let p = Lqr1DParams { x: 0.0, noise_std: 0.0, gamma: 0.5, ..Default::default() };
        // With x = 0: A = 1, and B = -0.5; gain 0 makes the input irrelevant.
        let v = riccati_policy_eval(&p, 0.0).unwrap();
        assert!((v.curvature + 2.0).abs() < 1e-12);
        assert_eq!(v.offset, 0.0);
    }

    #[test]
    fn unstable_loop_is_reported() {
        let p = Lqr1DParams::default();
        assert!(matches!(riccati_policy_eval(&p, 1.1), Err(Error::UnstableClosedLoop(_))));
    }

    #[test]
    fn optimal_gain_is_fixed_point_and_dominates() {
        let p = Lqr1DParams::default();
        let (k, v) = riccati_optimal(&p).unwrap();
        assert!(bellman_residual(&p, k, &v) < 1e-10);
        assert!((k.abs() - 1.07).abs() < 0.01, "gain {k}");
        assert!(k < 0.0);
        let eval = riccati_policy_eval(&p, k).unwrap();
        assert!((eval.curvature - v.curvature).abs() < 1e-9);
        let mut rng = rng_for(7, 0);
        for _ in 0..20 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let slope = k + 0.3 * z;
            if let Ok(other) = riccati_policy_eval(&p, slope) {
                assert!(v.curvature >= other.curvature - 1e-12);
                assert!(v.offset >= other.offset - 1e-12);
            }
        }
    }

    #[test]
    fn no_input_means_zero_gain() {
        // x = -5 gives B = 0.
        let p = Lqr1DParams { x: -5.0, ..Default::default() };
        assert_eq!(riccati_optimal(&p).unwrap().0, 0.0);
    }

    #[test]
    fn class_sizes_and_window() {
        let p = Lqr1DParams::default();
        let c = build_lqr_classes(&p).unwrap();
        assert_eq!((c.transitions.len(), c.policies.len(), c.values.len()), (5, 7, 9));
        let t = c.transitions[0];
        assert_eq!(t.next(0.6, 0.3), 0.6);
        assert!((t.next(0.1, 0.0) - 0.16).abs() < 1e-12);
        assert!((c.policies[3].mean_action(0.5) + 0.55).abs() < 1e-12);
        assert!(c.values.iter().all(|v| v.curvature <= 0.0));
    }

    #[test]
    fn targeting_policy_is_stable_under_default_sign() {
        let p = Lqr1DParams::default();
        // s' = 1.6 s + 1.1 a with a = -1.1 s: closed loop 0.39.
        assert!((p.mean_next(1.0, LinearPolicy::targeting(0.0).mean_action(1.0)) - 0.39).abs() < 1e-12);
    }

    #[test]
    fn small_behavior_dataset_shape() {
        let p = Lqr1DParams::default();
        let cfg = BehaviorConfig { n_traj_per_policy: 5, horizon: 4, ..Default::default() };
        let ds = generate_behavior_dataset(&p, &cfg, 1).unwrap();
        assert_eq!(ds.len(), 8 * 5 * 4);
        assert!(ds.records().iter().all(|r| (-1.0..=1.0).contains(&r.s) && (-1.0..=1.0).contains(&r.s_next)));
        assert_eq!(ds.trajectories().len(), 40);
        let again = generate_behavior_dataset(&p, &cfg, 1).unwrap();
        assert_eq!(ds.records(), again.records());
    }
}
