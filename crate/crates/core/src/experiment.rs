//! End-to-end experiment runners and their flat `key = value` configuration.
//!
//! Recognised keys (defaults in brackets):
//!
//! | key | meaning |
//! |-----|---------|
//! | `experiment` | `hard-instance`, `lqr`, `spi-check` or `custom-tabular` [lqr] |
//! | `gamma` | discount [0.9] |
//! | `zeta` | ratio cutoff [50] |
//! | `delta` | confidence level of the reported correction [0.1] |
//! | `seed` | master seed [1] |
//! | `n_traj` | behavior trajectories per behavior policy [2000] |
//! | `horizon` | behavior trajectory length [20] |
//! | `bins` | histogram bins per axis [10] |
//! | `truncation_mode` | `indicator` or `clip` [indicator] |
//! | `sign_convention` | `minus_B` or `plus_B` [minus_B] |
//! | `x` | true scenario parameter [6] |
//! | `state_noise_std`, `behavior_noise_std`, `policy_noise_std` | noise scales [0.2236, 0.5, 0.1] |
//! | `init_mean`, `init_std` | initial-state law [0.5, 0.2] |
//! | `occupancy_traj`, `occupancy_horizon` | rollouts per cell for ratios [2000, 20] |
//! | `eta_mode` | `mc` or `gae` [mc] |
//! | `eta_traj`, `eta_horizon`, `gae_lambda` | model-value estimation [2000, 200, 0.95] |
//! | `true_traj` | rollouts for true policy values [10000] |
//! | `mml_basis` | `squared` or `polynomial` [squared] |
//! | `mml_method` | `closed_form` or `gradient` [closed_form] |
//! | `mml_steps`, `mml_rate` | gradient settings [500, 0.01] |
//! | `kernel_bandwidth` | `auto` or a positive number [auto] |
//! | `rkhs_records`, `mc_samples` | kernel-MML subsample and draws [1000, 32] |
//! | `d`, `grid_steps` | hard-instance arms and theta grid resolution [4, 10] |
//! | `spi_trials` | randomized setups for `spi-check` [20] |
//! | `mdp`, `models` | TOML paths for `custom-tabular`; `models` is comma separated [none] |
//! | `output` | output directory [`$MBLB_OUT_DIR`, else `mblb-out`] |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::bounds::{ExpectationMode, KernelSpec, MmlBasis, MmlLinearMethod, TestFunction, TestFunctionClass};
use crate::error::{Error, Result};
use crate::estimation::{
    collect_trajectories, mc_eta, Binning, Discretizer, Domain, McEstimate, TransitionDataset, TruncationMode,
};
use crate::hard::{
    build_hard_family, build_theta_mdp, extended_policies, fit_then_plan, sweep, theta_grid, write_sweep_csv,
    HardInstanceSpec, ThetaDynamics,
};
use crate::lqr::{
    build_lqr_classes, generate_behavior_dataset, BehaviorConfig, LinearPolicy, Lqr1DParams, LqrWorld, SignConvention,
};
use crate::mdp::{eta, exact_occupancy, exact_value, OccupancyMeasure, TabularMdp, TabularPolicy, ValueTable};
use crate::rng::{derive_seed, rng_for};
use crate::selector::{
    select_mblb_continuous, select_mblb_tabular, select_mml, verify_spi, ContinuousSelectConfig, EtaMode, MmlCandidate,
    MmlMethod, SelectionReport, SpiSetup, TabularEvidence, TabularSelectConfig,
};

pub const OUT_DIR_ENV: &str = "MBLB_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HardInstance,
    Lqr,
    SpiCheck,
    CustomTabular,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub gamma: f64,
    pub zeta: f64,
    pub delta: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub horizon: usize,
    pub bins: usize,
    pub truncation_mode: TruncationMode,
    pub sign_convention: SignConvention,
    pub x: f64,
    pub state_noise_std: f64,
    pub behavior_noise_std: f64,
    pub policy_noise_std: f64,
    pub init_mean: f64,
    pub init_std: f64,
    pub occupancy_traj: usize,
    pub occupancy_horizon: usize,
    pub eta_mode: String,
    pub eta_traj: usize,
    pub eta_horizon: usize,
    pub gae_lambda: f64,
    pub true_traj: usize,
    pub mml_basis: MmlBasis,
    pub mml_method: String,
    pub mml_steps: usize,
    pub mml_rate: f64,
    pub kernel_bandwidth: Option<f64>,
    pub rkhs_records: usize,
    pub mc_samples: usize,
    pub d: usize,
    pub grid_steps: usize,
    pub spi_trials: usize,
    pub mdp: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Lqr,
            gamma: 0.9,
            zeta: 50.0,
            delta: 0.1,
            seed: 1,
            n_traj: 2000,
            horizon: 20,
            bins: 10,
            truncation_mode: TruncationMode::Indicator,
            sign_convention: SignConvention::MinusB,
            x: 6.0,
            state_noise_std: 0.05_f64.sqrt(),
            behavior_noise_std: 0.5,
            policy_noise_std: 0.1,
            init_mean: 0.5,
            init_std: 0.2,
            occupancy_traj: 2000,
            occupancy_horizon: 20,
            eta_mode: "mc".into(),
            eta_traj: 2000,
            eta_horizon: 200,
            gae_lambda: 0.95,
            true_traj: 10_000,
            mml_basis: MmlBasis::Squared,
            mml_method: "closed_form".into(),
            mml_steps: 500,
            mml_rate: 0.01,
            kernel_bandwidth: None,
            rkhs_records: 1000,
            mc_samples: 32,
            d: 4,
            grid_steps: 10,
            spi_trials: 20,
            mdp: None,
            models: Vec::new(),
            output: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{value}`")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
    /// duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key. Used for both file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                self.experiment = match value {
                    "hard-instance" => ExperimentKind::HardInstance,
                    "lqr" => ExperimentKind::Lqr,
                    "spi-check" => ExperimentKind::SpiCheck,
                    "custom-tabular" => ExperimentKind::CustomTabular,
                    other => return Err(Error::Parse(format!("unknown experiment `{other}`"))),
                }
            }
            "gamma" => self.gamma = parse_num(key, value)?,
            "zeta" => self.zeta = parse_num(key, value)?,
            "delta" => self.delta = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "n_traj" => self.n_traj = parse_num(key, value)?,
            "horizon" => self.horizon = parse_num(key, value)?,
            "bins" => self.bins = parse_num(key, value)?,
            "truncation_mode" => {
                self.truncation_mode = match value {
                    "indicator" => TruncationMode::Indicator,
                    "clip" => TruncationMode::Clip,
                    other => return Err(Error::Parse(format!("unknown truncation mode `{other}`"))),
                }
            }
            "sign_convention" => self.sign_convention = value.parse()?,
            "x" => self.x = parse_num(key, value)?,
            "state_noise_std" => self.state_noise_std = parse_num(key, value)?,
            "behavior_noise_std" => self.behavior_noise_std = parse_num(key, value)?,
            "policy_noise_std" => self.policy_noise_std = parse_num(key, value)?,
            "init_mean" => self.init_mean = parse_num(key, value)?,
            "init_std" => self.init_std = parse_num(key, value)?,
            "occupancy_traj" => self.occupancy_traj = parse_num(key, value)?,
            "occupancy_horizon" => self.occupancy_horizon = parse_num(key, value)?,
            "eta_mode" => match value {
                "mc" | "gae" => self.eta_mode = value.to_string(),
                other => return Err(Error::Parse(format!("unknown eta mode `{other}`"))),
            },
            "eta_traj" => self.eta_traj = parse_num(key, value)?,
            "eta_horizon" => self.eta_horizon = parse_num(key, value)?,
            "gae_lambda" => self.gae_lambda = parse_num(key, value)?,
            "true_traj" => self.true_traj = parse_num(key, value)?,
            "mml_basis" => {
                self.mml_basis = match value {
                    "squared" => MmlBasis::Squared,
                    "polynomial" => MmlBasis::Polynomial,
                    other => return Err(Error::Parse(format!("unknown MML basis `{other}`"))),
                }
            }
            "mml_method" => match value {
                "closed_form" | "gradient" => self.mml_method = value.to_string(),
                other => return Err(Error::Parse(format!("unknown MML method `{other}`"))),
            },
            "mml_steps" => self.mml_steps = parse_num(key, value)?,
            "mml_rate" => self.mml_rate = parse_num(key, value)?,
            "kernel_bandwidth" => {
                self.kernel_bandwidth = if value == "auto" { None } else { Some(parse_num(key, value)?) }
            }
            "rkhs_records" => self.rkhs_records = parse_num(key, value)?,
            "mc_samples" => self.mc_samples = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "grid_steps" => self.grid_steps = parse_num(key, value)?,
            "spi_trials" => self.spi_trials = parse_num(key, value)?,
            "mdp" => self.mdp = Some(PathBuf::from(value)),
            "models" => {
                self.models = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(Error::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines that [`ExperimentConfig::parse`] reads back to the
    /// same configuration. `output` is left out so a replay picks its own.
    pub fn to_text(&self) -> String {
        let experiment = match self.experiment {
            ExperimentKind::HardInstance => "hard-instance",
            ExperimentKind::Lqr => "lqr",
            ExperimentKind::SpiCheck => "spi-check",
            ExperimentKind::CustomTabular => "custom-tabular",
        };
        let truncation = match self.truncation_mode {
            TruncationMode::Indicator => "indicator",
            TruncationMode::Clip => "clip",
        };
        let sign = match self.sign_convention {
            SignConvention::MinusB => "minus_B",
            SignConvention::PlusB => "plus_B",
        };
        let basis = match self.mml_basis {
            MmlBasis::Squared => "squared",
            MmlBasis::Polynomial => "polynomial",
        };
        let mut lines = vec![
            ("experiment", experiment.to_string()),
            ("gamma", self.gamma.to_string()),
            ("zeta", self.zeta.to_string()),
            ("delta", self.delta.to_string()),
            ("seed", self.seed.to_string()),
            ("n_traj", self.n_traj.to_string()),
            ("horizon", self.horizon.to_string()),
            ("bins", self.bins.to_string()),
            ("truncation_mode", truncation.to_string()),
            ("sign_convention", sign.to_string()),
            ("x", self.x.to_string()),
            ("state_noise_std", self.state_noise_std.to_string()),
            ("behavior_noise_std", self.behavior_noise_std.to_string()),
            ("policy_noise_std", self.policy_noise_std.to_string()),
            ("init_mean", self.init_mean.to_string()),
            ("init_std", self.init_std.to_string()),
            ("occupancy_traj", self.occupancy_traj.to_string()),
            ("occupancy_horizon", self.occupancy_horizon.to_string()),
            ("eta_mode", self.eta_mode.clone()),
            ("eta_traj", self.eta_traj.to_string()),
            ("eta_horizon", self.eta_horizon.to_string()),
            ("gae_lambda", self.gae_lambda.to_string()),
            ("true_traj", self.true_traj.to_string()),
            ("mml_basis", basis.to_string()),
            ("mml_method", self.mml_method.clone()),
            ("mml_steps", self.mml_steps.to_string()),
            ("mml_rate", self.mml_rate.to_string()),
            ("kernel_bandwidth", self.kernel_bandwidth.map_or("auto".into(), |h| h.to_string())),
            ("rkhs_records", self.rkhs_records.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("d", self.d.to_string()),
            ("grid_steps", self.grid_steps.to_string()),
            ("spi_trials", self.spi_trials.to_string()),
        ];
        if let Some(p) = &self.mdp {
            lines.push(("mdp", p.display().to_string()));
        }
        if !self.models.is_empty() {
            let joined: Vec<String> = self.models.iter().map(|p| p.display().to_string()).collect();
            lines.push(("models", joined.join(",")));
        }
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta {} must be positive", self.zeta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} not in (0, 1)", self.delta));
        }
        let counts = [
            ("n_traj", self.n_traj),
            ("horizon", self.horizon),
            ("bins", self.bins),
            ("occupancy_traj", self.occupancy_traj),
            ("occupancy_horizon", self.occupancy_horizon),
            ("eta_traj", self.eta_traj),
            ("eta_horizon", self.eta_horizon),
            ("true_traj", self.true_traj),
            ("rkhs_records", self.rkhs_records),
            ("mc_samples", self.mc_samples),
            ("grid_steps", self.grid_steps),
            ("spi_trials", self.spi_trials),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("`{k}` must be positive"));
        }
        if self.eta_mode == "gae" && self.eta_horizon < 2 {
            return bad("GAE needs eta_horizon >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} not in [0, 1]", self.gae_lambda));
        }
        let scales = [self.state_noise_std, self.behavior_noise_std, self.policy_noise_std, self.init_std];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise scales must be finite and nonnegative".into());
        }
        if !self.x.is_finite() || !self.init_mean.is_finite() {
            return bad("x and init_mean must be finite".into());
        }
        if let Some(h) = self.kernel_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("kernel_bandwidth {h} must be positive"));
            }
        }
        if self.mml_method == "gradient" && !(self.mml_rate > 0.0 && self.mml_rate.is_finite()) {
            return bad("mml_rate must be positive".into());
        }
        if self.d < 2 || self.d > 8 {
            return bad(format!("d = {} outside the supported range 2..=8", self.d));
        }
        if self.experiment == ExperimentKind::CustomTabular && self.mdp.is_none() {
            return bad("custom-tabular needs `mdp`".into());
        }
        Ok(())
    }

    /// Configured output directory, else `$MBLB_OUT_DIR`, else `mblb-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("mblb-out"))
    }

    pub fn lqr_params(&self) -> Lqr1DParams {
        Lqr1DParams {
            x: self.x,
            gamma: self.gamma,
            noise_std: self.state_noise_std,
            sign: self.sign_convention,
            init_mean: self.init_mean,
            init_std: self.init_std,
            ..Lqr1DParams::default()
        }
    }

    fn mml_linear_method(&self) -> MmlLinearMethod {
        if self.mml_method == "gradient" {
            MmlLinearMethod::Gradient { steps: self.mml_steps, rate: self.mml_rate, normalize: true }
        } else {
            MmlLinearMethod::ClosedForm
        }
    }

    fn eta(&self) -> EtaMode {
        if self.eta_mode == "gae" {
            EtaMode::Gae { n_traj: self.eta_traj, horizon: self.eta_horizon, lambda: self.gae_lambda }
        } else {
            EtaMode::MonteCarlo { n_traj: self.eta_traj, horizon: self.eta_horizon }
        }
    }
}

/// One row of a policy-value table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValueRow {
    pub policy_id: String,
    pub true_value: f64,
    pub std_err: f64,
}

/// One row of a selection summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub policy_id: String,
    pub model_id: String,
    pub true_value: f64,
}

#[derive(Debug, Clone)]
pub struct LqrOutcome {
    pub policy_labels: Vec<String>,
    pub model_labels: Vec<String>,
    pub mblb: SelectionReport,
    pub mml_linear: SelectionReport,
    pub mml_rkhs: SelectionReport,
    pub true_values: Vec<McEstimate>,
}

impl LqrOutcome {
    pub fn summary(&self) -> Vec<SummaryRow> {
        [&self.mblb, &self.mml_linear, &self.mml_rkhs]
            .iter()
            .map(|r| SummaryRow {
                method: r.method.to_string(),
                policy_id: self.policy_labels[r.chosen_policy()].clone(),
                model_id: self.model_labels[r.chosen_model()].clone(),
                true_value: self.true_values[r.chosen_policy()].mean,
            })
            .collect()
    }
}

fn fmt_label(prefix: &str, x: f64) -> String {
    format!("{prefix}={x}")
}

/// Behavior data, joint selection, both MML variants, and true values of
/// every candidate policy for the scalar linear-quadratic world.
pub fn run_lqr(cfg: &ExperimentConfig) -> Result<LqrOutcome> {
    let params = cfg.lqr_params();
    params.validate()?;
    let world = LqrWorld::new(params)?;
    let mut classes = build_lqr_classes(&params)?;
    for p in &mut classes.policies {
        p.action_noise_std = cfg.policy_noise_std;
    }
    let behavior = BehaviorConfig {
        n_traj_per_policy: cfg.n_traj,
        horizon: cfg.horizon,
        action_noise_std: cfg.behavior_noise_std,
        ..BehaviorConfig::default()
    };
    let dataset = generate_behavior_dataset(&params, &behavior, derive_seed(cfg.seed, 0))?;
    let (s_bound, a_bound) = (1.0, 2.5);
    let binning = Binning::Grid(Discretizer::uniform((-s_bound, s_bound), (-a_bound, a_bound), cfg.bins, cfg.bins)?);
    let select = ContinuousSelectConfig {
        zeta: cfg.zeta,
        gamma: cfg.gamma,
        truncation: cfg.truncation_mode,
        binning,
        occupancy_traj: cfg.occupancy_traj,
        occupancy_horizon: cfg.occupancy_horizon,
        eta: cfg.eta(),
        v_max: params.v_max(s_bound, a_bound),
        expectation: ExpectationMode::MonteCarlo { samples: cfg.mc_samples, seed: derive_seed(cfg.seed, 1) },
        seed: derive_seed(cfg.seed, 2),
        delta: Some(cfg.delta),
    };
    let class =
        TestFunctionClass::Finite(classes.values.iter().map(|v| Box::new(*v) as Box<dyn TestFunction>).collect());
    let policy_labels: Vec<String> = classes.policies.iter().map(|p| fmt_label("v", p.v)).collect();
    let model_labels: Vec<String> = classes.transitions.iter().map(|t| fmt_label("u", t.u)).collect();

    let mblb = select_mblb_continuous(&classes.policies, &classes.transitions, &dataset, &class, &select)?
        .relabel(&policy_labels, &model_labels)?;
    let candidates: Vec<MmlCandidate> = mblb
        .rows
        .iter()
        .map(|r| MmlCandidate {
            policy_index: r.policy_index,
            model_index: r.model_index,
            eta_model: r.report.eta_model,
        })
        .collect();
    let mml_linear = select_mml(
        &candidates,
        &classes.transitions,
        &dataset,
        MmlMethod::Linear { basis: cfg.mml_basis, method: cfg.mml_linear_method() },
        select.expectation,
        cfg.gamma,
    )?
    .relabel(&policy_labels, &model_labels)?;
    let mml_rkhs = select_mml(
        &candidates,
        &classes.transitions,
        &dataset,
        MmlMethod::Rkhs {
            kernel: cfg.kernel_bandwidth.map(KernelSpec::rbf).transpose()?,
            m_samples: cfg.mc_samples,
            max_records: cfg.rkhs_records,
            seed: derive_seed(cfg.seed, 3),
        },
        select.expectation,
        cfg.gamma,
    )?
    .relabel(&policy_labels, &model_labels)?;
    let true_values = true_policy_values(
        &world,
        &classes.policies,
        cfg.true_traj,
        cfg.eta_horizon,
        cfg.gamma,
        derive_seed(cfg.seed, 4),
    )?;
    Ok(LqrOutcome { policy_labels, model_labels, mblb, mml_linear, mml_rkhs, true_values })
}

/// MC values under the true dynamics; every policy sees the same stream.
pub fn true_policy_values(
    world: &LqrWorld,
    policies: &[LinearPolicy],
    n_traj: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    policies.iter().map(|p| mc_eta(world, p, n_traj, horizon, gamma, seed)).collect()
}

#[derive(Debug, Clone)]
pub struct HardOutcome {
    pub spec: HardInstanceSpec,
    pub grid: Vec<ThetaDynamics>,
    pub mblb: SelectionReport,
    /// Grid index of the likelihood fit and the true value of its greedy policy.
    pub fitted_theta: usize,
    pub fitted_value: f64,
    pub policy_values: Vec<f64>,
}

/// Joint selection over the two-stage policies and the theta grid with exact
/// population quantities, against the fit-then-plan baseline on sampled
/// uniform-policy data.
pub fn run_hard_instance(cfg: &ExperimentConfig) -> Result<HardOutcome> {
    let spec = HardInstanceSpec::new(cfg.d, cfg.gamma)?;
    let fam = build_hard_family(&spec)?;
    let grid = theta_grid(spec.d(), cfg.grid_steps)?;
    let models = grid.iter().map(|t| build_theta_mdp(&spec, t)).collect::<Result<Vec<_>>>()?;
    let policies = extended_policies(&spec)?;
    let uniform = TabularPolicy::uniform(spec.num_states(), spec.num_actions());
    let mu = exact_occupancy(&fam.true_mdp, &uniform)?;
    let mblb = select_mblb_tabular(
        &policies,
        &models,
        &fam.values,
        TabularEvidence::Population { truth: &fam.true_mdp, data: &mu, estimate: &mu },
        TabularSelectConfig { zeta: cfg.zeta, truncation: cfg.truncation_mode, delta: None },
    )?;
    let trajs = collect_trajectories(&fam.true_mdp, &uniform, cfg.n_traj, cfg.horizon, derive_seed(cfg.seed, 0));
    let dataset = TransitionDataset::new(
        Domain::Tabular { num_states: spec.num_states(), num_actions: spec.num_actions() },
        trajs.into_iter().flatten().collect(),
    )?;
    let (fitted_theta, fitted_policy) = fit_then_plan(&spec, &grid, &dataset)?;
    let fitted_value = eta(&fam.true_mdp, &fitted_policy)?;
    let policy_values = policies.iter().map(|p| eta(&fam.true_mdp, p)).collect::<Result<Vec<_>>>()?;
    let policy_labels: Vec<String> =
        (0..spec.d()).flat_map(|f| (0..spec.d()).map(move |t| format!("start{f}_arm{t}"))).collect();
    let model_labels: Vec<String> = (0..grid.len()).map(|i| format!("theta{i}")).collect();
    let mblb = mblb.relabel(&policy_labels, &model_labels)?;
    Ok(HardOutcome { spec, grid, mblb, fitted_theta, fitted_value, policy_values })
}

/// Random tabular problem for the improvement check: 4 states, 2 actions,
/// all deterministic policies, a model class of perturbations of the truth
/// (which may or may not contain it), exhaustive true value functions, and a
/// slightly misestimated behavior density.
pub fn random_spi_setup(rng: &mut dyn RngCore) -> Result<(SpiSetup, f64)> {
    let (ns, na) = (4, 2);
    let gamma = rng.random_range(0.5..0.9);
    let random_kernel = |rng: &mut dyn RngCore| -> Vec<f64> {
        let mut t = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            let raw: Vec<f64> = (0..ns).map(|_| rng.random::<f64>().powi(2)).collect();
            let total: f64 = raw.iter().sum();
            t.extend(raw.iter().map(|x| x / total));
        }
        t
    };
    let reward: Vec<f64> = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let truth = TabularMdp::new(ns, na, random_kernel(rng), reward, gamma, 0)?;
    let include_truth = rng.random_bool(0.5);
    let mut models = Vec::new();
    if include_truth {
        models.push(truth.clone());
    }
    for _ in 0..3 {
        let noise = random_kernel(rng);
        let mix = rng.random_range(0.05..0.6);
        let t: Vec<f64> = truth.transition().iter().zip(&noise).map(|(a, b)| (1.0 - mix) * a + mix * b).collect();
        models.push(truth.with_transition(t)?);
    }
    let policies: Vec<TabularPolicy> = (0..1usize << ns)
        .map(|code| {
            let actions: Vec<usize> = (0..ns).map(|s| (code >> s) & 1).collect();
            TabularPolicy::deterministic(na, &actions)
        })
        .collect::<Result<_>>()?;
    let values = policies.iter().map(|p| exact_value(&truth, p)).collect::<Result<Vec<ValueTable>>>()?;
    let probs: Vec<f64> = (0..ns)
        .flat_map(|_| {
            let p = rng.random_range(0.2..0.8);
            [p, 1.0 - p]
        })
        .collect();
    let behavior = exact_occupancy(&truth, &TabularPolicy::new(ns, na, probs)?)?;
    let eps = rng.random_range(0.0..0.02);
    let noisy: Vec<f64> = behavior.mass().iter().map(|m| m * (1.0 + eps * (rng.random::<f64>() - 0.5))).collect();
    let total: f64 = noisy.iter().sum();
    let behavior_hat = OccupancyMeasure::from_mass(ns, na, noisy.iter().map(|m| m / total).collect())?;
    let zeta = rng.random_range(2.0..50.0);
    Ok((SpiSetup { truth, models, policies, values, behavior, behavior_hat }, zeta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpiRow {
    pub trial: usize,
    pub zeta: f64,
    pub selected_policy: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

pub fn run_spi_check(cfg: &ExperimentConfig) -> Result<Vec<SpiRow>> {
    (0..cfg.spi_trials)
        .map(|trial| {
            let mut rng = rng_for(cfg.seed, trial as u64);
            let (setup, zeta) = random_spi_setup(&mut rng)?;
            let r = verify_spi(&setup, zeta, cfg.delta, None)?;
            Ok(SpiRow {
                trial,
                zeta,
                selected_policy: r.selected_policy,
                lhs: r.lhs,
                rhs: r.rhs,
                slack: r.slack(),
                holds: r.holds(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CustomOutcome {
    pub population: SelectionReport,
    pub sample: SelectionReport,
    pub policy_values: Vec<f64>,
}

const MAX_ENUMERATED_POLICIES: usize = 4096;

/// Joint selection on a user-supplied tabular problem. Policies are all
/// deterministic policies; value functions are their true values; data comes
/// from the uniform policy.
pub fn run_custom_tabular(cfg: &ExperimentConfig) -> Result<CustomOutcome> {
    let path = cfg.mdp.as_ref().ok_or_else(|| Error::Parse("custom-tabular needs `mdp`".into()))?;
    let load = |p: &Path| -> Result<TabularMdp> {
        let text = fs::read_to_string(p).map_err(|e| Error::Parse(format!("cannot read {}: {e}", p.display())))?;
        TabularMdp::from_toml_str(&text)
    };
    let truth = load(path)?;
    let mut models = vec![truth.clone()];
    for p in &cfg.models {
        models.push(load(p)?);
    }
    let (ns, na) = (truth.num_states(), truth.num_actions());
    let count = (na as f64).powi(ns as i32);
    if count > MAX_ENUMERATED_POLICIES as f64 {
        return Err(Error::InvalidParameter(format!("{count} deterministic policies exceed the enumeration cap")));
    }
    let policies: Vec<TabularPolicy> = (0..count as usize)
        .map(|mut code| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = code % na;
                    code /= na;
                    a
                })
                .collect();
            TabularPolicy::deterministic(na, &actions)
        })
        .collect::<Result<_>>()?;
    let values = policies.iter().map(|p| exact_value(&truth, p)).collect::<Result<Vec<_>>>()?;
    let uniform = TabularPolicy::uniform(ns, na);
    let mu = exact_occupancy(&truth, &uniform)?;
    let select = TabularSelectConfig { zeta: cfg.zeta, truncation: cfg.truncation_mode, delta: Some(cfg.delta) };
    let population = select_mblb_tabular(
        &policies,
        &models,
        &values,
        TabularEvidence::Population { truth: &truth, data: &mu, estimate: &mu },
        TabularSelectConfig { delta: None, ..select },
    )?;
    let trajs = collect_trajectories(&truth, &uniform, cfg.n_traj, cfg.horizon, derive_seed(cfg.seed, 0));
    let dataset = TransitionDataset::new(
        Domain::Tabular { num_states: ns, num_actions: na },
        trajs.into_iter().flatten().collect(),
    )?;
    let sample = select_mblb_tabular(&policies, &models, &values, TabularEvidence::Sample(&dataset), select)?;
    let policy_values = policies.iter().map(|p| eta(&truth, p)).collect::<Result<Vec<_>>>()?;
    Ok(CustomOutcome { population, sample, policy_values })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured experiment and writes its CSV artifacts. Returns the
/// files written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut note = |name: &str| written.push(dir.join(name));
    match cfg.experiment {
        ExperimentKind::Lqr => {
            let out = run_lqr(cfg)?;
            out.mblb.write_csv(create(&dir, "bounds.csv")?)?;
            out.mml_linear.write_csv(create(&dir, "mml_linear.csv")?)?;
            out.mml_rkhs.write_csv(create(&dir, "mml_rkhs.csv")?)?;
            write_rows(&dir, "summary.csv", &out.summary())?;
            let values: Vec<PolicyValueRow> = out
                .policy_labels
                .iter()
                .zip(&out.true_values)
                .map(|(id, v)| PolicyValueRow { policy_id: id.clone(), true_value: v.mean, std_err: v.std_err })
                .collect();
            write_rows(&dir, "policy_values.csv", &values)?;
            for f in ["bounds.csv", "mml_linear.csv", "mml_rkhs.csv", "summary.csv", "policy_values.csv"] {
                note(f);
            }
        }
        ExperimentKind::HardInstance => {
            let out = run_hard_instance(cfg)?;
            let rows = sweep(&out.spec, &out.grid)?;
            write_sweep_csv(create(&dir, "sweep.csv")?, &rows)?;
            out.mblb.write_csv(create(&dir, "bounds.csv")?)?;
            let chosen = out.mblb.chosen_row();
            let summary = [
                SummaryRow {
                    method: "mblb".into(),
                    policy_id: chosen.policy_id.clone(),
                    model_id: chosen.model_id.clone(),
                    true_value: out.policy_values[chosen.policy_index],
                },
                SummaryRow {
                    method: "fit-then-plan".into(),
                    policy_id: "greedy".into(),
                    model_id: format!("theta{}", out.fitted_theta),
                    true_value: out.fitted_value,
                },
            ];
            write_rows(&dir, "summary.csv", &summary)?;
            let thetas: Vec<ThetaRow> = out
                .grid
                .iter()
                .enumerate()
                .map(|(i, t)| ThetaRow {
                    theta_index: i,
                    theta: t.values().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
                })
                .collect();
            write_rows(&dir, "theta_grid.csv", &thetas)?;
            for f in ["sweep.csv", "bounds.csv", "summary.csv", "theta_grid.csv"] {
                note(f);
            }
        }
        ExperimentKind::SpiCheck => {
            let rows = run_spi_check(cfg)?;
            write_rows(&dir, "spi.csv", &rows)?;
            note("spi.csv");
        }
        ExperimentKind::CustomTabular => {
            let out = run_custom_tabular(cfg)?;
            out.population.write_csv(create(&dir, "bounds_population.csv")?)?;
            out.sample.write_csv(create(&dir, "bounds_sample.csv")?)?;
            let values: Vec<PolicyValueRow> = out
                .policy_values
                .iter()
                .enumerate()
                .map(|(i, v)| PolicyValueRow { policy_id: format!("pi{i}"), true_value: *v, std_err: 0.0 })
                .collect();
            write_rows(&dir, "policy_values.csv", &values)?;
            for f in ["bounds_population.csv", "bounds_sample.csv", "policy_values.csv"] {
                note(f);
            }
        }
    }
    let mut w = create(&dir, "config.txt")?;
    write!(w, "{}", cfg.to_text())?;
    note("config.txt");
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ThetaRow {
    theta_index: usize,
    theta: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let cfg =
            ExperimentConfig::parse("# comment\nexperiment = hard-instance\nzeta=100 # inline\n\nd = 3\n").unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::HardInstance);
        assert_eq!(cfg.zeta, 100.0);
        assert_eq!(cfg.d, 3);
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.n_traj, 2000);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(ExperimentConfig::parse("zetta = 1"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("zeta = 1\nzeta = 2"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("zeta"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("gamma = 1.0"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("seed = -1"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("experiment = custom-tabular"), Err(Error::Parse(_))));
    }

    #[test]
    fn text_form_parses_back() {
        let mut cfg =
            ExperimentConfig::parse("experiment = spi-check\nkernel_bandwidth = 0.7\nsign_convention = plus_B\n")
                .unwrap();
        cfg.state_noise_std = 0.05_f64.sqrt();
        cfg.models = vec!["a.toml".into(), "b.toml".into()];
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn spi_check_small_run_holds() {
        let cfg = ExperimentConfig { experiment: ExperimentKind::SpiCheck, spi_trials: 3, ..Default::default() };
        assert!(run_spi_check(&cfg).unwrap().iter().all(|r| r.holds));
    }
}
