//! Joint (policy, model) selection by the pessimistic lower bound, MML-based
//! selection, and the safe-policy-improvement check.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::bounds::{
    exceed_mass, lower_bound, mml_linear_loss, mml_rkhs_loss, statistical_correction, sup_model_loss, ExpectationMode,
    KernelSpec, LowerBoundReport, MmlBasis, MmlLinearMethod, TestFunctionClass, TransitionModel,
};
use crate::error::{Error, Result};
use crate::estimation::{
    collect_trajectories, estimate_occupancy, fit_histogram, gae_eta, mc_eta, truncated_ratio, truncated_weight,
    Binning, Domain, GaeConfig, HistogramDensity, RolloutEnv, RolloutPolicy, TransitionDataset, TruncationMode,
};
use crate::mdp::{
    eta_from_occupancy, exact_occupancy, l1, local_errors, local_value_error, OccupancyMeasure, TabularMdp,
    TabularPolicy, ValueTable,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Mblb,
    MmlLinear,
    MmlRkhs,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Mblb => "mblb",
            SelectionMethod::MmlLinear => "mml-linear",
            SelectionMethod::MmlRkhs => "mml-rkhs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub policy_index: usize,
    pub model_index: usize,
    pub policy_id: String,
    pub model_id: String,
    pub report: LowerBoundReport,
    /// Selection key: `lb` for the lower bound, `-loss` for MML.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub method: SelectionMethod,
    pub rows: Vec<SelectionRow>,
    chosen: usize,
    /// Fewer than ten records per histogram bin.
    pub sparse_data: bool,
}

impl SelectionReport {
    fn new(method: SelectionMethod, rows: Vec<SelectionRow>, sparse_data: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("candidate table"));
        }
        // First row wins ties on the primary key; MML breaks them by model value.
        let mut chosen = 0;
        for (i, row) in rows.iter().enumerate() {
            let best = &rows[chosen];
            let better = match method {
                SelectionMethod::Mblb => row.score > best.score,
                _ => {
                    row.score > best.score || (row.score == best.score && row.report.eta_model > best.report.eta_model)
                }
            };
            if better {
                chosen = i;
            }
        }
        Ok(Self { method, rows, chosen, sparse_data })
    }

    pub fn chosen_row(&self) -> &SelectionRow {
        &self.rows[self.chosen]
    }

    pub fn chosen_policy(&self) -> usize {
        self.chosen_row().policy_index
    }

    pub fn chosen_model(&self) -> usize {
        self.chosen_row().model_index
    }

    /// Replaces the default `pi<i>` / `T<j>` ids.
    pub fn relabel(mut self, policy_labels: &[String], model_labels: &[String]) -> Result<Self> {
        for row in &mut self.rows {
            row.policy_id = policy_labels
                .get(row.policy_index)
                .ok_or_else(|| Error::DimensionMismatch("policy label count".into()))?
                .clone();
            row.model_id = model_labels
                .get(row.model_index)
                .ok_or_else(|| Error::DimensionMismatch("model label count".into()))?
                .clone();
        }
        Ok(self)
    }

    /// Bound-table columns plus `chosen`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "policy_id",
            "model_id",
            "eta_model",
            "sup_loss",
            "penalty",
            "lb",
            "stat_correction",
            "chosen",
        ])?;
        for (i, row) in self.rows.iter().enumerate() {
            let r = &row.report;
            w.write_record([
                row.policy_id.clone(),
                row.model_id.clone(),
                r.eta_model.to_string(),
                r.sup_loss.to_string(),
                r.mismatch_penalty.to_string(),
                r.lb.to_string(),
                r.stat_correction.map(|c| c.to_string()).unwrap_or_default(),
                u8::from(i == self.chosen).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn row(p: usize, m: usize, report: LowerBoundReport, score: f64) -> SelectionRow {
    SelectionRow {
        policy_index: p,
        model_index: m,
        policy_id: format!("pi{p}"),
        model_id: format!("T{m}"),
        report,
        score,
    }
}

/// What the tabular selector knows about the data distribution.
#[derive(Debug, Clone, Copy)]
pub enum TabularEvidence<'a> {
    /// Infinite data: losses are expectations over `data` with next states
    /// from `truth`; ratios use `estimate` as the behavior density.
    Population { truth: &'a TabularMdp, data: &'a OccupancyMeasure, estimate: &'a OccupancyMeasure },
    /// Finite sample; the behavior density is its empirical histogram.
    Sample(&'a TransitionDataset),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularSelectConfig {
    pub zeta: f64,
    pub truncation: TruncationMode,
    /// Confidence level for the reported correction (sample evidence only).
    pub delta: Option<f64>,
}

impl TabularSelectConfig {
    pub fn new(zeta: f64) -> Self {
        Self { zeta, truncation: TruncationMode::Indicator, delta: None }
    }
}

fn check_classes(policies: usize, models: usize, values: usize) -> Result<()> {
    if policies == 0 {
        return Err(Error::Empty("policy class"));
    }
    if models == 0 {
        return Err(Error::Empty("dynamics class"));
    }
    if values == 0 {
        return Err(Error::Empty("value class"));
    }
    Ok(())
}

/// Joint selection on a tabular problem with exact occupancies and model values.
pub fn select_mblb_tabular(
    policies: &[TabularPolicy],
    models: &[TabularMdp],
    values: &[ValueTable],
    evidence: TabularEvidence<'_>,
    config: TabularSelectConfig,
) -> Result<SelectionReport> {
    check_classes(policies.len(), models.len(), values.len())?;
    if !(config.zeta > 0.0) {
        return Err(Error::InvalidParameter(format!("zeta must be positive, got {}", config.zeta)));
    }
    let (ns, na) = (models[0].num_states(), models[0].num_actions());
    let binning = Binning::Tabular { num_states: ns, num_actions: na };
    let (mu_hat, sparse, finite_class, correction) = match evidence {
        TabularEvidence::Population { estimate, .. } => (estimate.mass().to_vec(), false, None, None),
        TabularEvidence::Sample(ds) => {
            if ds.domain() != (Domain::Tabular { num_states: ns, num_actions: na }) {
                return Err(Error::DimensionMismatch("dataset domain does not match the models".into()));
            }
            let hist = fit_histogram(ds, &binning)?;
            let class = TestFunctionClass::Finite(
                values.iter().map(|v| Box::new(v.clone()) as Box<dyn crate::bounds::TestFunction>).collect(),
            );
            let correction = match config.delta {
                Some(delta) => Some(statistical_correction(
                    ds.len(),
                    config.zeta,
                    (values.len(), models.len(), policies.len()),
                    delta,
                    models[0].v_max(),
                )?),
                None => None,
            };
            (hist.mass().to_vec(), ds.len() < binning.num_bins() * 10, Some(class), correction)
        }
    };

    let cells = policies.len() * models.len();
    let rows = (0..cells)
        .into_par_iter()
        .map(|c| {
            let (p, m) = (c / models.len(), c % models.len());
            let model = &models[m];
            let rho = exact_occupancy(model, &policies[p])?;
            let weights: Vec<f64> = rho
                .mass()
                .iter()
                .zip(&mu_hat)
                .map(|(r, mu)| truncated_weight(*r, *mu, config.zeta, config.truncation))
                .collect();
            let eta_model = eta_from_occupancy(model, &rho);
            let sup_loss = match (evidence, &finite_class) {
                (TabularEvidence::Population { truth, data, .. }, _) => {
                    population_sup_loss(truth, model, data, &weights, values)?
                }
                (TabularEvidence::Sample(ds), Some(class)) => {
                    let w = crate::estimation::TruncatedRatio::from_weights(
                        binning.clone(),
                        weights.clone(),
                        config.zeta.max(weights.iter().cloned().fold(0.0, f64::max)),
                        config.truncation,
                    )?;
                    sup_model_loss(ds, &w, model, class, ExpectationMode::Analytic)?
                }
                (TabularEvidence::Sample(_), None) => unreachable!("class is built for sample evidence"),
            };
            let penalty = model.v_max() * exceed_mass(rho.mass(), &mu_hat, config.zeta);
            let mut report = lower_bound(eta_model, sup_loss, penalty, model.gamma());
            if let Some(c) = correction {
                report = report.with_correction(c);
            }
            Ok(row(p, m, report, report.lb))
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionReport::new(SelectionMethod::Mblb, rows, sparse)
}

/// `max_g |sum_{s,a} data(s,a) w(s,a) (E_T g - E_T* g)|`.
fn population_sup_loss(
    truth: &TabularMdp,
    model: &TabularMdp,
    data: &OccupancyMeasure,
    weights: &[f64],
    values: &[ValueTable],
) -> Result<f64> {
    let (ns, na) = (truth.num_states(), truth.num_actions());
    if data.mass().len() != ns * na || model.num_states() != ns || model.num_actions() != na {
        return Err(Error::DimensionMismatch("population evidence shape".into()));
    }
    let mut best = 0.0_f64;
    for g in values {
        if g.len() != ns {
            return Err(Error::DimensionMismatch("value table length".into()));
        }
        let mut acc = 0.0_f64;
        for (idx, (m, w)) in data.mass().iter().zip(weights).enumerate() {
            let coef = m * w;
            if coef == 0.0 {
                continue;
            }
            let (s, a) = (idx / na, idx % na);
            let diff: f64 = (0..ns).map(|n| (model.prob(s, a, n) - truth.prob(s, a, n)) * g.get(n)).sum();
            acc += coef * diff;
        }
        best = best.max(acc.abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    MonteCarlo { n_traj: usize, horizon: usize },
    Gae { n_traj: usize, horizon: usize, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSelectConfig {
    pub zeta: f64,
    pub gamma: f64,
    pub truncation: TruncationMode,
    pub binning: Binning,
    /// Rollouts per cell for the occupancy histogram.
    pub occupancy_traj: usize,
    pub occupancy_horizon: usize,
    pub eta: EtaMode,
    pub v_max: f64,
    pub expectation: ExpectationMode,
    pub seed: u64,
    pub delta: Option<f64>,
}

fn model_eta<E, P>(model: &E, policy: &P, mode: EtaMode, gamma: f64, seed: u64) -> Result<f64>
where
    E: RolloutEnv<State = f64, Action = f64>,
    P: RolloutPolicy<f64, f64>,
{
    match mode {
        EtaMode::MonteCarlo { n_traj, horizon } => Ok(mc_eta(model, policy, n_traj, horizon, gamma, seed)?.mean),
        EtaMode::Gae { n_traj, horizon, lambda } => {
            let trajs = collect_trajectories(model, policy, n_traj, horizon, seed);
            let refs: Vec<&[crate::estimation::Transition]> = trajs.iter().map(|t| t.as_slice()).collect();
            Ok(gae_eta(&refs, GaeConfig::new(gamma, lambda))?.value)
        }
    }
}

/// Joint selection on a continuous problem: histogram ratios, sampled model
/// values, and the sup loss over `class` on the offline data.
pub fn select_mblb_continuous<E, P>(
    policies: &[P],
    models: &[E],
    dataset: &TransitionDataset,
    class: &TestFunctionClass,
    config: &ContinuousSelectConfig,
) -> Result<SelectionReport>
where
    E: RolloutEnv<State = f64, Action = f64> + TransitionModel,
    P: RolloutPolicy<f64, f64>,
{
    check_classes(policies.len(), models.len(), class.len_hint())?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mu_hat = fit_histogram(dataset, &config.binning)?;
    let sparse = dataset.len() < config.binning.num_bins() * 10;
    let correction = match config.delta {
        Some(delta) => Some(statistical_correction(
            dataset.len(),
            config.zeta,
            (class.len_hint(), models.len(), policies.len()),
            delta,
            config.v_max,
        )?),
        None => None,
    };
    let cells = policies.len() * models.len();
    let rows = (0..cells)
        .into_par_iter()
        .map(|c| {
            let (p, m) = (c / models.len(), c % models.len());
            let rho_hat: HistogramDensity = estimate_occupancy(
                &models[m],
                &policies[p],
                &config.binning,
                config.occupancy_traj,
                config.occupancy_horizon,
                config.gamma,
                derive_seed(config.seed, 2 * c as u64),
            )?;
            let w = truncated_ratio(&rho_hat, &mu_hat, config.zeta, config.truncation)?;
            let sup_loss = sup_model_loss(dataset, &w, &models[m], class, config.expectation)?;
            let penalty = config.v_max * exceed_mass(rho_hat.mass(), mu_hat.mass(), config.zeta);
            let eta_model = model_eta(
                &models[m],
                &policies[p],
                config.eta,
                config.gamma,
                derive_seed(config.seed, 2 * c as u64 + 1),
            )?;
            let mut report = lower_bound(eta_model, sup_loss, penalty, config.gamma);
            if let Some(c) = correction {
                report = report.with_correction(c);
            }
            Ok(row(p, m, report, report.lb))
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionReport::new(SelectionMethod::Mblb, rows, sparse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmlMethod {
    Linear {
        basis: MmlBasis,
        method: MmlLinearMethod,
    },
    /// Kernel over `(s, a, s')`; bandwidth from the median heuristic when
    /// `kernel` is `None`. At most `max_records` evenly strided records enter
    /// the quadratic pair sum.
    Rkhs {
        kernel: Option<KernelSpec>,
        m_samples: usize,
        max_records: usize,
        seed: u64,
    },
}

/// A paired candidate and its value under its own model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmlCandidate {
    pub policy_index: usize,
    pub model_index: usize,
    pub eta_model: f64,
}

/// Strided subsample of at most `max` records, keeping trajectory ids.
pub fn subsample(dataset: &TransitionDataset, max: usize) -> Result<TransitionDataset> {
    if max == 0 {
        return Err(Error::InvalidParameter("subsample size must be positive".into()));
    }
    let stride = dataset.len().div_ceil(max).max(1);
    let records = dataset.records().iter().step_by(stride).copied().collect();
    TransitionDataset::new(dataset.domain(), records)
}

/// MML selection over paired candidates. Each model is scored once; the
/// candidate with the highest score wins, ties going to the higher model
/// value and then to the earlier candidate.
pub fn select_mml<M: TransitionModel + Sync>(
    candidates: &[MmlCandidate],
    models: &[M],
    dataset: &TransitionDataset,
    method: MmlMethod,
    expectation: ExpectationMode,
    gamma: f64,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    if let Some(c) = candidates.iter().find(|c| c.model_index >= models.len()) {
        return Err(Error::DimensionMismatch(format!("model index {} out of range", c.model_index)));
    }
    let (tag, losses) = match method {
        MmlMethod::Linear { basis, method } => (
            SelectionMethod::MmlLinear,
            models
                .iter()
                .map(|m| Ok(mml_linear_loss(dataset, m, basis, method, expectation)?.loss))
                .collect::<Result<Vec<f64>>>()?,
        ),
        MmlMethod::Rkhs { kernel, m_samples, max_records, seed } => {
            let small = subsample(dataset, max_records)?;
            let kernel = match kernel {
                Some(k) => k,
                None => {
                    let pts: Vec<Vec<f64>> = small.records().iter().map(|r| vec![r.s, r.a, r.s_next]).collect();
                    KernelSpec::median_heuristic(&pts)?
                }
            };
            (
                SelectionMethod::MmlRkhs,
                models
                    .iter()
                    .map(|m| Ok(mml_rkhs_loss(&small, m, &kernel, m_samples, seed)?.loss))
                    .collect::<Result<Vec<f64>>>()?,
            )
        }
    };
    let rows = candidates
        .iter()
        .map(|c| {
            let loss = losses[c.model_index];
            row(c.policy_index, c.model_index, lower_bound(c.eta_model, loss, 0.0, gamma), -loss)
        })
        .collect();
    SelectionReport::new(tag, rows, false)
}

/// Tabular problem with every quantity of the improvement guarantee exact.
#[derive(Debug, Clone)]
pub struct SpiSetup {
    pub truth: TabularMdp,
    pub models: Vec<TabularMdp>,
    pub policies: Vec<TabularPolicy>,
    pub values: Vec<ValueTable>,
    /// Distribution the data is drawn from.
    pub behavior: OccupancyMeasure,
    /// Density used in the ratios.
    pub behavior_hat: OccupancyMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiPolicyTerms {
    pub eta_true: f64,
    pub eps_rho: f64,
    pub eps_mu: f64,
    /// `eta_true - 6 V_max eps_rho / (1 - gamma)^2 - V_max eps_mu / (1 - gamma)`.
    pub guaranteed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiReport {
    pub selected_policy: usize,
    pub selected_model: usize,
    /// True value of the selected policy.
    pub lhs: f64,
    pub rhs: f64,
    pub eps_v: f64,
    pub stat_term: f64,
    pub tv_term: f64,
    pub per_policy: Vec<SpiPolicyTerms>,
}

impl SpiReport {
    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }

    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - 1e-9
    }
}

/// Runs exact population selection and evaluates both sides of the safe
/// policy improvement inequality. `n` adds the finite-sample term; `None`
/// treats the data as infinite.
pub fn verify_spi(setup: &SpiSetup, zeta: f64, delta: f64, n: Option<usize>) -> Result<SpiReport> {
    let report = select_mblb_tabular(
        &setup.policies,
        &setup.models,
        &setup.values,
        TabularEvidence::Population { truth: &setup.truth, data: &setup.behavior, estimate: &setup.behavior_hat },
        TabularSelectConfig::new(zeta),
    )?;
    let (p_hat, m_hat) = (report.chosen_policy(), report.chosen_model());
    let gamma = setup.truth.gamma();
    let v_max = setup.truth.v_max();
    let per_policy = setup
        .policies
        .iter()
        .map(|pi| {
            let d = local_errors(&setup.truth, &setup.models, &setup.values, pi, &setup.behavior_hat, zeta)?;
            let eta_true = crate::mdp::eta(&setup.truth, pi)?;
            Ok(SpiPolicyTerms {
                eta_true,
                eps_rho: d.eps_rho,
                eps_mu: d.eps_mu,
                guaranteed: eta_true
                    - 6.0 * v_max * d.eps_rho / (1.0 - gamma).powi(2)
                    - v_max * d.eps_mu / (1.0 - gamma),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps_v = local_value_error(
        &setup.truth,
        &setup.models[m_hat],
        &setup.values,
        &setup.policies[p_hat],
        &setup.behavior_hat,
        zeta,
    )?;
    let stat_term = match n {
        Some(n) => {
            2.0 * statistical_correction(
                n,
                zeta,
                (setup.values.len(), setup.models.len(), setup.policies.len()),
                delta,
                v_max,
            )? / (1.0 - gamma)
        }
        None => 0.0,
    };
    let tv_term = 2.0 * zeta * v_max * l1(setup.behavior_hat.mass(), setup.behavior.mass()) / (1.0 - gamma);
    let best = per_policy.iter().map(|t| t.guaranteed).fold(f64::NEG_INFINITY, f64::max);
    let rhs = best - eps_v / (1.0 - gamma) - stat_term - tv_term;
    Ok(SpiReport {
        selected_policy: p_hat,
        selected_model: m_hat,
        lhs: per_policy[p_hat].eta_true,
        rhs,
        eps_v,
        stat_term,
        tv_term,
        per_policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hard::{build_hard_family, build_theta_mdp, extended_policies, HardInstanceSpec, ThetaDynamics};
    use crate::mdp::TabularPolicy;

    #[test]
    fn singleton_classes_return_the_pair() {
        let spec = HardInstanceSpec::new(2, 0.9).unwrap();
        let fam = build_hard_family(&spec).unwrap();
        let mu = exact_occupancy(&fam.true_mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        let r = select_mblb_tabular(
            &fam.policies[..1],
            std::slice::from_ref(&fam.true_mdp),
            &fam.values,
            TabularEvidence::Population { truth: &fam.true_mdp, data: &mu, estimate: &mu },
            TabularSelectConfig::new(100.0),
        )
        .unwrap();
        assert_eq!((r.chosen_policy(), r.chosen_model()), (0, 0));
        assert_eq!(r.rows.len(), 1);
    }

    #[test]
    fn hard_instance_small_grid_picks_optimal() {
        let spec = HardInstanceSpec::new(3, 0.9).unwrap();
        let fam = build_hard_family(&spec).unwrap();
        let policies = extended_policies(&spec).unwrap();
        let models: Vec<TabularMdp> = (0..3)
            .map(|j| build_theta_mdp(&spec, &ThetaDynamics::basis(3, j).unwrap()).unwrap())
            .chain(std::iter::once(
                build_theta_mdp(&spec, &ThetaDynamics::normalized(&[1.0, 1.0, 1.0]).unwrap()).unwrap(),
            ))
            .collect();
        let mu = exact_occupancy(&fam.true_mdp, &TabularPolicy::uniform(spec.num_states(), 3)).unwrap();
        let r = select_mblb_tabular(
            &policies,
            &models,
            &fam.values,
            TabularEvidence::Population { truth: &fam.true_mdp, data: &mu, estimate: &mu },
            TabularSelectConfig::new(100.0),
        )
        .unwrap();
        let chosen = &policies[r.chosen_policy()];
        assert!((crate::mdp::eta(&fam.true_mdp, chosen).unwrap() - spec.optimal_value()).abs() < 1e-10);
        // Ties resolve to the lowest index.
        assert_eq!(r.chosen_policy(), 0);
        for row in &r.rows {
            let rep = row.report;
            assert!((rep.lb - (rep.eta_model - (rep.sup_loss + rep.mismatch_penalty) / 0.1)).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_marks_one_chosen_row() {
        let spec = HardInstanceSpec::new(2, 0.5).unwrap();
        let fam = build_hard_family(&spec).unwrap();
        let mu = exact_occupancy(&fam.true_mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        let r = select_mblb_tabular(
            &fam.policies,
            std::slice::from_ref(&fam.true_mdp),
            &fam.values,
            TabularEvidence::Population { truth: &fam.true_mdp, data: &mu, estimate: &mu },
            TabularSelectConfig::new(100.0),
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("policy_id,model_id,eta_model,sup_loss,penalty,lb,stat_correction,chosen\n"));
        assert_eq!(text.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 1);
    }

    #[test]
    fn empty_classes_are_errors() {
        let spec = HardInstanceSpec::new(2, 0.5).unwrap();
        let fam = build_hard_family(&spec).unwrap();
        let mu = exact_occupancy(&fam.true_mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        let ev = TabularEvidence::Population { truth: &fam.true_mdp, data: &mu, estimate: &mu };
        assert!(select_mblb_tabular(
            &[],
            std::slice::from_ref(&fam.true_mdp),
            &fam.values,
            ev,
            TabularSelectConfig::new(1.0)
        )
        .is_err());
        assert!(select_mblb_tabular(&fam.policies, &[], &fam.values, ev, TabularSelectConfig::new(1.0)).is_err());
        let ds = TransitionDataset::new(
            Domain::Continuous1d,
            vec![crate::estimation::Transition { traj_id: 0, t: 0, s: 0.0, a: 0.0, r: 0.0, s_next: 0.0 }],
        )
        .unwrap();
        let linear = MmlMethod::Linear { basis: MmlBasis::Squared, method: MmlLinearMethod::ClosedForm };
        assert!(select_mml::<TabularMdp>(&[], &[], &ds, linear, ExpectationMode::Analytic, 0.9).is_err());
    }

    #[test]
    fn spi_holds_on_hard_instance() {
        let spec = HardInstanceSpec::new(3, 0.9).unwrap();
        let fam = build_hard_family(&spec).unwrap();
        let models = (0..3).map(|j| build_theta_mdp(&spec, &ThetaDynamics::basis(3, j).unwrap()).unwrap()).collect();
        let mu = exact_occupancy(&fam.true_mdp, &TabularPolicy::uniform(spec.num_states(), 3)).unwrap();
        let setup = SpiSetup {
            truth: fam.true_mdp.clone(),
            models,
            policies: extended_policies(&spec).unwrap(),
            values: fam.values.clone(),
            behavior: mu.clone(),
            behavior_hat: mu,
        };
        let r = verify_spi(&setup, 100.0, 0.1, None).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!((r.lhs - spec.optimal_value()).abs() < 1e-10);
    }
}
