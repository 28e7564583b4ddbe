//! Model losses and the pessimistic lower bound.
//!
//! The model loss of a dynamics model `T` under weights `w` and test function
//! `g` is `|mean_i w(s_i, a_i) (E_{x ~ T(s_i, a_i)}[g(x)] - g(s'_i))|` over the
//! offline dataset. [`sup_model_loss`] maximises it over a finite set, over
//! the unit ball of a linear span, or over the unit ball of an RBF kernel
//! space (closed form). The lower bound subtracts the scaled sup loss and the
//! ratio-truncation penalty from the model value.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{HistogramDensity, Transition, TransitionDataset, TruncatedRatio};
use crate::mdp::{TabularMdp, ValueTable};
use crate::rng::rng_for;

/// A value function `g: S -> R` used to probe a dynamics model.
pub trait TestFunction: Send + Sync {
    fn eval(&self, s: f64) -> f64;

    /// Coefficients `(c2, c1, c0)` when `g(s) = c2 s^2 + c1 s + c0`.
    fn quadratic(&self) -> Option<(f64, f64, f64)> {
        None
    }
}

impl TestFunction for ValueTable {
    fn eval(&self, s: f64) -> f64 {
        self.get(s.round() as usize)
    }
}

/// Next-state law of a model at one `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub enum NextStateLaw {
    /// Finite support `(x, p)`.
    Discrete(Vec<(f64, f64)>),
    Gaussian {
        mean: f64,
        var: f64,
    },
}

pub trait TransitionModel: Sync {
    /// Exact law when available in closed form.
    fn law(&self, s: f64, a: f64) -> Option<NextStateLaw>;

    fn sample_next(&self, s: f64, a: f64, rng: &mut dyn RngCore) -> f64;
}

impl TransitionModel for TabularMdp {
    fn law(&self, s: f64, a: f64) -> Option<NextStateLaw> {
        let dist = self.next_distribution(s.round() as usize, a.round() as usize);
        Some(NextStateLaw::Discrete(
            dist.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(x, p)| (x as f64, *p)).collect(),
        ))
    }

    fn sample_next(&self, s: f64, a: f64, rng: &mut dyn RngCore) -> f64 {
        crate::estimation::sample_categorical(self.next_distribution(s.round() as usize, a.round() as usize), rng)
            as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    /// Closed form: finite support, or quadratic `g` under Gaussian next states.
    Analytic,
    /// `samples` draws per record when no finite support exists. Draws for
    /// record `i` come from stream `i` of `seed`, so every test function sees
    /// the same samples.
    MonteCarlo { samples: usize, seed: u64 },
}

impl ExpectationMode {
    /// MC with 32 draws per record.
    pub fn monte_carlo(seed: u64) -> Self {
        ExpectationMode::MonteCarlo { samples: 32, seed }
    }
}

/// Resolves the law used for expectations at dataset record `index`.
fn resolve_law<M: TransitionModel + ?Sized>(
    model: &M,
    s: f64,
    a: f64,
    mode: ExpectationMode,
    index: usize,
) -> Result<NextStateLaw> {
    match (model.law(s, a), mode) {
        (Some(law @ NextStateLaw::Discrete(_)), _) => Ok(law),
        (Some(law @ NextStateLaw::Gaussian { .. }), ExpectationMode::Analytic) => Ok(law),
        (_, ExpectationMode::MonteCarlo { samples, seed }) => {
            if samples == 0 {
                return Err(Error::InvalidParameter("Monte-Carlo sample count must be positive".into()));
            }
            let mut rng = rng_for(seed, index as u64);
            let p = 1.0 / samples as f64;
            Ok(NextStateLaw::Discrete((0..samples).map(|_| (model.sample_next(s, a, &mut rng), p)).collect()))
        }
        (None, ExpectationMode::Analytic) => {
            Err(Error::UnsupportedExpectation("model has no closed-form next-state law".into()))
        }
    }
}

fn expect_g(law: &NextStateLaw, g: &dyn TestFunction) -> Result<f64> {
    match law {
        NextStateLaw::Discrete(atoms) => Ok(atoms.iter().map(|(x, p)| p * g.eval(*x)).sum()),
        NextStateLaw::Gaussian { mean, var } => match g.quadratic() {
            Some((c2, c1, c0)) => Ok(c2 * (mean * mean + var) + c1 * mean + c0),
            None => Err(Error::UnsupportedExpectation("Gaussian next state with a non-quadratic test function".into())),
        },
    }
}

/// Per-record weights and next-state laws, shared across test functions.
struct Prepared {
    weights: Vec<f64>,
    laws: Vec<NextStateLaw>,
}

fn prepare<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    w: &TruncatedRatio,
    model: &M,
    mode: ExpectationMode,
) -> Result<Prepared> {
    let records = dataset.records();
    let weights: Vec<f64> = records.iter().map(|r| w.at(r.s, r.a)).collect();
    let laws = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            if weights[i] == 0.0 {
                // Zero-weight records never contribute.
                Ok(NextStateLaw::Discrete(vec![(r.s_next, 1.0)]))
            } else {
                resolve_law(model, r.s, r.a, mode, i)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { weights, laws })
}

/// Signed mean `mean_i w_i (f_i - g(s'_i))`.
fn signed_loss(prepared: &Prepared, records: &[Transition], g: &dyn TestFunction) -> Result<f64> {
    let terms = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let w = prepared.weights[i];
            if w == 0.0 {
                return Ok(0.0);
            }
            Ok(w * (expect_g(&prepared.laws[i], g)? - g.eval(r.s_next)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / records.len().max(1) as f64)
}

/// `|mean_i w(s_i, a_i) (E_{x ~ T}[g(x)] - g(s'_i))|`.
pub fn model_loss<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    w: &TruncatedRatio,
    model: &M,
    g: &dyn TestFunction,
    mode: ExpectationMode,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let prepared = prepare(dataset, w, model, mode)?;
    Ok(signed_loss(&prepared, dataset.records(), g)?.abs())
}

/// Radial basis kernel `exp(-|x - y|^2 / (2 h^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Median pairwise Euclidean distance over (at most 2000 of) the points.
    pub fn median_heuristic(points: &[Vec<f64>]) -> Result<Self> {
        let stride = points.len().div_ceil(2000).max(1);
        let sample: Vec<&Vec<f64>> = points.iter().step_by(stride).collect();
        let mut dists = Vec::new();
        for i in 0..sample.len() {
            for j in i + 1..sample.len() {
                dists.push(euclid_sq(sample[i], sample[j]).sqrt());
            }
        }
        dists.retain(|d| *d > 0.0);
        if dists.is_empty() {
            return Self::rbf(1.0);
        }
        dists.sort_by(f64::total_cmp);
        Self::rbf(dists[dists.len() / 2])
    }

    pub fn eval_sq(&self, dist_sq: f64) -> f64 {
        (-dist_sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.eval_sq((x - y) * (x - y))
    }

    /// `E K(X, Y)` for independent `X ~ a`, `Y ~ b` on the real line.
    pub fn expect(&self, a: &NextStateLaw, b: &NextStateLaw) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        match (a, b) {
            (NextStateLaw::Discrete(xa), NextStateLaw::Discrete(xb)) => {
                xa.iter().map(|(x, p)| p * xb.iter().map(|(y, q)| q * self.eval(*x, *y)).sum::<f64>()).sum()
            }
            (NextStateLaw::Gaussian { mean, var }, NextStateLaw::Discrete(atoms))
            | (NextStateLaw::Discrete(atoms), NextStateLaw::Gaussian { mean, var }) => {
                atoms.iter().map(|(y, q)| q * gaussian_rbf(h2, *var, mean - y)).sum()
            }
            (NextStateLaw::Gaussian { mean: m1, var: v1 }, NextStateLaw::Gaussian { mean: m2, var: v2 }) => {
                gaussian_rbf(h2, v1 + v2, m1 - m2)
            }
        }
    }
}

/// `E exp(-(Z)^2 / (2 h2))` for `Z ~ N(diff, var)`.
fn gaussian_rbf(h2: f64, var: f64, diff: f64) -> f64 {
    (h2 / (h2 + var)).sqrt() * (-diff * diff / (2.0 * (h2 + var))).exp()
}

fn euclid_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Class of test functions over which the model loss is maximised.
pub enum TestFunctionClass {
    Finite(Vec<Box<dyn TestFunction>>),
    /// `g = sum_k theta_k psi_k` with `|theta|_2 <= 1`.
    LinearSpan(Vec<Box<dyn TestFunction>>),
    /// Unit ball of the RBF kernel space on states.
    Rkhs(KernelSpec),
}

impl TestFunctionClass {
    pub fn len_hint(&self) -> usize {
        match self {
            TestFunctionClass::Finite(v) | TestFunctionClass::LinearSpan(v) => v.len(),
            TestFunctionClass::Rkhs(_) => 1,
        }
    }
}

/// Closed-form RKHS witness norm:
/// `sqrt( (1/n^2) sum_{i,j} w_i w_j [E K(x_i, x_j) + K(s'_i, s'_j) - E K(x_i, s'_j) - E K(x_j, s'_i)] )`.
fn rkhs_sup(prepared: &Prepared, records: &[Transition], kernel: &KernelSpec) -> f64 {
    let n = records.len();
    let active: Vec<usize> = (0..n).filter(|i| prepared.weights[*i] != 0.0).collect();
    let obs: Vec<NextStateLaw> = records.iter().map(|r| NextStateLaw::Discrete(vec![(r.s_next, 1.0)])).collect();
    let row_sums: Vec<f64> = active
        .par_iter()
        .map(|&i| {
            let wi = prepared.weights[i];
            let mut acc = 0.0;
            for &j in &active {
                let wj = prepared.weights[j];
                let term = kernel.expect(&prepared.laws[i], &prepared.laws[j])
                    + kernel.eval(records[i].s_next, records[j].s_next)
                    - kernel.expect(&prepared.laws[i], &obs[j])
                    - kernel.expect(&prepared.laws[j], &obs[i]);
                acc += wj * term;
            }
            wi * acc
        })
        .collect();
    let total = row_sums.iter().sum::<f64>() / (n as f64 * n as f64);
    total.max(0.0).sqrt()
}

/// `sup_{g in class} model_loss`.
pub fn sup_model_loss<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    w: &TruncatedRatio,
    model: &M,
    class: &TestFunctionClass,
    mode: ExpectationMode,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let records = dataset.records();
    match class {
        TestFunctionClass::Finite(members) => {
            if members.is_empty() {
                return Err(Error::Empty("test function class"));
            }
            let prepared = prepare(dataset, w, model, mode)?;
            let mut best = 0.0_f64;
            for g in members {
                best = best.max(signed_loss(&prepared, records, g.as_ref())?.abs());
            }
            Ok(best)
        }
        TestFunctionClass::LinearSpan(basis) => {
            if basis.is_empty() {
                return Err(Error::Empty("test function basis"));
            }
            let prepared = prepare(dataset, w, model, mode)?;
            let mut norm_sq = 0.0;
            for psi in basis {
                norm_sq += signed_loss(&prepared, records, psi.as_ref())?.powi(2);
            }
            Ok(norm_sq.sqrt())
        }
        TestFunctionClass::Rkhs(kernel) => {
            let prepared = prepare(dataset, w, model, mode)?;
            Ok(rkhs_sup(&prepared, records, kernel))
        }
    }
}

/// `v_max * rho`-mass of bins whose ratio to `mu` exceeds `zeta`
/// (a bin with `mu = 0 < rho` always exceeds).
pub fn mismatch_penalty(rho_hat: &HistogramDensity, mu_hat: &HistogramDensity, zeta: f64, v_max: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter(format!("zeta must be positive, got {zeta}")));
    }
    if rho_hat.binning() != mu_hat.binning() {
        return Err(Error::DimensionMismatch("densities use different bins".into()));
    }
    Ok(v_max * exceed_mass(rho_hat.mass(), mu_hat.mass(), zeta))
}

pub(crate) fn exceed_mass(rho: &[f64], mu: &[f64], zeta: f64) -> f64 {
    rho.iter().zip(mu).filter(|(r, m)| **r > 0.0 && (**m <= 0.0 || **r / **m > zeta)).fold(0.0, |acc, (r, _)| acc + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub eta_model: f64,
    pub sup_loss: f64,
    pub mismatch_penalty: f64,
    pub lb: f64,
    pub stat_correction: Option<f64>,
}

/// `lb = eta_model - (sup_loss + penalty) / (1 - gamma)`.
pub fn lower_bound(eta_model: f64, sup_loss: f64, penalty: f64, gamma: f64) -> LowerBoundReport {
    LowerBoundReport {
        eta_model,
        sup_loss,
        mismatch_penalty: penalty,
        lb: eta_model - (sup_loss + penalty) / (1.0 - gamma),
        stat_correction: None,
    }
}

impl LowerBoundReport {
    pub fn with_correction(mut self, correction: f64) -> Self {
        self.stat_correction = Some(correction);
        self
    }
}

/// Bernstein deviation radius `2 v_max sqrt(zeta iota / n)` with
/// `iota = ln(2 |G| |T| |Pi| / delta)`.
pub fn statistical_correction(
    n: usize,
    zeta: f64,
    class_sizes: (usize, usize, usize),
    delta: f64,
    v_max: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} not in (0, 1)")));
    }
    let (g, t, p) = class_sizes;
    let iota = (2.0 * g as f64 * t as f64 * p as f64 / delta).ln();
    Ok(2.0 * v_max * (zeta * iota / n as f64).sqrt())
}

/// Writes `policy_id,model_id,eta_model,sup_loss,penalty,lb,stat_correction`.
pub fn write_bound_csv<W: Write>(writer: W, rows: &[(String, String, LowerBoundReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy_id", "model_id", "eta_model", "sup_loss", "penalty", "lb", "stat_correction"])?;
    for (pid, mid, r) in rows {
        w.write_record([
            pid.clone(),
            mid.clone(),
            r.eta_model.to_string(),
            r.sup_loss.to_string(),
            r.mismatch_penalty.to_string(),
            r.lb.to_string(),
            r.stat_correction.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// MML loss of a model; the selection score is its negation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmlScore {
    pub loss: f64,
    pub score: f64,
}

impl MmlScore {
    fn from_loss(loss: f64) -> Self {
        Self { loss, score: -loss }
    }
}

/// Feature map `psi(s, a, x)` for linear MML.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MmlBasis {
    /// `[s, a, x, s^2, a^2, x^2, 1]`.
    Squared,
    /// Upper triangle of `z z^T` for `z = (s, a, x)`.
    Polynomial,
}

impl MmlBasis {
    pub fn dim(&self) -> usize {
        match self {
            MmlBasis::Squared => 7,
            MmlBasis::Polynomial => 6,
        }
    }

    pub fn features(&self, s: f64, a: f64, x: f64) -> Vec<f64> {
        match self {
            MmlBasis::Squared => vec![s, a, x, s * s, a * a, x * x, 1.0],
            MmlBasis::Polynomial => vec![s * s, s * a, s * x, a * a, a * x, x * x],
        }
    }

    /// `E_x psi(s, a, x)` under `law`.
    fn expected_features(&self, s: f64, a: f64, law: &NextStateLaw) -> Vec<f64> {
        match law {
            NextStateLaw::Discrete(atoms) => {
                let mut acc = vec![0.0; self.dim()];
                for (x, p) in atoms {
                    for (slot, f) in acc.iter_mut().zip(self.features(s, a, *x)) {
                        *slot += p * f;
                    }
                }
                acc
            }
            NextStateLaw::Gaussian { mean, var } => {
                // Features are at most quadratic in x.
                let (ex, ex2) = (*mean, mean * mean + var);
                match self {
                    MmlBasis::Squared => vec![s, a, ex, s * s, a * a, ex2, 1.0],
                    MmlBasis::Polynomial => vec![s * s, s * a, s * ex, a * a, a * ex, ex2],
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmlLinearMethod {
    /// Exact sup over the unit coefficient ball: the norm of the mean feature gap.
    ClosedForm,
    /// Full-batch ascent on `|mean_i (E psi_i - psi'_i)^T theta|`.
    Gradient { steps: usize, rate: f64, normalize: bool },
}

impl MmlLinearMethod {
    /// 500 steps at rate 0.01 with unit-ball projection.
    pub fn gradient_default() -> Self {
        MmlLinearMethod::Gradient { steps: 500, rate: 0.01, normalize: true }
    }
}

/// Mean gap `mean_i (E_{x ~ T} psi(s_i, a_i, x) - psi(s_i, a_i, s'_i))`.
fn mean_feature_gap<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    model: &M,
    basis: MmlBasis,
    mode: ExpectationMode,
) -> Result<Vec<f64>> {
    let records = dataset.records();
    let gaps = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let law = resolve_law(model, r.s, r.a, mode, i)?;
            let expected = basis.expected_features(r.s, r.a, &law);
            let observed = basis.features(r.s, r.a, r.s_next);
            Ok(expected.iter().zip(&observed).map(|(e, o)| e - o).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; basis.dim()];
    for gap in &gaps {
        for (m, g) in mean.iter_mut().zip(gap) {
            *m += g;
        }
    }
    let n = records.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

pub fn mml_linear_loss<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    model: &M,
    basis: MmlBasis,
    method: MmlLinearMethod,
    mode: ExpectationMode,
) -> Result<MmlScore> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let gap = mean_feature_gap(dataset, model, basis, mode)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if let Some(bad) = gap.iter().find(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite feature gap {bad}")));
    }
    match method {
        MmlLinearMethod::ClosedForm => Ok(MmlScore::from_loss(norm(&gap))),
        MmlLinearMethod::Gradient { steps, rate, normalize } => {
            let dim = gap.len();
            let mut theta = vec![1.0 / (dim as f64).sqrt(); dim];
            let objective = |theta: &[f64]| gap.iter().zip(theta).map(|(g, t)| g * t).sum::<f64>();
            for _ in 0..steps {
                let sign = if objective(&theta) >= 0.0 { 1.0 } else { -1.0 };
                for (t, g) in theta.iter_mut().zip(&gap) {
                    *t += rate * sign * g;
                }
                if normalize {
                    let n = norm(&theta);
                    if n > 1.0 {
                        theta.iter_mut().for_each(|t| *t /= n);
                    }
                }
            }
            let loss = objective(&theta).abs();
            let theta_norm = norm(&theta);
            if !loss.is_finite() || theta_norm > 1e8 {
                return Err(Error::Divergence { steps, norm: theta_norm });
            }
            Ok(MmlScore::from_loss(loss))
        }
    }
}

/// Kernel-MML loss `L / |D|` with
/// `L = sum_{i,j} E K(z_i^x, z_j^x~) - 2 E K(z_i^x, z_j) + K(z_i, z_j)`,
/// `z = (s, a, s')` and `z^x = (s, a, x), x ~ T(s, a)`. Models without a
/// closed-form law use `m_samples` draws per record.
pub fn mml_rkhs_loss<M: TransitionModel + ?Sized>(
    dataset: &TransitionDataset,
    model: &M,
    kernel: &KernelSpec,
    m_samples: usize,
    seed: u64,
) -> Result<MmlScore> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let records = dataset.records();
    let mode = ExpectationMode::MonteCarlo { samples: m_samples.max(1), seed };
    let laws = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| resolve_law(model, r.s, r.a, mode, i))
        .collect::<Result<Vec<_>>>()?;
    let obs: Vec<NextStateLaw> = records.iter().map(|r| NextStateLaw::Discrete(vec![(r.s_next, 1.0)])).collect();
    let rows: Vec<f64> = (0..records.len())
        .into_par_iter()
        .map(|i| {
            let ri = &records[i];
            let mut acc = 0.0;
            for (j, rj) in records.iter().enumerate() {
                let sa = kernel.eval_sq((ri.s - rj.s).powi(2) + (ri.a - rj.a).powi(2));
                if sa == 0.0 {
                    continue;
                }
                let l1 = kernel.expect(&laws[i], &laws[j]);
                let l2 = -2.0 * kernel.expect(&laws[i], &obs[j]);
                let l3 = kernel.eval(ri.s_next, rj.s_next);
                acc += sa * (l1 + l2 + l3);
            }
            acc
        })
        .collect();
    let loss = rows.iter().sum::<f64>() / records.len() as f64;
    Ok(MmlScore::from_loss(loss.max(0.0)))
}

/// Gaussian next state helper for models exposing `(mean, std)`.
pub fn sample_gaussian(mean: f64, std: f64, rng: &mut dyn RngCore) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{Binning, Domain, TruncationMode};

    struct Shift(f64);

    impl TransitionModel for Shift {
        fn law(&self, s: f64, _a: f64) -> Option<NextStateLaw> {
            Some(NextStateLaw::Discrete(vec![(s + self.0, 1.0)]))
        }
        fn sample_next(&self, s: f64, _a: f64, _rng: &mut dyn RngCore) -> f64 {
            s + self.0
        }
    }

    struct Square;
    impl TestFunction for Square {
        fn eval(&self, s: f64) -> f64 {
            s * s
        }
    }

    fn toy() -> TransitionDataset {
        let recs = [(0.0, 0.0, 0.5), (1.0, 1.0, 1.4), (2.0, 0.0, 2.6)]
            .iter()
            .enumerate()
            .map(|(i, (s, a, sn))| Transition { traj_id: 0, t: i as u32, s: *s, a: *a, r: 0.0, s_next: *sn })
            .collect();
        TransitionDataset::new(Domain::Continuous1d, recs).unwrap()
    }

    fn tab_ratio(weights: Vec<f64>) -> TruncatedRatio {
        let b = Binning::Tabular { num_states: 3, num_actions: 2 };
        TruncatedRatio::from_weights(b, weights, 10.0, TruncationMode::Indicator).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let w = tab_ratio(vec![0.0; 6]);
        let loss = model_loss(&toy(), &w, &Shift(0.5), &Square, ExpectationMode::Analytic).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn toy_loss_matches_enumeration() {
        // Bins: (s=0,a=0)->0, (s=1,a=1)->3, (s=2,a=0)->4.
        let w = tab_ratio(vec![1.5, 0.0, 0.0, 2.0, 0.5, 0.0]);
        let loss = model_loss(&toy(), &w, &Shift(0.5), &Square, ExpectationMode::Analytic).unwrap();
        let terms = [1.5 * (0.25 - 0.25), 2.0 * (2.25 - 1.96), 0.5 * (6.25 - 6.76)];
        let want = (terms.iter().sum::<f64>() / 3.0).abs();
        assert!((loss - want).abs() < 1e-14, "{loss} vs {want}");
    }

    #[test]
    fn statistical_correction_arithmetic() {
        let c = statistical_correction(5000, 50.0, (10, 10, 10), 0.1, 10.0).unwrap();
        let iota = 20000.0_f64.ln();
        assert!((iota - 9.903).abs() < 1e-3);
        assert!((c - 20.0 * (50.0 * iota / 5000.0).sqrt()).abs() < 1e-12);
        assert!((c - 6.294).abs() < 1e-3);
        let c2 = statistical_correction(10000, 50.0, (10, 10, 10), 0.1, 10.0).unwrap();
        assert!((c / c2 - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!(statistical_correction(0, 50.0, (1, 1, 1), 0.1, 1.0).is_err());
        assert!(statistical_correction(10, 50.0, (1, 1, 1), 1.0, 1.0).is_err());
    }

    #[test]
    fn lower_bound_arithmetic() {
        let r = lower_bound(8.1, 0.2, 0.3, 0.9);
        assert!((r.lb - 3.1).abs() < 1e-12);
        assert_eq!(lower_bound(8.1, 0.0, 0.0, 0.9).lb, 8.1);
        assert!(lower_bound(1.0, 0.1, 0.5, 0.5).lb <= lower_bound(1.0, 0.1, 0.4, 0.5).lb);
    }

    #[test]
    fn mismatch_penalty_three_bins() {
        // Ratios 2, 10, 70 against zeta 50: only the last bin is penalised.
        let mu = [0.25, 0.03, 0.2 / 70.0];
        assert!((10.0 * exceed_mass(&[0.5, 0.3, 0.2], &mu, 50.0) - 2.0).abs() < 1e-12);
        let b = Binning::Tabular { num_states: 3, num_actions: 1 };
        let rho = HistogramDensity::new(b.clone(), vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(mismatch_penalty(&rho, &rho, f64::MAX, 10.0).unwrap(), 0.0);
        let mu_zero = HistogramDensity::new(b.clone(), vec![0.0, 0.0, 1.0]).unwrap();
        let first = HistogramDensity::new(b, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((mismatch_penalty(&first, &mu_zero, 50.0, 10.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mml_closed_form_zero_for_exact_model() {
        let ds = toy();
        struct Replay(Vec<(f64, f64)>);
        impl TransitionModel for Replay {
            fn law(&self, s: f64, _a: f64) -> Option<NextStateLaw> {
                let x = self.0.iter().find(|(k, _)| *k == s).map(|(_, v)| *v)?;
                Some(NextStateLaw::Discrete(vec![(x, 1.0)]))
            }
            fn sample_next(&self, s: f64, a: f64, _: &mut dyn RngCore) -> f64 {
                match self.law(s, a) {
                    Some(NextStateLaw::Discrete(v)) => v[0].0,
                    _ => unreachable!(),
                }
            }
        }
        let replay = Replay(ds.records().iter().map(|r| (r.s, r.s_next)).collect());
        for basis in [MmlBasis::Squared, MmlBasis::Polynomial] {
            let s =
                mml_linear_loss(&ds, &replay, basis, MmlLinearMethod::ClosedForm, ExpectationMode::Analytic).unwrap();
            assert!(s.loss.abs() < 1e-15);
        }
        let k = KernelSpec::rbf(1.0).unwrap();
        assert!(mml_rkhs_loss(&ds, &replay, &k, 4, 0).unwrap().loss < 1e-12);
    }

    #[test]
    fn gradient_mml_never_exceeds_closed_form() {
        let ds = toy();
        for basis in [MmlBasis::Squared, MmlBasis::Polynomial] {
            let exact =
                mml_linear_loss(&ds, &Shift(0.3), basis, MmlLinearMethod::ClosedForm, ExpectationMode::Analytic)
                    .unwrap();
            let grad = mml_linear_loss(
                &ds,
                &Shift(0.3),
                basis,
                MmlLinearMethod::gradient_default(),
                ExpectationMode::Analytic,
            )
            .unwrap();
            assert!(grad.loss <= exact.loss + 1e-6);
            assert!(grad.loss > 0.9 * exact.loss);
            assert_eq!(grad.score, -grad.loss);
        }
    }

    #[test]
    fn unnormalized_ascent_reports_divergence() {
        let method = MmlLinearMethod::Gradient { steps: 2000, rate: 1e8, normalize: false };
        let r = mml_linear_loss(&toy(), &Shift(0.3), MmlBasis::Squared, method, ExpectationMode::Analytic);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn analytic_mode_rejects_sampling_only_models() {
        struct Noisy;
        impl TransitionModel for Noisy {
            fn law(&self, _: f64, _: f64) -> Option<NextStateLaw> {
                None
            }
            fn sample_next(&self, s: f64, _: f64, rng: &mut dyn RngCore) -> f64 {
                sample_gaussian(s, 0.1, rng)
            }
        }
        let w = tab_ratio(vec![1.0; 6]);
        let r = model_loss(&toy(), &w, &Noisy, &Square, ExpectationMode::Analytic);
        assert!(matches!(r, Err(Error::UnsupportedExpectation(_))));
        assert!(model_loss(&toy(), &w, &Noisy, &Square, ExpectationMode::monte_carlo(3)).is_ok());
    }

    #[test]
    fn gaussian_rbf_expectation_matches_quadrature() {
        let k = KernelSpec::rbf(0.7).unwrap();
        let law = NextStateLaw::Gaussian { mean: 0.3, var: 0.04 };
        let point = NextStateLaw::Discrete(vec![(-0.2, 1.0)]);
        // Midpoint quadrature over +-8 sd.
        let sd = 0.2;
        let n = 20000;
        let (lo, hi) = (0.3 - 8.0 * sd, 0.3 + 8.0 * sd);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let pdf = (-(x - 0.3_f64).powi(2) / (2.0 * 0.04)).exp() / (2.0 * std::f64::consts::PI * 0.04).sqrt();
            acc += pdf * k.eval(x, -0.2) * h;
        }
        assert!((k.expect(&law, &point) - acc).abs() < 1e-9);
    }
}
