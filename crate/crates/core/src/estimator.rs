//! Stage two: maximum partial pseudolikelihood for the marginal
//! proportional cause-specific hazards model.
//!
//! Failures with a missing cause enter each cause-specific counting process
//! with their predicted cause probability as a fractional jump; every
//! subject's contribution is weighted by the inverse of its cluster size so
//! informative cluster size does not bias the population-averaged estimand.
//! Coefficients solve the weighted pseudoscore equation by Newton's method
//! with step halving, and the baseline cumulative hazards are Breslow-type
//! step functions over the distinct event times.

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::flat::Flat;
use crate::linalg;
use crate::missingness::{fit_missingness, DesignSpec, MissingnessModel};
use crate::step::StepFunction;
use serde::{Deserialize, Serialize};

/// Filled-in cause-specific counting process at time `t`: the observed
/// process when the cause is known, its conditional expectation otherwise.
pub fn ntilde(s: &Subject, m: &MissingnessModel, l: usize, t: f64) -> Result<f64> {
    Ok(ntilde_jump(s, m, l)? * f64::from(s.n_at(t)))
}

/// Jump size of the filled-in process at the subject's failure time
/// (zero for censored subjects).
pub(crate) fn ntilde_jump(s: &Subject, m: &MissingnessModel, l: usize) -> Result<f64> {
    if !s.delta {
        return Ok(0.0);
    }
    if s.r {
        Ok(f64::from(s.cause == l))
    } else {
        m.predict_pi(s, l)
    }
}

/// Per-subject jumps of the filled-in process for cause `l`, in dataset
/// order.
pub(crate) fn ntilde_weights(data: &Dataset, m: &MissingnessModel, l: usize) -> Result<Vec<f64>> {
    data.subjects().map(|s| ntilde_jump(s, m, l)).collect()
}

/// Inverse-cluster-size weighted risk-set sums at time `t`:
/// `s0 = sum 1/M_i Y(t) exp(b'Z)`, `s1` the same with `Z`, `s2` with `ZZ'`.
#[derive(Debug, Clone)]
pub struct RiskAggregates {
    pub s0: f64,
    pub s1: Vec<f64>,
    /// Row-major `p x p`.
    pub s2: Vec<f64>,
}

impl RiskAggregates {
    /// Weighted mean of at-risk covariates under the model weights.
    pub fn mean(&self) -> Vec<f64> {
        self.s1.iter().map(|v| v / self.s0).collect()
    }

    /// Weighted covariance of at-risk covariates (`s2/s0 - mean mean'`).
    pub fn covariance(&self) -> Vec<f64> {
        let p = self.s1.len();
        let e = self.mean();
        let mut v = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                v[i * p + j] = self.s2[i * p + j] / self.s0 - e[i] * e[j];
            }
        }
        v
    }
}

/// Risk-set aggregates at an arbitrary time point.
pub fn risk_aggregates(data: &Dataset, beta: &[f64], t: f64) -> Result<RiskAggregates> {
    let p = data.n_covariates();
    if beta.len() != p {
        return Err(Error::Invalid(format!(
            "beta has length {}, expected {p}",
            beta.len()
        )));
    }
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    for cl in data.clusters() {
        let w = 1.0 / cl.size() as f64;
        for s in &cl.subjects {
            if s.x >= t {
                let e = w * linalg::dot(&s.z, beta).exp();
                s0 += e;
                for i in 0..p {
                    s1[i] += e * s.z[i];
                    for j in 0..p {
                        s2[i * p + j] += e * s.z[i] * s.z[j];
                    }
                }
            }
        }
    }
    if s0 <= 0.0 {
        return Err(Error::EmptyRiskSet { time: t });
    }
    Ok(RiskAggregates { s0, s1, s2 })
}

/// One filled-in event: a subject contributing a jump to cause `l`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Event {
    pub subject: usize,
    pub grid: usize,
    /// Jump of the filled-in process scaled by the subject's inverse
    /// cluster size.
    pub wm: f64,
}

/// Risk-set sums evaluated along the event grid, divided by the number of
/// clusters.
pub(crate) struct GridAggregates {
    pub s0: Vec<f64>,
    /// Row-major `grid x p`.
    pub s1: Vec<f64>,
    /// Row-major `grid x p*p`; empty unless requested.
    pub s2: Vec<f64>,
}

/// Reverse sweep over subjects ordered by descending time, accumulating the
/// inverse-cluster-size weighted risk-set sums at every requested time point
/// (divided by the cluster count) in a single pass.
pub(crate) fn grid_aggregates(
    flat: &Flat,
    beta: &[f64],
    times: &[f64],
    with_s2: bool,
) -> GridAggregates {
    let p = flat.p;
    let m = times.len();
    let n = flat.n_clusters as f64;
    let mut s0 = vec![0.0; m];
    let mut s1 = vec![0.0; m * p];
    let mut s2 = if with_s2 { vec![0.0; m * p * p] } else { Vec::new() };
    let mut acc0 = 0.0;
    let mut acc1 = vec![0.0; p];
    let mut acc2 = vec![0.0; p * p];
    let mut ptr = 0usize;
    for g in (0..m).rev() {
        let t = times[g];
        while ptr < flat.n_subjects {
            let i = flat.order_desc[ptr];
            if flat.x[i] < t {
                break;
            }
            let e = flat.invm[i] * linalg::dot(flat.z_row(i), beta).exp();
            let z = flat.z_row(i);
            acc0 += e;
            for a in 0..p {
                acc1[a] += e * z[a];
            }
            if with_s2 {
                for a in 0..p {
                    let ea = e * z[a];
                    for b in 0..p {
                        acc2[a * p + b] += ea * z[b];
                    }
                }
            }
            ptr += 1;
        }
        s0[g] = acc0 / n;
        for a in 0..p {
            s1[g * p + a] = acc1[a] / n;
        }
        if with_s2 {
            for ab in 0..p * p {
                s2[g * p * p + ab] = acc2[ab] / n;
            }
        }
    }
    GridAggregates { s0, s1, s2 }
}

/// Precomputed per-cause structures for score, hazard, and influence work.
pub(crate) struct CauseEngine {
    /// Distinct event times, ascending.
    pub grid: Vec<f64>,
    pub events: Vec<Event>,
    /// `(1/n) sum of wm` per grid point: the Breslow numerator.
    pub jump_mass: Vec<f64>,
}

impl CauseEngine {
    pub fn new(flat: &Flat, weights: &[f64], _cause: usize) -> Self {
        let mut times: Vec<f64> = (0..flat.n_subjects)
            .filter(|&i| flat.delta[i] && weights[i] > 0.0)
            .map(|i| flat.x[i])
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let n = flat.n_clusters as f64;
        let mut events = Vec::new();
        let mut jump_mass = vec![0.0; times.len()];
        for i in 0..flat.n_subjects {
            if flat.delta[i] && weights[i] > 0.0 {
                let g = times.partition_point(|&u| u < flat.x[i]);
                debug_assert!(times[g] == flat.x[i]);
                let wm = weights[i] * flat.invm[i];
                events.push(Event {
                    subject: i,
                    grid: g,
                    wm,
                });
                jump_mass[g] += wm / n;
            }
        }
        CauseEngine {
            grid: times,
            events,
            jump_mass,
        }
    }

    /// Risk-set sums at every grid point, in one reverse sweep.
    pub fn aggregates(&self, flat: &Flat, beta: &[f64], with_s2: bool) -> GridAggregates {
        grid_aggregates(flat, beta, &self.grid, with_s2)
    }

    /// Pseudoscore and (optionally) the negative derivative of the
    /// pseudoscore with respect to the coefficients.
    pub fn score(
        &self,
        flat: &Flat,
        beta: &[f64],
        with_hessian: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>, GridAggregates) {
        let p = flat.p;
        let n = flat.n_clusters as f64;
        let agg = self.aggregates(flat, beta, with_hessian);
        let mut score = vec![0.0; p];
        let mut hess = if with_hessian { Some(vec![0.0; p * p]) } else { None };
        for ev in &self.events {
            let g = ev.grid;
            let s0 = agg.s0[g];
            let z = flat.z_row(ev.subject);
            let w = ev.wm / n;
            for a in 0..p {
                score[a] += w * (z[a] - agg.s1[g * p + a] / s0);
            }
            if let Some(h) = hess.as_mut() {
                for a in 0..p {
                    let ea = agg.s1[g * p + a] / s0;
                    for b in 0..p {
                        let eb = agg.s1[g * p + b] / s0;
                        h[a * p + b] += w * (agg.s2[g * p * p + a * p + b] / s0 - ea * eb);
                    }
                }
            }
        }
        (score, hess, agg)
    }

    /// Log expected partial pseudolikelihood divided by the cluster count.
    pub fn loglik(&self, flat: &Flat, beta: &[f64]) -> f64 {
        let n = flat.n_clusters as f64;
        let agg = self.aggregates(flat, beta, false);
        let mut q = 0.0;
        for ev in &self.events {
            let z = flat.z_row(ev.subject);
            q += ev.wm / n * (linalg::dot(z, beta) - agg.s0[ev.grid].ln());
        }
        q
    }

    /// Breslow jumps and cumulative hazard at a fixed coefficient vector.
    pub fn breslow(&self, flat: &Flat, beta: &[f64]) -> Result<StepFunction> {
        let agg = self.aggregates(flat, beta, false);
        let mut cum = 0.0;
        let values: Vec<f64> = self
            .grid
            .iter()
            .enumerate()
            .map(|(g, _)| {
                cum += self.jump_mass[g] / agg.s0[g];
                cum
            })
            .collect();
        StepFunction::new(self.grid.clone(), values, 0.0)
    }
}

/// Newton solver controls for the pseudoscore equation.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 20,
            init: None,
        }
    }
}

/// Newton target below the convergence contract; the extra digits keep the
/// influence-function identities tight downstream.
const SCORE_TARGET_FACTOR: f64 = 1e-3;

/// Outcome of a single-cause coefficient solve.
#[derive(Debug, Clone)]
pub struct BetaSolve {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub score_norm: f64,
    pub converged: bool,
}

/// Partial pseudoscore for cause `l` at `beta`.
pub fn pseudoscore(
    data: &Dataset,
    beta: &[f64],
    m: &MissingnessModel,
    l: usize,
) -> Result<Vec<f64>> {
    let flat = Flat::new(data);
    let weights = ntilde_weights(data, m, l)?;
    let engine = CauseEngine::new(&flat, &weights, l);
    let (score, _, _) = engine.score(&flat, beta, false);
    Ok(score)
}

/// Log expected partial pseudolikelihood (per cluster) for cause `l`; its
/// gradient is the pseudoscore.
pub fn pseudo_loglik(data: &Dataset, beta: &[f64], m: &MissingnessModel, l: usize) -> Result<f64> {
    let flat = Flat::new(data);
    let weights = ntilde_weights(data, m, l)?;
    let engine = CauseEngine::new(&flat, &weights, l);
    Ok(engine.loglik(&flat, beta))
}

/// Negative derivative of the pseudoscore: the pseudo-Hessian, symmetric and
/// positive semidefinite.
pub fn pseudo_hessian(
    data: &Dataset,
    beta: &[f64],
    m: &MissingnessModel,
    l: usize,
) -> Result<Vec<f64>> {
    let flat = Flat::new(data);
    let weights = ntilde_weights(data, m, l)?;
    let engine = CauseEngine::new(&flat, &weights, l);
    let (_, hess, _) = engine.score(&flat, beta, true);
    Ok(hess.unwrap())
}

pub(crate) fn solve_beta_engine(
    flat: &Flat,
    engine: &CauseEngine,
    opts: &FitOptions,
) -> Result<BetaSolve> {
    let p = flat.p;
    let mut beta = match &opts.init {
        Some(b) => {
            if b.len() != p {
                return Err(Error::Invalid(format!(
                    "initial beta has length {}, expected {p}",
                    b.len()
                )));
            }
            b.clone()
        }
        None => vec![0.0; p],
    };
    let target = opts.tol * SCORE_TARGET_FACTOR;
    let (mut score, mut hess, _) = engine.score(flat, &beta, true);
    let mut norm = linalg::max_abs(&score);
    let mut iterations = 0;
    while norm >= target && iterations < opts.max_iter {
        iterations += 1;
        let h = hess.take().unwrap();
        let step = linalg::solve(&h, &score, p, "pseudo-Hessian")
            .map_err(|_| Error::SingularHessian)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let (trial_score, trial_hess, _) = engine.score(flat, &trial, true);
            let trial_norm = linalg::max_abs(&trial_score);
            if trial_norm < norm || trial_norm < target {
                beta = trial;
                score = trial_score;
                hess = trial_hess;
                norm = trial_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    // Identifiability check at the solution; a rank-deficient pseudo-Hessian
    // means the coefficients are not estimable from this data.
    if let Some(h) = hess.as_ref() {
        linalg::invert(h, p, "pseudo-Hessian").map_err(|_| Error::SingularHessian)?;
    }
    Ok(BetaSolve {
        beta,
        iterations,
        score_norm: norm,
        converged: norm < opts.tol,
    })
}

/// Solve the pseudoscore equation for cause `l`. Returns the last iterate
/// with a convergence flag rather than failing on a stalled search.
pub fn solve_beta(
    data: &Dataset,
    m: &MissingnessModel,
    l: usize,
    opts: &FitOptions,
) -> Result<BetaSolve> {
    let flat = Flat::new(data);
    let weights = ntilde_weights(data, m, l)?;
    let engine = CauseEngine::new(&flat, &weights, l);
    solve_beta_engine(&flat, &engine, opts)
}

/// Breslow-type baseline cumulative hazard for cause `l` at `beta`.
pub fn breslow(
    data: &Dataset,
    beta: &[f64],
    m: &MissingnessModel,
    l: usize,
) -> Result<StepFunction> {
    let flat = Flat::new(data);
    let weights = ntilde_weights(data, m, l)?;
    let engine = CauseEngine::new(&flat, &weights, l);
    engine.breslow(&flat, beta)
}

/// One fitted cause: coefficients, baseline cumulative hazard, diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CauseFit {
    pub cause: usize,
    pub beta: Vec<f64>,
    pub cum_hazard: StepFunction,
    pub iterations: usize,
    pub score_norm: f64,
}

/// Full two-stage fit across all causes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub causes: Vec<CauseFit>,
    pub missingness: MissingnessModel,
    pub k: usize,
    pub p: usize,
}

impl FitResult {
    pub fn cause(&self, l: usize) -> &CauseFit {
        &self.causes[l - 1]
    }
}

/// Run the full pipeline: stage-one missingness model, then per-cause
/// coefficient solves and Breslow baselines. Deterministic given the data.
pub fn fit(data: &Dataset, spec: &DesignSpec) -> Result<FitResult> {
    fit_with(data, spec, &FitOptions::default())
}

pub fn fit_with(data: &Dataset, spec: &DesignSpec, opts: &FitOptions) -> Result<FitResult> {
    data.check_fittable()?;
    let m = fit_missingness(data, spec).map_err(|e| e.in_stage("missingness stage"))?;
    fit_second_stage(data, m, opts)
}

/// Stage two alone, reusing an already fitted missingness model.
pub fn fit_second_stage(
    data: &Dataset,
    m: MissingnessModel,
    opts: &FitOptions,
) -> Result<FitResult> {
    let flat = Flat::new(data);
    let k = data.n_causes();
    let mut causes = Vec::with_capacity(k);
    for l in 1..=k {
        let weights =
            ntilde_weights(data, &m, l).map_err(|e| e.in_stage("regression stage"))?;
        let engine = CauseEngine::new(&flat, &weights, l);
        let solve =
            solve_beta_engine(&flat, &engine, opts).map_err(|e| e.in_stage("regression stage"))?;
        if !solve.converged {
            return Err(Error::NoConvergence {
                stage: "regression stage",
                iterations: solve.iterations,
                norm: solve.score_norm,
            });
        }
        let cum_hazard = engine.breslow(&flat, &solve.beta)?;
        causes.push(CauseFit {
            cause: l,
            beta: solve.beta,
            cum_hazard,
            iterations: solve.iterations,
            score_norm: solve.score_norm,
        });
    }
    Ok(FitResult {
        causes,
        missingness: m,
        k,
        p: data.n_covariates(),
    })
}

/// Covariate-specific cumulative incidence functions for every cause,
/// evaluated from the fitted hazards at covariate value `z0`.
pub fn cif(fit: &FitResult, z0: &[f64]) -> Result<Vec<StepFunction>> {
    if z0.len() != fit.p {
        return Err(Error::Invalid(format!(
            "z0 has length {}, expected {}",
            z0.len(),
            fit.p
        )));
    }
    // Merged grid over every cause's jump times.
    let mut grid: Vec<f64> = fit
        .causes
        .iter()
        .flat_map(|c| c.cum_hazard.times().iter().copied())
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let scales: Vec<f64> = fit
        .causes
        .iter()
        .map(|c| linalg::dot(&c.beta, z0).exp())
        .collect();
    let m = grid.len();
    let mut incidences = Vec::with_capacity(fit.k);
    for (l, cfit) in fit.causes.iter().enumerate() {
        let mut values = Vec::with_capacity(m);
        let mut total = 0.0;
        for (g, &t) in grid.iter().enumerate() {
            let _ = g;
            // Survival at t-: all causes' covariate-specific hazards.
            let mut hsum_left = 0.0;
            for (j, other) in fit.causes.iter().enumerate() {
                hsum_left += scales[j] * other.cum_hazard.eval_left(t);
            }
            let jump = scales[l] * (cfit.cum_hazard.eval(t) - cfit.cum_hazard.eval_left(t));
            total += (-hsum_left).exp() * jump;
            values.push(total);
        }
        incidences.push(StepFunction::new(grid.clone(), values, 0.0)?);
    }
    Ok(incidences)
}
