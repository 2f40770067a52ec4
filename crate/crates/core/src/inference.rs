//! Closed-form influence-function inference: sandwich covariances for the
//! regression coefficients, covariance functions for the baseline cumulative
//! hazards and cumulative incidence curves, transformed pointwise intervals,
//! and multiplier-bootstrap simultaneous confidence bands.
//!
//! Every estimator is linearized into per-subject contributions; cluster
//! averages of those contributions are the resampling unit, so the within-
//! cluster dependence never needs to be modelled. The stage-one estimation
//! of the missingness model propagates through coupling terms that multiply
//! its per-subject influence.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{grid_aggregates, ntilde_weights, CauseEngine, FitResult};
use crate::flat::Flat;
use crate::linalg;
use crate::rng::{purpose, stream};
use crate::stats::{empirical_quantile, norm_quantile};
use crate::step::StepFunction;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Range-preserving transform for intervals and bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// g(x) = log x, for cumulative hazards.
    Log,
    /// g(x) = log(-log x), keeping cumulative incidence limits inside (0,1).
    CLogLog,
}

/// Weight process for simultaneous bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandWeight {
    EqualPrecision,
    HallWellner,
}

/// Controls for one simultaneous band.
#[derive(Debug, Clone)]
pub struct BandOptions {
    pub weight: BandWeight,
    pub level: f64,
    pub nsim: usize,
    /// Window start; defaults to the 10th percentile of observed failure times.
    pub t1: Option<f64>,
    /// Window end; defaults to the 90th percentile of observed failure times.
    pub t2: Option<f64>,
    pub seed: u64,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            weight: BandWeight::EqualPrecision,
            level: 0.95,
            nsim: 1000,
            t1: None,
            t2: None,
            seed: 0,
        }
    }
}

/// A simultaneous confidence band on a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub transform: Transform,
    pub weight: BandWeight,
    pub c_alpha: f64,
    pub level: f64,
    /// Grid points inside the window that had to be dropped because the
    /// weight process degenerated there (zero estimate or zero variance).
    pub dropped_points: usize,
}

/// Transformed pointwise confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseCi {
    pub lower: f64,
    pub upper: f64,
    /// Set when the estimate sits on the boundary of the transform domain
    /// and the interval collapses.
    pub degenerate: bool,
}

/// Transformed Wald interval for a single estimate. `var` is the variance of
/// the estimate itself (not the sqrt(n)-scaled asymptotic variance).
pub fn pointwise_ci(est: f64, var: f64, transform: Transform, level: f64) -> PointwiseCi {
    let z = norm_quantile(0.5 + level / 2.0);
    let se = var.max(0.0).sqrt();
    match transform {
        Transform::Log => {
            if est <= 0.0 {
                return PointwiseCi {
                    lower: 0.0,
                    upper: 0.0,
                    degenerate: true,
                };
            }
            let hw = z * se / est;
            PointwiseCi {
                lower: est * (-hw).exp(),
                upper: est * hw.exp(),
                degenerate: false,
            }
        }
        Transform::CLogLog => {
            if est <= 0.0 || est >= 1.0 {
                let v = est.clamp(0.0, 1.0);
                return PointwiseCi {
                    lower: v,
                    upper: v,
                    degenerate: true,
                };
            }
            if se == 0.0 {
                return PointwiseCi {
                    lower: est,
                    upper: est,
                    degenerate: false,
                };
            }
            let g = (-est.ln()).ln();
            let hw = z * se / (est * est.ln()).abs();
            PointwiseCi {
                lower: (-(g + hw).exp()).exp(),
                upper: (-(g - hw).exp()).exp(),
                degenerate: false,
            }
        }
    }
}

struct CauseInfluence {
    beta: Vec<f64>,
    /// Jump of the filled-in counting process per subject.
    weights: Vec<f64>,
    /// exp(beta' Z) per subject.
    risk: Vec<f64>,
    /// Normalized risk-set sum on the shared grid.
    s0: Vec<f64>,
    /// Baseline hazard jumps and cumulative values on the shared grid.
    dlambda: Vec<f64>,
    lambda: Vec<f64>,
    /// Cumulative `int E dLambda` on the shared grid, row-major `m x p`.
    cum_e_dlambda: Vec<f64>,
    /// Cumulative `int dLambda / s0`.
    cum_inv_s0: Vec<f64>,
    /// Per-subject coefficient influence, row-major `n_subjects x p`.
    psi: Vec<f64>,
    /// Coupling of the stage-one estimator into the coefficients, `p x pg`.
    coupling: Vec<f64>,
    /// psi + coupling * omega per subject, row-major `n_subjects x p`.
    combined: Vec<f64>,
    /// Cluster means of `combined`, row-major `n_clusters x p`.
    cluster_combined: Vec<f64>,
    /// Sandwich covariance of sqrt(n)(beta_hat - beta), row-major `p x p`.
    sigma: Vec<f64>,
    /// Cumulative stage-one coupling for the hazard, row-major `m x pg`.
    hazard_coupling: Vec<f64>,
    /// Cluster-level hazard influence curves, row-major `n_clusters x m`.
    cluster_curves: Vec<f64>,
    /// Asymptotic variance of sqrt(n)(Lambda_hat - Lambda) on the grid.
    sigma2_lambda: Vec<f64>,
}

/// Influence-function workspace for a fitted model.
pub struct Influence {
    flat: Flat,
    /// Shared evaluation grid: all distinct observed failure times.
    grid: Vec<f64>,
    /// Grid index of the last grid time at or before each subject's time.
    gx: Vec<Option<usize>>,
    /// Exact grid index of each failure's time.
    g_event: Vec<Option<usize>>,
    /// Stage-one influence rows, `n_subjects x pg`.
    omega: Vec<f64>,
    /// Cluster means of omega, `n_clusters x pg`.
    omega_bar: Vec<f64>,
    p_gamma: usize,
    per_cause: Vec<CauseInfluence>,
    /// Observed failure times with multiplicity, sorted.
    failure_times: Vec<f64>,
    k: usize,
    p: usize,
}

impl Influence {
    pub fn new(data: &Dataset, fit: &FitResult) -> Result<Self> {
        let flat = Flat::new(data);
        let n = flat.n_clusters;
        let p = flat.p;
        let nsub = flat.n_subjects;
        let nf = n as f64;

        // Shared grid of all distinct failure times.
        let mut grid: Vec<f64> = (0..nsub)
            .filter(|&i| flat.delta[i])
            .map(|i| flat.x[i])
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let failure_times = grid.clone();
        grid.dedup();
        let m = grid.len();
        if m == 0 {
            return Err(Error::Invalid("no observed failures".into()));
        }

        let gx: Vec<Option<usize>> = (0..nsub)
            .map(|i| {
                let idx = grid.partition_point(|&u| u <= flat.x[i]);
                if idx == 0 {
                    None
                } else {
                    Some(idx - 1)
                }
            })
            .collect();
        let g_event: Vec<Option<usize>> = (0..nsub)
            .map(|i| {
                if flat.delta[i] {
                    let idx = grid.partition_point(|&u| u < flat.x[i]);
                    Some(idx)
                } else {
                    None
                }
            })
            .collect();

        // Stage-one influence and gradients of the cause probabilities.
        let model = &fit.missingness;
        let p_gamma = model.dim();
        let gamma_infl = model.gamma_influence(data)?;
        let mut omega = vec![0.0; nsub * p_gamma];
        if p_gamma > 0 {
            omega.copy_from_slice(&gamma_infl.per_subject);
        }
        let mut omega_bar = vec![0.0; n * p_gamma];
        for i in 0..nsub {
            let c = flat.cluster[i];
            for a in 0..p_gamma {
                omega_bar[c * p_gamma + a] += flat.invm[i] * omega[i * p_gamma + a];
            }
        }

        // pi gradients for failures with a missing cause, per cause.
        // pi_grad[l-1][i] is the gradient row for subject i (empty if unused).
        let mut pi_grad: Vec<Vec<f64>> = vec![vec![0.0; nsub * p_gamma]; fit.k];
        {
            let mut idx = 0usize;
            for cl in data.clusters() {
                for s in &cl.subjects {
                    if s.delta && !s.r && p_gamma > 0 {
                        for l in 1..=fit.k {
                            let g = model.pi_gradient(s, l)?;
                            pi_grad[l - 1][idx * p_gamma..(idx + 1) * p_gamma]
                                .copy_from_slice(&g);
                        }
                    }
                    idx += 1;
                }
            }
        }

        let mut per_cause = Vec::with_capacity(fit.k);
        for lfit in &fit.causes {
            let l = lfit.cause;
            let beta = lfit.beta.clone();
            let weights = ntilde_weights(data, model, l)?;
            let risk = flat.risk_scores(&beta);

            // Aggregates on the shared grid and the Breslow pieces.
            let agg = grid_aggregates(&flat, &beta, &grid, false);
            let mut jump_mass = vec![0.0; m];
            for i in 0..nsub {
                if flat.delta[i] && weights[i] > 0.0 {
                    jump_mass[g_event[i].unwrap()] += weights[i] * flat.invm[i] / nf;
                }
            }
            let mut dlambda = vec![0.0; m];
            let mut lambda = vec![0.0; m];
            let mut cum_e_dlambda = vec![0.0; m * p];
            let mut cum_inv_s0 = vec![0.0; m];
            let mut lam = 0.0;
            let mut cis = 0.0;
            let mut ced = vec![0.0; p];
            for g in 0..m {
                let dl = jump_mass[g] / agg.s0[g];
                dlambda[g] = dl;
                lam += dl;
                lambda[g] = lam;
                cis += dl / agg.s0[g];
                cum_inv_s0[g] = cis;
                for a in 0..p {
                    ced[a] += agg.s1[g * p + a] / agg.s0[g] * dl;
                    cum_e_dlambda[g * p + a] = ced[a];
                }
            }

            // Pseudo-Hessian at the estimate, inverted.
            let engine = CauseEngine::new(&flat, &weights, l);
            let (_, hess, _) = engine.score(&flat, &beta, true);
            let hinv = linalg::invert(&hess.unwrap(), p, "pseudo-Hessian")
                .map_err(|_| Error::SingularHessian)?;

            // Per-subject score integrals and the stage-one coupling matrix.
            let mut psi = vec![0.0; nsub * p];
            let mut coupling_raw = vec![0.0; p * p_gamma];
            let mut zbuf = vec![0.0; p];
            for i in 0..nsub {
                let z = flat.z_row(i);
                // Event part of the compensated integral.
                for v in zbuf.iter_mut() {
                    *v = 0.0;
                }
                if flat.delta[i] {
                    let ge = g_event[i].unwrap();
                    let w = weights[i];
                    if w > 0.0 {
                        for a in 0..p {
                            zbuf[a] += w * (z[a] - agg.s1[ge * p + a] / agg.s0[ge]);
                        }
                    }
                    // Coupling: failures with missing cause tie the estimate
                    // to the stage-one coefficients.
                    if !flat.r[i] && p_gamma > 0 {
                        let grad = &pi_grad[l - 1][i * p_gamma..(i + 1) * p_gamma];
                        let wi = flat.invm[i] / nf;
                        for a in 0..p {
                            let za = wi * (z[a] - agg.s1[ge * p + a] / agg.s0[ge]);
                            for b in 0..p_gamma {
                                coupling_raw[a * p_gamma + b] += za * grad[b];
                            }
                        }
                    }
                }
                // Compensator part up to the subject's observed time.
                if let Some(g) = gx[i] {
                    let e = risk[i];
                    for a in 0..p {
                        zbuf[a] -= e * (z[a] * lambda[g] - cum_e_dlambda[g * p + a]);
                    }
                }
                let row = linalg::matvec(&hinv, &zbuf, p, p);
                psi[i * p..(i + 1) * p].copy_from_slice(&row);
            }
            let mut coupling = vec![0.0; p * p_gamma];
            if p_gamma > 0 {
                for a in 0..p {
                    for b in 0..p_gamma {
                        let mut acc = 0.0;
                        for c in 0..p {
                            acc += hinv[a * p + c] * coupling_raw[c * p_gamma + b];
                        }
                        coupling[a * p_gamma + b] = acc;
                    }
                }
            }

            // combined = psi + coupling * omega, then cluster means and the
            // sandwich covariance.
            let mut combined = psi.clone();
            if p_gamma > 0 {
                for i in 0..nsub {
                    let om = &omega[i * p_gamma..(i + 1) * p_gamma];
                    for a in 0..p {
                        combined[i * p + a] +=
                            linalg::dot(&coupling[a * p_gamma..(a + 1) * p_gamma], om);
                    }
                }
            }
            let mut cluster_combined = vec![0.0; n * p];
            for i in 0..nsub {
                let c = flat.cluster[i];
                for a in 0..p {
                    cluster_combined[c * p + a] += flat.invm[i] * combined[i * p + a];
                }
            }
            let mut sigma = vec![0.0; p * p];
            for c in 0..n {
                linalg::outer_add(&mut sigma, &cluster_combined[c * p..(c + 1) * p], 1.0 / nf);
            }

            // Cumulative stage-one coupling for the hazard: failures with a
            // missing cause contribute their probability gradient over the
            // risk-set denominator.
            let mut hazard_coupling = vec![0.0; m * p_gamma];
            if p_gamma > 0 {
                for i in 0..nsub {
                    if flat.delta[i] && !flat.r[i] {
                        let ge = g_event[i].unwrap();
                        let grad = &pi_grad[l - 1][i * p_gamma..(i + 1) * p_gamma];
                        let w = flat.invm[i] / (nf * agg.s0[ge]);
                        for b in 0..p_gamma {
                            hazard_coupling[ge * p_gamma + b] += w * grad[b];
                        }
                    }
                }
                for g in 1..m {
                    for b in 0..p_gamma {
                        hazard_coupling[g * p_gamma + b] +=
                            hazard_coupling[(g - 1) * p_gamma + b];
                    }
                }
            }

            // Cluster-level hazard influence curves.
            let mut cluster_curves = vec![0.0; n * m];
            build_cluster_curves(
                &flat,
                &grid,
                &gx,
                &g_event,
                &weights,
                &risk,
                &agg.s0,
                &cum_inv_s0,
                &cum_e_dlambda,
                &combined,
                &cluster_combined,
                &hazard_coupling,
                &omega_bar,
                p_gamma,
                &mut cluster_curves,
            );
            let mut sigma2_lambda = vec![0.0; m];
            for c in 0..n {
                let row = &cluster_curves[c * m..(c + 1) * m];
                for g in 0..m {
                    sigma2_lambda[g] += row[g] * row[g] / nf;
                }
            }

            per_cause.push(CauseInfluence {
                beta,
                weights,
                risk,
                s0: agg.s0,
                dlambda,
                lambda,
                cum_e_dlambda,
                cum_inv_s0,
                psi,
                coupling,
                combined,
                cluster_combined,
                sigma,
                hazard_coupling,
                cluster_curves,
                sigma2_lambda,
            });
        }

        Ok(Influence {
            flat,
            grid,
            gx,
            g_event,
            omega,
            omega_bar,
            p_gamma,
            per_cause,
            failure_times,
            k: fit.k,
            p,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_clusters(&self) -> usize {
        self.flat.n_clusters
    }

    fn cause(&self, l: usize) -> &CauseInfluence {
        &self.per_cause[l - 1]
    }

    /// Sandwich covariance of `sqrt(n) (beta_hat - beta)` for cause `l`.
    pub fn beta_cov(&self, l: usize) -> &[f64] {
        &self.cause(l).sigma
    }

    /// Standard errors of the coefficient estimates for cause `l`.
    pub fn beta_se(&self, l: usize) -> Vec<f64> {
        let n = self.flat.n_clusters as f64;
        let p = self.p;
        (0..p)
            .map(|a| (self.cause(l).sigma[a * p + a] / n).sqrt())
            .collect()
    }

    /// Per-subject coefficient influence row (`psi`).
    pub fn beta_influence(&self, l: usize, subject: usize) -> &[f64] {
        &self.cause(l).psi[subject * self.p..(subject + 1) * self.p]
    }

    /// Stage-one coupling matrix for cause `l` (`p x p_gamma`).
    pub fn beta_coupling(&self, l: usize) -> &[f64] {
        &self.cause(l).coupling
    }

    /// Cumulative stage-one coupling of the hazard (`m x p_gamma` rows on
    /// the grid).
    pub fn hazard_coupling(&self, l: usize) -> &[f64] {
        &self.cause(l).hazard_coupling
    }

    /// Cluster means of the stage-one influence rows (`n x p_gamma`).
    pub fn gamma_cluster_means(&self) -> &[f64] {
        &self.omega_bar
    }

    /// Per-subject stage-one influence row (`omega`).
    pub fn gamma_influence_row(&self, subject: usize) -> &[f64] {
        &self.omega[subject * self.p_gamma..(subject + 1) * self.p_gamma]
    }

    /// Sample average of the combined per-subject coefficient influence;
    /// zero up to solver tolerance.
    pub fn influence_balance(&self, l: usize) -> Vec<f64> {
        let n = self.flat.n_clusters as f64;
        let p = self.p;
        let mut total = vec![0.0; p];
        for c in 0..self.flat.n_clusters {
            for a in 0..p {
                total[a] += self.cause(l).cluster_combined[c * p + a] / n;
            }
        }
        total
    }

    /// Filled-in martingale residual of one subject as a step function.
    pub fn martingale(&self, l: usize, subject: usize) -> StepFunction {
        let ci = self.cause(l);
        let m = self.grid.len();
        let mut values = Vec::with_capacity(m);
        for g in 0..m {
            let mut v = 0.0;
            if let Some(ge) = self.g_event[subject] {
                if ge <= g {
                    v += ci.weights[subject];
                }
            }
            if let Some(gi) = self.gx[subject] {
                v -= ci.risk[subject] * ci.lambda[gi.min(g)];
            }
            values.push(v);
        }
        StepFunction::new(self.grid.clone(), values, 0.0).unwrap()
    }

    /// Hazard influence curve of one subject (`phi`), for diagnostics.
    pub fn hazard_influence(&self, l: usize, subject: usize) -> StepFunction {
        let ci = self.cause(l);
        let p = self.p;
        let m = self.grid.len();
        let comb = &ci.combined[subject * p..(subject + 1) * p];
        let mut values = Vec::with_capacity(m);
        for g in 0..m {
            let mut v = 0.0;
            if let Some(ge) = self.g_event[subject] {
                if ge <= g && ci.weights[subject] > 0.0 {
                    v += ci.weights[subject] / ci.s0[ge];
                }
            }
            if let Some(gi) = self.gx[subject] {
                v -= ci.risk[subject] * ci.cum_inv_s0[gi.min(g)];
            }
            for a in 0..p {
                v -= comb[a] * ci.cum_e_dlambda[g * p + a];
            }
            values.push(v);
        }
        StepFunction::new(self.grid.clone(), values, 0.0).unwrap()
    }

    /// Cluster-level hazard influence curve (cluster mean of `phi` plus the
    /// stage-one coupling), the resampling unit for bands.
    pub fn hazard_cluster_curve(&self, l: usize, cluster: usize) -> &[f64] {
        let m = self.grid.len();
        &self.cause(l).cluster_curves[cluster * m..(cluster + 1) * m]
    }

    /// Asymptotic variance function of `sqrt(n)(Lambda_hat - Lambda)`.
    pub fn lambda_variance(&self, l: usize) -> StepFunction {
        StepFunction::new(self.grid.clone(), self.cause(l).sigma2_lambda.clone(), 0.0).unwrap()
    }

    /// Standard error of the cumulative hazard estimate at time `t`.
    pub fn lambda_se(&self, l: usize, t: f64) -> f64 {
        (self.lambda_cov(l, t, t) / self.flat.n_clusters as f64).sqrt()
    }

    /// Covariance function of `sqrt(n)(Lambda_hat - Lambda)` at `(t, s)`.
    pub fn lambda_cov(&self, l: usize, t: f64, s: f64) -> f64 {
        let ci = self.cause(l);
        let m = self.grid.len();
        let (gt, gs) = (self.grid_index(t), self.grid_index(s));
        let (Some(gt), Some(gs)) = (gt, gs) else {
            return 0.0;
        };
        let n = self.flat.n_clusters;
        let mut acc = 0.0;
        for c in 0..n {
            let row = &ci.cluster_curves[c * m..(c + 1) * m];
            acc += row[gt] * row[gs];
        }
        acc / n as f64
    }

    fn grid_index(&self, t: f64) -> Option<usize> {
        let idx = self.grid.partition_point(|&u| u <= t);
        if idx == 0 {
            None
        } else {
            Some(idx - 1)
        }
    }

    /// Pointwise table for the baseline cumulative hazard of cause `l`.
    pub fn lambda_table(&self, l: usize, level: f64) -> Vec<(f64, f64, f64, PointwiseCi)> {
        let ci = self.cause(l);
        let n = self.flat.n_clusters as f64;
        self.grid
            .iter()
            .enumerate()
            .map(|(g, &t)| {
                let est = ci.lambda[g];
                let var = ci.sigma2_lambda[g] / n;
                (t, est, var.sqrt(), pointwise_ci(est, var, Transform::Log, level))
            })
            .collect()
    }

    /// Simultaneous band for the baseline cumulative hazard of cause `l`.
    pub fn lambda_band(&self, l: usize, opts: &BandOptions) -> Result<BandResult> {
        let ci = self.cause(l);
        multiplier_band(
            &self.grid,
            &ci.lambda,
            &ci.sigma2_lambda,
            &ci.cluster_curves,
            self.flat.n_clusters,
            Transform::Log,
            opts,
            &self.failure_times,
        )
    }

    /// Cumulative incidence inference at covariate value `z0`.
    pub fn cif_inference(&self, z0: &[f64]) -> Result<CifInference> {
        if z0.len() != self.p {
            return Err(Error::Invalid(format!(
                "z0 has length {}, expected {}",
                z0.len(),
                self.p
            )));
        }
        let m = self.grid.len();
        let n = self.flat.n_clusters;
        let nf = n as f64;
        let k = self.k;
        let scales: Vec<f64> = self
            .per_cause
            .iter()
            .map(|c| linalg::dot(&c.beta, z0).exp())
            .collect();

        // Covariate-specific hazards and the left-limit survival factor.
        let mut surv_left = vec![0.0; m];
        {
            let mut prev = 0.0f64;
            for g in 0..m {
                surv_left[g] = (-prev).exp();
                prev = (0..k)
                    .map(|li| scales[li] * self.per_cause[li].lambda[g])
                    .sum();
            }
        }

        // Cluster-level influence curves of the covariate-specific hazards.
        let mut a_curves: Vec<Vec<f64>> = Vec::with_capacity(k);
        for li in 0..k {
            let ci = &self.per_cause[li];
            let mut curves = vec![0.0; n * m];
            for c in 0..n {
                let cc = &ci.cluster_combined[c * self.p..(c + 1) * self.p];
                let zc = linalg::dot(z0, cc);
                let h = &ci.cluster_curves[c * m..(c + 1) * m];
                let out = &mut curves[c * m..(c + 1) * m];
                for g in 0..m {
                    out[g] = scales[li] * (zc * ci.lambda[g] + h[g]);
                }
            }
            a_curves.push(curves);
        }

        // Cumulative incidence estimates and their influence curves.
        let mut cifs = Vec::with_capacity(k);
        let mut f_curves: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut sigma2: Vec<Vec<f64>> = Vec::with_capacity(k);
        for li in 0..k {
            let ci = &self.per_cause[li];
            let mut est = vec![0.0; m];
            let mut acc = 0.0;
            for g in 0..m {
                acc += surv_left[g] * scales[li] * ci.dlambda[g];
                est[g] = acc;
            }
            cifs.push(StepFunction::new(self.grid.clone(), est, 0.0)?);

            let mut curves = vec![0.0; n * m];
            for c in 0..n {
                let out = &mut curves[c * m..(c + 1) * m];
                let mut total = 0.0;
                let mut a_prev = vec![0.0; k];
                for g in 0..m {
                    let a_now = a_curves[li][c * m + g];
                    let da = a_now - a_prev[li];
                    let sum_a_left: f64 = a_prev.iter().sum();
                    total += surv_left[g] * da
                        - sum_a_left * surv_left[g] * scales[li] * ci.dlambda[g];
                    out[g] = total;
                    for (j, prev) in a_prev.iter_mut().enumerate() {
                        *prev = a_curves[j][c * m + g];
                    }
                }
            }
            let mut s2 = vec![0.0; m];
            for c in 0..n {
                let row = &curves[c * m..(c + 1) * m];
                for g in 0..m {
                    s2[g] += row[g] * row[g] / nf;
                }
            }
            f_curves.push(curves);
            sigma2.push(s2);
        }

        Ok(CifInference {
            grid: self.grid.clone(),
            failure_times: self.failure_times.clone(),
            n_clusters: n,
            cifs,
            curves: f_curves,
            sigma2,
        })
    }
}

/// Cumulative incidence estimates with influence curves at a fixed
/// covariate value.
pub struct CifInference {
    grid: Vec<f64>,
    failure_times: Vec<f64>,
    n_clusters: usize,
    cifs: Vec<StepFunction>,
    /// Per cause: cluster-level influence curves, row-major `n x m`.
    curves: Vec<Vec<f64>>,
    /// Per cause: asymptotic variance on the grid.
    sigma2: Vec<Vec<f64>>,
}

impl CifInference {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cif(&self, l: usize) -> &StepFunction {
        &self.cifs[l - 1]
    }

    /// Asymptotic variance function of `sqrt(n)(F_hat - F)`.
    pub fn variance(&self, l: usize) -> StepFunction {
        StepFunction::new(self.grid.clone(), self.sigma2[l - 1].clone(), 0.0).unwrap()
    }

    pub fn se(&self, l: usize, t: f64) -> f64 {
        (self.cov(l, t, t) / self.n_clusters as f64).sqrt()
    }

    /// Covariance function of `sqrt(n)(F_hat - F)` at `(t, s)`.
    pub fn cov(&self, l: usize, t: f64, s: f64) -> f64 {
        let m = self.grid.len();
        let gt = self.grid.partition_point(|&u| u <= t);
        let gs = self.grid.partition_point(|&u| u <= s);
        if gt == 0 || gs == 0 {
            return 0.0;
        }
        let (gt, gs) = (gt - 1, gs - 1);
        let mut acc = 0.0;
        for c in 0..self.n_clusters {
            let row = &self.curves[l - 1][c * m..(c + 1) * m];
            acc += row[gt] * row[gs];
        }
        acc / self.n_clusters as f64
    }

    pub fn cluster_curve(&self, l: usize, cluster: usize) -> &[f64] {
        let m = self.grid.len();
        &self.curves[l - 1][cluster * m..(cluster + 1) * m]
    }

    /// Pointwise table (time, estimate, se, interval) for cause `l`.
    pub fn table(&self, l: usize, level: f64) -> Vec<(f64, f64, f64, PointwiseCi)> {
        let n = self.n_clusters as f64;
        let est = self.cifs[l - 1].values();
        self.grid
            .iter()
            .enumerate()
            .map(|(g, &t)| {
                let var = self.sigma2[l - 1][g] / n;
                (
                    t,
                    est[g],
                    var.sqrt(),
                    pointwise_ci(est[g], var, Transform::CLogLog, level),
                )
            })
            .collect()
    }

    /// Simultaneous band for the cumulative incidence of cause `l`.
    pub fn band(&self, l: usize, opts: &BandOptions) -> Result<BandResult> {
        multiplier_band(
            &self.grid,
            self.cifs[l - 1].values(),
            &self.sigma2[l - 1],
            &self.curves[l - 1],
            self.n_clusters,
            Transform::CLogLog,
            opts,
            &self.failure_times,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn build_cluster_curves(
    flat: &Flat,
    grid: &[f64],
    gx: &[Option<usize>],
    g_event: &[Option<usize>],
    weights: &[f64],
    risk: &[f64],
    s0: &[f64],
    cum_inv_s0: &[f64],
    cum_e_dlambda: &[f64],
    combined: &[f64],
    cluster_combined: &[f64],
    hazard_coupling: &[f64],
    omega_bar: &[f64],
    p_gamma: usize,
    out: &mut [f64],
) {
    let _ = combined;
    let m = grid.len();
    let p = flat.p;
    let n = flat.n_clusters;

    // Group subjects by cluster.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..flat.n_subjects {
        members[flat.cluster[i]].push(i);
    }

    for c in 0..n {
        let row = &mut out[c * m..(c + 1) * m];
        let invm = if members[c].is_empty() {
            0.0
        } else {
            flat.invm[members[c][0]]
        };

        // Event jumps: w / s0 at each member's event time.
        for &i in &members[c] {
            if flat.delta[i] && weights[i] > 0.0 {
                let ge = g_event[i].unwrap();
                row[ge] += weights[i] / s0[ge];
            }
        }
        let mut acc = 0.0;
        for g in 0..m {
            acc += row[g];
            row[g] = acc;
        }

        // Compensator: members follow the cumulative integral until their
        // observed time, then freeze.
        let mut sorted: Vec<usize> = members[c].clone();
        sorted.sort_by(|&a, &b| flat.x[a].partial_cmp(&flat.x[b]).unwrap());
        let mut alive: f64 = sorted.iter().map(|&i| risk[i]).sum();
        let mut frozen = 0.0;
        let mut ptr = 0usize;
        for g in 0..m {
            let t = grid[g];
            while ptr < sorted.len() && flat.x[sorted[ptr]] < t {
                let i = sorted[ptr];
                alive -= risk[i];
                frozen += risk[i]
                    * match gx[i] {
                        Some(gi) => cum_inv_s0[gi],
                        None => 0.0,
                    };
                ptr += 1;
            }
            row[g] -= alive * cum_inv_s0[g] + frozen;
        }

        // Coefficient-influence passthrough: -C_i' cum_e_dlambda(t), using
        // the raw cluster sum (cluster mean times M).
        let cmean = &cluster_combined[c * p..(c + 1) * p];
        for g in 0..m {
            let mut acc3 = 0.0;
            for a in 0..p {
                acc3 += cmean[a] * cum_e_dlambda[g * p + a];
            }
            // cmean already carries the 1/M weight; the event/compensator
            // part above is still a raw sum, so scale it here.
            row[g] = row[g] * invm - acc3;
        }

        // Stage-one coupling through the cluster's omega mean.
        if p_gamma > 0 {
            let ob = &omega_bar[c * p_gamma..(c + 1) * p_gamma];
            for g in 0..m {
                row[g] += linalg::dot(&hazard_coupling[g * p_gamma..(g + 1) * p_gamma], ob);
            }
        }
    }
}

/// Shared multiplier-bootstrap machinery for hazard and incidence bands.
#[allow(clippy::too_many_arguments)]
fn multiplier_band(
    grid: &[f64],
    est: &[f64],
    sigma2: &[f64],
    curves: &[f64],
    n: usize,
    transform: Transform,
    opts: &BandOptions,
    failure_times: &[f64],
) -> Result<BandResult> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Invalid(format!("band level {} not in (0,1)", opts.level)));
    }
    if opts.nsim < 10 {
        return Err(Error::Invalid("band needs at least 10 multiplier draws".into()));
    }
    let m = grid.len();
    let t1 = opts
        .t1
        .unwrap_or_else(|| empirical_quantile(failure_times, 0.10));
    let t2 = opts
        .t2
        .unwrap_or_else(|| empirical_quantile(failure_times, 0.90));
    if !(t1 <= t2) {
        return Err(Error::Invalid(format!("band window [{t1}, {t2}] is empty")));
    }

    // Indices inside the window with a usable weight process.
    let mut dropped = 0usize;
    let mut sel: Vec<usize> = Vec::new();
    for g in 0..m {
        if grid[g] < t1 || grid[g] > t2 {
            continue;
        }
        let degenerate = match transform {
            Transform::Log => est[g] <= 0.0 || sigma2[g] <= 0.0,
            Transform::CLogLog => est[g] <= 0.0 || est[g] >= 1.0 || sigma2[g] <= 0.0,
        };
        if degenerate {
            dropped += 1;
        } else {
            sel.push(g);
        }
    }
    if sel.is_empty() {
        return Err(Error::Invalid(
            "no usable event times inside the band window".into(),
        ));
    }

    // Per-point multiplier scaling q(t) * |dg(est)|; for both transforms it
    // collapses to 1/sigma (equal precision) or 1/(1+sigma^2) (Hall-Wellner).
    let wfac: Vec<f64> = sel
        .iter()
        .map(|&g| match opts.weight {
            BandWeight::EqualPrecision => 1.0 / sigma2[g].sqrt(),
            BandWeight::HallWellner => 1.0 / (1.0 + sigma2[g]),
        })
        .collect();

    let sqrt_n = (n as f64).sqrt();
    let mut sups: Vec<f64> = (0..opts.nsim)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(opts.seed, purpose::BAND, b as u64);
            let mut w = vec![0.0f64; sel.len()];
            for c in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                let row = &curves[c * m..(c + 1) * m];
                for (j, &g) in sel.iter().enumerate() {
                    w[j] += xi * row[g];
                }
            }
            let mut sup = 0.0f64;
            for (j, &v) in w.iter().enumerate() {
                sup = sup.max((v * wfac[j] / sqrt_n).abs());
            }
            sup
        })
        .collect();
    sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let c_alpha = empirical_quantile(&sups, opts.level);

    let mut times = Vec::with_capacity(sel.len());
    let mut estimate = Vec::with_capacity(sel.len());
    let mut lower = Vec::with_capacity(sel.len());
    let mut upper = Vec::with_capacity(sel.len());
    for (j, &g) in sel.iter().enumerate() {
        // Half-width on the transformed scale: c / (sqrt(n) q(t)).
        let e = est[g];
        let q_inv = match opts.weight {
            BandWeight::EqualPrecision => sigma2[g].sqrt(),
            BandWeight::HallWellner => 1.0 + sigma2[g],
        };
        let _ = &wfac[j];
        let scale = match transform {
            Transform::Log => e,
            Transform::CLogLog => (e * e.ln()).abs(),
        };
        let hw = c_alpha * q_inv / (sqrt_n * scale);
        let (lo, hi) = match transform {
            Transform::Log => (e * (-hw).exp(), e * hw.exp()),
            Transform::CLogLog => {
                let y = (-e.ln()).ln();
                ((-(y + hw).exp()).exp(), (-(y - hw).exp()).exp())
            }
        };
        times.push(grid[g]);
        estimate.push(e);
        lower.push(lo.min(e));
        upper.push(hi.max(e));
    }

    Ok(BandResult {
        times,
        estimate,
        lower,
        upper,
        transform,
        weight: opts.weight,
        c_alpha,
        level: opts.level,
        dropped_points: dropped,
    })
}

/// Per-subject filled-in martingale residuals as step functions, for
/// diagnostics on small datasets.
pub fn martingale_tilde(data: &Dataset, fit: &FitResult, l: usize) -> Result<Vec<StepFunction>> {
    let infl = Influence::new(data, fit)?;
    Ok((0..data.n_subjects())
        .map(|i| infl.martingale(l, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, Subject};
    use crate::estimator::fit;
    use crate::missingness::{DesignSpec, TimeTransform};

    fn spec() -> DesignSpec {
        DesignSpec {
            time_transform: TimeTransform::Identity,
            include_z: true,
            include_a: false,
        }
    }

    fn small_dataset(seed: u64, n_clusters: usize, with_missing: bool) -> Dataset {
        let mut rng = stream(seed, 0x99, 0);
        let mut clusters = Vec::new();
        loop {
            clusters.clear();
            let mut has = [false; 2];
            for c in 0..n_clusters {
                let size = rng.gen_range(3..=7);
                let subjects = (0..size)
                    .map(|_| {
                        let x: f64 = rng.gen_range(0.05..2.0);
                        let delta = rng.gen_bool(0.8);
                        let (cause, r) = if delta {
                            let cause = rng.gen_range(1..=2);
                            if with_missing && rng.gen_bool(0.3) {
                                (0, false)
                            } else {
                                has[cause - 1] = true;
                                (cause, true)
                            }
                        } else {
                            (0, true)
                        };
                        Subject {
                            x,
                            delta,
                            cause,
                            r,
                            z: vec![rng.gen_range(-1.0..1.0)],
                            a: vec![],
                        }
                    })
                    .collect();
                clusters.push(Cluster {
                    id: format!("c{c}"),
                    subjects,
                });
            }
            if has[0] && has[1] {
                break;
            }
        }
        Dataset::new(clusters, 2, None).unwrap()
    }

    #[test]
    fn martingale_averages_to_zero_on_grid() {
        let data = small_dataset(5, 8, true);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        let n = data.n_clusters() as f64;
        for l in 1..=2 {
            for (g, &t) in infl.grid().iter().enumerate() {
                let _ = g;
                let mut acc = 0.0;
                let mut idx = 0;
                for cl in data.clusters() {
                    let w = 1.0 / cl.size() as f64;
                    for _ in &cl.subjects {
                        acc += w * infl.martingale(l, idx).eval(t);
                        idx += 1;
                    }
                }
                assert!(
                    (acc / n).abs() < 1e-10,
                    "cause {l} t={t}: mean martingale {acc}"
                );
            }
        }
    }

    #[test]
    fn influence_balance_is_zero() {
        let data = small_dataset(11, 10, true);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        assert!(!fitted.missingness.separation);
        for l in 1..=2 {
            let bal = infl.influence_balance(l);
            assert!(linalg::max_abs(&bal) < 1e-6, "cause {l}: {bal:?}");
        }
    }

    #[test]
    fn no_missingness_kills_the_coupling() {
        let data = small_dataset(7, 8, false);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        for l in 1..=2 {
            assert!(linalg::max_abs(infl.beta_coupling(l)) == 0.0);
        }
    }

    #[test]
    fn lambda_covariance_is_symmetric_and_zero_at_origin() {
        let data = small_dataset(13, 9, true);
        let fitted = fit(&data, &fit_spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        let grid = infl.grid().to_vec();
        let t = grid[grid.len() / 2];
        let s = grid[grid.len() - 1];
        assert!((infl.lambda_cov(1, t, s) - infl.lambda_cov(1, s, t)).abs() < 1e-14);
        assert_eq!(infl.lambda_cov(1, 0.0, t), 0.0);
        let v = infl.lambda_cov(1, t, t);
        assert!(v >= 0.0);
    }

    fn fit_spec() -> DesignSpec {
        spec()
    }

    #[test]
    fn pointwise_ci_examples() {
        // Hand-computed delta-method interval on the log scale.
        let ci = pointwise_ci(0.5, 0.01, Transform::Log, 0.95);
        assert!((ci.lower - 0.337_854_490_568_522_85).abs() < 1e-12);
        assert!((ci.upper - 0.739_963_525_656_603_8).abs() < 1e-12);
        assert!(!ci.degenerate);

        let ci = pointwise_ci(0.5, 0.0, Transform::Log, 0.95);
        assert_eq!((ci.lower, ci.upper), (0.5, 0.5));

        let ci = pointwise_ci(0.0, 0.01, Transform::Log, 0.95);
        assert!(ci.degenerate);

        // Log transform keeps the lower limit positive.
        let ci = pointwise_ci(0.05, 0.04, Transform::Log, 0.95);
        assert!(ci.lower > 0.0);

        // cloglog keeps limits inside (0,1).
        let ci = pointwise_ci(0.9, 0.04, Transform::CLogLog, 0.95);
        assert!(ci.lower > 0.0 && ci.upper < 1.0);
        assert!(ci.lower <= 0.9 && 0.9 <= ci.upper);
    }

    #[test]
    fn band_covers_pointwise_ci_and_is_deterministic() {
        let data = small_dataset(21, 12, true);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        let opts = BandOptions {
            nsim: 500,
            seed: 42,
            ..BandOptions::default()
        };
        let band = infl.lambda_band(1, &opts).unwrap();
        let band2 = infl.lambda_band(1, &opts).unwrap();
        assert_eq!(band, band2);
        assert!(band.c_alpha >= norm_quantile(0.975) * 0.99);
        let n = data.n_clusters() as f64;
        for (j, &t) in band.times.iter().enumerate() {
            let est = band.estimate[j];
            let var = infl.lambda_cov(1, t, t) / n;
            let ci = pointwise_ci(est, var, Transform::Log, 0.95);
            assert!(
                band.lower[j] <= ci.lower + 1e-12 && ci.upper <= band.upper[j] + 1e-12,
                "band should contain the pointwise interval at t={t}"
            );
            assert!(band.lower[j] <= est && est <= band.upper[j]);
        }
    }

    #[test]
    fn cif_band_respects_unit_interval() {
        let data = small_dataset(33, 12, true);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        let cinf = infl.cif_inference(&[0.0]).unwrap();
        let opts = BandOptions {
            weight: BandWeight::HallWellner,
            nsim: 300,
            seed: 7,
            ..BandOptions::default()
        };
        let band = cinf.band(1, &opts).unwrap();
        for j in 0..band.times.len() {
            assert!(band.lower[j] >= 0.0 && band.upper[j] <= 1.0);
            assert!(band.lower[j] <= band.estimate[j] && band.estimate[j] <= band.upper[j]);
        }
    }

    #[test]
    fn cif_influence_is_zero_at_origin_and_cov_symmetric() {
        let data = small_dataset(40, 10, true);
        let fitted = fit(&data, &spec()).unwrap();
        let infl = Influence::new(&data, &fitted).unwrap();
        let cinf = infl.cif_inference(&[0.3]).unwrap();
        assert_eq!(cinf.cov(1, 0.0, 1.0), 0.0);
        let grid = cinf.grid().to_vec();
        let (t, s) = (grid[grid.len() / 3], grid[2 * grid.len() / 3]);
        assert!((cinf.cov(1, t, s) - cinf.cov(1, s, t)).abs() < 1e-14);
        assert!(cinf.cov(1, t, t) >= 0.0);
    }
}
