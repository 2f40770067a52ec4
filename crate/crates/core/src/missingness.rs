//! Stage one: parametric model for the conditional cause-of-failure
//! probabilities given the observed data, fitted on the complete cases by
//! inverse-cluster-size weighted estimating equations under working
//! independence.
//!
//! With two causes this is a weighted logistic regression for cause 1; with
//! more causes it is a multinomial logit with the last cause as reference.

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::linalg;
use serde::{Deserialize, Serialize};

/// Time transform used in the design vector (1, h(x), z, a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TimeTransform {
    /// No time effect; the design keeps only the intercept and covariates.
    None,
    /// h(x) = x
    Identity,
    /// h(x) = log x; requires positive failure times
    Log,
    /// Piecewise-linear hat functions on a user knot grid. The first hat is
    /// dropped so the basis stays full rank next to the intercept.
    PiecewiseLinear { knots: Vec<f64> },
}

impl TimeTransform {
    fn dim(&self) -> usize {
        match self {
            TimeTransform::None => 0,
            TimeTransform::Identity | TimeTransform::Log => 1,
            TimeTransform::PiecewiseLinear { knots } => knots.len().saturating_sub(1),
        }
    }

    fn push(&self, x: f64, out: &mut Vec<f64>) -> Result<()> {
        match self {
            TimeTransform::None => {}
            TimeTransform::Identity => out.push(x),
            TimeTransform::Log => {
                if x <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "log time transform needs positive times, got {x}"
                    )));
                }
                out.push(x.ln());
            }
            TimeTransform::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::Invalid(
                        "piecewise-linear transform needs at least two knots".into(),
                    ));
                }
                let t = x.clamp(knots[0], *knots.last().unwrap());
                for j in 1..knots.len() {
                    out.push(hat(&knots[..], j, t));
                }
            }
        }
        Ok(())
    }
}

fn hat(knots: &[f64], j: usize, t: f64) -> f64 {
    let kj = knots[j];
    if t <= kj {
        let lo = knots[j - 1];
        if t <= lo {
            0.0
        } else {
            (t - lo) / (kj - lo)
        }
    } else if j + 1 < knots.len() {
        let hi = knots[j + 1];
        if t >= hi {
            0.0
        } else {
            (hi - t) / (hi - kj)
        }
    } else {
        1.0
    }
}

/// Specification of the missingness-model design vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub time_transform: TimeTransform,
    pub include_z: bool,
    pub include_a: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            time_transform: TimeTransform::Identity,
            include_z: true,
            include_a: true,
        }
    }
}

impl DesignSpec {
    /// Dimension of the design vector for given covariate dimensions.
    pub fn dim(&self, p: usize, q: usize) -> usize {
        1 + self.time_transform.dim()
            + if self.include_z { p } else { 0 }
            + if self.include_a { q } else { 0 }
    }

    /// Design vector (1, h(x), z, a) for one subject.
    pub fn design_vector(&self, s: &Subject) -> Result<Vec<f64>> {
        let mut d = Vec::with_capacity(self.dim(s.z.len(), s.a.len()));
        d.push(1.0);
        self.time_transform.push(s.x, &mut d)?;
        if self.include_z {
            d.extend_from_slice(&s.z);
        }
        if self.include_a {
            d.extend_from_slice(&s.a);
        }
        Ok(d)
    }
}

/// Fitted cause-of-failure probability model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingnessModel {
    /// Stacked coefficients, `(k-1)` blocks of length `design_dim`; the last
    /// cause is the reference category.
    gamma: Vec<f64>,
    spec: DesignSpec,
    k: usize,
    design_dim: usize,
    /// Mean-scaled negative Jacobian of the estimating function at the
    /// solution (used for the influence-function linearization).
    info: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when fitted probabilities are pinned at 0/1 on the complete cases.
    pub separation: bool,
    pub equation_norm: f64,
}

/// Per-subject influence contributions of the stage-one estimator.
#[derive(Debug, Clone)]
pub struct GammaInfluence {
    /// Row-major `n_subjects x dim`, subjects in dataset order; zero rows for
    /// subjects outside the complete cases.
    pub per_subject: Vec<f64>,
    pub dim: usize,
    pub n_subjects: usize,
}

impl GammaInfluence {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.per_subject[i * self.dim..(i + 1) * self.dim]
    }
}

/// Fit the cause-of-failure model on the complete cases.
pub fn fit_missingness(data: &Dataset, spec: &DesignSpec) -> Result<MissingnessModel> {
    let k = data.n_causes();
    let d = spec.dim(data.n_covariates(), data.n_auxiliary());
    let dim = d * (k.saturating_sub(1));
    let n = data.n_clusters() as f64;

    // Complete-case failures with their design vectors and cluster weights.
    let mut designs: Vec<Vec<f64>> = Vec::new();
    let mut outcomes: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut per_cause = vec![0usize; k + 1];
    for cl in data.clusters() {
        let w = 1.0 / cl.size() as f64;
        for s in &cl.subjects {
            if s.delta && s.r {
                designs.push(spec.design_vector(s)?);
                outcomes.push(s.cause);
                weights.push(w);
                per_cause[s.cause] += 1;
            }
        }
    }
    for l in 1..=k {
        if per_cause[l] == 0 {
            return Err(Error::Invalid(format!(
                "no complete-case failure of cause {l}; cannot fit the missingness model"
            )));
        }
    }

    let mut gamma = vec![0.0; dim];
    if dim == 0 {
        // Single cause: the model is degenerate with pi_1 = 1.
        return Ok(MissingnessModel {
            gamma,
            spec: spec.clone(),
            k,
            design_dim: d,
            info: Vec::new(),
            iterations: 0,
            converged: true,
            separation: false,
            equation_norm: 0.0,
        });
    }

    // Iterate toward a residual well below the 1e-8 contract so that the
    // influence-function identities downstream hold at their tolerances.
    let max_iter = 100;
    let tol = 1e-8;
    let target = 1e-11;
    let mut eq = estimating_equation(&designs, &outcomes, &weights, &gamma, k, d);
    let mut eq_norm = linalg::max_abs(&eq);
    let mut info = vec![0.0; dim * dim];
    let mut iterations = 0;
    while eq_norm >= target && iterations < max_iter {
        iterations += 1;
        info = neg_jacobian(&designs, &weights, &gamma, k, d);
        let step = linalg::solve(&info, &eq, dim, "missingness-model information matrix")?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f64> = gamma
                .iter()
                .zip(&step)
                .map(|(g, s)| g + scale * s)
                .collect();
            let trial_eq = estimating_equation(&designs, &outcomes, &weights, &trial, k, d);
            let trial_norm = linalg::max_abs(&trial_eq);
            if trial_norm < eq_norm || trial_norm < target {
                gamma = trial;
                eq = trial_eq;
                eq_norm = trial_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if eq_norm >= tol {
        return Err(Error::NoConvergence {
            stage: "missingness model",
            iterations,
            norm: eq_norm,
        });
    }
    // Refresh the information matrix at the solution.
    info = neg_jacobian(&designs, &weights, &gamma, k, d);

    // Separation check: fitted probabilities pinned at the boundary.
    let mut separation = false;
    let mut probs = vec![0.0; k];
    for des in &designs {
        softmax_probs(des, &gamma, k, d, &mut probs);
        if probs.iter().any(|&p| p < 1e-10 || p > 1.0 - 1e-10) {
            separation = true;
            break;
        }
    }

    // Store the information matrix on the per-cluster mean scale.
    for v in &mut info {
        *v /= n;
    }
    Ok(MissingnessModel {
        gamma,
        spec: spec.clone(),
        k,
        design_dim: d,
        info,
        iterations,
        converged: true,
        separation,
        equation_norm: eq_norm,
    })
}

fn softmax_probs(design: &[f64], gamma: &[f64], k: usize, d: usize, out: &mut [f64]) {
    // Linear predictors for causes 1..k-1; the reference cause k has 0.
    let mut eta_max = 0.0f64;
    for m in 0..k - 1 {
        let eta = linalg::dot(design, &gamma[m * d..(m + 1) * d]);
        out[m] = eta;
        eta_max = eta_max.max(eta);
    }
    out[k - 1] = 0.0;
    let mut denom = 0.0;
    for v in out.iter_mut().take(k) {
        *v = (*v - eta_max).exp();
        denom += *v;
    }
    for v in out.iter_mut().take(k) {
        *v /= denom;
    }
}

fn estimating_equation(
    designs: &[Vec<f64>],
    outcomes: &[usize],
    weights: &[f64],
    gamma: &[f64],
    k: usize,
    d: usize,
) -> Vec<f64> {
    let dim = d * (k - 1);
    let mut eq = vec![0.0; dim];
    let mut probs = vec![0.0; k];
    for ((des, &c), &w) in designs.iter().zip(outcomes).zip(weights) {
        softmax_probs(des, gamma, k, d, &mut probs);
        for m in 0..k - 1 {
            let resid = w * (f64::from(c == m + 1) - probs[m]);
            for (j, &x) in des.iter().enumerate() {
                eq[m * d + j] += resid * x;
            }
        }
    }
    eq
}

fn neg_jacobian(
    designs: &[Vec<f64>],
    weights: &[f64],
    gamma: &[f64],
    k: usize,
    d: usize,
) -> Vec<f64> {
    let dim = d * (k - 1);
    let mut info = vec![0.0; dim * dim];
    let mut probs = vec![0.0; k];
    for (des, &w) in designs.iter().zip(weights) {
        softmax_probs(des, gamma, k, d, &mut probs);
        for m in 0..k - 1 {
            for m2 in 0..k - 1 {
                let coef = w * probs[m] * (f64::from(m == m2) - probs[m2]);
                if coef == 0.0 {
                    continue;
                }
                for (i, &xi) in des.iter().enumerate() {
                    let row = (m * d + i) * dim + m2 * d;
                    let ci = coef * xi;
                    for (j, &xj) in des.iter().enumerate() {
                        info[row + j] += ci * xj;
                    }
                }
            }
        }
    }
    info
}

impl MissingnessModel {
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn n_causes(&self) -> usize {
        self.k
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    pub fn dim(&self) -> usize {
        self.design_dim * self.k.saturating_sub(1)
    }

    /// Mean-scaled information matrix at the solution.
    pub fn info_matrix(&self) -> &[f64] {
        &self.info
    }

    /// Predicted probability of failure cause `l` given the observed data.
    pub fn predict_pi(&self, s: &Subject, l: usize) -> Result<f64> {
        if l < 1 || l > self.k {
            return Err(Error::Invalid(format!("cause {l} out of 1..={}", self.k)));
        }
        if self.k == 1 {
            return Ok(1.0);
        }
        let design = self.spec.design_vector(s)?;
        let mut probs = vec![0.0; self.k];
        softmax_probs(&design, &self.gamma, self.k, self.design_dim, &mut probs);
        Ok(probs[l - 1])
    }

    /// Analytic gradient of `predict_pi` with respect to the stacked
    /// coefficient vector.
    pub fn pi_gradient(&self, s: &Subject, l: usize) -> Result<Vec<f64>> {
        if l < 1 || l > self.k {
            return Err(Error::Invalid(format!("cause {l} out of 1..={}", self.k)));
        }
        if self.k == 1 {
            return Ok(Vec::new());
        }
        let design = self.spec.design_vector(s)?;
        let d = self.design_dim;
        let mut probs = vec![0.0; self.k];
        softmax_probs(&design, &self.gamma, self.k, d, &mut probs);
        let pl = probs[l - 1];
        let mut grad = vec![0.0; self.dim()];
        for m in 0..self.k - 1 {
            let coef = pl * (f64::from(l == m + 1) - probs[m]);
            for (j, &x) in design.iter().enumerate() {
                grad[m * d + j] = coef * x;
            }
        }
        Ok(grad)
    }

    /// Per-subject influence contributions of the coefficient estimator:
    /// the inverse information applied to each complete case's weighted
    /// score. The inverse-cluster-size weighted average over the sample is
    /// the zero vector up to the solver tolerance.
    pub fn gamma_influence(&self, data: &Dataset) -> Result<GammaInfluence> {
        let dim = self.dim();
        let n_subjects = data.n_subjects();
        if dim == 0 {
            return Ok(GammaInfluence {
                per_subject: Vec::new(),
                dim,
                n_subjects,
            });
        }
        let inv_info = linalg::invert(&self.info, dim, "missingness-model information matrix")?;
        let d = self.design_dim;
        let mut per_subject = vec![0.0; n_subjects * dim];
        let mut probs = vec![0.0; self.k];
        let mut idx = 0usize;
        let mut score = vec![0.0; dim];
        for cl in data.clusters() {
            for s in &cl.subjects {
                if s.delta && s.r {
                    let design = self.spec.design_vector(s)?;
                    softmax_probs(&design, &self.gamma, self.k, d, &mut probs);
                    for m in 0..self.k - 1 {
                        let resid = f64::from(s.cause == m + 1) - probs[m];
                        for (j, &x) in design.iter().enumerate() {
                            score[m * d + j] = resid * x;
                        }
                    }
                    let row = linalg::matvec(&inv_info, &score, dim, dim);
                    per_subject[idx * dim..(idx + 1) * dim].copy_from_slice(&row);
                }
                idx += 1;
            }
        }
        Ok(GammaInfluence {
            per_subject,
            dim,
            n_subjects,
        })
    }

    /// Sandwich covariance of the coefficient estimator, on the
    /// `sqrt(n) (gamma_hat - gamma)` scale.
    pub fn gamma_cov(&self, data: &Dataset) -> Result<Vec<f64>> {
        let infl = self.gamma_influence(data)?;
        let dim = self.dim();
        let n = data.n_clusters();
        let mut cov = vec![0.0; dim * dim];
        let mut idx = 0usize;
        for cl in data.clusters() {
            let w = 1.0 / cl.size() as f64;
            let mut sum = vec![0.0; dim];
            for _ in &cl.subjects {
                for (t, v) in sum.iter_mut().zip(infl.row(idx)) {
                    *t += w * v;
                }
                idx += 1;
            }
            linalg::outer_add(&mut cov, &sum, 1.0 / n as f64);
        }
        Ok(cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cluster;

    fn subject(x: f64, delta: bool, cause: usize, r: bool, z: Vec<f64>) -> Subject {
        Subject {
            x,
            delta,
            cause,
            r,
            z,
            a: vec![],
        }
    }

    fn toy_dataset() -> Dataset {
        // Six subjects in three clusters, all causes observed.
        let clusters = vec![
            Cluster {
                id: "1".into(),
                subjects: vec![
                    subject(0.5, true, 1, true, vec![0.2]),
                    subject(1.0, true, 2, true, vec![-0.4]),
                ],
            },
            Cluster {
                id: "2".into(),
                subjects: vec![
                    subject(0.8, true, 1, true, vec![1.1]),
                    subject(1.4, true, 2, true, vec![0.6]),
                    subject(0.3, false, 0, true, vec![-0.9]),
                ],
            },
            Cluster {
                id: "3".into(),
                subjects: vec![subject(1.2, true, 1, true, vec![0.0])],
            },
        ];
        Dataset::new(clusters, 2, None).unwrap()
    }

    fn intercept_only_spec() -> DesignSpec {
        DesignSpec {
            time_transform: TimeTransform::None,
            include_z: false,
            include_a: false,
        }
    }

    #[test]
    fn intercept_only_matches_weighted_logit_fraction() {
        let data = toy_dataset();
        // Weighted cause-1 fraction among complete-case failures with
        // weights 1/M: cause 1 carries 1/2 + 1/3 + 1, cause 2 carries 1/2 + 1/3.
        let spec = intercept_only_spec();
        let m = fit_missingness(&data, &spec).unwrap();
        let w1: f64 = 0.5 + 1.0 / 3.0 + 1.0;
        let w_tot: f64 = w1 + 0.5 + 1.0 / 3.0;
        let want = (w1 / w_tot / (1.0 - w1 / w_tot)).ln();
        assert_eq!(m.gamma().len(), 1);
        assert!((m.gamma()[0] - want).abs() < 1e-8, "{} vs {want}", m.gamma()[0]);
    }

    #[test]
    fn zero_gamma_means_uniform_probabilities() {
        let data = toy_dataset();
        let spec = DesignSpec::default();
        let mut m = fit_missingness(&data, &spec).unwrap();
        m.gamma = vec![0.0; m.dim()];
        let s = subject(0.7, true, 0, false, vec![0.3]);
        assert!((m.predict_pi(&s, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.predict_pi(&s, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let data = toy_dataset();
        let m = fit_missingness(&data, &DesignSpec::default()).unwrap();
        for s in data.subjects() {
            let total: f64 = (1..=2).map(|l| m.predict_pi(s, l).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_dataset();
        let mut m = fit_missingness(&data, &DesignSpec::default()).unwrap();
        // Random-ish coefficients away from the optimum.
        m.gamma = vec![0.3, -0.2, 0.5];
        let s = subject(0.9, true, 0, false, vec![0.4]);
        for l in 1..=2 {
            let grad = m.pi_gradient(&s, l).unwrap();
            for j in 0..m.dim() {
                let h = 1e-6;
                let mut up = m.clone();
                up.gamma[j] += h;
                let mut dn = m.clone();
                dn.gamma[j] -= h;
                let fd =
                    (up.predict_pi(&s, l).unwrap() - dn.predict_pi(&s, l).unwrap()) / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() < 1e-6 * grad[j].abs().max(1.0),
                    "l={l} j={j}: {} vs {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn logistic_gradient_at_half_is_quarter_design() {
        let data = toy_dataset();
        let mut m = fit_missingness(&data, &DesignSpec::default()).unwrap();
        m.gamma = vec![0.0; m.dim()];
        let s = subject(0.0, true, 0, false, vec![0.0]);
        let grad = m.pi_gradient(&s, 1).unwrap();
        // design = (1, 0, 0) so the gradient is pi(1-pi) * design = (0.25, 0, 0)
        assert!((grad[0] - 0.25).abs() < 1e-15);
        assert!(grad[1].abs() < 1e-15 && grad[2].abs() < 1e-15);
    }

    #[test]
    fn influence_rows_average_to_zero() {
        let data = toy_dataset();
        let m = fit_missingness(&data, &DesignSpec::default()).unwrap();
        let infl = m.gamma_influence(&data).unwrap();
        let mut total = vec![0.0; infl.dim];
        let mut idx = 0;
        for cl in data.clusters() {
            let w = 1.0 / cl.size() as f64;
            for _ in &cl.subjects {
                for (t, v) in total.iter_mut().zip(infl.row(idx)) {
                    *t += w * v;
                }
                idx += 1;
            }
        }
        for v in &mut total {
            *v /= data.n_clusters() as f64;
        }
        assert!(linalg::max_abs(&total) < 1e-8, "{total:?}");
    }

    #[test]
    fn estimating_equation_solved_at_estimate() {
        let data = toy_dataset();
        let m = fit_missingness(&data, &DesignSpec::default()).unwrap();
        assert!(m.converged);
        assert!(m.equation_norm < 1e-8);
    }

    #[test]
    fn log_transform_rejects_zero_times() {
        let data = toy_dataset();
        let spec = DesignSpec {
            time_transform: TimeTransform::Log,
            include_z: true,
            include_a: false,
        };
        let m = fit_missingness(&data, &spec).unwrap();
        let s = subject(0.0, true, 0, false, vec![0.1]);
        assert!(m.predict_pi(&s, 1).is_err());
    }
}
