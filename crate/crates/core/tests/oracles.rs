//! Independent-oracle checks: brute-force root search for the stage-one
//! coefficients, and cluster-bootstrap validation of every closed-form
//! variance (stage-one coefficients, regression coefficients, cumulative
//! hazard, cumulative incidence).

mod common;

use common::{cluster_bootstrap, random_dataset};
use margrisk::data::{Cluster, Dataset, Subject};
use margrisk::estimator::{fit_with, FitOptions};
use margrisk::inference::Influence;
use margrisk::missingness::{fit_missingness, DesignSpec, TimeTransform};
use margrisk::rng::stream;

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

fn analysis_spec() -> DesignSpec {
    DesignSpec {
        time_transform: TimeTransform::Identity,
        include_z: true,
        include_a: false,
    }
}

/// The stage-one estimate solves the same equation a dense grid plus
/// bisection finds, on a six-subject toy with an intercept-only design.
#[test]
fn missingness_root_matches_grid_bisection() {
    let clusters = vec![
        Cluster {
            id: "a".into(),
            subjects: vec![
                subject(0.3, true, 1, true, vec![0.0]),
                subject(0.9, true, 2, true, vec![0.0]),
                subject(1.2, true, 1, true, vec![0.0]),
            ],
        },
        Cluster {
            id: "b".into(),
            subjects: vec![
                subject(0.5, true, 1, true, vec![0.0]),
                subject(0.6, true, 2, true, vec![0.0]),
                subject(1.4, false, 0, true, vec![0.0]),
            ],
        },
    ];
    let data = Dataset::new(clusters, 2, None).unwrap();
    let spec = DesignSpec {
        time_transform: TimeTransform::None,
        include_z: false,
        include_a: false,
    };
    let fitted = fit_missingness(&data, &spec).unwrap();

    // Estimating equation with inverse-cluster-size weights, intercept only:
    // g(gamma) = sum w (I(cause=1) - expit(gamma)).
    let equation = |gamma: f64| -> f64 {
        let mut acc = 0.0;
        for cl in data.clusters() {
            let w = 1.0 / cl.subjects.len() as f64;
            for s in &cl.subjects {
                if s.delta && s.r {
                    acc += w * (f64::from(s.cause == 1) - 1.0 / (1.0 + (-gamma).exp()));
                }
            }
        }
        acc
    };
    // Dense grid to bracket the root, then bisection.
    let mut bracket = None;
    let mut prev = (-10.0, equation(-10.0));
    for i in 1..=2000 {
        let g = -10.0 + i as f64 * 0.01;
        let v = equation(g);
        if prev.1 * v <= 0.0 {
            bracket = Some((prev.0, g));
            break;
        }
        prev = (g, v);
    }
    let (mut lo, mut hi) = bracket.expect("grid search found no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if equation(lo) * equation(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    assert!(
        (fitted.gamma()[0] - root).abs() < 1e-8,
        "{} vs {root}",
        fitted.gamma()[0]
    );
}

/// All closed-form variances agree with a cluster bootstrap to 15%.
#[test]
fn sandwich_variances_match_cluster_bootstrap() {
    let data = random_dataset(31, 80, 6, 1, 0.3, false);
    let spec = analysis_spec();
    let opts = FitOptions::default();
    let fitted = fit_with(&data, &spec, &opts).unwrap();
    assert!(!fitted.missingness.separation);
    let infl = Influence::new(&data, &fitted).unwrap();
    let cif_inf = infl.cif_inference(&[0.0]).unwrap();

    // Evaluation time: median observed failure time.
    let times = data.failure_times();
    let t_eval = times[times.len() / 2];

    let gamma_dim = fitted.missingness.dim();
    let n = data.n_clusters() as f64;
    let gamma_cov = fitted.missingness.gamma_cov(&data).unwrap();
    let gamma_se: Vec<f64> = (0..gamma_dim)
        .map(|j| (gamma_cov[j * gamma_dim + j] / n).sqrt())
        .collect();
    let beta_se = infl.beta_se(1)[0];
    let lambda_se = infl.lambda_se(1, t_eval);
    let cif_se = cif_inf.se(1, t_eval);

    let nboot = 2000;
    let mut rng = stream(77, 0xB0, 0);
    let mut gamma_draws: Vec<Vec<f64>> = Vec::new();
    let mut beta_draws: Vec<f64> = Vec::new();
    let mut lambda_draws: Vec<f64> = Vec::new();
    let mut cif_draws: Vec<f64> = Vec::new();
    let mut skipped = 0;
    for _ in 0..nboot {
        let resampled = cluster_bootstrap(&data, &mut rng);
        let Ok(refit) = fit_with(&resampled, &spec, &opts) else {
            skipped += 1;
            continue;
        };
        if refit.missingness.separation {
            skipped += 1;
            continue;
        }
        gamma_draws.push(refit.missingness.gamma().to_vec());
        beta_draws.push(refit.cause(1).beta[0]);
        lambda_draws.push(refit.cause(1).cum_hazard.eval(t_eval));
        let cifs = margrisk::cif(&refit, &[0.0]).unwrap();
        cif_draws.push(cifs[0].eval(t_eval));
    }
    assert!(
        skipped < nboot / 10,
        "too many degenerate bootstrap resamples: {skipped}"
    );

    let sd = |v: &[f64]| -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };

    for j in 0..gamma_dim {
        let draws: Vec<f64> = gamma_draws.iter().map(|g| g[j]).collect();
        let boot = sd(&draws);
        assert!(
            (boot / gamma_se[j] - 1.0).abs() < 0.15,
            "gamma[{j}]: bootstrap {boot} vs sandwich {}",
            gamma_se[j]
        );
    }
    let boot_beta = sd(&beta_draws);
    assert!(
        (boot_beta / beta_se - 1.0).abs() < 0.15,
        "beta: bootstrap {boot_beta} vs sandwich {beta_se}"
    );
    let boot_lambda = sd(&lambda_draws);
    assert!(
        (boot_lambda / lambda_se - 1.0).abs() < 0.15,
        "lambda({t_eval}): bootstrap {boot_lambda} vs influence {lambda_se}"
    );
    let boot_cif = sd(&cif_draws);
    assert!(
        (boot_cif / cif_se - 1.0).abs() < 0.15,
        "cif({t_eval}): bootstrap {boot_cif} vs influence {cif_se}"
    );
}

/// Shifting every covariate by a constant leaves the coefficients unchanged
/// and leaves the covariate-specific hazard at the same physical covariate
/// value invariant.
#[test]
fn covariate_shift_invariance() {
    let data = random_dataset(45, 25, 4, 1, 0.25, false);
    let spec = analysis_spec();
    let fitted = fit_with(&data, &spec, &FitOptions::default()).unwrap();

    let shift = 0.8;
    let shifted_clusters: Vec<Cluster> = data
        .clusters()
        .iter()
        .map(|cl| Cluster {
            id: cl.id.clone(),
            subjects: cl
                .subjects
                .iter()
                .map(|s| Subject {
                    z: s.z.iter().map(|v| v + shift).collect(),
                    ..s.clone()
                })
                .collect(),
        })
        .collect();
    let shifted = Dataset::new(shifted_clusters, 2, Some(data.tau())).unwrap();
    let fitted_shift = fit_with(&shifted, &spec, &FitOptions::default()).unwrap();

    for l in 1..=2 {
        assert!(
            (fitted.cause(l).beta[0] - fitted_shift.cause(l).beta[0]).abs() < 1e-7,
            "cause {l} coefficient moved under shift"
        );
        // Lambda(t; z0) at the same physical covariate value: original z0 = 0.4
        // corresponds to shifted z0 = 1.2.
        let t = data.failure_times()[data.failure_times().len() / 2];
        let orig =
            fitted.cause(l).cum_hazard.eval(t) * (fitted.cause(l).beta[0] * 0.4_f64).exp();
        let shif = fitted_shift.cause(l).cum_hazard.eval(t)
            * (fitted_shift.cause(l).beta[0] * (0.4 + shift)).exp();
        assert!(
            (orig - shif).abs() < 1e-7 * orig.abs().max(1.0),
            "cause {l}: {orig} vs {shif}"
        );
    }
}
