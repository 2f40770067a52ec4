//! Shared test oracles, written independently of the library's estimation
//! path: a case-weighted Cox partial-likelihood solver with Breslow tie
//! handling, its Breslow baseline, and the cluster-robust sandwich variance.
//! Everything here works on plain row vectors and brute-force risk-set
//! scans so that agreement with the library is meaningful.

#![allow(dead_code)]

use margrisk::data::{Cluster, Dataset, Subject};
use margrisk::rng::stream;
use rand::Rng;

/// One row for the oracle solver.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub time: f64,
    pub event: bool,
    pub weight: f64,
    pub z: Vec<f64>,
    pub cluster: usize,
}

pub struct OracleFit {
    pub beta: Vec<f64>,
    /// (time, cumulative hazard) at each distinct event time.
    pub breslow: Vec<(f64, f64)>,
    /// Cluster-robust sandwich covariance of beta-hat.
    pub robust_cov: Vec<f64>,
}

fn risk_sums(rows: &[OracleRow], beta: &[f64], t: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    for r in rows {
        if r.time >= t {
            let e = r.weight * dot(&r.z, beta).exp();
            s0 += e;
            for a in 0..p {
                s1[a] += e * r.z[a];
                for b in 0..p {
                    s2[a * p + b] += e * r.z[a] * r.z[b];
                }
            }
        }
    }
    (s0, s1, s2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton solve of the case-weighted partial likelihood (Breslow ties).
pub fn oracle_cox(rows: &[OracleRow], p: usize, tol: f64) -> OracleFit {
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for r in rows.iter().filter(|r| r.event && r.weight != 0.0) {
            let (s0, s1, s2) = risk_sums(rows, &beta, r.time);
            for a in 0..p {
                score[a] += r.weight * (r.z[a] - s1[a] / s0);
                for b in 0..p {
                    info[a * p + b] +=
                        r.weight * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                }
            }
        }
        let norm = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < tol {
            break;
        }
        let step = solve_dense(&info, &score, p);
        for a in 0..p {
            beta[a] += step[a];
        }
    }

    // Breslow baseline at the solution.
    let mut times: Vec<f64> = rows
        .iter()
        .filter(|r| r.event && r.weight != 0.0)
        .map(|r| r.time)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let mut breslow = Vec::with_capacity(times.len());
    let mut cum = 0.0;
    for &t in &times {
        let (s0, _, _) = risk_sums(rows, &beta, t);
        let num: f64 = rows
            .iter()
            .filter(|r| r.event && r.time == t)
            .map(|r| r.weight)
            .sum();
        cum += num / s0;
        breslow.push((t, cum));
    }

    // Cluster-robust sandwich: I^{-1} (sum of squared cluster score sums) I^{-1}.
    let mut info = vec![0.0; p * p];
    for r in rows.iter().filter(|r| r.event && r.weight != 0.0) {
        let (s0, s1, s2) = risk_sums(rows, &beta, r.time);
        for a in 0..p {
            for b in 0..p {
                info[a * p + b] += r.weight * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
            }
        }
    }
    let n_clusters = rows.iter().map(|r| r.cluster).max().unwrap_or(0) + 1;
    let mut cluster_scores = vec![0.0; n_clusters * p];
    for (i, r) in rows.iter().enumerate() {
        let _ = i;
        let mut w_i = vec![0.0; p];
        if r.event && r.weight != 0.0 {
            let (s0, s1, _) = risk_sums(rows, &beta, r.time);
            for a in 0..p {
                w_i[a] += r.weight * (r.z[a] - s1[a] / s0);
            }
        }
        // compensator part over event times up to r.time
        let erisk = r.weight * dot(&r.z, &beta).exp();
        let mut cum_prev = 0.0;
        for &(t, cumv) in &breslow {
            if t > r.time {
                break;
            }
            let jump = cumv - cum_prev;
            cum_prev = cumv;
            let (s0, s1, _) = risk_sums(rows, &beta, t);
            for a in 0..p {
                w_i[a] -= erisk * (r.z[a] - s1[a] / s0) * jump;
            }
        }
        for a in 0..p {
            cluster_scores[r.cluster * p + a] += w_i[a];
        }
    }
    let mut meat = vec![0.0; p * p];
    for c in 0..n_clusters {
        for a in 0..p {
            for b in 0..p {
                meat[a * p + b] +=
                    cluster_scores[c * p + a] * cluster_scores[c * p + b];
            }
        }
    }
    let iinv = invert_dense(&info, p);
    let mut tmp = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            let mut acc = 0.0;
            for c in 0..p {
                acc += iinv[a * p + c] * meat[c * p + b];
            }
            tmp[a * p + b] = acc;
        }
    }
    let mut robust_cov = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            let mut acc = 0.0;
            for c in 0..p {
                acc += tmp[a * p + c] * iinv[c * p + b];
            }
            robust_cov[a * p + b] = acc;
        }
    }

    OracleFit {
        beta,
        breslow,
        robust_cov,
    }
}

/// Gaussian elimination solve, independent of the library's version.
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * (n + 1)];
    for i in 0..n {
        for j in 0..n {
            m[i * (n + 1) + j] = a[i * n + j];
        }
        m[i * (n + 1) + n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| {
                m[i * (n + 1) + col]
                    .abs()
                    .partial_cmp(&m[j * (n + 1) + col].abs())
                    .unwrap()
            })
            .unwrap();
        for j in 0..=n {
            m.swap(col * (n + 1) + j, piv * (n + 1) + j);
        }
        let d = m[col * (n + 1) + col];
        for row in 0..n {
            if row != col {
                let f = m[row * (n + 1) + col] / d;
                for j in col..=n {
                    m[row * (n + 1) + j] -= f * m[col * (n + 1) + j];
                }
            }
        }
    }
    (0..n).map(|i| m[i * (n + 1) + n] / m[i * (n + 1) + i]).collect()
}

pub fn invert_dense(a: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_dense(a, &e, n);
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    inv
}

/// Turn a dataset into oracle rows for cause `l`, treating other-cause
/// failures as censored, with per-row weights `base_weight / cluster size`.
pub fn cause_specific_rows(data: &Dataset, l: usize, inverse_size_weights: bool) -> Vec<OracleRow> {
    let mut rows = Vec::new();
    for (c, cl) in data.clusters().iter().enumerate() {
        let w = if inverse_size_weights {
            1.0 / cl.subjects.len() as f64
        } else {
            1.0
        };
        for s in &cl.subjects {
            rows.push(OracleRow {
                time: s.x,
                event: s.delta && s.r && s.cause == l,
                weight: w,
                z: s.z.clone(),
                cluster: c,
            });
        }
    }
    rows
}

/// Augmented-row construction for cause `l`: failures with a missing cause
/// are split into an event row weighted by the predicted cause probability
/// and a censored row carrying the complement, all divided by cluster size.
pub fn augmented_rows(
    data: &Dataset,
    model: &margrisk::MissingnessModel,
    l: usize,
) -> Vec<OracleRow> {
    let mut rows = Vec::new();
    for (c, cl) in data.clusters().iter().enumerate() {
        let w = 1.0 / cl.subjects.len() as f64;
        for s in &cl.subjects {
            if s.delta && !s.r {
                let pi = model.predict_pi(s, l).unwrap();
                rows.push(OracleRow {
                    time: s.x,
                    event: pi > 0.0,
                    weight: w * pi,
                    z: s.z.clone(),
                    cluster: c,
                });
                rows.push(OracleRow {
                    time: s.x,
                    event: false,
                    weight: w * (1.0 - pi),
                    z: s.z.clone(),
                    cluster: c,
                });
            } else {
                rows.push(OracleRow {
                    time: s.x,
                    event: s.delta && s.cause == l,
                    weight: w,
                    z: s.z.clone(),
                    cluster: c,
                });
            }
        }
    }
    rows
}

/// Random small clustered dataset with both causes observed. With
/// `singleton_clusters`, every subject is its own cluster (M = 1).
pub fn random_dataset(
    seed: u64,
    n_clusters: usize,
    max_size: usize,
    p: usize,
    missing_prob: f64,
    singleton_clusters: bool,
) -> Dataset {
    let mut rng = stream(seed, 0xD5, 0);
    loop {
        let mut clusters = Vec::new();
        let mut has = [false; 2];
        let mut any_missing = missing_prob == 0.0;
        for c in 0..n_clusters {
            let size = if singleton_clusters {
                1
            } else {
                rng.gen_range(1..=max_size)
            };
            let subjects: Vec<Subject> = (0..size)
                .map(|_| {
                    let x: f64 = rng.gen_range(0.05..2.0);
                    let delta = rng.gen_bool(0.75);
                    let (cause, r) = if delta {
                        let cause = rng.gen_range(1..=2);
                        if rng.gen_bool(missing_prob) {
                            any_missing = true;
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
                        z: (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        a: vec![],
                    }
                })
                .collect();
            clusters.push(Cluster {
                id: format!("c{c}"),
                subjects,
            });
        }
        if has[0] && has[1] && any_missing {
            if let Ok(d) = Dataset::new(clusters, 2, None) {
                return d;
            }
        }
    }
}

/// Resample clusters with replacement, keeping ids unique.
pub fn cluster_bootstrap(data: &Dataset, rng: &mut impl Rng) -> Dataset {
    let n = data.n_clusters();
    let clusters: Vec<Cluster> = (0..n)
        .map(|i| {
            let pick = rng.gen_range(0..n);
            let mut cl = data.clusters()[pick].clone();
            cl.id = format!("b{i}");
            cl
        })
        .collect();
    Dataset::new(clusters, data.n_causes(), Some(data.tau())).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
