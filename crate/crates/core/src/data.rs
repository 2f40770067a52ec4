//! Domain types for clustered competing-risks observations with possibly
//! missing causes of failure, plus CSV ingestion and validation.
//!
//! Conventions: `delta` is the all-cause failure indicator, `cause` is the
//! recorded cause (`0` = censored or missing), and `r` says whether the
//! cause is observed. Censoring status is always observed, so `delta = 0`
//! forces `r = 1` and `cause = 0`; a missing cause (`r = 0`) can only occur
//! for a failure and is recorded as `cause = 0`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// One individual's observed tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Observed time: failure or censoring, whichever comes first.
    pub x: f64,
    /// All-cause failure indicator.
    pub delta: bool,
    /// Recorded cause in `0..=k`; 0 means censored or missing.
    pub cause: usize,
    /// Observed-cause indicator.
    pub r: bool,
    /// Covariates of interest (length p).
    pub z: Vec<f64>,
    /// Auxiliary covariates (length q), used only by the missingness model.
    pub a: Vec<f64>,
}

impl Subject {
    /// Check the per-subject invariants against the dataset dimensions.
    pub fn validate(&self, k: usize, p: usize, q: usize) -> std::result::Result<(), String> {
        if !self.x.is_finite() || self.x < 0.0 {
            return Err(format!("time must be finite and nonnegative, got {}", self.x));
        }
        if !self.delta && (!self.r || self.cause != 0) {
            return Err("censored subject must have r=1 and cause=0".into());
        }
        if !self.r && self.cause != 0 {
            return Err(format!(
                "missing cause must be recorded as 0, got {}",
                self.cause
            ));
        }
        if self.r && self.delta && (self.cause < 1 || self.cause > k) {
            return Err(format!(
                "observed failure needs cause in 1..={k}, got {}",
                self.cause
            ));
        }
        if self.z.len() != p {
            return Err(format!("expected {p} z covariates, got {}", self.z.len()));
        }
        if self.a.len() != q {
            return Err(format!("expected {q} auxiliary covariates, got {}", self.a.len()));
        }
        if self.z.iter().chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err("covariates must be finite".into());
        }
        Ok(())
    }

    /// All-cause counting process N(t) = I(x <= t, failure).
    pub fn n_at(&self, t: f64) -> u8 {
        u8::from(self.delta && self.x <= t)
    }

    /// At-risk process Y(t) = I(x >= t).
    pub fn y_at(&self, t: f64) -> u8 {
        u8::from(self.x >= t)
    }

    /// Cause-specific counting process; `None` when the cause is missing
    /// (failure with r=0), in which case only the all-cause process is known.
    pub fn n_cause_at(&self, l: usize, t: f64) -> Option<u8> {
        if self.delta && !self.r {
            return None;
        }
        Some(u8::from(self.r && self.cause == l) * self.n_at(t))
    }
}

/// Snapshot of a subject's counting processes at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingProcesses {
    pub n: u8,
    pub y: u8,
    /// Per-cause counts for causes `1..=k`; `None` when the cause is missing.
    pub n_cause: Option<Vec<u8>>,
}

/// Evaluate (N, Y, N_1..N_k) for a subject at time `t`.
pub fn counting_processes(s: &Subject, k: usize, t: f64) -> CountingProcesses {
    let n = s.n_at(t);
    let y = s.y_at(t);
    let n_cause = if s.delta && !s.r {
        None
    } else {
        Some((1..=k).map(|l| s.n_cause_at(l, t).unwrap_or(0)).collect())
    };
    CountingProcesses { n, y, n_cause }
}

/// A cluster of subjects; within-cluster dependence is left unspecified and
/// the cluster size is allowed to be informative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub subjects: Vec<Subject>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.subjects.len()
    }
}

/// A validated clustered competing-risks dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    clusters: Vec<Cluster>,
    k: usize,
    p: usize,
    q: usize,
    tau: f64,
    #[serde(default)]
    z_names: Vec<String>,
    #[serde(default)]
    a_names: Vec<String>,
}

impl Dataset {
    /// Build and validate a dataset. `tau` defaults to the maximum observed
    /// time when not given; every observed time must lie in `[0, tau]`.
    pub fn new(clusters: Vec<Cluster>, k: usize, tau: Option<f64>) -> Result<Self> {
        if clusters.is_empty() || clusters.iter().all(|c| c.subjects.is_empty()) {
            return Err(Error::EmptyDataset);
        }
        if k == 0 {
            return Err(Error::Invalid("number of causes must be at least 1".into()));
        }
        let first = clusters
            .iter()
            .flat_map(|c| c.subjects.iter())
            .next()
            .ok_or(Error::EmptyDataset)?;
        let (p, q) = (first.z.len(), first.a.len());
        let mut max_x = 0.0f64;
        for (ci, cluster) in clusters.iter().enumerate() {
            if cluster.subjects.is_empty() {
                return Err(Error::Invalid(format!(
                    "cluster `{}` (index {ci}) has no subjects",
                    cluster.id
                )));
            }
            for (si, s) in cluster.subjects.iter().enumerate() {
                s.validate(k, p, q).map_err(|message| Error::InvariantViolation {
                    row: si,
                    message: format!("cluster `{}`: {message}", cluster.id),
                })?;
                max_x = max_x.max(s.x);
            }
        }
        let tau = tau.unwrap_or(max_x);
        if !(tau.is_finite() && tau >= max_x) {
            return Err(Error::Invalid(format!(
                "tau = {tau} must be finite and at least the largest observed time {max_x}"
            )));
        }
        Ok(Self {
            clusters,
            k,
            p,
            q,
            tau,
            z_names: default_names("z", p),
            a_names: default_names("a", q),
        })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn subjects(&self) -> impl Iterator<Item = &Subject> {
        self.clusters.iter().flat_map(|c| c.subjects.iter())
    }

    /// Number of clusters.
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn n_causes(&self) -> usize {
        self.k
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn n_auxiliary(&self) -> usize {
        self.q
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn a_names(&self) -> &[String] {
        &self.a_names
    }

    pub fn set_names(&mut self, z: Vec<String>, a: Vec<String>) {
        if z.len() == self.p {
            self.z_names = z;
        }
        if a.len() == self.q {
            self.a_names = a;
        }
    }

    /// Count of observed (complete-case) failures from cause `l`.
    pub fn observed_events(&self, l: usize) -> usize {
        self.subjects()
            .filter(|s| s.delta && s.r && s.cause == l)
            .count()
    }

    /// Count of failures with missing cause.
    pub fn missing_causes(&self) -> usize {
        self.subjects().filter(|s| s.delta && !s.r).count()
    }

    /// Distinct observed failure times (any cause, including missing),
    /// ascending.
    pub fn failure_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .subjects()
            .filter(|s| s.delta)
            .map(|s| s.x)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        times
    }

    /// Fit preconditions beyond construction: at least one observed event of
    /// every cause. Returns the offending cause on failure.
    pub fn check_fittable(&self) -> Result<()> {
        for l in 1..=self.k {
            if self.observed_events(l) == 0 {
                return Err(Error::Invalid(format!(
                    "no observed event of cause {l}; cannot fit"
                )));
            }
        }
        Ok(())
    }
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Column-name mapping for CSV ingestion. Covariate columns are discovered
/// as `z1..zp` and `a1..aq` (or the configured prefixes) in the header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub cluster_id: String,
    pub time: String,
    pub delta: String,
    pub cause: String,
    pub r: String,
    pub z_prefix: String,
    pub a_prefix: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            cluster_id: "cluster_id".into(),
            time: "time".into(),
            delta: "delta".into(),
            cause: "cause".into(),
            r: "r".into(),
            z_prefix: "z".into(),
            a_prefix: "a".into(),
        }
    }
}

/// Load a dataset from CSV, grouping rows by cluster id while preserving row
/// order within each cluster. `k` defaults to the largest recorded cause.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    load_csv_with(path, schema, None, None)
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    k: Option<usize>,
    tau: Option<f64>,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let layout = CsvLayout::from_headers(&headers, schema)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Subject>> = HashMap::new();
    let mut max_cause = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        let record = record?;
        let (id, subject) = layout.parse_row(&record, row)?;
        subject
            .validate(usize::MAX, layout.p, layout.q)
            .map_err(|message| Error::InvariantViolation { row, message })?;
        max_cause = max_cause.max(subject.cause);
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(subject);
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = match k {
        Some(k) => {
            if k < max_cause {
                return Err(Error::Invalid(format!(
                    "requested k = {k} but the data records cause {max_cause}"
                )));
            }
            k
        }
        None => max_cause.max(1),
    };
    let clusters = order
        .into_iter()
        .map(|id| {
            let subjects = groups.remove(&id).unwrap();
            Cluster { id, subjects }
        })
        .collect();
    let mut data = Dataset::new(clusters, k, tau)?;
    data.set_names(layout.z_names.clone(), layout.a_names.clone());
    Ok(data)
}

/// Write a dataset in the same CSV schema accepted by [`load_csv`]. Floats
/// are printed with Rust's shortest round-trip formatting, so a load of the
/// written file reproduces the dataset exactly.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut header = vec![
        "cluster_id".to_string(),
        "time".into(),
        "delta".into(),
        "cause".into(),
        "r".into(),
    ];
    header.extend(data.z_names().iter().cloned());
    header.extend(data.a_names().iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for cluster in data.clusters() {
        for s in &cluster.subjects {
            let mut fields = vec![
                cluster.id.clone(),
                format!("{}", s.x),
                format!("{}", u8::from(s.delta)),
                format!("{}", s.cause),
                format!("{}", u8::from(s.r)),
            ];
            fields.extend(s.z.iter().map(|v| format!("{v}")));
            fields.extend(s.a.iter().map(|v| format!("{v}")));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

struct CsvLayout {
    cluster_id: usize,
    time: usize,
    delta: usize,
    cause: usize,
    r: usize,
    z_cols: Vec<usize>,
    a_cols: Vec<usize>,
    z_names: Vec<String>,
    a_names: Vec<String>,
    p: usize,
    q: usize,
}

impl CsvLayout {
    fn from_headers(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<Self> {
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let cluster_id = find(&schema.cluster_id)?;
        let time = find(&schema.time)?;
        let delta = find(&schema.delta)?;
        let cause = find(&schema.cause)?;
        let r = find(&schema.r)?;
        let known = [cluster_id, time, delta, cause, r];

        let mut z_cols = Vec::new();
        let mut a_cols = Vec::new();
        let mut z_names = Vec::new();
        let mut a_names = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if known.contains(&i) {
                continue;
            }
            if matches_prefixed(h, &schema.z_prefix) {
                z_cols.push(i);
                z_names.push(h.to_string());
            } else if matches_prefixed(h, &schema.a_prefix) {
                a_cols.push(i);
                a_names.push(h.to_string());
            } else {
                return Err(Error::UnknownColumn(h.to_string()));
            }
        }
        let (p, q) = (z_cols.len(), a_cols.len());
        Ok(Self {
            cluster_id,
            time,
            delta,
            cause,
            r,
            z_cols,
            a_cols,
            z_names,
            a_names,
            p,
            q,
        })
    }

    fn parse_row(&self, record: &csv::StringRecord, row: usize) -> Result<(String, Subject)> {
        let get = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::MalformedRow {
                row,
                message: format!("expected at least {} fields", i + 1),
            })
        };
        let id = get(self.cluster_id)?.to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "empty cluster id".into(),
            });
        }
        let x = parse_f64(get(self.time)?, "time", row)?;
        if x < 0.0 {
            return Err(Error::MalformedRow {
                row,
                message: format!("negative time {x}"),
            });
        }
        let delta = parse_binary(get(self.delta)?, "delta", row)?;
        let cause: usize = get(self.cause)?.parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("cause must be a nonnegative integer, got `{}`", get(self.cause).unwrap_or("")),
        })?;
        let r = parse_binary(get(self.r)?, "r", row)?;
        let z = self
            .z_cols
            .iter()
            .map(|&i| parse_f64(get(i)?, "covariate", row))
            .collect::<Result<Vec<f64>>>()?;
        let a = self
            .a_cols
            .iter()
            .map(|&i| parse_f64(get(i)?, "auxiliary covariate", row))
            .collect::<Result<Vec<f64>>>()?;
        Ok((
            id,
            Subject {
                x,
                delta,
                cause,
                r,
                z,
                a,
            },
        ))
    }
}

fn matches_prefixed(header: &str, prefix: &str) -> bool {
    header
        .strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
}

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::MalformedRow {
        row,
        message: format!("{what} must be numeric, got `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            row,
            message: format!("{what} must be finite, got `{s}`"),
        });
    }
    Ok(v)
}

fn parse_binary(s: &str, what: &str, row: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::MalformedRow {
            row,
            message: format!("{what} must be 0 or 1, got `{s}`"),
        }),
    }
}
