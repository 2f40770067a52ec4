//! Internal column-oriented view of a dataset, shared by the estimation and
//! inference passes. Subjects are indexed cluster-major in dataset order.

use crate::data::Dataset;

pub(crate) struct Flat {
    pub n_clusters: usize,
    pub n_subjects: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub delta: Vec<bool>,
    pub r: Vec<bool>,
    /// Row-major covariate matrix, `n_subjects x p`.
    pub z: Vec<f64>,
    /// Cluster index of each subject.
    pub cluster: Vec<usize>,
    /// Inverse cluster size of each subject's cluster.
    pub invm: Vec<f64>,
    /// Subject indices sorted by observed time, descending.
    pub order_desc: Vec<usize>,
}

impl Flat {
    pub fn new(data: &Dataset) -> Self {
        let n_clusters = data.n_clusters();
        let n_subjects = data.n_subjects();
        let p = data.n_covariates();
        let mut x = Vec::with_capacity(n_subjects);
        let mut delta = Vec::with_capacity(n_subjects);
        let mut r = Vec::with_capacity(n_subjects);
        let mut z = Vec::with_capacity(n_subjects * p);
        let mut cluster = Vec::with_capacity(n_subjects);
        let mut invm = Vec::with_capacity(n_subjects);
        for (ci, cl) in data.clusters().iter().enumerate() {
            let w = 1.0 / cl.size() as f64;
            for s in &cl.subjects {
                x.push(s.x);
                delta.push(s.delta);
                r.push(s.r);
                z.extend_from_slice(&s.z);
                cluster.push(ci);
                invm.push(w);
            }
        }
        let mut order_desc: Vec<usize> = (0..n_subjects).collect();
        order_desc.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap());
        Flat {
            n_clusters,
            n_subjects,
            p,
            x,
            delta,
            r,
            z,
            cluster,
            invm,
            order_desc,
        }
    }

    #[inline]
    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    /// exp(beta' z_i) for every subject.
    pub fn risk_scores(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n_subjects)
            .map(|i| crate::linalg::dot(self.z_row(i), beta).exp())
            .collect()
    }
}
