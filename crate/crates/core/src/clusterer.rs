//! Fact partitioning: a diagonal-covariance Gaussian mixture fitted by EM
//! over fact embeddings, or contiguous chronological blocks.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FactRecord;
use crate::par;

/// Rows per reduction chunk. Partial sums are combined in chunk order, so
/// results are bit-identical for any thread count.
const CHUNK: usize = 256;
const COLLAPSE_MASS: f64 = 1e-8;
const MIN_VAR_FLOOR: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("need at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding rows must be non-empty and share one dimension")]
    Ragged,
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("dimension mismatch: params have d={expected}, input has d={got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{0} ids for {1} rows")]
    IdCount(usize, usize),
    #[error("duplicate fact id {0}")]
    DuplicateId(String),
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),
    #[error("clusters file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterKind {
    Semantic,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub var_floor: f64,
}

impl GmmParams {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::InvalidParams(m.to_string()));
        let d = self.dim();
        if self.k == 0 || self.weights.len() != self.k || self.means.len() != self.k || self.variances.len() != self.k {
            return bad("component count mismatch");
        }
        if d == 0 || self.means.iter().chain(&self.variances).any(|v| v.len() != d) {
            return bad("dimension mismatch");
        }
        if self.var_floor.is_nan() || self.var_floor <= 0.0 {
            return bad("var_floor must be positive");
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and non-negative");
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite mean");
        }
        if self.variances.iter().flatten().any(|v| !v.is_finite() || *v < self.var_floor) {
            return bad("variance below floor or non-finite");
        }
        Ok(())
    }

    /// `ln w_j + ln N(x | μ_j, Σ_j)` for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| {
                let mut acc = 0.0;
                for ((xi, mu), var) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                    let diff = xi - mu;
                    acc += LN_2PI + var.ln() + diff * diff / var;
                }
                self.weights[j].ln() - 0.5 * acc
            })
            .collect()
    }

    /// Mixture log density of one point.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    /// Posterior over components; sums to 1.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.component_log_densities(x))
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    let mut p: Vec<f64> = v.iter().map(|x| (x - lse).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub params: GmmParams,
    /// Total log-likelihood after each E-step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded after collapsing.
    pub reseeded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(ClusterError::Ragged);
    }
    if let Some(row) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::NonFinite { row });
    }
    Ok(d)
}

/// Per-dimension mean and population variance by plain sequential sums.
fn moments(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// `max(1e-6 · mean per-dim variance, 1e-12)`.
pub fn variance_floor(sample_var: &[f64]) -> f64 {
    let mean = sample_var.iter().sum::<f64>() / sample_var.len() as f64;
    (1e-6 * mean).max(MIN_VAR_FLOOR)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
fn kmeans_pp(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centres = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = par::map(x, |r| sq_dist(r, &centres[0]));
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = x[pick].clone();
        d2 = par::map_range(n, |i| d2[i].min(sq_dist(&x[i], &c)));
        centres.push(c);
    }
    centres
}

struct Estep {
    /// Per-row responsibilities, row-major n×k.
    resp: Vec<Vec<f64>>,
    /// Per-row mixture log density.
    ll: Vec<f64>,
    total: f64,
}

fn e_step(x: &[Vec<f64>], p: &GmmParams) -> Estep {
    let rows: Vec<(Vec<f64>, f64)> = par::map(x, |r| {
        let lp = p.component_log_densities(r);
        let lse = log_sum_exp(&lp);
        (lp.iter().map(|v| (v - lse).exp()).collect(), lse)
    });
    let partial = par::map_chunks(&rows, CHUNK, |_, c| c.iter().map(|r| r.1).sum::<f64>());
    let total = partial.iter().sum();
    let (resp, ll) = rows.into_iter().unzip();
    Estep { resp, ll, total }
}

/// Chunked weighted sums `Σ_i r_ij · f(x_i)` for all j, combined in order.
fn weighted_sums(
    x: &[Vec<f64>],
    resp: &[Vec<f64>],
    k: usize,
    d: usize,
    f: impl Fn(usize, usize, f64) -> f64 + Sync,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let idx: Vec<usize> = (0..x.len()).collect();
    let parts = par::map_chunks(&idx, CHUNK, |_, rows| {
        let mut mass = vec![0.0; k];
        let mut acc = vec![vec![0.0; d]; k];
        for &i in rows {
            for j in 0..k {
                let r = resp[i][j];
                mass[j] += r;
                for (t, a) in acc[j].iter_mut().enumerate() {
                    *a += r * f(j, t, x[i][t]);
                }
            }
        }
        (mass, acc)
    });
    let mut mass = vec![0.0; k];
    let mut acc = vec![vec![0.0; d]; k];
    for (m, a) in parts {
        for j in 0..k {
            mass[j] += m[j];
            for t in 0..d {
                acc[j][t] += a[j][t];
            }
        }
    }
    (mass, acc)
}

/// Fit a k-component diagonal GMM. EM stops when the mean per-point
/// log-likelihood gain drops below `cfg.tol` or after `cfg.max_iter`
/// M-steps.
pub fn fit_gmm(x: &[Vec<f64>], k: usize, seed: u64, cfg: EmConfig) -> Result<GmmFit, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if x.len() < k {
        return Err(ClusterError::TooFewPoints { n: x.len(), k });
    }
    let d = check_rows(x)?;
    let n = x.len();
    let (global_mean, global_var) = moments(x);
    let var_floor = variance_floor(&global_var);
    let floored: Vec<f64> = global_var.iter().map(|v| v.max(var_floor)).collect();

    if k == 1 {
        let params = GmmParams {
            k: 1,
            weights: vec![1.0],
            means: vec![global_mean],
            variances: vec![floored],
            var_floor,
        };
        let total = x.iter().map(|r| params.log_density(r)).sum();
        return Ok(GmmFit {
            params,
            loglik_trace: vec![total],
            iterations: 0,
            converged: true,
            reseeded: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = GmmParams {
        k,
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(x, k, &mut rng),
        variances: vec![floored.clone(); k],
        var_floor,
    };
    let mut trace = Vec::new();
    let mut reseeded = 0;
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let e = e_step(x, &params);
        let prev = trace.last().copied();
        trace.push(e.total);
        if let Some(prev) = prev {
            if (e.total - prev) / (n as f64) < cfg.tol {
                converged = true;
                break;
            }
        }
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;

        let (mass, sums) = weighted_sums(x, &e.resp, k, d, |_, _, v| v);
        let means: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if mass[j] < COLLAPSE_MASS {
                    params.means[j].clone()
                } else {
                    sums[j].iter().map(|s| s / mass[j]).collect()
                }
            })
            .collect();
        let (_, sq) = weighted_sums(x, &e.resp, k, d, |j, t, v| (v - means[j][t]) * (v - means[j][t]));
        let mut next = GmmParams {
            k,
            weights: mass.iter().map(|m| m / n as f64).collect(),
            variances: (0..k)
                .map(|j| {
                    if mass[j] < COLLAPSE_MASS {
                        floored.clone()
                    } else {
                        sq[j].iter().map(|s| (s / mass[j]).max(var_floor)).collect()
                    }
                })
                .collect(),
            means,
            var_floor,
        };

        let collapsed: Vec<usize> = (0..k).filter(|&j| mass[j] < COLLAPSE_MASS).collect();
        if !collapsed.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| e.ll[a].total_cmp(&e.ll[b]).then(a.cmp(&b)));
            for (j, &row) in collapsed.iter().zip(&order) {
                log::debug!("gmm component {j} collapsed; re-seeding at row {row}");
                next.means[*j] = x[row].clone();
                next.variances[*j] = floored.clone();
                next.weights[*j] = 1.0 / n as f64;
                reseeded += 1;
            }
        }
        let wsum: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= wsum);
        params = next;
    }
    Ok(GmmFit {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        reseeded,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub kind: ClusterKind,
    pub k: usize,
    pub map: BTreeMap<String, usize>,
}

impl ClusterAssignment {
    pub fn get(&self, fact_id: &str) -> Option<usize> {
        self.map.get(fact_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in self.map.values() {
            s[c] += 1;
        }
        s
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        match self.map.iter().find(|(_, &c)| c >= self.k) {
            Some((id, c)) => Err(ClusterError::InvalidParams(format!("fact {id} in cluster {c} >= k={}", self.k))),
            None => Ok(()),
        }
    }
}

/// Assign each row to its most probable component.
pub fn gmm_assign(
    ids: &[String],
    x: &[Vec<f64>],
    params: &GmmParams,
) -> Result<(ClusterAssignment, Vec<Vec<f64>>), ClusterError> {
    params.validate()?;
    if ids.len() != x.len() {
        return Err(ClusterError::IdCount(ids.len(), x.len()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != params.dim()) {
        return Err(ClusterError::DimMismatch {
            expected: params.dim(),
            got: r.len(),
        });
    }
    let post = par::map(x, |r| params.posterior(r));
    let mut map = BTreeMap::new();
    for (id, p) in ids.iter().zip(&post) {
        if map.insert(id.clone(), argmax(p)).is_some() {
            return Err(ClusterError::DuplicateId(id.clone()));
        }
    }
    Ok((
        ClusterAssignment {
            kind: ClusterKind::Semantic,
            k: params.k,
            map,
        },
        post,
    ))
}

/// Block sizes: `⌈n/k⌉` for the first `n mod k` blocks, `⌊n/k⌋` after.
pub fn block_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Sort by (date, id) and cut into k contiguous chronological blocks.
pub fn temporal_partition(facts: &[FactRecord], k: usize) -> Result<ClusterAssignment, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > facts.len() {
        return Err(ClusterError::TooFewPoints { n: facts.len(), k });
    }
    let mut order: Vec<&FactRecord> = facts.iter().collect();
    order.sort_by(|a, b| (a.date, &a.id).cmp(&(b.date, &b.id)));
    let mut map = BTreeMap::new();
    let mut it = order.into_iter();
    for (c, size) in block_sizes(facts.len(), k).into_iter().enumerate() {
        for f in it.by_ref().take(size) {
            if map.insert(f.id.clone(), c).is_some() {
                return Err(ClusterError::DuplicateId(f.id.clone()));
            }
        }
    }
    Ok(ClusterAssignment {
        kind: ClusterKind::Temporal,
        k,
        map,
    })
}

/// Mean embedding of each cluster's members.
pub fn centroids(ids: &[String], x: &[Vec<f64>], assignment: &ClusterAssignment) -> Result<Vec<Vec<f64>>, ClusterError> {
    if ids.len() != x.len() {
        return Err(ClusterError::IdCount(ids.len(), x.len()));
    }
    let d = check_rows(x)?;
    let mut sums = vec![vec![0.0; d]; assignment.k];
    let mut counts = vec![0usize; assignment.k];
    for (id, row) in ids.iter().zip(x) {
        if let Some(c) = assignment.get(id) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmWire {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub kind: ClusterKind,
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
    pub gmm: Option<GmmWire>,
    pub loglik_trace: Vec<f64>,
    /// Mean fact embedding per cluster, for centroid routing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroids: Option<Vec<Vec<f64>>>,
    /// In-scope log-density gate for posterior routing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl ClustersFile {
    pub fn new(assignment: &ClusterAssignment, seed: u64, fit: Option<&GmmFit>) -> Self {
        Self {
            kind: assignment.kind,
            k: assignment.k,
            seed,
            assignments: assignment.map.clone(),
            gmm: fit.map(|f| GmmWire {
                weights: f.params.weights.clone(),
                means: f.params.means.clone(),
                variances: f.params.variances.clone(),
            }),
            loglik_trace: fit.map(|f| f.loglik_trace.clone()).unwrap_or_default(),
            centroids: None,
            density_gate: None,
            config_fingerprint: None,
        }
    }

    pub fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment {
            kind: self.kind,
            k: self.k,
            map: self.assignments.clone(),
        }
    }

    pub fn gmm_params(&self) -> Option<GmmParams> {
        self.gmm.as_ref().map(|g| GmmParams {
            k: g.weights.len(),
            weights: g.weights.clone(),
            means: g.means.clone(),
            variances: g.variances.clone(),
            var_floor: g.variances.iter().flatten().copied().fold(f64::INFINITY, f64::min),
        })
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        self.assignment().validate()?;
        if let Some(p) = self.gmm_params() {
            p.validate()?;
            if p.k != self.k {
                return Err(ClusterError::InvalidParams("gmm k differs from file k".into()));
            }
        }
        if let Some(c) = &self.centroids {
            if c.len() != self.k {
                return Err(ClusterError::InvalidParams("centroid count differs from k".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClusterError> {
        let path = path.as_ref();
        let err = |message: String| ClusterError::File {
            path: path.display().to_string(),
            message,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let body = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, body + "\n").map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClusterError> {
        let path = path.as_ref();
        let err = |message: String| ClusterError::File {
            path: path.display().to_string(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: Self = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }
}

/// Every fact id appears exactly once and all are known.
pub fn check_coverage(assignment: &ClusterAssignment, fact_ids: &[String]) -> Result<(), ClusterError> {
    let known: HashSet<&str> = fact_ids.iter().map(String::as_str).collect();
    if let Some(id) = assignment.map.keys().find(|id| !known.contains(id.as_str())) {
        return Err(ClusterError::InvalidParams(format!("assignment has unknown fact {id}")));
    }
    if let Some(id) = fact_ids.iter().find(|id| !assignment.map.contains_key(id.as_str())) {
        return Err(ClusterError::InvalidParams(format!("fact {id} is unassigned")));
    }
    Ok(())
}

pub fn to_f64(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}
