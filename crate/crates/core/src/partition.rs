//! Covariance-driven graph partitioning and per-subgraph stationary
//! approximation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::learner::{learn_lsgp, LearnOutput, LearnerConfig};
use crate::linalg;
use crate::model::LsgpModel;

/// Disjoint labeling of all vertices into `k` nonempty parts, labels `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let n = labels.len();
        if k == 0 || k > n {
            return Err(Error::Partition { n, parts: k });
        }
        let mut seen = vec![false; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::InvalidArgument(format!("label {l} out of range for {k} parts")));
            }
            seen[l] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("part {empty} is empty")));
        }
        Ok(Partition { labels, k })
    }

    /// Like [`Partition::new`] but also requires every part to induce a
    /// connected subgraph of `graph`.
    pub fn new_connected(graph: &Graph, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.len() != graph.n_vertices() {
            return Err(Error::DimensionMismatch {
                expected: graph.n_vertices(),
                got: labels.len(),
                context: "partition labels",
            });
        }
        let p = Partition::new(labels, k)?;
        for (label, part) in p.parts().iter().enumerate() {
            if graph.components_within(part).len() != 1 {
                return Err(Error::InvalidArgument(format!("part {label} is not connected")));
            }
        }
        Ok(p)
    }

    pub fn single(n: usize) -> Self {
        Partition { labels: vec![0; n], k: 1 }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Sorted vertex lists, one per label.
    pub fn parts(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.k];
        for (v, &l) in self.labels.iter().enumerate() {
            parts[l].push(v);
        }
        parts
    }

    pub fn selection(&self, label: usize) -> SelectionMatrix {
        SelectionMatrix {
            mapping: (0..self.n()).filter(|&v| self.labels[v] == label).collect(),
            n: self.n(),
        }
    }
}

/// Binary `|V_k| × N` inclusion matrix, stored as its ordered parent indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    pub mapping: Vec<usize>,
    pub n: usize,
}

impl SelectionMatrix {
    pub fn rows(&self) -> usize {
        self.mapping.len()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.mapping.len(), self.n);
        for (r, &c) in self.mapping.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    /// `S A Sᵀ` without forming `S`.
    pub fn restrict(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::select(a, &self.mapping, &self.mapping)
    }
}

/// Per-edge distances `ρ(i,j) = exp(−Ĉ(i,j)²/θ)`, aligned with `Graph::edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDistances {
    pub edges: Vec<(usize, usize)>,
    pub rho: Vec<f64>,
    pub theta: f64,
}

/// When `theta` is `None` it defaults to the median of `Ĉ(i,j)²` over edges.
pub fn covariance_edge_distance(c_hat: &DMatrix<f64>, graph: &Graph, theta: Option<f64>) -> Result<EdgeDistances> {
    let n = graph.n_vertices();
    if c_hat.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c_hat.nrows(),
            context: "covariance for edge distances",
        });
    }
    let edges = graph.edges().to_vec();
    let sq: Vec<f64> = edges.iter().map(|&(i, j)| c_hat[(i, j)].powi(2)).collect();
    let theta = match theta {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::InvalidArgument(format!("theta must be positive, got {t}"))),
        None => default_theta(&sq),
    };
    let rho = sq.iter().map(|s| (-s / theta).exp()).collect();
    Ok(EdgeDistances { edges, rho, theta })
}

fn default_theta(sq: &[f64]) -> f64 {
    let mut sorted = sq.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => 0.0,
        m if m % 2 == 1 => sorted[m / 2],
        m => 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]),
    };
    if median > 0.0 {
        return median;
    }
    let mean = sorted.iter().sum::<f64>() / sorted.len().max(1) as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// A method that cuts a graph into `k` connected parts from edge distances.
pub trait Partitioner {
    fn partition(&self, graph: &Graph, distances: &EdgeDistances, k: usize) -> Result<Partition>;
}

/// Normalized spectral clustering on the affinity `1 − ρ`, seeded k-means++
/// on the row-normalized leading eigenvectors, then connectivity repair.
#[derive(Debug, Clone)]
pub struct SpectralPartitioner {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for SpectralPartitioner {
    fn default() -> Self {
        SpectralPartitioner { seed: 0, restarts: 10, max_iter: 300 }
    }
}

impl Partitioner for SpectralPartitioner {
    fn partition(&self, graph: &Graph, distances: &EdgeDistances, k: usize) -> Result<Partition> {
        let n = graph.n_vertices();
        if k == 0 || k > n {
            return Err(Error::Partition { n, parts: k });
        }
        if distances.rho.len() != graph.edges().len() {
            return Err(Error::DimensionMismatch {
                expected: graph.edges().len(),
                got: distances.rho.len(),
                context: "edge distances",
            });
        }
        let affinity = affinity_matrix(n, distances);
        if k == 1 {
            return Ok(Partition::single(n));
        }
        let embedding = spectral_embedding(&affinity, k);
        let labels = kmeans(&embedding, k, self.seed, self.restarts, self.max_iter);
        let labels = repair_connectivity(graph, &affinity, labels, k);
        Partition::new_connected(graph, labels, k)
    }
}

fn affinity_matrix(n: usize, d: &EdgeDistances) -> DMatrix<f64> {
    let raw: Vec<f64> = d.rho.iter().map(|r| (1.0 - r).max(0.0)).collect();
    let top = raw.iter().copied().fold(0.0, f64::max);
    let floor = if top > 0.0 { 1e-10 * top } else { 1.0 };
    let mut a = DMatrix::zeros(n, n);
    for (&(i, j), &w) in d.edges.iter().zip(&raw) {
        let w = w.max(floor);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    a
}

fn spectral_embedding(affinity: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = affinity.nrows();
    let inv_sqrt: Vec<f64> = affinity
        .row_iter()
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        base - inv_sqrt[i] * affinity[(i, j)] * inv_sqrt[j]
    });
    let (_, vecs) = linalg::sym_eigen_sorted(&lap);
    let mut emb = vecs.columns(0, k).into_owned();
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    emb
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `restarts` seeded k-means++ runs by inertia; labels are renumbered
/// by first appearance.
fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, restarts: usize, max_iter: usize) -> Vec<usize> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![rows[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = rows
                .iter()
                .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let pick = if total > 0.0 {
                let mut t = rng.random_range(0.0..total);
                let mut idx = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if t < di {
                        idx = i;
                        break;
                    }
                    t -= di;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(rows[pick].clone());
        }
        let mut labels = vec![0usize; n];
        for iter in 0..max_iter {
            let mut changed = false;
            for (i, p) in rows.iter().enumerate() {
                let mut bl = 0;
                let mut bd = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(p, center);
                    if d < bd {
                        bd = d;
                        bl = c;
                    }
                }
                if labels[i] != bl {
                    labels[i] = bl;
                    changed = true;
                }
            }
            if !changed && iter > 0 {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
                if members.is_empty() {
                    continue;
                }
                for (dim, v) in center.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[dim]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let inertia: f64 = rows.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let labels = best.map(|(_, l)| l).unwrap_or_else(|| vec![0; n]);
    renumber(&labels)
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Reassigns disconnected fragments until every label induces a connected
/// subgraph, then fills any empty label by peeling a spanning-tree leaf off
/// the largest part.
fn repair_connectivity(graph: &Graph, affinity: &DMatrix<f64>, mut labels: Vec<usize>, k: usize) -> Vec<usize> {
    let n = graph.n_vertices();
    loop {
        let mut fragments = Vec::new();
        for label in 0..k {
            let members: Vec<usize> = (0..n).filter(|&v| labels[v] == label).collect();
            if members.is_empty() {
                continue;
            }
            let mut comps = graph.components_within(&members);
            if comps.len() < 2 {
                continue;
            }
            // Keep the largest component (lowest vertex on ties); the rest are fragments.
            let keep = comps
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.1[0].cmp(&a.1[0])))
                .map(|(i, _)| i)
                .unwrap_or(0);
            comps.remove(keep);
            fragments.extend(comps);
        }
        if fragments.is_empty() {
            break;
        }
        fragments.sort_by(|a, b| a.len().cmp(&b.len()).then(a[0].cmp(&b[0])));
        let frag = &fragments[0];
        let own = labels[frag[0]];
        let mut score = vec![0.0; k];
        let mut adjacent = vec![false; k];
        for &v in frag {
            for &u in graph.neighbors(v) {
                let l = labels[u];
                if l != own {
                    adjacent[l] = true;
                    score[l] += affinity[(v, u)];
                }
            }
        }
        let target = (0..k)
            .filter(|&l| adjacent[l])
            .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)));
        match target {
            Some(t) => {
                for &v in frag {
                    labels[v] = t;
                }
            }
            None => break,
        }
    }
    loop {
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(0);
        if sizes[largest] < 2 {
            break;
        }
        let members: Vec<usize> = (0..n).filter(|&v| labels[v] == largest).collect();
        labels[spanning_tree_leaf(graph, &members)] = empty;
    }
    labels
}

/// A vertex of the connected set `members` whose removal keeps it connected:
/// the last vertex in breadth-first order from the smallest member.
fn spanning_tree_leaf(graph: &Graph, members: &[usize]) -> usize {
    let mut inside = vec![false; graph.n_vertices()];
    for &v in members {
        inside[v] = true;
    }
    let mut seen = vec![false; graph.n_vertices()];
    let start = members[0];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &u in graph.neighbors(v) {
            if inside[u] && !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    last
}

/// Partitions with the default [`SpectralPartitioner`].
pub fn partition_graph(graph: &Graph, distances: &EdgeDistances, k: usize) -> Result<Partition> {
    SpectralPartitioner::default().partition(graph, distances, k)
}

/// A partition plus one single-component model per part.
#[derive(Debug, Clone)]
pub struct LocalApproximation {
    pub partition: Partition,
    pub subgraphs: Vec<Arc<Graph>>,
    pub fits: Vec<LearnOutput>,
}

impl LocalApproximation {
    pub fn models(&self) -> impl Iterator<Item = &LsgpModel> {
        self.fits.iter().map(|f| &f.model)
    }

    /// Block-diagonal covariance: each part's learned covariance, zero across parts.
    pub fn composite_covariance(&self) -> DMatrix<f64> {
        let n = self.partition.n();
        let mut c = DMatrix::zeros(n, n);
        for (label, fit) in self.fits.iter().enumerate() {
            let map = self.partition.selection(label).mapping;
            let local = fit.model.model_covariance();
            for (a, &i) in map.iter().enumerate() {
                for (b, &j) in map.iter().enumerate() {
                    c[(i, j)] = local[(a, b)];
                }
            }
        }
        c
    }
}

/// Partitions `graph` from `Ĉ` and fits a stationary model (`K = 1`) on each
/// induced subgraph to the restricted covariance `S_k Ĉ S_kᵀ`.
pub fn local_approximation(
    graph: &Graph,
    c_hat: &DMatrix<f64>,
    k: usize,
    theta: Option<f64>,
    cfg: &LearnerConfig,
) -> Result<LocalApproximation> {
    local_approximation_with(&SpectralPartitioner { seed: cfg.seed, ..Default::default() }, graph, c_hat, k, theta, cfg)
}

pub fn local_approximation_with(
    partitioner: &dyn Partitioner,
    graph: &Graph,
    c_hat: &DMatrix<f64>,
    k: usize,
    theta: Option<f64>,
    cfg: &LearnerConfig,
) -> Result<LocalApproximation> {
    let distances = covariance_edge_distance(c_hat, graph, theta)?;
    let partition = partitioner.partition(graph, &distances, k)?;
    let local_cfg = LearnerConfig { k: 1, ..cfg.clone() };
    let mut subgraphs = Vec::with_capacity(k);
    let mut fits = Vec::with_capacity(k);
    for label in 0..partition.k() {
        let sel = partition.selection(label);
        let sub = Arc::new(graph.induced_subgraph(&sel.mapping)?);
        let fit = learn_lsgp(&sub, &sel.restrict(c_hat), &local_cfg)?;
        subgraphs.push(sub);
        fits.push(fit);
    }
    Ok(LocalApproximation { partition, subgraphs, fits })
}

/// Convenience for tests and reports: `Σ_k S_kᵀ S_k`.
pub fn selection_cover(p: &Partition) -> DMatrix<f64> {
    let mut sum = DMatrix::zeros(p.n(), p.n());
    for label in 0..p.k() {
        let s = p.selection(label).to_matrix();
        sum += s.transpose() * s;
    }
    sum
}

/// Indicator vector of part `label`.
pub fn part_indicator(p: &Partition, label: usize) -> DVector<f64> {
    DVector::from_iterator(p.n(), p.labels().iter().map(|&l| if l == label { 1.0 } else { 0.0 }))
}
