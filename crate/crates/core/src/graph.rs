//! Undirected weighted graphs and their normalized-Laplacian spectra.
//!
//! A [`Graph`] is validated at construction (symmetric nonnegative weights,
//! no self loops, one connected component) and lazily caches its
//! [`Spectrum`], so all downstream spectral code can assume a well-formed
//! eigenbasis with `0 = λ(1) ≤ … ≤ λ(N) ≤ 2`.

use std::collections::VecDeque;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct Graph {
    weights: DMatrix<f64>,
    degree: DVector<f64>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    spectrum: OnceLock<Spectrum>,
}

/// Eigendecomposition `L = U diag(λ) Uᵀ` of the normalized Laplacian.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub laplacian: DMatrix<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub frequencies: DVector<f64>,
}

impl Graph {
    /// Build from a dense weight matrix.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("self loop at vertex {i}")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidArgument(format!("invalid weight {w} at ({i},{j})")));
                }
                if w != weights[(j, i)] {
                    return Err(Error::InvalidArgument(format!("asymmetric weight at ({i},{j})")));
                }
            }
        }
        let mut edges = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if weights[(i, j)] > 0.0 {
                    neighbors[i].push(j);
                    if i < j {
                        edges.push((i, j));
                    }
                }
            }
        }
        let degree = DVector::from_iterator(n, weights.row_iter().map(|r| r.sum()));
        if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
            if n > 1 {
                return Err(Error::ZeroDegree(i));
            }
        }
        let graph = Graph {
            weights,
            degree,
            edges,
            neighbors,
            spectrum: OnceLock::new(),
        };
        let all: Vec<usize> = (0..n).collect();
        let components = graph.components_within(&all);
        if components.len() > 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(graph)
    }

    /// Build from a weighted edge list; repeated edges keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, weight) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), size: n });
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self loop at vertex {i}")));
            }
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
        Self::from_weights(w)
    }

    pub fn n_vertices(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degree(&self) -> &DVector<f64> {
        &self.degree
    }

    /// Unordered edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn min_edge_weight(&self) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j)| self.weights[(i, j)])
            .fold(f64::INFINITY, f64::min)
    }

    /// Cached normalized-Laplacian spectrum.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            normalized_laplacian(self).expect("validated graph has positive degrees")
        })
    }

    /// Connected components of the subgraph induced by `vertices`, each sorted,
    /// ordered by smallest member.
    pub fn components_within(&self, vertices: &[usize]) -> Vec<Vec<usize>> {
        let n = self.n_vertices();
        let mut member = vec![false; n];
        for &v in vertices {
            member[v] = true;
        }
        let mut seen = vec![false; n];
        let mut sorted = vertices.to_vec();
        sorted.sort_unstable();
        let mut out = Vec::new();
        for &start in &sorted {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                for &u in &self.neighbors[v] {
                    if member[u] && !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `vertices` (kept in the given order).
    pub fn induced_subgraph(&self, vertices: &[usize]) -> Result<Graph> {
        let n = self.n_vertices();
        for &v in vertices {
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, size: n });
            }
        }
        Graph::from_weights(linalg::select(&self.weights, vertices, vertices))
    }

    /// Breadth-first order from `start`, visiting neighbors by increasing index.
    pub fn bfs_order(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_vertices()];
        let mut order = Vec::with_capacity(self.n_vertices());
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in &self.neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        order
    }
}

/// Symmetrized k-nearest-neighbor graph with Gaussian weights
/// `exp(-dist² / width)`.
///
/// An edge joins `i` and `j` when either is among the other's `k` nearest
/// points (ties broken by lower index). When `width` is `None` it defaults to
/// the mean squared distance to the k-th neighbor.
pub fn build_knn_graph(points: &[Vec<f64>], k: usize, width: Option<f64>) -> Result<Graph> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must satisfy 1 <= k < {n}")));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: points[p].len(),
            context: "point coordinates",
        });
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut adjacent = vec![vec![false; n]; n];
    let mut kth_sq = 0.0;
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq(&points[i], &points[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        kth_sq += others[k - 1].0;
        for &(_, j) in &others[..k] {
            adjacent[i][j] = true;
            adjacent[j][i] = true;
        }
    }
    let width = match width {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::InvalidArgument(format!("width must be positive, got {w}"))),
        None => {
            let mean = kth_sq / n as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adjacent[i][j] {
                w[(i, j)] = (-sq(&points[i], &points[j]) / width).exp();
            }
        }
    }
    Graph::from_weights(w)
}

/// `L = D^{-1/2} (D - W) D^{-1/2}` and its sorted, sign-normalized eigenbasis.
pub fn normalized_laplacian(g: &Graph) -> Result<Spectrum> {
    let n = g.n_vertices();
    let mut inv_sqrt = DVector::zeros(n);
    for i in 0..n {
        let d = g.degree[i];
        if d <= 0.0 {
            if n == 1 {
                continue;
            }
            return Err(Error::ZeroDegree(i));
        }
        inv_sqrt[i] = 1.0 / d.sqrt();
    }
    let mut lap = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let base = if i == j && g.degree[i] > 0.0 { 1.0 } else { 0.0 };
            lap[(i, j)] = base - inv_sqrt[i] * g.weights[(i, j)] * inv_sqrt[j];
        }
    }
    let (mut freqs, vecs) = linalg::sym_eigen_sorted(&lap);
    for f in freqs.iter_mut() {
        if *f < 0.0 && *f > -1e-12 {
            *f = 0.0;
        }
    }
    Ok(Spectrum {
        laplacian: lap,
        eigenvectors: vecs,
        frequencies: freqs,
    })
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Column `i` of `U`.
    pub fn mode(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// `U diag(kernel) Uᵀ`.
    pub fn filter_matrix(&self, kernel: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, &h) in kernel.iter().enumerate() {
            scaled.column_mut(j).scale_mut(h);
        }
        scaled * self.eigenvectors.transpose()
    }
}

/// Filter `x` with the spectral kernel: `U diag(kernel) Uᵀ x`.
pub fn apply_kernel_filter(
    s: &Spectrum,
    kernel_values: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = s.len();
    if kernel_values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: kernel_values.len(),
            context: "kernel values",
        });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
            context: "signal",
        });
    }
    if kernel_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("kernel values must be finite".into()));
    }
    let coeffs = s.eigenvectors.tr_mul(x).component_mul(kernel_values);
    Ok(&s.eigenvectors * coeffs)
}

/// Unweighted hop distances between all vertex pairs (BFS).
pub fn geodesic_distances(g: &Graph) -> DMatrix<usize> {
    let n = g.n_vertices();
    let mut d = DMatrix::from_element(n, n, usize::MAX);
    for s in 0..n {
        d[(s, s)] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            let dv = d[(s, v)];
            for &u in g.neighbors(v) {
                if d[(s, u)] == usize::MAX {
                    d[(s, u)] = dv + 1;
                    queue.push_back(u);
                }
            }
        }
    }
    d
}

/// `Σ_{i∼j} W(i,j) (v(i) − v(j))²`, each unordered edge counted once.
pub fn total_variation(g: &Graph, v: &DVector<f64>) -> f64 {
    g.edges()
        .iter()
        .map(|&(i, j)| {
            let d = v[i] - v[j];
            g.weight(i, j) * d * d
        })
        .sum()
}

/// Total variation `T_n` of eigenvector `n` (0-based).
pub fn eigenvector_total_variation(g: &Graph, s: &Spectrum, n: usize) -> Result<f64> {
    if n >= s.len() {
        return Err(Error::IndexOutOfRange { index: n, size: s.len() });
    }
    Ok(total_variation(g, &s.mode(n)))
}
