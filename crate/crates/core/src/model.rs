//! The generative model `x = Σ_k G_k U diag(h_k) Uᵀ w` and its realizations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;

/// Memberships `G` (N×K) and unit-norm kernel spectra `h` (N×K) on a graph.
///
/// Constructors normalize each kernel to unit norm, absorbing the scale into
/// the matching membership, and flip `(g_k, h_k)` jointly so the
/// largest-magnitude entry of `h_k` is positive. Neither step changes `H`.
#[derive(Debug, Clone)]
pub struct LsgpModel {
    graph: Arc<Graph>,
    memberships: DMatrix<f64>,
    kernels: DMatrix<f64>,
    poly_coeffs: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl LsgpModel {
    pub fn new(graph: Arc<Graph>, memberships: DMatrix<f64>, kernels: DMatrix<f64>) -> Result<Self> {
        Self::build(graph, memberships, kernels, None)
    }

    /// Kernels given by monomial coefficients `b` (Q×K): `h_k(i) = Σ_q b(q,k) λ(i)^q`.
    pub fn from_polynomial(graph: Arc<Graph>, memberships: DMatrix<f64>, coeffs: DMatrix<f64>) -> Result<Self> {
        let kernels = polynomial_kernels(&graph.spectrum().frequencies, &coeffs);
        Self::build(graph, memberships, kernels, Some(coeffs))
    }

    fn build(
        graph: Arc<Graph>,
        mut memberships: DMatrix<f64>,
        mut kernels: DMatrix<f64>,
        mut coeffs: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = graph.n_vertices();
        check_shape(&memberships, n, "membership rows")?;
        check_shape(&kernels, n, "kernel rows")?;
        let k = memberships.ncols();
        if k == 0 {
            return Err(Error::InvalidArgument("model needs at least one component".into()));
        }
        if kernels.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: kernels.ncols(),
                context: "kernel columns",
            });
        }
        if let Some(b) = &coeffs {
            if b.ncols() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: b.ncols(),
                    context: "polynomial coefficient columns",
                });
            }
        }
        if memberships.iter().chain(kernels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        for c in 0..k {
            let norm = kernels.column(c).norm();
            if norm == 0.0 {
                return Err(Error::ZeroKernel(c));
            }
            let sign = match linalg::argmax_abs(kernels.column(c).as_slice()) {
                Some(i) if kernels[(i, c)] < 0.0 => -1.0,
                _ => 1.0,
            };
            kernels.column_mut(c).scale_mut(sign / norm);
            memberships.column_mut(c).scale_mut(sign * norm);
            if let Some(b) = coeffs.as_mut() {
                b.column_mut(c).scale_mut(sign / norm);
            }
        }
        Ok(LsgpModel {
            graph,
            memberships,
            kernels,
            poly_coeffs: coeffs,
        })
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.memberships.nrows()
    }

    pub fn k(&self) -> usize {
        self.memberships.ncols()
    }

    pub fn memberships(&self) -> &DMatrix<f64> {
        &self.memberships
    }

    pub fn kernels(&self) -> &DMatrix<f64> {
        &self.kernels
    }

    pub fn poly_coeffs(&self) -> Option<&DMatrix<f64>> {
        self.poly_coeffs.as_ref()
    }

    /// `M = Σ_k g_k h_kᵀ`; row `i` is the local spectrum at vertex `i`.
    pub fn vertex_frequency_spectrum(&self) -> DMatrix<f64> {
        &self.memberships * self.kernels.transpose()
    }

    /// `H = (U ∘ M) Uᵀ`.
    pub fn filter_matrix(&self) -> DMatrix<f64> {
        let u = &self.graph.spectrum().eigenvectors;
        u.component_mul(&self.vertex_frequency_spectrum()) * u.transpose()
    }

    /// `H = Σ_k G_k U diag(h_k) Uᵀ`, evaluated component by component.
    pub fn filter_matrix_summed(&self) -> DMatrix<f64> {
        let s = self.graph.spectrum();
        let n = self.n();
        let mut h = DMatrix::zeros(n, n);
        for c in 0..self.k() {
            let mut f = s.filter_matrix(&self.kernels.column(c).into_owned());
            for i in 0..n {
                f.row_mut(i).scale_mut(self.memberships[(i, c)]);
            }
            h += f;
        }
        h
    }

    /// `g_kᵀ L g_k` for each component.
    pub fn membership_variations(&self) -> Vec<f64> {
        let lap = &self.graph.spectrum().laplacian;
        self.memberships
            .column_iter()
            .map(|g| g.dot(&(lap * g)))
            .collect()
    }

    /// Variation rate `C = max_k g_kᵀ L g_k`.
    pub fn variation_rate(&self) -> f64 {
        self.membership_variations()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Compares `tr(MᵀLM)` against `K² C`.
    pub fn spectrum_variation_bound_check(&self) -> VariationCheck {
        let m = self.vertex_frequency_spectrum();
        let lap = &self.graph.spectrum().laplacian;
        let lhs = linalg::frob_dot(&m, &(lap * &m));
        let k = self.k() as f64;
        let rhs = k * k * self.variation_rate();
        VariationCheck {
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-9,
        }
    }

    /// `C_x = H Hᵀ`.
    pub fn model_covariance(&self) -> DMatrix<f64> {
        let h = self.filter_matrix();
        linalg::symmetrize(&(&h * h.transpose()))
    }

    /// Cross-covariance `U diag(h_k ∘ h_m) Uᵀ` of components `k` and `m`.
    pub fn component_cross_covariance(&self, k: usize, m: usize) -> DMatrix<f64> {
        let prod = self.kernels.column(k).component_mul(&self.kernels.column(m));
        self.graph.spectrum().filter_matrix(&prod)
    }

    /// Draws `count` realizations `H w`, `w` standard normal, optionally with
    /// additive white Gaussian noise at `snr_db` relative to the mean
    /// per-entry signal power.
    pub fn sample_realizations(&self, count: usize, seed: u64, snr_db: Option<f64>) -> Result<RealizationSet> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one realization".into()));
        }
        let n = self.n();
        let h = self.filter_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let white = DMatrix::from_fn(n, count, |_, _| StandardNormal.sample(&mut rng));
        let mut signals = (h * white).transpose();
        if let Some(snr) = snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidArgument(format!("snr must be finite, got {snr}")));
            }
            let power = signals.norm_squared() / (count * n) as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            for v in signals.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * e;
            }
        }
        RealizationSet::fully_observed(signals)
    }

    pub fn to_document(&self) -> ModelDocument {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        ModelDocument {
            n: self.n(),
            k: self.k(),
            q: self.poly_coeffs.as_ref().map(|b| b.nrows()),
            g: row_major(&self.memberships),
            h: row_major(&self.kernels),
            b: self.poly_coeffs.as_ref().map(row_major),
        }
    }

    pub fn from_document(graph: Arc<Graph>, doc: &ModelDocument) -> Result<Self> {
        let n = graph.n_vertices();
        if doc.n != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: doc.n,
                context: "model document vertex count",
            });
        }
        let expect_len = |len: usize, want: usize, context| {
            if len == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: want, got: len, context })
            }
        };
        expect_len(doc.g.len(), n * doc.k, "model document G")?;
        expect_len(doc.h.len(), n * doc.k, "model document h")?;
        let g = DMatrix::from_row_slice(n, doc.k, &doc.g);
        let h = DMatrix::from_row_slice(n, doc.k, &doc.h);
        let b = match (&doc.b, doc.q) {
            (Some(b), Some(q)) => {
                expect_len(b.len(), q * doc.k, "model document b")?;
                Some(DMatrix::from_row_slice(q, doc.k, b))
            }
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::InvalidArgument("model document has b without Q".into()))
            }
        };
        // Stored parameters are already normalized; keep them verbatim.
        for c in 0..doc.k {
            let norm = h.column(c).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "kernel {c} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(LsgpModel {
            graph,
            memberships: g,
            kernels: h,
            poly_coeffs: b,
        })
    }
}

/// Serialized form of a model: matrices stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

fn check_shape(m: &DMatrix<f64>, n: usize, context: &'static str) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
            context,
        });
    }
    Ok(())
}

/// Evaluates `Σ_q b(q,k) λ^q` at every frequency (N×K).
pub fn polynomial_kernels(freqs: &DVector<f64>, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
    vandermonde(freqs, coeffs.nrows()) * coeffs
}

/// `V(i, q) = λ(i)^q` for `q < order`.
pub fn vandermonde(freqs: &DVector<f64>, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(freqs.len(), order, |i, q| freqs[i].powi(q as i32))
}

fn check_injective(map: &[usize], size: usize) -> Result<()> {
    let mut used = vec![false; size];
    for &v in map {
        if v >= size {
            return Err(Error::IndexOutOfRange { index: v, size });
        }
        if used[v] {
            return Err(Error::NonInjectiveMap(v));
        }
        used[v] = true;
    }
    Ok(())
}

/// Extends a subgraph model to `target`: `g_k = S_sᵀ g_{s,k}`, `h_k = Ŝᵀ h_{s,k}`.
///
/// `vertex_map[v]` is the target vertex of subgraph vertex `v`;
/// `freq_map[i]` is the target frequency index of subgraph frequency `i`.
pub fn extend_model(
    sub_model: &LsgpModel,
    target: Arc<Graph>,
    vertex_map: &[usize],
    freq_map: &[usize],
) -> Result<LsgpModel> {
    let ns = sub_model.n();
    let n = target.n_vertices();
    for (len, context) in [(vertex_map.len(), "vertex map"), (freq_map.len(), "frequency map")] {
        if len != ns {
            return Err(Error::DimensionMismatch { expected: ns, got: len, context });
        }
    }
    check_injective(vertex_map, n)?;
    check_injective(freq_map, n)?;
    let k = sub_model.k();
    let mut g = DMatrix::zeros(n, k);
    let mut h = DMatrix::zeros(n, k);
    for c in 0..k {
        for v in 0..ns {
            g[(vertex_map[v], c)] = sub_model.memberships[(v, c)];
            h[(freq_map[v], c)] = sub_model.kernels[(v, c)];
        }
    }
    LsgpModel::new(target, g, h)
}

/// Restricts a model to subgraph `sub`: `g_{s,k} = S_s g_k`, `h_{s,k} = Ŝ h_k`.
///
/// Components whose restricted kernel or membership vanishes are dropped, so
/// the result has at most `K` components.
pub fn restrict_model(
    model: &LsgpModel,
    sub: Arc<Graph>,
    vertex_map: &[usize],
    freq_map: &[usize],
) -> Result<LsgpModel> {
    let ns = sub.n_vertices();
    let n = model.n();
    for (len, context) in [(vertex_map.len(), "vertex map"), (freq_map.len(), "frequency map")] {
        if len != ns {
            return Err(Error::DimensionMismatch { expected: ns, got: len, context });
        }
    }
    check_injective(vertex_map, n)?;
    check_injective(freq_map, n)?;
    let mut gs = Vec::new();
    let mut hs = Vec::new();
    for c in 0..model.k() {
        let g = DVector::from_fn(ns, |v, _| model.memberships[(vertex_map[v], c)]);
        let h = DVector::from_fn(ns, |i, _| model.kernels[(freq_map[i], c)]);
        if g.norm() > 0.0 && h.norm() > 0.0 {
            gs.push(g);
            hs.push(h);
        }
    }
    if gs.is_empty() {
        return Err(Error::ZeroModel);
    }
    LsgpModel::new(sub, DMatrix::from_columns(&gs), DMatrix::from_columns(&hs))
}

/// `L` graph signals over `N` vertices with per-realization observation sets.
///
/// Missing entries are stored as NaN; observed values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationSet {
    signals: DMatrix<f64>,
    observed: Vec<Vec<usize>>,
}

impl RealizationSet {
    /// Every entry observed; `signals` is L×N.
    pub fn fully_observed(signals: DMatrix<f64>) -> Result<Self> {
        if signals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("signal values must be finite".into()));
        }
        let n = signals.ncols();
        let observed = vec![(0..n).collect(); signals.nrows()];
        Ok(RealizationSet { signals, observed })
    }

    /// Rows of optional values; `None` marks a missing entry.
    pub fn from_rows(rows: &[Vec<Option<f64>>], n: usize) -> Result<Self> {
        let mut signals = DMatrix::from_element(rows.len(), n, f64::NAN);
        let mut observed = Vec::with_capacity(rows.len());
        for (l, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                    context: "realization length",
                });
            }
            let mut obs = Vec::new();
            for (i, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if !v.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "non-finite value in realization {l}, vertex {i}"
                        )));
                    }
                    signals[(l, i)] = v;
                    obs.push(i);
                }
            }
            observed.push(obs);
        }
        Ok(RealizationSet { signals, observed })
    }

    pub fn len(&self) -> usize {
        self.signals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.nrows() == 0
    }

    pub fn n_vertices(&self) -> usize {
        self.signals.ncols()
    }

    /// L×N matrix; NaN marks missing entries.
    pub fn signals(&self) -> &DMatrix<f64> {
        &self.signals
    }

    pub fn value(&self, l: usize, i: usize) -> Option<f64> {
        let v = self.signals[(l, i)];
        (!v.is_nan()).then_some(v)
    }

    /// Sorted observed vertex indices of realization `l`.
    pub fn observed(&self, l: usize) -> &[usize] {
        &self.observed[l]
    }

    /// Sorted missing vertex indices of realization `l`.
    pub fn missing(&self, l: usize) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&i| self.signals[(l, i)].is_nan())
            .collect()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|o| o.len() == self.n_vertices())
    }

    /// Copy with the given vertices hidden in each realization.
    pub fn with_hidden(&self, hidden: &[Vec<usize>]) -> Result<Self> {
        if hidden.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: hidden.len(),
                context: "hidden sets",
            });
        }
        let n = self.n_vertices();
        let mut signals = self.signals.clone();
        for (l, set) in hidden.iter().enumerate() {
            for &i in set {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, size: n });
                }
                signals[(l, i)] = f64::NAN;
            }
        }
        let observed = (0..self.len())
            .map(|l| (0..n).filter(|&i| !signals[(l, i)].is_nan()).collect())
            .collect();
        Ok(RealizationSet { signals, observed })
    }

    /// Realization `l` as a dense vector, zero at missing entries.
    pub fn row_filled(&self, l: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.n_vertices(),
            self.signals.row(l).iter().map(|&v| if v.is_nan() { 0.0 } else { v }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn_graph;
    use rand::Rng;

    fn random_graph(n: usize, seed: u64) -> Arc<Graph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        Arc::new(build_knn_graph(&pts, 3.min(n - 1), None).unwrap())
    }

    fn random_model(g: Arc<Graph>, k: usize, seed: u64) -> LsgpModel {
        let n = g.n_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gm = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        let hm = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        LsgpModel::new(g, gm, hm).unwrap()
    }

    #[test]
    fn kernels_normalized_and_sign_canonical() {
        let m = random_model(random_graph(10, 1), 3, 2);
        for c in 0..3 {
            let h = m.kernels().column(c);
            assert!((h.norm() - 1.0).abs() < 1e-12);
            let i = linalg::argmax_abs(h.as_slice()).unwrap();
            assert!(h[i] > 0.0);
        }
    }

    #[test]
    fn normalization_preserves_filter() {
        let g = random_graph(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gm = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let hm = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-3.0..3.0));
        let m = LsgpModel::new(g.clone(), gm.clone(), hm.clone()).unwrap();
        let u = &g.spectrum().eigenvectors;
        let raw = u.component_mul(&(&gm * hm.transpose())) * u.transpose();
        assert!((m.filter_matrix() - raw).norm() < 1e-10);
    }

    #[test]
    fn hadamard_form_matches_sum() {
        let m = random_model(random_graph(6, 5), 2, 6);
        let a = m.filter_matrix();
        let b = m.filter_matrix_summed();
        assert!((&a - &b).norm() / a.norm() < 1e-10);
    }

    #[test]
    fn wss_case_is_graph_filter() {
        let g = random_graph(7, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = DMatrix::from_fn(7, 1, |_, _| rng.random_range(-1.0..1.0));
        let m = LsgpModel::new(g.clone(), DMatrix::from_element(7, 1, 1.0), h).unwrap();
        let scale = m.memberships()[(0, 0)];
        assert!(m.memberships().iter().all(|&v| v == scale));
        let expected = g.spectrum().filter_matrix(&m.kernels().column(0).into_owned()) * scale;
        assert!((m.filter_matrix() - expected).norm() < 1e-10);
        let c = m.model_covariance();
        let sq = m.kernels().column(0).map(|v| v * v * scale * scale);
        assert!((c - g.spectrum().filter_matrix(&sq)).norm() < 1e-10);
        let vfs = m.vertex_frequency_spectrum();
        for i in 1..7 {
            assert!((vfs.row(i) - vfs.row(0)).norm() < 1e-14);
        }
    }

    #[test]
    fn single_frequency_filter_is_rank_one() {
        let g = random_graph(6, 9);
        let mut h = DMatrix::zeros(6, 1);
        h[(0, 0)] = 1.0;
        let m = LsgpModel::new(g, DMatrix::from_element(6, 1, 1.0), h).unwrap();
        let sv = m.filter_matrix().singular_values();
        assert!(sv[0] > 0.5);
        assert!(sv.iter().skip(1).all(|&s| s < 1e-10));
    }

    #[test]
    fn orthogonal_components_give_rank_two_spectrum() {
        let g = random_graph(6, 10);
        let mut gm = DMatrix::zeros(6, 2);
        let mut hm = DMatrix::zeros(6, 2);
        gm[(0, 0)] = 1.0;
        gm[(1, 1)] = 1.0;
        hm[(2, 0)] = 1.0;
        hm[(3, 1)] = 1.0;
        let m = LsgpModel::new(g, gm, hm).unwrap();
        assert_eq!(m.vertex_frequency_spectrum().rank(1e-10), 2);
    }

    #[test]
    fn zero_memberships_give_zero_spectrum_and_signals() {
        let g = random_graph(5, 11);
        let m = LsgpModel::new(g, DMatrix::zeros(5, 1), DMatrix::from_element(5, 1, 1.0)).unwrap();
        assert_eq!(m.vertex_frequency_spectrum().norm(), 0.0);
        let r = m.sample_realizations(4, 1, None).unwrap();
        assert!(r.signals().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variation_bound_single_component_is_exact() {
        let m = random_model(random_graph(9, 12), 1, 13);
        let check = m.spectrum_variation_bound_check();
        assert!((check.lhs - check.rhs).abs() < 1e-10 * (1.0 + check.rhs));
        assert!(check.holds);
    }

    #[test]
    fn variation_bound_null_memberships() {
        let g = random_graph(9, 14);
        let d = g.degree().map(f64::sqrt);
        let gm = DMatrix::from_columns(&[d.clone(), d * 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let hm = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
        let m = LsgpModel::new(g, gm, hm).unwrap();
        assert!(m.spectrum_variation_bound_check().lhs.abs() < 1e-10);
    }

    #[test]
    fn covariance_matches_cross_covariance_sum() {
        let m = random_model(random_graph(8, 16), 3, 17);
        let mut sum = DMatrix::zeros(8, 8);
        for k in 0..3 {
            for l in 0..3 {
                let gk = DMatrix::from_diagonal(&m.memberships().column(k).into_owned());
                let gl = DMatrix::from_diagonal(&m.memberships().column(l).into_owned());
                sum += gk * m.component_cross_covariance(k, l) * gl;
            }
        }
        assert!((m.model_covariance() - sum).norm() < 1e-10);
    }

    #[test]
    fn covariance_trace_is_filter_energy() {
        let m = random_model(random_graph(10, 18), 2, 19);
        assert!((m.model_covariance().trace() - m.filter_matrix().norm_squared()).abs() < 1e-10);
        assert!(linalg::min_eigenvalue(&m.model_covariance()) > -1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = random_model(random_graph(6, 20), 2, 21);
        let a = m.sample_realizations(50, 5, Some(10.0)).unwrap();
        let b = m.sample_realizations(50, 5, Some(10.0)).unwrap();
        assert_eq!(a.signals().as_slice(), b.signals().as_slice());
    }

    #[test]
    fn extend_zero_outside_and_round_trip() {
        let big = random_graph(5, 22);
        let sub = Arc::new(big.induced_subgraph(&[0, 2, 4]).unwrap_or_else(|_| {
            Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
        }));
        let m = random_model(sub.clone(), 2, 23);
        let vmap = [0, 2, 4];
        let fmap = [0, 1, 2];
        let ext = extend_model(&m, big, &vmap, &fmap).unwrap();
        let c = ext.model_covariance();
        assert_eq!(c[(1, 1)], 0.0);
        assert_eq!(c[(3, 3)], 0.0);
        let back = restrict_model(&ext, sub, &vmap, &fmap).unwrap();
        assert!((back.memberships() - m.memberships()).norm() < 1e-9);
        assert!((back.kernels() - m.kernels()).norm() < 1e-9);
    }

    #[test]
    fn non_injective_map_rejected() {
        let g = random_graph(4, 24);
        let m = random_model(g.clone(), 1, 25);
        let r = extend_model(&m, g, &[0, 1, 1, 2], &[0, 1, 2, 3]);
        assert!(matches!(r, Err(Error::NonInjectiveMap(1))));
    }

    #[test]
    fn restriction_never_adds_components() {
        let g = random_graph(8, 26);
        let mut gm = DMatrix::zeros(8, 3);
        for i in 0..8 {
            gm[(i, 0)] = 1.0;
            gm[(i, 1)] = if i < 4 { 1.0 } else { 0.0 };
            gm[(i, 2)] = if i >= 4 { 1.0 } else { 0.0 };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let hm = DMatrix::from_fn(8, 3, |_, _| rng.random_range(0.1..1.0));
        let m = LsgpModel::new(g.clone(), gm, hm).unwrap();
        let verts = [4, 5, 6, 7];
        let sub = match g.induced_subgraph(&verts) {
            Ok(s) => Arc::new(s),
            Err(_) => return,
        };
        let r = restrict_model(&m, sub, &verts, &[0, 1, 2, 3]).unwrap();
        assert!(r.k() <= 3);
        assert_eq!(r.k(), 2);
    }

    #[test]
    fn document_round_trip() {
        let g = random_graph(6, 28);
        let coeffs = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 0.2]);
        let gm = DMatrix::from_element(6, 2, 0.7);
        let m = LsgpModel::from_polynomial(g.clone(), gm, coeffs).unwrap();
        let json = serde_json::to_string(&m.to_document()).unwrap();
        let doc: ModelDocument = serde_json::from_str(&json).unwrap();
        let back = LsgpModel::from_document(g, &doc).unwrap();
        assert_eq!(back.memberships(), m.memberships());
        assert_eq!(back.kernels(), m.kernels());
        assert_eq!(back.poly_coeffs(), m.poly_coeffs());
    }

    #[test]
    fn polynomial_kernels_match_coefficients_after_normalization() {
        let g = random_graph(9, 29);
        let coeffs = DMatrix::from_row_slice(3, 1, &[2.0, -1.0, 0.25]);
        let m = LsgpModel::from_polynomial(g.clone(), DMatrix::from_element(9, 1, 1.0), coeffs).unwrap();
        let eval = polynomial_kernels(&g.spectrum().frequencies, m.poly_coeffs().unwrap());
        assert!((eval - m.kernels()).norm() < 1e-9);
    }

    #[test]
    fn realization_masks() {
        let rows = vec![vec![Some(1.0), None, Some(3.0)], vec![None, None, Some(0.0)]];
        let r = RealizationSet::from_rows(&rows, 3).unwrap();
        assert_eq!(r.observed(0), &[0, 2]);
        assert_eq!(r.missing(1), vec![0, 1]);
        assert_eq!(r.value(1, 2), Some(0.0));
        assert_eq!(r.value(0, 1), None);
    }
}
