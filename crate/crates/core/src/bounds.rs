//! Localization and separation parameters of a model relative to a
//! partition, and machine checks of the covariance bounds they imply.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{eigenvector_total_variation, geodesic_distances};
use crate::model::LsgpModel;
use crate::partition::Partition;

/// Additive slack on every inequality check.
pub const SLACK: f64 = 1e-9;

/// Memberships below this magnitude have a zero pseudo-inverse.
pub const PINV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionParams {
    /// Largest foreign membership magnitude on any part.
    pub delta: f64,
    /// Smallest own membership on any part.
    pub mu: f64,
    /// Largest own membership on any part.
    pub gamma: f64,
    /// Largest spectral overlap `Σ_i |h_k(i) h_m(i)|` between distinct kernels.
    pub epsilon: f64,
    /// Number of leading frequencies (1-based cutoff) outside which every kernel vanishes.
    pub kappa_c: usize,
    pub w_min: f64,
    /// Total variance of each component process on its own part.
    pub sigma_sq: Vec<f64>,
}

impl AssumptionParams {
    pub fn localization_ratio(&self) -> f64 {
        self.delta / self.mu
    }

    /// `2(K−1)δ/μ + (K−1)²(δ/μ)²`.
    pub fn deviation_bound(&self, k: usize) -> f64 {
        let r = self.localization_ratio();
        let km = k.saturating_sub(1) as f64;
        2.0 * km * r + km * km * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn check_compatible(model: &LsgpModel, partition: &Partition) -> Result<()> {
    if partition.n() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            got: partition.n(),
            context: "partition size",
        });
    }
    if partition.k() != model.k() {
        return Err(Error::DimensionMismatch {
            expected: model.k(),
            got: partition.k(),
            context: "number of parts",
        });
    }
    Ok(())
}

/// Tightest parameters for which the model satisfies the localization,
/// separation and band-limit conditions on `partition`.
pub fn extract_params(model: &LsgpModel, partition: &Partition) -> Result<AssumptionParams> {
    check_compatible(model, partition)?;
    let g = model.memberships();
    let h = model.kernels();
    let (n, k) = (model.n(), model.k());
    let labels = partition.labels();
    let mut delta = 0.0f64;
    let mut mu = f64::INFINITY;
    let mut gamma = f64::NEG_INFINITY;
    for i in 0..n {
        let own = labels[i];
        for m in 0..k {
            let v = g[(i, m)];
            if m == own {
                mu = mu.min(v);
                gamma = gamma.max(v);
            } else {
                delta = delta.max(v.abs());
            }
        }
    }
    if mu <= 0.0 {
        return Err(Error::MembershipFloor(mu));
    }
    let mut epsilon = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                let overlap: f64 = (0..n).map(|i| (h[(i, a)] * h[(i, b)]).abs()).sum();
                epsilon = epsilon.max(overlap);
            }
        }
    }
    let kappa_c = (0..n)
        .rev()
        .find(|&i| (0..k).any(|c| h[(i, c)] != 0.0))
        .map_or(1, |i| i + 1);
    let u = &model.graph().spectrum().eigenvectors;
    let sigma_sq = partition
        .parts()
        .iter()
        .enumerate()
        .map(|(c, part)| {
            part.iter()
                .map(|&i| (0..n).map(|l| h[(l, c)] * h[(l, c)] * u[(i, l)] * u[(i, l)]).sum::<f64>())
                .sum()
        })
        .collect();
    Ok(AssumptionParams {
        delta,
        mu,
        gamma,
        epsilon,
        kappa_c,
        w_min: model.graph().min_edge_weight(),
        sigma_sq,
    })
}

fn pseudo_inverse(g: &DVector<f64>) -> DVector<f64> {
    g.map(|v| if v.abs() < PINV_FLOOR { 0.0 } else { 1.0 / v })
}

/// Elementwise deviation between the membership-normalized covariance and the
/// component cross-covariance on parts `k` and `m`.
pub fn check_elementwise_deviation(model: &LsgpModel, partition: &Partition, k: usize, m: usize) -> Result<BoundCheck> {
    let params = extract_params(model, partition)?;
    let kk = model.k();
    for idx in [k, m] {
        if idx >= kk {
            return Err(Error::IndexOutOfRange { index: idx, size: kk });
        }
    }
    let c = model.model_covariance();
    let ckm = model.component_cross_covariance(k, m);
    let gk = pseudo_inverse(&model.memberships().column(k).into_owned());
    let gm = pseudo_inverse(&model.memberships().column(m).into_owned());
    let parts = partition.parts();
    let mut lhs = 0.0f64;
    for &i in &parts[k] {
        for &j in &parts[m] {
            lhs = lhs.max((gk[i] * c[(i, j)] * gm[j] - ckm[(i, j)]).abs());
        }
    }
    let rhs = params.deviation_bound(kk);
    Ok(BoundCheck { lhs, rhs, holds: lhs <= rhs + SLACK })
}

/// Worst case of [`check_elementwise_deviation`] over all pairs of parts.
pub fn check_elementwise_deviation_all(model: &LsgpModel, partition: &Partition) -> Result<BoundCheck> {
    let mut worst: Option<BoundCheck> = None;
    for k in 0..model.k() {
        for m in 0..model.k() {
            let c = check_elementwise_deviation(model, partition, k, m)?;
            if worst.is_none_or(|w| c.lhs - c.rhs > w.lhs - w.rhs) {
                worst = Some(c);
            }
        }
    }
    worst.ok_or(Error::InvalidArgument("model has no components".into()))
}

/// Average squared covariance across distinct parts against its upper bound.
pub fn check_cross_covariance(model: &LsgpModel, partition: &Partition) -> Result<BoundCheck> {
    let params = extract_params(model, partition)?;
    let c = model.model_covariance();
    let labels = partition.labels();
    let n = model.n();
    let nf = n as f64;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                cross += c[(i, j)] * c[(i, j)];
            }
        }
    }
    let lhs = cross / (params.gamma.powi(4) * nf * nf);
    let kf = model.k() as f64;
    let within: usize = partition.parts().iter().map(|p| p.len() * p.len()).sum();
    let cross_pairs = (n * n - within) as f64;
    let beta = params.deviation_bound(model.k());
    let rhs = 2.0 / nf * kf * (kf - 1.0) * params.epsilon.powi(2) + 2.0 / (nf * nf) * cross_pairs * beta * beta;
    Ok(BoundCheck { lhs, rhs, holds: lhs <= rhs + SLACK })
}

/// Terms of the within-part lower bound, kept separate for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundTerms {
    pub variance: f64,
    pub smoothness: f64,
    pub localization: f64,
}

/// Average covariance magnitude within parts against its lower bound.
///
/// Requires kernels with exact zeros at the top of the spectrum.
pub fn check_within_covariance(model: &LsgpModel, partition: &Partition) -> Result<(BoundCheck, LowerBoundTerms)> {
    let params = extract_params(model, partition)?;
    let n = model.n();
    if params.kappa_c == n {
        let top = (0..model.k()).find(|&c| model.kernels()[(n - 1, c)] != 0.0).unwrap_or(0);
        return Err(Error::NotBandLimited(top));
    }
    let graph = model.graph();
    let spectrum = graph.spectrum();
    let c = model.model_covariance();
    let parts = partition.parts();
    let dist = geodesic_distances(graph);
    let nf = n as f64;
    let mut within_abs = 0.0;
    let mut dist_sq = 0.0;
    for part in &parts {
        for &i in part {
            for &j in part {
                within_abs += c[(i, j)].abs();
                let d = dist[(i, j)] as f64;
                dist_sq += d * d;
            }
        }
    }
    let lhs = within_abs / (nf * nf * params.mu * params.mu);
    let mut tv = 0.0;
    for l in 0..params.kappa_c {
        tv += eigenvector_total_variation(graph, spectrum, l)?;
    }
    let variance: f64 = parts
        .iter()
        .zip(&params.sigma_sq)
        .map(|(p, s)| p.len() as f64 * s)
        .sum::<f64>()
        / (nf * nf);
    let smoothness = dist_sq * tv / (2.0 * nf * nf * params.w_min);
    let within: usize = parts.iter().map(|p| p.len() * p.len()).sum();
    let localization = within as f64 * params.deviation_bound(model.k()) / (nf * nf);
    let rhs = variance - smoothness - localization;
    let terms = LowerBoundTerms { variance, smoothness, localization };
    Ok((BoundCheck { lhs, rhs, holds: lhs >= rhs - SLACK }, terms))
}

/// Elementwise absolute value of a matrix.
pub fn abs_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::graph::{build_knn_graph, Graph};

    fn path3() -> Arc<Graph> {
        Arc::new(Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap())
    }

    fn two_block_model(outside: f64, kernels: DMatrix<f64>) -> (LsgpModel, Partition) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random(), rng.random()]).collect();
        let graph = Arc::new(build_knn_graph(&pts, 4, None).unwrap());
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 6)).collect();
        let g = DMatrix::from_fn(12, 2, |i, c| if labels[i] == c { 1.0 } else { outside });
        let model = LsgpModel::new(graph, g, kernels).unwrap();
        (model, Partition::new(labels, 2).unwrap())
    }

    fn split_kernels(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |i, c| if (i < n / 2) == (c == 0) { 1.0 } else { 0.0 })
    }

    #[test]
    fn indicator_memberships() {
        let (model, p) = two_block_model(0.0, split_kernels(12));
        let params = extract_params(&model, &p).unwrap();
        assert_eq!(params.delta, 0.0);
        assert_eq!(params.epsilon, 0.0);
        assert!((params.mu - params.gamma).abs() < 1e-12);
        let t2 = check_elementwise_deviation(&model, &p, 0, 1).unwrap();
        assert!(t2.lhs < 1e-12 && t2.rhs == 0.0 && t2.holds);
        let t3 = check_cross_covariance(&model, &p).unwrap();
        assert!(t3.lhs < 1e-20 && t3.holds);
    }

    #[test]
    fn outside_value_sets_ratio() {
        let (model, p) = two_block_model(0.1, split_kernels(12));
        let params = extract_params(&model, &p).unwrap();
        assert!((params.localization_ratio() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_floor_is_rejected() {
        let (model, p) = two_block_model(0.1, split_kernels(12));
        let g = DMatrix::from_fn(12, 2, |i, c| if usize::from(i >= 6) == c { 0.0 } else { 1.0 });
        let model = LsgpModel::new(model.graph().clone(), g, model.kernels().clone()).unwrap();
        assert!(matches!(extract_params(&model, &p), Err(Error::MembershipFloor(_))));
    }

    #[test]
    fn single_component_is_exact() {
        let graph = path3();
        let model = LsgpModel::new(graph, DMatrix::from_element(3, 1, 0.8), DMatrix::from_column_slice(3, 1, &[1.0, 0.5, 0.2])).unwrap();
        let c = check_elementwise_deviation(&model, &Partition::single(3), 0, 0).unwrap();
        assert_eq!(c.rhs, 0.0);
        assert!(c.lhs < 1e-12);
    }

    #[test]
    fn lower_bound_on_path_by_hand() {
        let graph = path3();
        let mu = 0.7;
        let model = LsgpModel::new(graph, DMatrix::from_element(3, 1, mu), DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let (c, terms) = check_within_covariance(&model, &Partition::single(3)).unwrap();
        // u1 = (1, √2, 1)/2 on the path with degrees (1, 2, 1)
        let r2 = 2f64.sqrt();
        let lhs = ((2.0 + r2) / 2.0).powi(2) / 9.0;
        let tv = 2.0 * (0.5 - r2 / 2.0).powi(2);
        let smooth = 12.0 * tv / 18.0;
        assert!((c.lhs - lhs).abs() < 1e-12);
        assert!((terms.variance - 1.0 / 3.0).abs() < 1e-12);
        assert!((terms.smoothness - smooth).abs() < 1e-12);
        assert_eq!(terms.localization, 0.0);
        assert!(c.holds);
        assert!((c.lhs - c.rhs - (lhs - 1.0 / 3.0 + smooth)).abs() < 1e-12);
    }

    #[test]
    fn full_band_kernels_are_rejected() {
        let (model, p) = two_block_model(0.1, DMatrix::from_element(12, 2, 1.0));
        assert!(matches!(check_within_covariance(&model, &p), Err(Error::NotBandLimited(_))));
    }

    #[test]
    fn localization_term_vanishes_without_leakage() {
        let mut h = split_kernels(12);
        h[(11, 1)] = 0.0;
        let (model, p) = two_block_model(0.0, h);
        let (_, terms) = check_within_covariance(&model, &p).unwrap();
        assert_eq!(terms.localization, 0.0);
    }

    #[test]
    fn parameters_are_attained() {
        let (model, p) = two_block_model(0.2, split_kernels(12));
        let params = extract_params(&model, &p).unwrap();
        let g = model.memberships();
        let labels = p.labels();
        let attained = (0..12).any(|i| (0..2).any(|c| c != labels[i] && g[(i, c)].abs() == params.delta));
        assert!(attained);
        assert!((0..12).any(|i| g[(i, labels[i])] == params.mu));
    }

    #[test]
    fn abs_product_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let v = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let lhs = abs_matrix(&(&u * &a * v.transpose()));
            let rhs = abs_matrix(&u) * abs_matrix(&a) * abs_matrix(&v).transpose();
            assert!(lhs.iter().zip(rhs.iter()).all(|(l, r)| *l <= r + 1e-12));
        }
    }

    #[test]
    fn nonnegative_factors_preserve_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let u = DMatrix::from_fn(4, 5, |_, _| rng.random_range(0.0..1.0));
            let v = DMatrix::from_fn(3, 5, |_, _| rng.random_range(0.0..1.0));
            let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let a = b.map(|x| x + rng.random_range(0.0..1.0));
            let lo = &u * &b * v.transpose();
            let hi = &u * &a * v.transpose();
            assert!(lo.iter().zip(hi.iter()).all(|(l, h)| *l <= h + 1e-12));
        }
    }
}
