//! Covariance estimation from partially observed realizations and LMMSE
//! interpolation of the missing entries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::RealizationSet;

/// Condition number above which the observed block is ridge-regularized.
pub const RIDGE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    /// Co-observation counts; the diagonal holds per-vertex observation counts.
    pub pair_counts: DMatrix<usize>,
}

impl CovarianceEstimate {
    /// Vertices that were never observed.
    pub fn unobserved_vertices(&self) -> Vec<usize> {
        (0..self.pair_counts.nrows())
            .filter(|&i| self.pair_counts[(i, i)] == 0)
            .collect()
    }
}

/// Available-case sample covariance.
///
/// Each vertex is centered by the mean of its observed values; entry `(i,j)`
/// sums centered products over realizations observing both vertices and
/// divides by `n_ij − 1`. Entries with fewer than two co-observations are 0.
pub fn sample_covariance(r: &RealizationSet) -> Result<CovarianceEstimate> {
    let l = r.len();
    if l < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 realizations, got {l}")));
    }
    let n = r.n_vertices();
    let x = r.signals();
    let mut mean = vec![0.0; n];
    let mut count = vec![0usize; n];
    for row in 0..l {
        for &i in r.observed(row) {
            mean[i] += x[(row, i)];
            count[i] += 1;
        }
    }
    for i in 0..n {
        if count[i] > 0 {
            mean[i] /= count[i] as f64;
        }
    }
    let mut sums = DMatrix::<f64>::zeros(n, n);
    let mut pairs = DMatrix::<usize>::zeros(n, n);
    let mut centered = vec![0.0; n];
    for row in 0..l {
        let obs = r.observed(row);
        for &i in obs {
            centered[i] = x[(row, i)] - mean[i];
        }
        for (a, &i) in obs.iter().enumerate() {
            let ci = centered[i];
            for &j in &obs[a..] {
                sums[(i, j)] += ci * centered[j];
                pairs[(i, j)] += 1;
            }
        }
    }
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let c = pairs[(i, j)];
            let v = if c >= 2 { sums[(i, j)] / (c - 1) as f64 } else { 0.0 };
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
            pairs[(j, i)] = c;
        }
    }
    Ok(CovarianceEstimate {
        matrix,
        pair_counts: pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    /// Sorted missing vertex indices.
    pub missing: Vec<usize>,
    pub estimates: DVector<f64>,
    /// Ridge added to the observed block, if any.
    pub ridge: Option<f64>,
}

/// LMMSE estimate `ẑ = C_zy C_y⁻¹ y` of the entries of `signal` not listed in `observed`.
///
/// Values of `signal` at missing indices are ignored. `cov` may be indefinite;
/// the observed block is solved by LU and ridge-regularized only when its
/// condition number exceeds [`RIDGE_CONDITION`].
pub fn lmmse_interpolate(cov: &DMatrix<f64>, signal: &DVector<f64>, observed: &[usize]) -> Result<Interpolation> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cov.ncols(),
            context: "covariance columns",
        });
    }
    if signal.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: signal.len(),
            context: "signal length",
        });
    }
    if observed.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let mut is_obs = vec![false; n];
    for &i in observed {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, size: n });
        }
        if is_obs[i] {
            return Err(Error::InvalidArgument(format!("observed index {i} listed twice")));
        }
        is_obs[i] = true;
    }
    let obs: Vec<usize> = (0..n).filter(|&i| is_obs[i]).collect();
    let missing: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();
    if missing.is_empty() {
        return Ok(Interpolation {
            missing,
            estimates: DVector::zeros(0),
            ridge: None,
        });
    }
    let mut cy = linalg::select(cov, &obs, &obs);
    let czy = linalg::select(cov, &missing, &obs);
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| signal[i]));

    let eig = SymmetricEigen::new(linalg::symmetrize(&cy));
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let cond = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
    let mut ridge = None;
    if cond > RIDGE_CONDITION {
        let scale = cy.trace().abs() / obs.len() as f64;
        let eps = 1e-8 * if scale > 0.0 { scale } else { 1.0 };
        for i in 0..obs.len() {
            cy[(i, i)] += eps;
        }
        ridge = Some(eps);
    }
    let solved = cy
        .lu()
        .solve(&y)
        .ok_or_else(|| Error::Singular("observed covariance block".into()))?;
    Ok(Interpolation {
        missing,
        estimates: czy * solved,
        ridge,
    })
}

/// Interpolates every realization of `r` under `cov`.
pub fn interpolate_all(cov: &DMatrix<f64>, r: &RealizationSet) -> Result<Vec<Interpolation>> {
    (0..r.len())
        .map(|l| lmmse_interpolate(cov, &r.row_filled(l), r.observed(l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_signals_give_zero_covariance() {
        let r = RealizationSet::fully_observed(DMatrix::zeros(5, 4)).unwrap();
        let c = sample_covariance(&r).unwrap();
        assert_eq!(c.matrix, DMatrix::zeros(4, 4));
        assert_eq!(c.pair_counts, DMatrix::from_element(4, 4, 5));
    }

    #[test]
    fn full_data_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 6, |_, _| rng.random_range(-2.0..2.0));
        let r = RealizationSet::fully_observed(x.clone()).unwrap();
        let c = sample_covariance(&r).unwrap();
        let mean = x.row_mean();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        let dense = xc.transpose() * &xc / 39.0;
        assert!((c.matrix - dense).norm() < 1e-12);
    }

    #[test]
    fn missing_pairs_are_flagged() {
        let rows = vec![
            vec![Some(1.0), None, Some(2.0)],
            vec![Some(-1.0), None, Some(0.5)],
            vec![Some(0.0), None, None],
        ];
        let r = RealizationSet::from_rows(&rows, 3).unwrap();
        let c = sample_covariance(&r).unwrap();
        assert_eq!(c.unobserved_vertices(), vec![1]);
        assert_eq!(c.pair_counts[(0, 2)], 2);
        assert_eq!(c.pair_counts[(2, 0)], 2);
        assert_eq!(c.matrix[(0, 1)], 0.0);
        assert_eq!(c.pair_counts[(0, 0)], 3);
    }

    #[test]
    fn identity_covariance_predicts_zero() {
        let c = DMatrix::identity(4, 4);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let out = lmmse_interpolate(&c, &x, &[0, 2]).unwrap();
        assert_eq!(out.missing, vec![1, 3]);
        assert_eq!(out.estimates, DVector::zeros(2));
    }

    #[test]
    fn scalar_wiener() {
        let rho = 0.6;
        let c = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let x = DVector::from_vec(vec![0.0, 2.5]);
        let out = lmmse_interpolate(&c, &x, &[1]).unwrap();
        assert!((out.estimates[0] - rho * 2.5).abs() < 1e-15);
    }

    #[test]
    fn empty_and_full_observation() {
        let c = DMatrix::identity(3, 3);
        let x = DVector::zeros(3);
        assert!(matches!(lmmse_interpolate(&c, &x, &[]), Err(Error::EmptyObservation)));
        assert_eq!(lmmse_interpolate(&c, &x, &[0, 1, 2]).unwrap().estimates.len(), 0);
    }

    #[test]
    fn exact_when_missing_is_linear_in_observed() {
        // x = A w with w in R^2; vertex 2 = x0 + x1 exactly
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.3, 1.0, 1.3, 1.0]);
        let c = &a * a.transpose();
        let w = DVector::from_vec(vec![0.7, -1.1]);
        let x = &a * w;
        let out = lmmse_interpolate(&c, &x, &[0, 1]).unwrap();
        assert!((out.estimates[0] - x[2]).abs() < 1e-12);
    }

    #[test]
    fn observed_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let c = &a * a.transpose();
        let x = DVector::from_fn(6, |i, _| i as f64);
        let p = lmmse_interpolate(&c, &x, &[0, 3, 4, 5]).unwrap();
        let q = lmmse_interpolate(&c, &x, &[5, 4, 0, 3]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn singular_block_gets_ridge() {
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let c = &v * v.transpose();
        let x = DVector::from_vec(vec![2.0, 2.0, 0.0]);
        let out = lmmse_interpolate(&c, &x, &[0, 1]).unwrap();
        assert!(out.ridge.is_some());
        assert!((out.estimates[0] - 2.0).abs() < 1e-6);
    }
}
