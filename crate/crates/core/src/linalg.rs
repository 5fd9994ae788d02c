//! Dense symmetric helpers shared by the spectral, learning and bound modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
///
/// Each eigenvector column is sign-normalized so its largest-magnitude entry
/// is positive (first such entry on ties), which makes results reproducible
/// across runs even for repeated eigenvalues.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        canonical_sign(&mut v);
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Flip `v` so its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    if let Some(idx) = argmax_abs(v.as_slice()) {
        if v[idx] < 0.0 {
            v.neg_mut();
        }
    }
}

/// Index of the first entry with the largest absolute value.
pub fn argmax_abs(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        let a = x.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Nearest positive semi-definite matrix in Frobenius norm.
///
/// The input is symmetrized first; negative eigenvalues are clipped to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &s) in clipped.iter().enumerate() {
        scaled.column_mut(j).scale_mut(s);
    }
    symmetrize(&(scaled * v.transpose()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Submatrix with the given rows and columns, in the given order.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}
