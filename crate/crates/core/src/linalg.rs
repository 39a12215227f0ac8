//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Upper shift matrix `J_n` (ones on the superdiagonal).
pub fn jordan(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

/// `e_{i+1}` in `R^n`.
pub fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().expect("nonempty matrix")
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Solves `H^T S + S H = -Q` through the Kronecker form.
pub fn lyapunov(h: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows();
    let ht = h.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(&ht) + ht.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Coefficients `c` of `Π (s - root_i) = s^m + c_1 s^{m-1} + ... + c_m`.
pub fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut p = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; p.len() + 1];
        for (k, &c) in p.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= r * c;
        }
        p = next;
    }
    p[1..].to_vec()
}
