//! Small dense linear-algebra helpers for metric-dependent inner products.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `⟨a, b⟩_g = aᵀ g b`.
pub fn inner(g: &Matrix, a: &Vector, b: &Vector) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += g[(i, j)] * b[j];
        }
        acc += a[i] * row;
    }
    acc
}

pub fn norm(g: &Matrix, a: &Vector) -> f64 {
    inner(g, a, a).max(0.0).sqrt()
}

/// Orthonormal basis of `v^⊥` (with respect to `g`) by Gram–Schmidt on the
/// coordinate vectors.
///
/// At each step the coordinate vector with the largest residual is taken;
/// ties go to the smallest index, so the result is deterministic.
pub fn perp_basis(g: &Matrix, v: &Vector) -> Vec<Vector> {
    let n = v.len();
    let mut basis: Vec<Vector> = Vec::with_capacity(n);
    let vn = norm(g, v);
    let u = v / vn;
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        let mut best: Option<(usize, Vector, f64)> = None;
        for (i, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let mut r = Vector::zeros(n);
            r[i] = 1.0;
            r -= &u * inner(g, &u, &r);
            for b in &basis {
                r -= b * inner(g, b, &r);
            }
            let rn = norm(g, &r);
            if best.as_ref().is_none_or(|(_, _, bn)| rn > *bn * (1.0 + 1e-12)) {
                best = Some((i, r, rn));
            }
        }
        let (i, mut r, _) = best.expect("dimension at least 2");
        used[i] = true;
        // second pass for numerical orthogonality
        r -= &u * inner(g, &u, &r);
        for b in &basis {
            r -= b * inner(g, b, &r);
        }
        let rn = norm(g, &r);
        r /= rn;
        basis.push(r.clone());
        out.push(r);
    }
    out
}

/// Projects `w` onto `v^⊥`; `v` need not be normalized.
pub fn project_perp(g: &Matrix, v: &Vector, w: &Vector) -> Vector {
    let vv = inner(g, v, v);
    w - v * (inner(g, v, w) / vv)
}

/// Largest singular value.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Orthonormal basis of `(T_xM, g)`: columns of `L^{-T}` with `g = L Lᵀ`.
pub fn orthonormal_frame(g: &Matrix) -> Option<Matrix> {
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    l.transpose().try_inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_basis_is_orthonormal_and_deterministic() {
        let g = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let v = Vector::from_vec(vec![0.2, -1.0, 0.4]);
        let b1 = perp_basis(&g, &v);
        let b2 = perp_basis(&g, &v);
        assert_eq!(b1, b2);
        assert_eq!(b1.len(), 2);
        for (i, a) in b1.iter().enumerate() {
            assert!(inner(&g, a, &v).abs() < 1e-13);
            for (j, b) in b1.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((inner(&g, a, b) - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn orthonormal_frame_diagonalizes_metric() {
        let g = Matrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let e = orthonormal_frame(&g).unwrap();
        let id = e.transpose() * &g * &e;
        assert!((id - Matrix::identity(2, 2)).norm() < 1e-13);
    }
}
