//! Small dense linear-algebra helpers shared across modules.

use crate::scalar::{r, Real};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub type CMatrix<T> = DMatrix<Complex<T>>;

/// Kronecker product of complex matrices (row-major index convention:
/// the first factor is the slow index).
pub fn kron<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMatrix::<T>::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij == Complex::new(T::zero(), T::zero()) {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Operator 2-norm estimate by power iteration on A^H A with a deterministic
/// start vector. Accurate to a few digits, which is what residual checks need.
pub fn op_norm<T: Real>(a: &CMatrix<T>) -> T {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return T::zero();
    }
    let mut v = DVector::<Complex<T>>::from_fn(cols, |i, _| {
        Complex::new(r::<T>(1.0) / (r::<T>(1.0) + crate::scalar::ru::<T>(i)), r(0.17))
    });
    let mut nrm = v.norm();
    if nrm == T::zero() {
        return T::zero();
    }
    v /= Complex::new(nrm, T::zero());
    let mut sigma = T::zero();
    for _ in 0..80 {
        let w = a * &v;
        let u = a.adjoint() * w;
        nrm = u.norm();
        if nrm == T::zero() {
            return T::zero();
        }
        let next = nrm.sqrt();
        let rel = (next - sigma).abs() / next.max(T::one());
        sigma = next;
        v = u / Complex::new(nrm, T::zero());
        if rel < r(1e-13) {
            break;
        }
    }
    sigma
}

/// Operator 2-norm of a real matrix.
pub fn op_norm_real<T: Real>(a: &DMatrix<T>) -> T {
    let c = a.map(|x| Complex::new(x, T::zero()));
    op_norm(&c)
}

/// Frobenius norm of a complex matrix.
pub fn fro_norm<T: Real>(a: &CMatrix<T>) -> T {
    a.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// Unitary polar alignment: for frames stored as columns of `cur` and `prev`
/// (same shape, complex), returns `cur * W` with W unitary minimizing
/// ||cur W - prev||_F (complex orthogonal Procrustes).
pub fn procrustes_align<T: Real>(cur: &CMatrix<T>, prev: &CMatrix<T>) -> CMatrix<T> {
    let c = cur.adjoint() * prev; // m x m overlap
    let svd = c.svd(true, true);
    let u = svd.u.expect("svd with vectors");
    let vt = svd.v_t.expect("svd with vectors");
    let w = u * vt;
    cur * w
}

/// Hermitian residual max |A - A^H| entry.
pub fn hermitian_defect<T: Real>(a: &CMatrix<T>) -> T {
    let d = a - a.adjoint();
    d.iter().fold(T::zero(), |m, &z| m.max(crate::scalar::cmod(z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn op_norm_matches_known_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0f64, 0.0, 0.0, -7.0])
            .map(|x| Complex::new(x, 0.0));
        assert_abs_diff_eq!(op_norm(&a), 7.0, epsilon = 1e-9);
    }

    #[test]
    fn kron_shapes_and_values() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0f64, 2.0, 0.0, 1.0]).map(|x| Complex::new(x, 0.0));
        let b = DMatrix::from_row_slice(2, 2, &[0.0f64, 1.0, 1.0, 0.0]).map(|x| Complex::new(x, 0.0));
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 4));
        assert_abs_diff_eq!(k[(0, 3)].re, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(k[(0, 1)].re, 1.0, epsilon = 1e-14);
    }
}
