//! Hermite-basis realizations of the infinite-dimensional representations:
//! ladder matrices, the oscillator part of the sub-Laplacian, spectral
//! projections, group elements via Gauss-Hermite quadrature, and the
//! tensor-product operator identities.
//!
//! Basis: products of the orthonormal Hermite functions, indexed by
//! multi-indices alpha in {0..n-1}^d in lexicographic order (first mode is
//! the most significant digit).

use crate::algebra::{GroupPoint, StepTwoAlgebra};
use crate::dual::BlockForm;
use crate::error::Error;
use crate::linalg::{kron, op_norm, CMatrix};
use crate::quadrature::{gauss_hermite_modified, hermite_functions};
use crate::scalar::{r, Real};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

/// Truncated multi-mode Hermite basis: `d` modes, `n` levels per mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub d: usize,
    pub n: usize,
}

impl Truncation {
    pub fn new(d: usize, n: usize) -> Self {
        assert!(d >= 1 && n >= 1);
        Self { d, n }
    }

    pub fn dim(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Lexicographic index of a multi-index.
    pub fn index_of(&self, alpha: &[usize]) -> usize {
        debug_assert_eq!(alpha.len(), self.d);
        alpha.iter().fold(0, |acc, &a| {
            debug_assert!(a < self.n);
            acc * self.n + a
        })
    }

    /// Multi-index of a lexicographic index.
    pub fn alpha_of(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.d];
        for j in (0..self.d).rev() {
            out[j] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn alphas(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.dim()).map(|i| self.alpha_of(i))
    }

    /// Mask of multi-indices unaffected by `depth` ladder steps:
    /// all alpha_j <= n - 1 - depth.
    pub fn interior_mask(&self, depth: usize) -> Vec<bool> {
        (0..self.dim())
            .map(|i| {
                self.alpha_of(i)
                    .iter()
                    .all(|&a| a + depth <= self.n.saturating_sub(1))
            })
            .collect()
    }
}

/// An operator on the truncated Hermite basis. `depth` records how many
/// ladder steps the operator moves, for interior-block masking.
#[derive(Clone, Debug)]
pub struct RepOperator<T: Real> {
    pub mat: CMatrix<T>,
    pub trunc: Truncation,
    pub depth: usize,
}

impl<T: Real> RepOperator<T> {
    pub fn zero(trunc: Truncation) -> Self {
        Self {
            mat: CMatrix::zeros(trunc.dim(), trunc.dim()),
            trunc,
            depth: 0,
        }
    }

    pub fn identity(trunc: Truncation) -> Self {
        Self {
            mat: CMatrix::identity(trunc.dim(), trunc.dim()),
            trunc,
            depth: 0,
        }
    }

    /// Interior mask for formally skew-adjoint generators (one ladder step).
    pub fn interior_mask(&self) -> Vec<bool> {
        self.trunc.interior_mask(self.depth.max(1))
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat * &other.mat - &other.mat * &self.mat,
            trunc: self.trunc,
            depth: self.depth + other.depth,
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat * &other.mat,
            trunc: self.trunc,
            depth: self.depth + other.depth,
        }
    }

    /// Operator norm of the matrix restricted to rows and columns where
    /// `mask` is true.
    pub fn masked_norm(&self, mask: &[bool]) -> T {
        masked_norm(&self.mat, mask, mask)
    }
}

pub fn masked_norm<T: Real>(m: &CMatrix<T>, rows: &[bool], cols: &[bool]) -> T {
    let ri: Vec<usize> = (0..m.nrows()).filter(|&i| rows[i]).collect();
    let ci: Vec<usize> = (0..m.ncols()).filter(|&j| cols[j]).collect();
    if ri.is_empty() || ci.is_empty() {
        return T::zero();
    }
    let sub = CMatrix::<T>::from_fn(ri.len(), ci.len(), |a, b| m[(ri[a], ci[b])]);
    op_norm(&sub)
}

// ---- one-dimensional building blocks ----

/// <h_m, xi h_n>: sqrt(n/2) at m = n-1, sqrt((n+1)/2) at m = n+1.
pub fn xi_matrix<T: Real>(n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(n, n);
    for col in 1..n {
        m[(col - 1, col)] = (crate::scalar::ru::<T>(col) / r(2.0)).sqrt();
    }
    for col in 0..n - 1 {
        m[(col + 1, col)] = (crate::scalar::ru::<T>(col + 1) / r(2.0)).sqrt();
    }
    m
}

/// <h_m, d/dxi h_n>: sqrt(n/2) at m = n-1, -sqrt((n+1)/2) at m = n+1.
pub fn deriv_matrix<T: Real>(n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(n, n);
    for col in 1..n {
        m[(col - 1, col)] = (crate::scalar::ru::<T>(col) / r(2.0)).sqrt();
    }
    for col in 0..n - 1 {
        m[(col + 1, col)] = -(crate::scalar::ru::<T>(col + 1) / r(2.0)).sqrt();
    }
    m
}

/// Places a one-dimensional operator in mode `j` of the tensor basis.
fn lift_mode<T: Real>(trunc: Truncation, j: usize, one_d: &CMatrix<T>) -> CMatrix<T> {
    let dim = trunc.dim();
    let n = trunc.n;
    let mut out = CMatrix::zeros(dim, dim);
    // stride of mode j in the lexicographic index
    let stride = n.pow((trunc.d - 1 - j) as u32);
    let blocks = dim / (n * stride);
    for b in 0..blocks {
        for inner in 0..stride {
            let base = b * n * stride + inner;
            for row in 0..n {
                for col in 0..n {
                    let v = one_d[(row, col)];
                    if v != Complex::new(T::zero(), T::zero()) {
                        out[(base + row * stride, base + col * stride)] = v;
                    }
                }
            }
        }
    }
    out
}

fn check_mode<T: Real>(bf: &BlockForm<T>, trunc: Truncation, j: usize) -> Result<()> {
    if trunc.d != bf.d {
        return Err(Error::DimensionMismatch {
            what: "truncation modes",
            expected: bf.d,
            got: trunc.d,
        });
    }
    if j >= bf.d {
        return Err(Error::InvalidArgument(format!(
            "mode index {j} out of range for d = {}",
            bf.d
        )));
    }
    Ok(())
}

/// pi(P_j) = sqrt(eta_j) d/dxi_j.
pub fn op_p<T: Real>(bf: &BlockForm<T>, trunc: Truncation, j: usize) -> Result<RepOperator<T>> {
    check_mode(bf, trunc, j)?;
    let s = bf.eta[j].sqrt();
    let m = deriv_matrix::<T>(trunc.n).map(|x| Complex::new(s * x, T::zero()));
    Ok(RepOperator {
        mat: lift_mode(trunc, j, &m),
        trunc,
        depth: 1,
    })
}

/// pi(Q_j) = i sqrt(eta_j) xi_j.
pub fn op_q<T: Real>(bf: &BlockForm<T>, trunc: Truncation, j: usize) -> Result<RepOperator<T>> {
    check_mode(bf, trunc, j)?;
    let s = bf.eta[j].sqrt();
    let m = xi_matrix::<T>(trunc.n).map(|x| Complex::new(T::zero(), s * x));
    Ok(RepOperator {
        mat: lift_mode(trunc, j, &m),
        trunc,
        depth: 1,
    })
}

/// Lowering field W_j = (P_j - i Q_j)/2, assembled from the closed-form
/// one-step matrix elements.
pub fn op_w<T: Real>(bf: &BlockForm<T>, trunc: Truncation, j: usize) -> Result<RepOperator<T>> {
    check_mode(bf, trunc, j)?;
    let mut m = CMatrix::<T>::zeros(trunc.n, trunc.n);
    for col in 1..trunc.n {
        let v = (bf.eta[j] / r(2.0)).sqrt() * crate::scalar::ru::<T>(col).sqrt();
        m[(col - 1, col)] = Complex::new(v, T::zero());
    }
    Ok(RepOperator {
        mat: lift_mode(trunc, j, &m),
        trunc,
        depth: 1,
    })
}

/// Raising field Wbar_j = (P_j + i Q_j)/2.
pub fn op_wbar<T: Real>(bf: &BlockForm<T>, trunc: Truncation, j: usize) -> Result<RepOperator<T>> {
    check_mode(bf, trunc, j)?;
    let mut m = CMatrix::<T>::zeros(trunc.n, trunc.n);
    for col in 0..trunc.n - 1 {
        let v = -(bf.eta[j] / r(2.0)).sqrt() * crate::scalar::ru::<T>(col + 1).sqrt();
        m[(col + 1, col)] = Complex::new(v, T::zero());
    }
    Ok(RepOperator {
        mat: lift_mode(trunc, j, &m),
        trunc,
        depth: 1,
    })
}

/// Sparse triplets (row, col, value) of pi(W_j) on a possibly huge
/// truncation, straight from the one-step closed form.
pub fn op_w_triplets<T: Real>(
    bf: &BlockForm<T>,
    trunc: Truncation,
    j: usize,
) -> Result<Vec<(usize, usize, Complex<T>)>> {
    check_mode(bf, trunc, j)?;
    let scale = (bf.eta[j] / r(2.0)).sqrt();
    let mut out = Vec::new();
    for (idx, alpha) in trunc.alphas().enumerate() {
        if alpha[j] >= 1 {
            let mut beta = alpha.clone();
            beta[j] -= 1;
            out.push((
                trunc.index_of(&beta),
                idx,
                Complex::new(scale * crate::scalar::ru::<T>(alpha[j]).sqrt(), T::zero()),
            ));
        }
    }
    Ok(out)
}

/// Sparse triplets of (P_j - i Q_j)/2 assembled from the recurrence matrices
/// of xi and d/dxi (the independent route against [`op_w_triplets`]).
pub fn half_p_minus_iq_triplets<T: Real>(
    bf: &BlockForm<T>,
    trunc: Truncation,
    j: usize,
) -> Result<Vec<(usize, usize, Complex<T>)>> {
    check_mode(bf, trunc, j)?;
    let s = bf.eta[j].sqrt();
    let half = r::<T>(0.5);
    let xi = xi_matrix::<T>(trunc.n);
    let dv = deriv_matrix::<T>(trunc.n);
    let mut out = Vec::new();
    for (idx, alpha) in trunc.alphas().enumerate() {
        for (m, _) in [(alpha[j].wrapping_sub(1), ()), (alpha[j] + 1, ())] {
            if m >= trunc.n {
                continue;
            }
            // value = (s dv[m, a] - i * i s xi[m, a]) / 2 = s (dv + xi)[m,a] / 2
            let v = half * s * (dv[(m, alpha[j])] + xi[(m, alpha[j])]);
            if v != T::zero() {
                let mut beta = alpha.clone();
                beta[j] = m;
                out.push((trunc.index_of(&beta), idx, Complex::new(v, T::zero())));
            }
        }
    }
    Ok(out)
}

/// pi^{lambda,nu}(-L) = H(lambda) + |nu|^2: diagonal with entries
/// zeta(alpha, lambda) + |nu|^2.
pub fn op_sublaplacian<T: Real>(
    bf: &BlockForm<T>,
    nu: &DVector<T>,
    trunc: Truncation,
) -> Result<RepOperator<T>> {
    if nu.len() != bf.k {
        return Err(Error::DimensionMismatch {
            what: "nu",
            expected: bf.k,
            got: nu.len(),
        });
    }
    if trunc.d != bf.d {
        return Err(Error::DimensionMismatch {
            what: "truncation modes",
            expected: bf.d,
            got: trunc.d,
        });
    }
    let nu2 = nu.norm_squared();
    let dim = trunc.dim();
    let mut m = CMatrix::<T>::zeros(dim, dim);
    for (idx, alpha) in trunc.alphas().enumerate() {
        m[(idx, idx)] = Complex::new(bf.zeta(&alpha)? + nu2, T::zero());
    }
    Ok(RepOperator {
        mat: m,
        trunc,
        depth: 0,
    })
}

/// Spectral projection onto { alpha : |zeta(alpha) - zeta| <= tol max(1, zeta) }.
/// The empty selection returns the zero matrix.
pub fn spectral_projection<T: Real>(
    bf: &BlockForm<T>,
    trunc: Truncation,
    zeta: T,
    tol: T,
) -> Result<RepOperator<T>> {
    if trunc.d != bf.d {
        return Err(Error::DimensionMismatch {
            what: "truncation modes",
            expected: bf.d,
            got: trunc.d,
        });
    }
    let dim = trunc.dim();
    let mut m = CMatrix::<T>::zeros(dim, dim);
    let cut = tol * T::one().max(zeta.abs());
    for (idx, alpha) in trunc.alphas().enumerate() {
        if (bf.zeta(&alpha)? - zeta).abs() <= cut {
            m[(idx, idx)] = Complex::new(T::one(), T::zero());
        }
    }
    Ok(RepOperator {
        mat: m,
        trunc,
        depth: 0,
    })
}

/// The zeta values present in the truncated spectrum, deduplicated at
/// relative tolerance.
pub fn truncated_spectrum<T: Real>(bf: &BlockForm<T>, trunc: Truncation, tol: T) -> Vec<T> {
    let mut vals: Vec<T> = trunc
        .alphas()
        .map(|a| bf.zeta(&a).expect("alpha conforms"))
        .collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite zeta"));
    let mut out: Vec<T> = Vec::new();
    for v in vals {
        if out
            .last()
            .map(|&l| (v - l).abs() > tol * T::one().max(v.abs()))
            .unwrap_or(true)
        {
            out.push(v);
        }
    }
    out
}

// ---- group elements ----

/// Matrix of pi^{lambda,nu}(x) by Gauss-Hermite quadrature.
///
/// x = exp(P + Q + R + Z) is decomposed in the block frame; with coordinates
/// p, q, rho and the scalar phase
///   theta = lambda(Z) + nu(rho) + (1/2) sum_j eta_j p_j q_j,
/// the matrix is the tensor product over modes of the one-dimensional
/// integrals  int h_m(t - s_j/2) h_n(t + s_j/2) e^{i c_j t} dt  with
/// s_j = sqrt(eta_j) p_j and c_j = sqrt(eta_j) q_j, times
/// exp(i(theta - sum_j c_j s_j / 2)).
pub fn op_group_element<T: Real>(
    alg: &StepTwoAlgebra<T>,
    bf: &BlockForm<T>,
    lambda: &DVector<T>,
    nu: &DVector<T>,
    trunc: Truncation,
    x: &GroupPoint<T>,
    quad_order: usize,
) -> Result<RepOperator<T>> {
    if trunc.d != bf.d {
        return Err(Error::DimensionMismatch {
            what: "truncation modes",
            expected: bf.d,
            got: trunc.d,
        });
    }
    if nu.len() != bf.k {
        return Err(Error::DimensionMismatch {
            what: "nu",
            expected: bf.k,
            got: nu.len(),
        });
    }
    if x.v.len() != alg.q() || x.z.len() != alg.p() {
        return Err(Error::DimensionMismatch {
            what: "group point",
            expected: alg.q(),
            got: x.v.len(),
        });
    }
    if quad_order < trunc.n + 8 {
        return Err(Error::QuadratureDefect {
            what: "group element quadrature order",
            defect: quad_order as f64,
            threshold: (trunc.n + 8) as f64,
        });
    }
    // frame coordinates
    let pc = bf.p.transpose() * &x.v;
    let qc = bf.q.transpose() * &x.v;
    let rc = bf.rad.transpose() * &x.v;
    let mut theta = lambda.dot(&x.z) + nu.dot(&rc);
    for j in 0..bf.d {
        theta += bf.eta[j] * pc[j] * qc[j] / r(2.0);
    }
    let rule = gauss_hermite_modified::<T>(quad_order);
    let mut factors: Vec<CMatrix<T>> = Vec::with_capacity(bf.d);
    for j in 0..bf.d {
        let s = bf.eta[j].sqrt() * pc[j];
        let c = bf.eta[j].sqrt() * qc[j];
        theta -= c * s / r(2.0);
        let n = trunc.n;
        let mut m = CMatrix::<T>::zeros(n, n);
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let hb = hermite_functions(n, t - s / r(2.0));
            let ha = hermite_functions(n, t + s / r(2.0));
            let osc = crate::scalar::cis(c * t) * Complex::new(w, T::zero());
            for row in 0..n {
                let x = osc * Complex::new(hb[row], T::zero());
                for col in 0..n {
                    m[(row, col)] += x * Complex::new(ha[col], T::zero());
                }
            }
        }
        factors.push(m);
    }
    let phase = crate::scalar::cis(theta);
    let mut mat = factors[0].clone();
    for f in &factors[1..] {
        mat = kron(&mat, f);
    }
    mat *= phase;
    Ok(RepOperator {
        mat,
        trunc,
        depth: trunc.n, // full-bandwidth operator: no ladder-depth structure
    })
}

/// Unitarity defect of a group-element matrix on the margin-masked interior:
/// || (U^H U - I) restricted ||.
pub fn unitarity_defect<T: Real>(u: &RepOperator<T>, margin: usize) -> T {
    let dim = u.trunc.dim();
    let g = u.mat.adjoint() * &u.mat - CMatrix::<T>::identity(dim, dim);
    let mask = u.trunc.interior_mask(margin);
    masked_norm(&g, &mask, &mask)
}

// ---- tensor-product identities ----

/// Report of the tensor-product operator identity checks at one lambda.
#[derive(Clone, Debug)]
pub struct TOperatorReport {
    pub lambda: Vec<f64>,
    pub lambda_second: Vec<f64>,
    /// || [T, I (x) pi(-L)] - V . pi(V) ||
    pub residual_commutation: f64,
    /// max over sampled zeta of the projected product identity residual
    pub residual_projected: f64,
    /// same with the gradient from finite differences instead of brackets
    pub residual_projected_fd: f64,
    pub zetas_tested: usize,
}

/// First-leg representation of an arbitrary first-stratum vector u:
/// pi1(u) = sum_j (u . P'_j) pi1(P'_j) + (u . Q'_j) pi1(Q'_j) + i (u . R'_l) nu'_l.
fn first_leg_vector<T: Real>(
    bf1: &BlockForm<T>,
    nu1: &DVector<T>,
    trunc1: Truncation,
    u: &DVector<T>,
) -> Result<CMatrix<T>> {
    let dim = trunc1.dim();
    let mut out = CMatrix::<T>::zeros(dim, dim);
    for j in 0..bf1.d {
        let cp = bf1.p.column(j).dot(u);
        let cq = bf1.q.column(j).dot(u);
        if cp != T::zero() {
            out += op_p(bf1, trunc1, j)?.mat * Complex::new(cp, T::zero());
        }
        if cq != T::zero() {
            out += op_q(bf1, trunc1, j)?.mat * Complex::new(cq, T::zero());
        }
    }
    for l in 0..bf1.k {
        let cr = bf1.rad.column(l).dot(u);
        if cr != T::zero() {
            out += CMatrix::<T>::identity(dim, dim) * Complex::new(T::zero(), cr * nu1[l]);
        }
    }
    Ok(out)
}

/// Verifies the enveloping-algebra identities behind the flow generators on
/// a tensor product of two Hermite realizations. The second leg carries the
/// lambda under test (which must have trivial radical and simple eta
/// clusters); the first leg is an independent representation at
/// (lambda', nu').
pub fn t_operator_check<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    trunc: Truncation,
    lambda_second: &DVector<T>,
    trunc_first: Truncation,
    tol: T,
) -> Result<TOperatorReport> {
    let bf = crate::dual::block_form(alg, lambda, tol)?;
    if bf.k != 0 {
        return Err(Error::RadicalNotTrivial(bf.k));
    }
    if bf.eta_clusters(r(1e-6)).len() != bf.d {
        return Err(Error::InvalidArgument(
            "projected identity needs simple eta clusters; move lambda into the generic stratum"
                .into(),
        ));
    }
    let bf1 = crate::dual::block_form(alg, lambda_second, tol)?;
    if bf1.k != 0 {
        return Err(Error::RadicalNotTrivial(bf1.k));
    }
    let nu1 = DVector::<T>::zeros(0);
    let dim1 = trunc_first.dim();
    let dim2 = trunc.dim();
    let id1 = CMatrix::<T>::identity(dim1, dim1);

    // first-leg matrices of the lambda-frame ladder fields
    let mut pi1_w: Vec<CMatrix<T>> = Vec::with_capacity(bf.d);
    let mut pi1_wb: Vec<CMatrix<T>> = Vec::with_capacity(bf.d);
    for j in 0..bf.d {
        let pj = bf.p.column(j).clone_owned();
        let qj = bf.q.column(j).clone_owned();
        let p1 = first_leg_vector(&bf1, &nu1, trunc_first, &pj)?;
        let q1 = first_leg_vector(&bf1, &nu1, trunc_first, &qj)?;
        let half = Complex::new(r::<T>(0.5), T::zero());
        let i = Complex::new(T::zero(), T::one());
        pi1_w.push((&p1 - &q1 * i) * half);
        pi1_wb.push((&p1 + &q1 * i) * half);
    }

    // T = sum_j eta_j^{-1} (pi1(Wbar_j) (x) pi2(W_j) - pi1(W_j) (x) pi2(Wbar_j))
    let mut t_op = CMatrix::<T>::zeros(dim1 * dim2, dim1 * dim2);
    for j in 0..bf.d {
        let w2 = op_w(&bf, trunc, j)?.mat;
        let wb2 = op_wbar(&bf, trunc, j)?.mat;
        let inv = Complex::new(T::one() / bf.eta[j], T::zero());
        t_op += (kron(&pi1_wb[j], &w2) - kron(&pi1_w[j], &wb2)) * inv;
    }

    // V . pi(V) = sum_i pi1(V_i) (x) pi2(V_i)
    let mut vdotv = CMatrix::<T>::zeros(dim1 * dim2, dim1 * dim2);
    let mut pi1_basis: Vec<CMatrix<T>> = Vec::with_capacity(alg.q());
    for i in 0..alg.q() {
        let mut e = DVector::<T>::zeros(alg.q());
        e[i] = T::one();
        pi1_basis.push(first_leg_vector(&bf1, &nu1, trunc_first, &e)?);
    }
    for i in 0..alg.q() {
        let mut e = DVector::<T>::zeros(alg.q());
        e[i] = T::one();
        let second = first_leg_vector(&bf, &DVector::zeros(0), trunc, &e)?;
        vdotv += kron(&pi1_basis[i], &second);
    }

    let negl2 = op_sublaplacian(&bf, &DVector::zeros(0), trunc)?.mat;
    let lifted_l = kron(&id1, &negl2);
    let comm = &t_op * &lifted_l - &lifted_l * &t_op;
    let resid1 = &comm - &vdotv;
    let scale = op_norm(&vdotv).max(T::one());
    let residual_commutation = (op_norm(&resid1) / scale).to_f64().unwrap_or(f64::NAN);

    // projected identity on sampled interior zetas
    let prod = &vdotv * &t_op;
    // first-leg -L matrix and masks
    let mut pi1_l = CMatrix::<T>::zeros(dim1, dim1);
    for b in &pi1_basis {
        pi1_l += b * b;
    }
    let mask1 = trunc_first.interior_mask(2);
    let quarter = Complex::new(r::<T>(0.25), T::zero());
    let gradzeta_cols = crate::dual::grad_eta_bracket(alg, &bf)?;
    let gradzeta_fd = crate::dual::grad_eta_fd(alg, lambda, r(1e-5), tol)?;

    let mut residual_projected = T::zero();
    let mut residual_projected_fd = T::zero();
    let mut zetas_tested = 0usize;
    for alpha in trunc.alphas() {
        if !alpha.iter().all(|&a| a + 2 <= trunc.n - 1) {
            continue;
        }
        // only nondegenerate zeta labels
        let z = bf.zeta(&alpha)?;
        let degenerate = trunc.alphas().any(|other| {
            other != alpha && (bf.zeta(&other).unwrap() - z).abs() <= r::<T>(1e-9) * z.max(T::one())
        });
        if degenerate {
            continue;
        }
        zetas_tested += 1;
        let pz = spectral_projection(&bf, trunc, z, r(1e-9))?.mat;
        let lifted_pz = kron(&id1, &pz);
        let lhs = &lifted_pz * &prod * &lifted_pz;
        for (use_fd, acc) in [
            (false, &mut residual_projected),
            (true, &mut residual_projected_fd),
        ] {
            let mut grad = DVector::<T>::zeros(alg.p());
            for j in 0..bf.d {
                let col = if use_fd {
                    gradzeta_fd.column(j)
                } else {
                    gradzeta_cols.column(j)
                };
                grad += col * r::<T>(2.0 * alpha[j] as f64 + 1.0);
            }
            let shift = lambda_second.dot(&grad);
            let first = (&pi1_l * quarter)
                + CMatrix::<T>::identity(dim1, dim1)
                    * Complex::new(shift / r::<T>(4.0), T::zero());
            let rhs = kron(&first, &pz);
            let resid = &lhs - &rhs;
            // mask: first-leg interior depth 2, second-leg rows/cols in the
            // zeta eigenspace (already projected)
            let full_mask: Vec<bool> = (0..dim1 * dim2)
                .map(|i| mask1[i / dim2])
                .collect();
            let rnorm = masked_norm(&resid, &full_mask, &full_mask) / scale;
            *acc = acc.max(rnorm);
        }
        if zetas_tested >= 6 {
            break;
        }
    }

    Ok(TOperatorReport {
        lambda: lambda.iter().map(|x| x.to_f64().unwrap()).collect(),
        lambda_second: lambda_second.iter().map(|x| x.to_f64().unwrap()).collect(),
        residual_commutation,
        residual_projected: residual_projected.to_f64().unwrap_or(f64::NAN),
        residual_projected_fd: residual_projected_fd.to_f64().unwrap_or(f64::NAN),
        zetas_tested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::StepTwoAlgebra;
    use crate::dual::block_form;
    use approx::assert_abs_diff_eq;

    fn vecd(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    const TOL: f64 = 1e-9;

    #[test]
    fn truncation_index_round_trip() {
        let t = Truncation::new(3, 5);
        assert_eq!(t.dim(), 125);
        for i in 0..t.dim() {
            assert_eq!(t.index_of(&t.alpha_of(i)), i);
        }
    }

    #[test]
    fn xi_matrix_element_example() {
        // d=1, N=3, eta=2: <h0, pi(Q) h1> = i sqrt(2) sqrt(1/2) = i
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[2.0]), TOL).unwrap();
        let q = op_q(&bf, Truncation::new(1, 3), 0).unwrap();
        assert_abs_diff_eq!(q.mat[(0, 1)].im, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q.mat[(0, 1)].re, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn p_parity_on_ground_state() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[1.5]), TOL).unwrap();
        let p = op_p(&bf, Truncation::new(1, 6), 0).unwrap();
        assert_eq!(p.mat[(0, 0)], Complex::new(0.0, 0.0));
    }

    #[test]
    fn xi_and_deriv_match_quadrature() {
        // cross-check recurrence entries against Gauss-Hermite quadrature
        let n = 8;
        let rule = gauss_hermite_modified::<f64>(64);
        let xi = xi_matrix::<f64>(n);
        let mut quad = DMatrix::<f64>::zeros(n, n);
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let h = hermite_functions(n, t);
            for a in 0..n {
                for b in 0..n {
                    quad[(a, b)] += w * h[a] * t * h[b];
                }
            }
        }
        assert!((xi - quad).norm() < 1e-12);
    }

    #[test]
    fn canonical_commutator_is_i_eta() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[1.7]), TOL).unwrap();
        let t = Truncation::new(1, 14);
        let p = op_p(&bf, t, 0).unwrap();
        let q = op_q(&bf, t, 0).unwrap();
        let c = p.commutator(&q);
        let mask = t.interior_mask(2);
        let dim = t.dim();
        let expect =
            CMatrix::<f64>::identity(dim, dim) * Complex::new(0.0, 1.7);
        let diff = &c.mat - &expect;
        assert!(masked_norm(&diff, &mask, &mask) < 1e-12);
    }

    #[test]
    fn ladder_matrix_elements_closed_form() {
        // eta = 2: pi(W) h_1 = h_0, pi(W) h_0 = 0
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[2.0]), TOL).unwrap();
        let t = Truncation::new(1, 5);
        let w = op_w(&bf, t, 0).unwrap();
        assert_abs_diff_eq!(w.mat[(0, 1)].re, 1.0, epsilon = 1e-15);
        assert!(w.mat.column(0).iter().all(|z| z.norm() == 0.0));
        // wbar raises with the minus sign
        let wb = op_wbar(&bf, t, 0).unwrap();
        assert_abs_diff_eq!(wb.mat[(1, 0)].re, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn w_equals_half_p_minus_iq() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[0.8, 1.9]), TOL).unwrap();
        let t = Truncation::new(2, 6);
        for j in 0..2 {
            let w = op_w(&bf, t, j).unwrap();
            let p = op_p(&bf, t, j).unwrap();
            let q = op_q(&bf, t, j).unwrap();
            let built = (p.mat + q.mat * Complex::new(0.0, -1.0)) * Complex::new(0.5, 0.0);
            assert!((w.mat - built).norm() < 1e-14);
        }
    }

    #[test]
    fn sublaplacian_diagonal() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[2.0]), TOL).unwrap();
        let t = Truncation::new(1, 4);
        let l = op_sublaplacian(&bf, &DVector::zeros(0), t).unwrap();
        for (i, want) in [2.0, 6.0, 10.0, 14.0].iter().enumerate() {
            assert_abs_diff_eq!(l.mat[(i, i)].re, want, epsilon = 1e-14);
        }

        // nu shifts the diagonal on a radical-bearing algebra
        let free = StepTwoAlgebra::<f64>::free_two_step_3();
        let bf = block_form(&free, &vecd(&[1.0, 0.0, 0.0]), TOL).unwrap();
        let t1 = Truncation::new(1, 3);
        let l0 = op_sublaplacian(&bf, &vecd(&[0.0]), t1).unwrap();
        let l1 = op_sublaplacian(&bf, &vecd(&[1.0]), t1).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(l1.mat[(i, i)].re - l0.mat[(i, i)].re, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn sublaplacian_matches_zeta_cross_module() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[1.0, 3.0]), TOL).unwrap();
        let t = Truncation::new(2, 5);
        let l = op_sublaplacian(&bf, &DVector::zeros(0), t).unwrap();
        let idx = t.index_of(&[1, 2]);
        assert_abs_diff_eq!(l.mat[(idx, idx)].re, 18.0, epsilon = 1e-12);
    }

    #[test]
    fn ladder_assembled_sublaplacian_consistency() {
        // H = sum_j eta_j (2 Wbar_j... check -L = sum_j (P_j^2 + Q_j^2) * (-1)
        // on the interior: pi(-L) = -sum_j (pi(P_j)^2 + pi(Q_j)^2)
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[0.7, 1.3]), TOL).unwrap();
        let t = Truncation::new(2, 8);
        let l = op_sublaplacian(&bf, &DVector::zeros(0), t).unwrap();
        let mut built = CMatrix::<f64>::zeros(t.dim(), t.dim());
        for j in 0..2 {
            let p = op_p(&bf, t, j).unwrap().mat;
            let q = op_q(&bf, t, j).unwrap().mat;
            built -= &p * &p + &q * &q;
        }
        let mask = t.interior_mask(2);
        let diff = &built - &l.mat;
        assert!(masked_norm(&diff, &mask, &mask) < 1e-12);
    }

    #[test]
    fn ladder_commutators_with_sublaplacian() {
        // [pi(W_j), pi(-L)] = 2 eta_j pi(W_j), and the conjugate relation
        let a = StepTwoAlgebra::<f64>::quaternionic();
        let bf = block_form(&a, &vecd(&[0.4, -0.5, 0.8]), TOL).unwrap();
        let t = Truncation::new(2, 8);
        let l = op_sublaplacian(&bf, &DVector::zeros(0), t).unwrap();
        for j in 0..2 {
            let w = op_w(&bf, t, j).unwrap();
            let wb = op_wbar(&bf, t, j).unwrap();
            let mask = t.interior_mask(2);
            let c1 = w.commutator(&l).mat - &w.mat * Complex::new(2.0 * bf.eta[j], 0.0);
            assert!(masked_norm(&c1, &mask, &mask) < 1e-10);
            let c2 = wb.commutator(&l).mat + &wb.mat * Complex::new(2.0 * bf.eta[j], 0.0);
            assert!(masked_norm(&c2, &mask, &mask) < 1e-10);
        }
    }

    #[test]
    fn projection_examples() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[1.0]), TOL).unwrap();
        let t = Truncation::new(1, 6);
        let pr = spectral_projection(&bf, t, 3.0, 1e-9).unwrap();
        // rank 1 onto h_1
        assert_abs_diff_eq!(pr.mat[(1, 1)].re, 1.0, epsilon = 1e-15);
        let trace: f64 = (0..6).map(|i| pr.mat[(i, i)].re).sum();
        assert_abs_diff_eq!(trace, 1.0, epsilon = 1e-15);

        // missing zeta -> zero
        let z = spectral_projection(&bf, t, 2.5, 1e-9).unwrap();
        assert!(z.mat.iter().all(|v| v.norm() == 0.0));

        // idempotent + hermitian exactly
        let p2 = &pr.mat * &pr.mat;
        assert!((p2 - &pr.mat).norm() == 0.0);
        assert!(crate::linalg::hermitian_defect(&pr.mat) == 0.0);

        // H-type d=2 degenerate level: rank 2 at zeta = 4 |lambda| with |lambda|=1
        let ht = StepTwoAlgebra::<f64>::quaternionic();
        let bf = block_form(&ht, &vecd(&[1.0, 0.0, 0.0]), TOL).unwrap();
        let t2 = Truncation::new(2, 4);
        let pr = spectral_projection(&bf, t2, 4.0, 1e-9).unwrap();
        let trace: f64 = (0..t2.dim()).map(|i| pr.mat[(i, i)].re).sum();
        assert_abs_diff_eq!(trace, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sandwich_vanishing() {
        // P_zeta pi(P_j) P_zeta = 0 and same for Q_j, every truncated zeta
        let algs = StepTwoAlgebra::<f64>::bundled();
        for alg in &algs {
            let lam = crate::dual::sphere_sample::<f64>(alg.p(), 1, 17)[0].clone();
            let bf = block_form(alg, &lam, TOL).unwrap();
            let t = Truncation::new(bf.d, 6);
            for zeta in truncated_spectrum(&bf, t, 1e-9) {
                let pz = spectral_projection(&bf, t, zeta, 1e-9).unwrap().mat;
                for j in 0..bf.d {
                    for op in [op_p(&bf, t, j).unwrap(), op_q(&bf, t, j).unwrap()] {
                        let s = &pz * &op.mat * &pz;
                        assert!(op_norm(&s) < 1e-12, "{} sandwich", alg.name());
                    }
                }
            }
        }
    }

    #[test]
    fn group_element_identity_and_centre() {
        let a = StepTwoAlgebra::<f64>::h1();
        let lam = vecd(&[1.7]);
        let bf = block_form(&a, &lam, TOL).unwrap();
        let t = Truncation::new(1, 12);
        let e = a.identity();
        let u = op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &e, 40).unwrap();
        let dim = t.dim();
        assert!((u.mat.clone() - CMatrix::<f64>::identity(dim, dim)).norm() < 1e-13);

        let mut central = a.identity();
        central.z[0] = 0.3;
        let u = op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &central, 40).unwrap();
        let want = CMatrix::<f64>::identity(dim, dim) * crate::scalar::cis(1.7 * 0.3);
        assert!((u.mat - want).norm() < 1e-13);
    }

    #[test]
    fn group_element_unitary_and_homomorphic() {
        let a = StepTwoAlgebra::<f64>::h1();
        let lam = vecd(&[1.3]);
        let bf = block_form(&a, &lam, TOL).unwrap();
        let t = Truncation::new(1, 28);
        let x = GroupPoint {
            v: vecd(&[0.5, -0.3]),
            z: vecd(&[0.2]),
        };
        let y = GroupPoint {
            v: vecd(&[-0.4, 0.6]),
            z: vecd(&[-0.1]),
        };
        let ux = op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &x, 64).unwrap();
        assert!(unitarity_defect(&ux, t.n / 2) < 1e-8);

        let uy = op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &y, 64).unwrap();
        let uxy =
            op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &a.product(&x, &y).unwrap(), 64)
                .unwrap();
        let diff = &ux.mat * &uy.mat - &uxy.mat;
        let mask = t.interior_mask(t.n / 2);
        assert!(masked_norm(&diff, &mask, &mask) < 1e-6);
    }

    #[test]
    fn group_element_dilation_compatibility() {
        // pi^{lambda}(delta_eps x) equals pi^{eps^2 lambda}(x) exactly on H1
        let a = StepTwoAlgebra::<f64>::h1();
        let lam = vecd(&[1.1]);
        let eps = 0.7;
        let lam2 = vecd(&[1.1 * eps * eps]);
        let bf1 = block_form(&a, &lam, TOL).unwrap();
        let bf2 = block_form(&a, &lam2, TOL).unwrap();
        let t = Truncation::new(1, 16);
        let x = GroupPoint {
            v: vecd(&[0.4, -0.6]),
            z: vecd(&[0.25]),
        };
        let dx = a.dilate(eps, &x).unwrap();
        let u1 = op_group_element(&a, &bf1, &lam, &DVector::zeros(0), t, &dx, 48).unwrap();
        let u2 = op_group_element(&a, &bf2, &lam2, &DVector::zeros(0), t, &x, 48).unwrap();
        assert!((u1.mat - u2.mat).norm() < 1e-12);
    }

    #[test]
    fn group_element_quadrature_guard() {
        let a = StepTwoAlgebra::<f64>::h1();
        let lam = vecd(&[1.0]);
        let bf = block_form(&a, &lam, TOL).unwrap();
        let t = Truncation::new(1, 16);
        let x = a.identity();
        assert!(matches!(
            op_group_element(&a, &bf, &lam, &DVector::zeros(0), t, &x, 10),
            Err(Error::QuadratureDefect { .. })
        ));
    }

    #[test]
    fn t_operator_identities_h1() {
        let a = StepTwoAlgebra::<f64>::h1();
        let rep = t_operator_check(
            &a,
            &vecd(&[1.0]),
            Truncation::new(1, 12),
            &vecd(&[0.7]),
            Truncation::new(1, 12),
            TOL,
        )
        .unwrap();
        assert!(rep.residual_commutation < 1e-10, "{rep:?}");
        assert!(rep.residual_projected < 1e-10, "{rep:?}");
        assert!(rep.residual_projected_fd < 1e-7, "{rep:?}");
        assert!(rep.zetas_tested >= 3);
    }

    #[test]
    fn t_operator_rejects_radical() {
        let a = StepTwoAlgebra::<f64>::free_two_step_3();
        let err = t_operator_check(
            &a,
            &vecd(&[1.0, 0.0, 0.0]),
            Truncation::new(1, 8),
            &vecd(&[0.0, 1.0, 0.0]),
            Truncation::new(1, 8),
            TOL,
        );
        assert!(matches!(err, Err(Error::RadicalNotTrivial(1))));
    }

    #[test]
    fn w_triplets_match_dense_and_each_other() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[0.9, 2.1]), TOL).unwrap();
        let t = Truncation::new(2, 7);
        for j in 0..2 {
            let tri = op_w_triplets(&bf, t, j).unwrap();
            let dense = op_w(&bf, t, j).unwrap().mat;
            let mut rebuilt = CMatrix::<f64>::zeros(t.dim(), t.dim());
            for (r0, c0, v) in &tri {
                rebuilt[(*r0, *c0)] = *v;
            }
            assert!((rebuilt - &dense).norm() == 0.0);

            let tri2 = half_p_minus_iq_triplets(&bf, t, j).unwrap();
            let mut rebuilt2 = CMatrix::<f64>::zeros(t.dim(), t.dim());
            for (r0, c0, v) in &tri2 {
                rebuilt2[(*r0, *c0)] += *v;
            }
            assert!((rebuilt2 - &dense).norm() < 1e-15);
        }
    }
}
