//! Geometry on the dual of the centre: the skew forms B(lambda), their
//! canonical block frames, radical strata, eigenvalue branches eta_j and
//! their gradients.
//!
//! Convention: B(lambda) is the matrix with B[i][j] = lambda([V_i, V_j]), so
//! the bilinear form is u^T B w. The frame returned by [`block_form`]
//! satisfies B Q_j = eta_j P_j and B P_j = -eta_j Q_j with eta sorted
//! ascending, and B R_l = 0.

use crate::algebra::StepTwoAlgebra;
use crate::error::Error;
use crate::scalar::{r, Real};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Canonical frame of B(lambda): columns of `p`/`q` span the rotation
/// 2-planes, columns of `rad` span the radical.
#[derive(Clone, Debug)]
pub struct BlockForm<T> {
    pub k: usize,
    pub d: usize,
    pub eta: DVector<T>,
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub rad: DMatrix<T>,
}

/// B(lambda) = sum_l lambda_l C_l.
pub fn b_matrix<T: Real>(alg: &StepTwoAlgebra<T>, lambda: &DVector<T>) -> Result<DMatrix<T>> {
    if lambda.len() != alg.p() {
        return Err(Error::DimensionMismatch {
            what: "lambda",
            expected: alg.p(),
            got: lambda.len(),
        });
    }
    let q = alg.q();
    let mut b = DMatrix::<T>::zeros(q, q);
    for l in 0..alg.p() {
        b += &alg.sheets()[l] * lambda[l];
    }
    Ok(b)
}

fn sorted_symmetric_eigen<T: Real>(m: DMatrix<T>) -> (Vec<T>, Vec<DVector<T>>) {
    let eig = nalgebra::SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| eig.eigenvectors.column(i).clone_owned())
        .collect();
    (vals, vecs)
}

fn fix_sign<T: Real>(v: &mut DVector<T>) {
    let thresh = r::<T>(1e-10);
    for i in 0..v.len() {
        if v[i].abs() > thresh {
            if v[i] < T::zero() {
                *v *= -T::one();
            }
            return;
        }
    }
}

/// Canonical block frame of B(lambda).
///
/// The squared branches eta_j^2 are computed as eigenvalues of the symmetric
/// matrix -B^2; eigenvalues below (tol * ||B||)^2 count as radical.
pub fn block_form<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    tol: T,
) -> Result<BlockForm<T>> {
    let b = b_matrix(alg, lambda)?;
    if b.iter().all(|&x| x == T::zero()) {
        return Err(Error::ZeroLambda);
    }
    let qdim = alg.q();
    let m = -(&b * &b);
    let (vals, vecs) = sorted_symmetric_eigen(m);
    let smax = vals.last().copied().unwrap_or(T::zero()).max(T::zero()).sqrt();
    // The eigenvalues of -B^2 carry noise of order eps * smax^2, so singular
    // values of B are only resolved down to sqrt(eps) * smax; the requested
    // relative cut cannot go below that floor.
    let sigma_cut = tol.max(T::default_epsilon().sqrt() * r(8.0)) * smax;
    let zero_cut = sigma_cut * sigma_cut;

    let mut rad_cols: Vec<DVector<T>> = Vec::new();
    let mut pairs: Vec<(T, DVector<T>, DVector<T>)> = Vec::new();
    let mut frame: Vec<DVector<T>> = Vec::new(); // accumulated P,Q columns

    for (mu, u) in vals.iter().zip(vecs.into_iter()) {
        if *mu <= zero_cut {
            let mut u = u;
            fix_sign(&mut u);
            rad_cols.push(u);
            continue;
        }
        // project out the already-built rotation planes
        let mut w = u;
        for col in &frame {
            let c = col.dot(&w);
            w -= col * c;
        }
        let nrm = w.norm();
        if nrm < r(0.5) {
            // partner of an already-built plane
            continue;
        }
        let mut pcol = w / nrm;
        fix_sign(&mut pcol);
        let eta = mu.sqrt();
        // B Q = eta P  <=>  Q = -B P / eta  (since B^2 = -eta^2 on the plane)
        let mut qcol = -(&b * &pcol) / eta;
        // numerical cleanup
        let c = pcol.dot(&qcol);
        qcol -= &pcol * c;
        let qn = qcol.norm();
        if qn < r(0.5) {
            return Err(Error::Orthonormalization(
                "rotation-plane partner collapsed".into(),
            ));
        }
        qcol /= qn;
        frame.push(pcol.clone());
        frame.push(qcol.clone());
        pairs.push((eta, pcol, qcol));
    }

    let k = rad_cols.len();
    if (qdim - k) % 2 != 0 || pairs.len() * 2 + k != qdim {
        return Err(Error::KernelParity { k, q: qdim });
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eta"));
    let d = pairs.len();
    let mut eta = DVector::zeros(d);
    let mut pmat = DMatrix::zeros(qdim, d);
    let mut qmat = DMatrix::zeros(qdim, d);
    for (j, (e, pc, qc)) in pairs.into_iter().enumerate() {
        eta[j] = e;
        pmat.set_column(j, &pc);
        qmat.set_column(j, &qc);
    }
    let mut rmat = DMatrix::zeros(qdim, k);
    for (j, c) in rad_cols.into_iter().enumerate() {
        rmat.set_column(j, &c);
    }
    let bf = BlockForm {
        k,
        d,
        eta,
        p: pmat,
        q: qmat,
        rad: rmat,
    };
    validate_block_form(&b, &bf, (r::<T>(100.0) * tol * smax).max(r::<T>(1e-10) * smax))?;
    Ok(bf)
}

fn validate_block_form<T: Real>(b: &DMatrix<T>, bf: &BlockForm<T>, tol: T) -> Result<()> {
    for j in 0..bf.d {
        let pj = bf.p.column(j);
        let qj = bf.q.column(j);
        let res1 = (b * qj - pj * bf.eta[j]).norm();
        let res2 = (b * pj + qj * bf.eta[j]).norm();
        if res1 > tol || res2 > tol {
            return Err(Error::Orthonormalization(format!(
                "rotation-plane residual {:?} exceeds tolerance",
                (res1.to_f64(), res2.to_f64())
            )));
        }
    }
    for l in 0..bf.k {
        if (b * bf.rad.column(l)).norm() > tol {
            return Err(Error::Orthonormalization("radical residual".into()));
        }
    }
    let full = bf.full_frame();
    let gram = full.transpose() * &full;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let want = if i == j { T::one() } else { T::zero() };
            if (gram[(i, j)] - want).abs() > tol.max(r(1e-10)) {
                return Err(Error::Orthonormalization("frame not orthonormal".into()));
            }
        }
    }
    Ok(())
}

impl<T: Real> BlockForm<T> {
    /// Columns [P | Q | R] as one orthonormal matrix.
    pub fn full_frame(&self) -> DMatrix<T> {
        let qdim = self.p.nrows();
        let mut out = DMatrix::zeros(qdim, 2 * self.d + self.k);
        for j in 0..self.d {
            out.set_column(j, &self.p.column(j));
            out.set_column(self.d + j, &self.q.column(j));
        }
        for l in 0..self.k {
            out.set_column(2 * self.d + l, &self.rad.column(l));
        }
        out
    }

    /// zeta(alpha) = sum_j (2 alpha_j + 1) eta_j.
    pub fn zeta(&self, alpha: &[usize]) -> Result<T> {
        if alpha.len() != self.d {
            return Err(Error::DimensionMismatch {
                what: "alpha",
                expected: self.d,
                got: alpha.len(),
            });
        }
        Ok(alpha
            .iter()
            .zip(self.eta.iter())
            .map(|(&a, &e)| r::<T>(2.0 * a as f64 + 1.0) * e)
            .sum())
    }

    /// Cluster decomposition of eta at relative gap `tol`: list of cluster sizes.
    pub fn eta_clusters(&self, tol: T) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.d {
            let mut j = i + 1;
            while j < self.d && (self.eta[j] - self.eta[j - 1]).abs() <= tol * self.eta[j].abs() {
                j += 1;
            }
            out.push(j - i);
            i = j;
        }
        out
    }
}

/// dim ker B(lambda) at tolerance `tol`.
pub fn radical_dim<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    tol: T,
) -> Result<usize> {
    Ok(block_form(alg, lambda, tol)?.k)
}

/// Classification of a single lambda against a sampled stratum profile.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaClass {
    pub k: usize,
    pub in_lambda0: bool,
    pub multiplicities: Vec<usize>,
}

/// Sampled estimate of the generic stratum data of an algebra. The minimal
/// radical dimension k0 and the maximal number of distinct eta clusters are
/// estimated over a seeded sphere sample; this is a heuristic, not a
/// symbolic computation, and is flagged as such.
#[derive(Clone, Debug)]
pub struct StratumProfile {
    pub k0: usize,
    pub max_clusters: usize,
    pub samples: usize,
    pub generic_fraction: f64,
    pub heuristic: bool,
}

/// Seeded uniform sample on the unit sphere of the centre dual.
pub fn sphere_sample<T: Real>(p: usize, count: usize, seed: u64) -> Vec<DVector<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = DVector::<T>::zeros(p);
        for i in 0..p {
            // Box-Muller from two uniforms
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            v[i] = r(g);
        }
        let n = v.norm();
        if n > r(1e-6) {
            out.push(v / n);
        }
    }
    out
}

pub fn estimate_strata<T: Real>(
    alg: &StepTwoAlgebra<T>,
    samples: usize,
    seed: u64,
    tol: T,
) -> StratumProfile {
    let cluster_tol = r::<T>(1e-6);
    let mut k0 = usize::MAX;
    let mut max_clusters = 0usize;
    let mut stats: Vec<(usize, usize)> = Vec::with_capacity(samples);
    for lam in sphere_sample::<T>(alg.p(), samples, seed) {
        if let Ok(bf) = block_form(alg, &lam, tol) {
            let nc = bf.eta_clusters(cluster_tol).len();
            k0 = k0.min(bf.k);
            max_clusters = max_clusters.max(nc);
            stats.push((bf.k, nc));
        }
    }
    let generic = stats
        .iter()
        .filter(|(k, nc)| *k == k0 && *nc == max_clusters)
        .count();
    StratumProfile {
        k0: if k0 == usize::MAX { 0 } else { k0 },
        max_clusters,
        samples: stats.len(),
        generic_fraction: generic as f64 / stats.len().max(1) as f64,
        heuristic: true,
    }
}

pub fn classify_lambda<T: Real>(
    alg: &StepTwoAlgebra<T>,
    profile: &StratumProfile,
    lambda: &DVector<T>,
    tol: T,
) -> Result<LambdaClass> {
    let bf = block_form(alg, lambda, tol)?;
    let mults = bf.eta_clusters(r(1e-6));
    let in_lambda0 = bf.k == profile.k0 && mults.len() == profile.max_clusters;
    Ok(LambdaClass {
        k: bf.k,
        in_lambda0,
        multiplicities: mults,
    })
}

/// Diagnostic for the minors characterization of the strata: the largest
/// order of a non-vanishing minor of B(lambda) equals q - k. Exact minor
/// enumeration is exponential; this checks determinants of a seeded sample
/// of square submatrices of each order.
pub fn minors_rank_diagnostic<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    tol: T,
    seed: u64,
) -> Result<usize> {
    let b = b_matrix(alg, lambda)?;
    let qdim = alg.q();
    let smax = crate::linalg::op_norm_real(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0usize;
    for order in 1..=qdim {
        let tries = 60.min(1 << (2 * order.min(8)));
        let mut found = false;
        for _ in 0..tries {
            let mut rows: Vec<usize> = (0..qdim).collect();
            let mut cols: Vec<usize> = (0..qdim).collect();
            for i in (1..rows.len()).rev() {
                rows.swap(i, rng.gen_range(0..=i));
                cols.swap(i, rng.gen_range(0..=i));
            }
            let sub = DMatrix::<T>::from_fn(order, order, |i, j| b[(rows[i], cols[j])]);
            let det = sub.determinant().abs();
            if det > tol * smax.powi(order as i32) {
                found = true;
                break;
            }
        }
        if found {
            best = order;
        }
    }
    Ok(best)
}

/// Aligns the block frames along a path inside a fixed stratum so they vary
/// continuously: per eta cluster, the complexified frames P + iQ are matched
/// to the previous point by unitary Procrustes.
pub fn smooth_frame<T: Real>(
    alg: &StepTwoAlgebra<T>,
    path: &[DVector<T>],
    tol: T,
) -> Result<Vec<BlockForm<T>>> {
    let cluster_tol = r::<T>(1e-6);
    let mut out: Vec<BlockForm<T>> = Vec::with_capacity(path.len());
    for (seg, lam) in path.iter().enumerate() {
        let mut bf = block_form(alg, lam, tol)?;
        if let Some(prev) = out.last() {
            if bf.k != prev.k || bf.eta_clusters(cluster_tol) != prev.eta_clusters(cluster_tol) {
                return Err(Error::FrameCrossing {
                    segment: seg,
                    detail: format!(
                        "(k, multiplicities) changed from ({}, {:?}) to ({}, {:?})",
                        prev.k,
                        prev.eta_clusters(cluster_tol),
                        bf.k,
                        bf.eta_clusters(cluster_tol)
                    ),
                });
            }
            align_to(&mut bf, prev, cluster_tol);
        }
        out.push(bf);
    }
    Ok(out)
}

fn align_to<T: Real>(bf: &mut BlockForm<T>, prev: &BlockForm<T>, cluster_tol: T) {
    let qdim = bf.p.nrows();
    let clusters = bf.eta_clusters(cluster_tol);
    let mut start = 0usize;
    for size in clusters {
        // complex frame columns w_j = P_j + i Q_j of the cluster
        let mut cur = crate::linalg::CMatrix::<T>::zeros(qdim, size);
        let mut old = crate::linalg::CMatrix::<T>::zeros(qdim, size);
        for c in 0..size {
            for row in 0..qdim {
                cur[(row, c)] = Complex::new(bf.p[(row, start + c)], bf.q[(row, start + c)]);
                old[(row, c)] = Complex::new(prev.p[(row, start + c)], prev.q[(row, start + c)]);
            }
        }
        let aligned = crate::linalg::procrustes_align(&cur, &old);
        for c in 0..size {
            for row in 0..qdim {
                bf.p[(row, start + c)] = aligned[(row, c)].re;
                bf.q[(row, start + c)] = aligned[(row, c)].im;
            }
        }
        start += size;
    }
    // radical columns: sign/subspace alignment
    if bf.k > 0 {
        let cur = bf.rad.map(|x| Complex::new(x, T::zero()));
        let old = prev.rad.map(|x| Complex::new(x, T::zero()));
        let aligned = crate::linalg::procrustes_align(&cur, &old);
        bf.rad = aligned.map(|z| z.re);
    }
}

/// Gradient of the branches via the frame brackets: column j is
/// [P_j, Q_j] in centre coordinates.
pub fn grad_eta_bracket<T: Real>(
    alg: &StepTwoAlgebra<T>,
    bf: &BlockForm<T>,
) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(alg.p(), bf.d);
    for j in 0..bf.d {
        let g = alg.bracket(&bf.p.column(j).clone_owned(), &bf.q.column(j).clone_owned())?;
        out.set_column(j, &g);
    }
    Ok(out)
}

/// Central finite differences of the sorted branches eta_j along each dual
/// coordinate; errors out if a stencil point changes stratum data.
pub fn grad_eta_fd<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    h: T,
    tol: T,
) -> Result<DMatrix<T>> {
    let cluster_tol = r::<T>(1e-6);
    let base = block_form(alg, lambda, tol)?;
    let base_sig = (base.k, base.eta_clusters(cluster_tol));
    let mut out = DMatrix::zeros(alg.p(), base.d);
    for l in 0..alg.p() {
        let mut lp = lambda.clone();
        lp[l] += h;
        let mut lm = lambda.clone();
        lm[l] -= h;
        let bp = block_form(alg, &lp, tol)?;
        let bm = block_form(alg, &lm, tol)?;
        for (tag, b) in [("plus", &bp), ("minus", &bm)] {
            if (b.k, b.eta_clusters(cluster_tol)) != base_sig {
                return Err(Error::StencilLeavesStratum(format!(
                    "coordinate {l} ({tag} side)"
                )));
            }
        }
        for j in 0..base.d {
            out[(l, j)] = (bp.eta[j] - bm.eta[j]) / (r::<T>(2.0) * h);
        }
    }
    Ok(out)
}

/// zeta(alpha, lambda) from a block form.
pub fn zeta<T: Real>(bf: &BlockForm<T>, alpha: &[usize]) -> Result<T> {
    bf.zeta(alpha)
}

/// grad_lambda zeta = sum_j (2 alpha_j + 1) [P_j, Q_j].
pub fn grad_zeta<T: Real>(
    alg: &StepTwoAlgebra<T>,
    bf: &BlockForm<T>,
    alpha: &[usize],
) -> Result<DVector<T>> {
    if alpha.len() != bf.d {
        return Err(Error::DimensionMismatch {
            what: "alpha",
            expected: bf.d,
            got: alpha.len(),
        });
    }
    let g = grad_eta_bracket(alg, bf)?;
    let mut out = DVector::zeros(alg.p());
    for j in 0..bf.d {
        out += g.column(j) * r::<T>(2.0 * alpha[j] as f64 + 1.0);
    }
    Ok(out)
}

/// Finite-difference gradient of zeta(alpha, .).
pub fn grad_zeta_fd<T: Real>(
    alg: &StepTwoAlgebra<T>,
    lambda: &DVector<T>,
    alpha: &[usize],
    h: T,
    tol: T,
) -> Result<DVector<T>> {
    let g = grad_eta_fd(alg, lambda, h, tol)?;
    if alpha.len() != g.ncols() {
        return Err(Error::DimensionMismatch {
            what: "alpha",
            expected: g.ncols(),
            got: alpha.len(),
        });
    }
    let mut out = DVector::zeros(alg.p());
    for j in 0..alpha.len() {
        out += g.column(j) * r::<T>(2.0 * alpha[j] as f64 + 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::StepTwoAlgebra;
    use approx::assert_abs_diff_eq;

    fn vecd(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    const TOL: f64 = 1e-9;

    #[test]
    fn h1_b_matrix() {
        let a = StepTwoAlgebra::<f64>::h1();
        let b = b_matrix(&a, &vecd(&[2.0])).unwrap();
        assert_eq!(
            (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]),
            (0.0, 2.0, -2.0, 0.0)
        );
        let z = b_matrix(&a, &vecd(&[0.0])).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn free3_b_matrix_elementary() {
        let a = StepTwoAlgebra::<f64>::free_two_step_3();
        let b = b_matrix(&a, &vecd(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(b[(0, 1)], 1.0);
        assert_eq!(b[(1, 0)], -1.0);
        for i in 0..3 {
            assert_eq!(b[(i, 2)], 0.0);
            assert_eq!(b[(2, i)], 0.0);
        }
    }

    #[test]
    fn b_matrix_is_linear_in_lambda() {
        let a = StepTwoAlgebra::<f64>::free_two_step_3();
        let l1 = vecd(&[0.5, -1.0, 2.0]);
        let l2 = vecd(&[1.5, 0.25, -0.75]);
        let lhs = b_matrix(&a, &(&l1 + &l2)).unwrap();
        let rhs = b_matrix(&a, &l1).unwrap() + b_matrix(&a, &l2).unwrap();
        assert!((lhs - rhs).norm() == 0.0);
    }

    #[test]
    fn h1_block_form_by_hand() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[3.0]), TOL).unwrap();
        assert_eq!((bf.k, bf.d), (0, 1));
        assert_abs_diff_eq!(bf.eta[0], 3.0, epsilon = 1e-12);
        // P = +-e1, Q with B Q = eta P
        assert_abs_diff_eq!(bf.p.column(0).norm(), 1.0, epsilon = 1e-12);
        let b = b_matrix(&a, &vecd(&[3.0])).unwrap();
        assert!((b * bf.q.column(0) - bf.p.column(0) * 3.0).norm() < 1e-10);
    }

    #[test]
    fn block_form_rejects_zero_lambda() {
        let a = StepTwoAlgebra::<f64>::h1();
        assert!(matches!(
            block_form(&a, &vecd(&[0.0]), TOL),
            Err(Error::ZeroLambda)
        ));
    }

    #[test]
    fn quaternionic_block_form_is_htype() {
        let a = StepTwoAlgebra::<f64>::quaternionic();
        for lam in [vecd(&[1.0, 0.0, 0.0]), vecd(&[0.3, -0.4, 1.2])] {
            let bf = block_form(&a, &lam, TOL).unwrap();
            let n = lam.norm();
            assert_eq!((bf.k, bf.d), (0, 2));
            assert_abs_diff_eq!(bf.eta[0], n, epsilon = 1e-10);
            assert_abs_diff_eq!(bf.eta[1], n, epsilon = 1e-10);
        }
    }

    #[test]
    fn free3_block_form_has_kernel() {
        let a = StepTwoAlgebra::<f64>::free_two_step_3();
        let bf = block_form(&a, &vecd(&[1.0, 0.0, 0.0]), TOL).unwrap();
        assert_eq!((bf.k, bf.d), (1, 1));
        assert_abs_diff_eq!(bf.eta[0], 1.0, epsilon = 1e-12);
        // kernel is the V3 axis
        assert_abs_diff_eq!(bf.rad[(2, 0)].abs(), 1.0, epsilon = 1e-10);
        assert_eq!(radical_dim(&a, &vecd(&[0.2, -0.5, 0.9]), TOL).unwrap(), 1);
    }

    #[test]
    fn h1_plus_h1_block_diagonal() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[1.0, 2.0]), TOL).unwrap();
        assert_eq!((bf.k, bf.d), (0, 2));
        assert_abs_diff_eq!(bf.eta[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bf.eta[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn eta_homogeneous_in_lambda() {
        let a = StepTwoAlgebra::<f64>::random(4, 2, 11);
        let lam = vecd(&[0.7, -0.4]);
        let bf1 = block_form(&a, &lam, TOL).unwrap();
        let bf2 = block_form(&a, &(&lam * 3.5), TOL).unwrap();
        for j in 0..bf1.d {
            assert_abs_diff_eq!(bf2.eta[j], 3.5 * bf1.eta[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn block_form_invariants_random_algebras() {
        for seed in 0..6u64 {
            let a = StepTwoAlgebra::<f64>::random(4, 2, seed);
            for lam in sphere_sample::<f64>(2, 12, seed + 100) {
                let b = b_matrix(&a, &lam).unwrap();
                let bf = match block_form(&a, &lam, TOL) {
                    Ok(bf) => bf,
                    Err(_) => continue,
                };
                let scale = bf.eta[bf.d - 1].max(1.0);
                for j in 0..bf.d {
                    assert!((
                        (&b * bf.q.column(j) - bf.p.column(j) * bf.eta[j]).norm()
                    ) < 1e-9 * scale);
                    assert!((
                        (&b * bf.p.column(j) + bf.q.column(j) * bf.eta[j]).norm()
                    ) < 1e-9 * scale);
                }
                let f = bf.full_frame();
                let g = f.transpose() * &f;
                for i in 0..g.nrows() {
                    for jj in 0..g.ncols() {
                        let want = if i == jj { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(g[(i, jj)], want, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn classify_bundled_algebras() {
        let h1 = StepTwoAlgebra::<f64>::h1();
        let prof = estimate_strata(&h1, 50, 1, TOL);
        let c = classify_lambda(&h1, &prof, &vecd(&[0.8]), TOL).unwrap();
        assert_eq!(
            c,
            LambdaClass {
                k: 0,
                in_lambda0: true,
                multiplicities: vec![1]
            }
        );

        let ht = StepTwoAlgebra::<f64>::quaternionic();
        let prof = estimate_strata(&ht, 50, 2, TOL);
        let c = classify_lambda(&ht, &prof, &vecd(&[0.1, 0.1, 0.9]), TOL).unwrap();
        assert_eq!(
            c,
            LambdaClass {
                k: 0,
                in_lambda0: true,
                multiplicities: vec![2]
            }
        );

        let hh = StepTwoAlgebra::<f64>::h1_plus_h1();
        let prof = estimate_strata(&hh, 50, 3, TOL);
        let c = classify_lambda(&hh, &prof, &vecd(&[1.0, 2.0]), TOL).unwrap();
        assert_eq!(
            c,
            LambdaClass {
                k: 0,
                in_lambda0: true,
                multiplicities: vec![1, 1]
            }
        );
        // equal-eta point of h1+h1 lies off Lambda_0
        let c = classify_lambda(&hh, &prof, &vecd(&[1.0, 1.0]), TOL).unwrap();
        assert!(!c.in_lambda0);
    }

    #[test]
    fn generic_stratum_is_dense_in_samples() {
        for alg in StepTwoAlgebra::<f64>::bundled() {
            let prof = estimate_strata(&alg, 10_000, 42, TOL);
            assert!(
                prof.generic_fraction >= 0.99,
                "{}: generic fraction {}",
                alg.name(),
                prof.generic_fraction
            );
        }
    }

    #[test]
    fn minors_diagnostic_matches_rank() {
        let a = StepTwoAlgebra::<f64>::free_two_step_3();
        let lam = vecd(&[0.4, -0.7, 0.2]);
        let bf = block_form(&a, &lam, TOL).unwrap();
        let rank = minors_rank_diagnostic(&a, &lam, 1e-7, 5).unwrap();
        assert_eq!(rank, a.q() - bf.k);
    }

    #[test]
    fn smooth_frame_h1_constant() {
        let a = StepTwoAlgebra::<f64>::h1();
        let path: Vec<_> = (0..11).map(|i| vecd(&[1.0 + 0.1 * i as f64])).collect();
        let frames = smooth_frame(&a, &path, TOL).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_abs_diff_eq!(f.eta[0], 1.0 + 0.1 * i as f64, epsilon = 1e-12);
            // frame stays put: the plane is fixed, alignment keeps columns fixed
            assert!((f.p.column(0) - frames[0].p.column(0)).norm() < 1e-10);
            assert!((f.q.column(0) - frames[0].q.column(0)).norm() < 1e-10);
        }
    }

    #[test]
    fn smooth_frame_constant_path() {
        let a = StepTwoAlgebra::<f64>::quaternionic();
        let lam = vecd(&[0.3, 0.5, -0.2]);
        let path = vec![lam.clone(), lam.clone(), lam];
        let frames = smooth_frame(&a, &path, TOL).unwrap();
        assert!((frames[2].p.clone() - frames[0].p.clone()).norm() < 1e-9);
        assert!((frames[2].q.clone() - frames[0].q.clone()).norm() < 1e-9);
    }

    #[test]
    fn smooth_frame_block_sum_path() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let path: Vec<_> = (0..21)
            .map(|i| vecd(&[1.0, 2.0 + 0.05 * i as f64]))
            .collect();
        let frames = smooth_frame(&a, &path, TOL).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_abs_diff_eq!(f.eta[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(f.eta[1], 2.0 + 0.05 * i as f64, epsilon = 1e-10);
            assert!((f.p.column(0) - frames[0].p.column(0)).norm() < 1e-9);
        }
    }

    #[test]
    fn smooth_frame_reports_crossing() {
        // path from two distinct branches into an eta-collision of h1+h1
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let path = vec![vecd(&[1.0, 2.0]), vecd(&[1.0, 1.0])];
        match smooth_frame(&a, &path, TOL) {
            Err(Error::FrameCrossing { segment, .. }) => assert_eq!(segment, 1),
            other => panic!("expected crossing error, got {other:?}"),
        }
    }

    #[test]
    fn smooth_frame_continuity_refines() {
        let a = StepTwoAlgebra::<f64>::random(4, 2, 9);
        let lam0 = vecd(&[0.9, 0.1]);
        let lam1 = vecd(&[0.7, 0.6]);
        let mut prev_max_step = f64::INFINITY;
        for steps in [8usize, 32, 128] {
            let path: Vec<_> = (0..=steps)
                .map(|i| {
                    let t = i as f64 / steps as f64;
                    &lam0 * (1.0 - t) + &lam1 * t
                })
                .collect();
            let frames = match smooth_frame(&a, &path, TOL) {
                Ok(f) => f,
                Err(_) => return, // stratum crossing for this seed; skip
            };
            let max_step = frames
                .windows(2)
                .map(|w| {
                    ((w[1].p.clone() - w[0].p.clone()).norm()
                        + (w[1].q.clone() - w[0].q.clone()).norm())
                })
                .fold(0.0f64, f64::max);
            assert!(max_step < prev_max_step + 1e-12);
            prev_max_step = max_step;
        }
        assert!(prev_max_step < 0.05);
    }

    #[test]
    fn grad_eta_h1_and_htype() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[2.0]), TOL).unwrap();
        let g = grad_eta_bracket(&a, &bf).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-12);

        let ht = StepTwoAlgebra::<f64>::quaternionic();
        let lam = vecd(&[0.0, 0.0, 3.0]);
        let bf = block_form(&ht, &lam, TOL).unwrap();
        let g = grad_eta_bracket(&ht, &bf).unwrap();
        // cluster-summed gradient: sum_j [P_j,Q_j] = d * lambda/|lambda|
        let summed = g.column(0) + g.column(1);
        assert_abs_diff_eq!(summed[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(summed[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(summed[2], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn grad_eta_fd_simple_cases() {
        let a = StepTwoAlgebra::<f64>::h1();
        let g = grad_eta_fd(&a, &vecd(&[2.0]), 1e-4, TOL).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-7);
        let gm = grad_eta_fd(&a, &vecd(&[-2.0]), 1e-4, TOL).unwrap();
        assert_abs_diff_eq!(gm[(0, 0)], -1.0, epsilon = 1e-7);

        let ht = StepTwoAlgebra::<f64>::quaternionic();
        let g = grad_eta_fd(&ht, &vecd(&[3.0, 4.0, 0.0]), 1e-4, TOL).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(g[(0, j)], 0.6, epsilon = 1e-7);
            assert_abs_diff_eq!(g[(1, j)], 0.8, epsilon = 1e-7);
            assert_abs_diff_eq!(g[(2, j)], 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn gradient_lemma_bracket_vs_fd_random() {
        // simple clusters: per-column agreement
        let a = StepTwoAlgebra::<f64>::random(4, 2, 21);
        let mut checked = 0;
        for lam in sphere_sample::<f64>(2, 40, 77) {
            let bf = match block_form(&a, &lam, TOL) {
                Ok(b) => b,
                Err(_) => continue,
            };
            if bf.eta_clusters(1e-6).iter().any(|&c| c > 1) || bf.k > 0 {
                continue;
            }
            let gb = grad_eta_bracket(&a, &bf).unwrap();
            let gf = match grad_eta_fd(&a, &lam, 1e-5, TOL) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let scale = gf.norm().max(1e-12);
            assert!(
                (gb - gf).norm() / scale < 1e-6,
                "bracket/fd mismatch at lambda {lam:?}"
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn zeta_values() {
        let a = StepTwoAlgebra::<f64>::h1_plus_h1();
        let bf = block_form(&a, &vecd(&[1.0, 3.0]), TOL).unwrap();
        assert_abs_diff_eq!(bf.zeta(&[1, 2]).unwrap(), 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bf.zeta(&[0, 0]).unwrap(), 4.0, epsilon = 1e-12);
        assert!(bf.zeta(&[1]).is_err());
    }

    #[test]
    fn grad_zeta_h1_and_fd() {
        let a = StepTwoAlgebra::<f64>::h1();
        let bf = block_form(&a, &vecd(&[2.0]), TOL).unwrap();
        let g = grad_zeta(&a, &bf, &[3]).unwrap();
        assert_abs_diff_eq!(g[0], 7.0, epsilon = 1e-12);

        let rand_alg = StepTwoAlgebra::<f64>::random(4, 2, 33);
        for lam in sphere_sample::<f64>(2, 10, 5) {
            let bf = match block_form(&rand_alg, &lam, TOL) {
                Ok(b) => b,
                Err(_) => continue,
            };
            if bf.eta_clusters(1e-6).len() != bf.d {
                continue;
            }
            let gb = grad_zeta(&rand_alg, &bf, &[1, 2]).unwrap();
            let gf = match grad_zeta_fd(&rand_alg, &lam, &[1, 2], 1e-5, TOL) {
                Ok(g) => g,
                Err(_) => continue,
            };
            assert!((gb - gf).norm() < 1e-6 * 10.0);
        }
    }

    #[test]
    fn block_form_generic_f32() {
        let a = StepTwoAlgebra::<f32>::h1();
        let bf = block_form(&a, &DVector::from_vec(vec![2.0f32]), 1e-5).unwrap();
        assert!((bf.eta[0] - 2.0).abs() < 1e-5);
    }
}
