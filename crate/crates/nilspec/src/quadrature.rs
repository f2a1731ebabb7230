//! Quadrature rules (Golub-Welsch) and Hermite function evaluation.

use crate::scalar::{r, ru, Real};
use nalgebra::DMatrix;

/// Nodes and weights of an n-point rule.
#[derive(Clone, Debug)]
pub struct Rule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

fn golub_welsch<T: Real>(diag: &[T], offdiag: &[T], mu0: T) -> Rule<T> {
    let n = diag.len();
    let mut j = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = offdiag[i];
            j[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("quadrature eigenvalues are finite")
    });
    let nodes: Vec<T> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let weights: Vec<T> = idx
        .iter()
        .map(|&i| {
            let v0 = eig.eigenvectors[(0, i)];
            mu0 * v0 * v0
        })
        .collect();
    Rule { nodes, weights }
}

/// Gauss-Hermite rule: integrates f against exp(-x^2) on the line exactly for
/// polynomials of degree 2n-1.
pub fn gauss_hermite<T: Real>(n: usize) -> Rule<T> {
    assert!(n >= 1);
    let diag = vec![T::zero(); n];
    let offdiag: Vec<T> = (1..n).map(|k| (ru::<T>(k) / r(2.0)).sqrt()).collect();
    golub_welsch(&diag, &offdiag, T::pi().sqrt())
}

/// Gauss-Hermite rule with the weight factored out: integrates plain `dx`
/// integrals of functions that decay like a Gaussian. The weights are the
/// reciprocal Christoffel numbers 1/sum_k h_k(x_i)^2, which are stable to
/// evaluate (no exp(x^2) blowup).
pub fn gauss_hermite_modified<T: Real>(n: usize) -> Rule<T> {
    let base = gauss_hermite::<T>(n);
    let weights: Vec<T> = base
        .nodes
        .iter()
        .map(|&x| {
            let h = hermite_functions(n, x);
            T::one() / h.iter().map(|&v| v * v).sum::<T>()
        })
        .collect();
    Rule {
        nodes: base.nodes,
        weights,
    }
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre<T: Real>(n: usize) -> Rule<T> {
    assert!(n >= 1);
    let diag = vec![T::zero(); n];
    let offdiag: Vec<T> = (1..n)
        .map(|k| {
            let kf = ru::<T>(k);
            kf / (r::<T>(4.0) * kf * kf - T::one()).sqrt()
        })
        .collect();
    golub_welsch(&diag, &offdiag, r(2.0))
}

impl<T: Real> Rule<T> {
    /// Maps a [-1,1] rule onto [a,b].
    pub fn scaled_to(&self, a: T, b: T) -> Rule<T> {
        let half = (b - a) / r(2.0);
        let mid = (b + a) / r(2.0);
        Rule {
            nodes: self.nodes.iter().map(|&x| mid + half * x).collect(),
            weights: self.weights.iter().map(|&w| w * half).collect(),
        }
    }
}

/// Hermite functions h_0..h_{n-1} at x: the L^2(R)-orthonormal eigenfunctions
/// of the harmonic oscillator, Gaussian factor included.
///
/// h_0 = pi^{-1/4} e^{-x^2/2}, h_{k+1} = sqrt(2/(k+1)) x h_k - sqrt(k/(k+1)) h_{k-1}.
pub fn hermite_functions<T: Real>(n: usize, x: T) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let h0 = T::pi().powf(r(-0.25)) * (-(x * x) / r(2.0)).exp();
    out.push(h0);
    if n == 1 {
        return out;
    }
    out.push(r::<T>(2.0).sqrt() * x * h0);
    for k in 1..n - 1 {
        let a = (r::<T>(2.0) / ru::<T>(k + 1)).sqrt();
        let b = (ru::<T>(k) / ru::<T>(k + 1)).sqrt();
        let next = a * x * out[k] - b * out[k - 1];
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let rule = gauss_hermite::<f64>(8);
        // int x^2 e^{-x^2} = sqrt(pi)/2
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * x * x)
            .sum();
        assert_abs_diff_eq!(v, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn modified_rule_integrates_gaussians() {
        let rule = gauss_hermite_modified::<f64>(40);
        // int e^{-x^2/2} dx = sqrt(2 pi)
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * (-x * x / 2.0).exp())
            .sum();
        assert_abs_diff_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn legendre_rule_on_interval() {
        let rule = gauss_legendre::<f64>(12).scaled_to(0.0, 2.0);
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * x.powi(3))
            .sum();
        assert_abs_diff_eq!(v, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let rule = gauss_hermite_modified::<f64>(64);
        let n = 12;
        let mut gram = [[0.0f64; 12]; 12];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let h = hermite_functions(n, x);
            for a in 0..n {
                for b in 0..n {
                    gram[a][b] += w * h[a] * h[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[a][b], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn generic_scalar_f32_rules_work() {
        let rule = gauss_hermite::<f32>(6);
        let v: f32 = rule.weights.iter().sum();
        assert_abs_diff_eq!(v, std::f32::consts::PI.sqrt(), epsilon = 1e-5);
    }
}
