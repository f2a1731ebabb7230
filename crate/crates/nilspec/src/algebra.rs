//! Step-two nilpotent Lie algebras and groups in exponential coordinates.
//!
//! The canonical coordinates are the exponential coordinates of the two
//! strata: a group point is (v, z) with v in the first stratum and z central.
//! The product law is the step-two truncation of Baker-Campbell-Hausdorff,
//! which is exact for these groups. Haar measure is Lebesgue measure in
//! these coordinates.

use crate::error::Error;
use crate::scalar::{r, ru, Real};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Structure constants of a step-two nilpotent Lie algebra g = v (+) z with a
/// fixed orthonormal basis V_1..V_q of the first stratum and Z_1..Z_p of the
/// centre: [V_i, V_j] = sum_l c[l][(i,j)] Z_l. Brackets with the centre vanish
/// by the data model.
#[derive(Clone, Debug)]
pub struct StepTwoAlgebra<T> {
    q: usize,
    p: usize,
    c: Vec<DMatrix<T>>,
    name: String,
}

/// A group element in exponential coordinates of the two strata.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPoint<T> {
    pub v: DVector<T>,
    pub z: DVector<T>,
}

/// A Lie-algebra element, first stratum plus centre.
#[derive(Clone, Debug)]
pub struct LieVector<T> {
    pub v: DVector<T>,
    pub z: DVector<T>,
}

impl<T: Real> StepTwoAlgebra<T> {
    /// Validates antisymmetry of the structure constants.
    pub fn new(q: usize, p: usize, c: Vec<DMatrix<T>>, name: impl Into<String>) -> Result<Self> {
        if c.len() != p {
            return Err(Error::DimensionMismatch {
                what: "structure constant sheets",
                expected: p,
                got: c.len(),
            });
        }
        for (l, sheet) in c.iter().enumerate() {
            if sheet.shape() != (q, q) {
                return Err(Error::DimensionMismatch {
                    what: "structure constant sheet shape",
                    expected: q,
                    got: sheet.nrows(),
                });
            }
            for i in 0..q {
                for j in 0..q {
                    if (sheet[(i, j)] + sheet[(j, i)]).abs() > r(1e-12) {
                        return Err(Error::NotAntisymmetric { l, i, j });
                    }
                }
            }
        }
        Ok(Self {
            q,
            p,
            c,
            name: name.into(),
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sheets(&self) -> &[DMatrix<T>] {
        &self.c
    }

    /// Q = q + 2p, the scaling exponent of Haar measure under dilations.
    pub fn homogeneous_dimension(&self) -> usize {
        self.q + 2 * self.p
    }

    /// [u, w] for first-stratum vectors, as a centre vector.
    pub fn bracket(&self, u: &DVector<T>, w: &DVector<T>) -> Result<DVector<T>> {
        if u.len() != self.q || w.len() != self.q {
            return Err(Error::DimensionMismatch {
                what: "bracket argument",
                expected: self.q,
                got: if u.len() != self.q { u.len() } else { w.len() },
            });
        }
        let mut out = DVector::zeros(self.p);
        for l in 0..self.p {
            // u^T C_l w
            out[l] = (u.transpose() * &self.c[l] * w)[(0, 0)];
        }
        Ok(out)
    }

    /// Rank of the flattened structure tensor: p means z = [v, v].
    pub fn bracket_rank(&self, tol: T) -> usize {
        let mut flat = DMatrix::<T>::zeros(self.p, self.q * self.q);
        for l in 0..self.p {
            for i in 0..self.q {
                for j in 0..self.q {
                    flat[(l, i * self.q + j)] = self.c[l][(i, j)];
                }
            }
        }
        let svd = flat.svd(false, false);
        let smax = svd.singular_values.iter().fold(T::zero(), |m, &s| m.max(s));
        if smax == T::zero() {
            return 0;
        }
        svd.singular_values.iter().filter(|&&s| s > tol * smax).count()
    }

    pub fn identity(&self) -> GroupPoint<T> {
        GroupPoint {
            v: DVector::zeros(self.q),
            z: DVector::zeros(self.p),
        }
    }

    /// BCH product, exact at step two: (x y).z = x.z + y.z + [x.v, y.v]/2.
    pub fn product(&self, x: &GroupPoint<T>, y: &GroupPoint<T>) -> Result<GroupPoint<T>> {
        if x.v.len() != self.q || y.v.len() != self.q || x.z.len() != self.p || y.z.len() != self.p
        {
            return Err(Error::DimensionMismatch {
                what: "group point",
                expected: self.q,
                got: x.v.len(),
            });
        }
        let half = r::<T>(0.5);
        let mut z = &x.z + &y.z;
        z += self.bracket(&x.v, &y.v)? * half;
        Ok(GroupPoint { v: &x.v + &y.v, z })
    }

    pub fn inverse(&self, x: &GroupPoint<T>) -> GroupPoint<T> {
        GroupPoint {
            v: -&x.v,
            z: -&x.z,
        }
    }

    /// delta_r(v, z) = (r v, r^2 z), a group automorphism for r > 0.
    pub fn dilate(&self, rr: T, x: &GroupPoint<T>) -> Result<GroupPoint<T>> {
        if rr <= T::zero() {
            return Err(Error::InvalidArgument(
                "dilation factor must be positive".into(),
            ));
        }
        Ok(GroupPoint {
            v: &x.v * rr,
            z: &x.z * (rr * rr),
        })
    }

    /// exp of a Lie-algebra element in exponential coordinates.
    pub fn exp(&self, w: &LieVector<T>) -> GroupPoint<T> {
        GroupPoint {
            v: w.v.clone(),
            z: w.z.clone(),
        }
    }

    /// Integral curve of the left-invariant field w through x at time s:
    /// x . exp(s w). Right multiplication is what descends to the left
    /// quotient by a lattice.
    pub fn flow(&self, x: &GroupPoint<T>, w: &LieVector<T>, s: T) -> Result<GroupPoint<T>> {
        let step = GroupPoint {
            v: &w.v * s,
            z: &w.z * s,
        };
        self.product(x, &step)
    }

    // ---- bundled algebras ----

    /// Heisenberg algebra h_n: q = 2n, p = 1, [V_i, V_{n+i}] = Z.
    pub fn heisenberg(n: usize) -> Self {
        let q = 2 * n;
        let mut c0 = DMatrix::<T>::zeros(q, q);
        for i in 0..n {
            c0[(i, n + i)] = T::one();
            c0[(n + i, i)] = -T::one();
        }
        Self::new(q, 1, vec![c0], format!("heisenberg_{n}")).expect("valid built-in")
    }

    /// H1, the 3-dimensional Heisenberg algebra.
    pub fn h1() -> Self {
        Self::heisenberg(1)
    }

    /// Free two-step algebra on 3 generators: Z1 = [V1,V2], Z2 = [V1,V3],
    /// Z3 = [V2,V3].
    pub fn free_two_step_3() -> Self {
        let q = 3;
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        let mut sheets = Vec::new();
        for (i, j) in pairs {
            let mut m = DMatrix::<T>::zeros(q, q);
            m[(i, j)] = T::one();
            m[(j, i)] = -T::one();
            sheets.push(m);
        }
        Self::new(q, 3, sheets, "free_2step_3").expect("valid built-in")
    }

    /// Quaternionic algebra of Heisenberg type: q = 4, p = 3, built from the
    /// left-multiplication maps L_i, L_j, L_k on the quaternions. Satisfies
    /// B(lambda)^2 = -|lambda|^2 I.
    pub fn quaternionic() -> Self {
        // c_l = transpose of L_l; rows/cols ordered (1, i, j, k)
        let li = [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let lj = [
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ];
        let lk = [
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ];
        let sheet = |m: [[f64; 4]; 4]| {
            DMatrix::<T>::from_fn(4, 4, |a, b| r(m[b][a])) // transpose of L
        };
        Self::new(4, 3, vec![sheet(li), sheet(lj), sheet(lk)], "quaternionic_htype")
            .expect("valid built-in")
    }

    /// Direct sum of two algebras (orthogonal strata).
    pub fn direct_sum(a: &Self, b: &Self) -> Self {
        let q = a.q + b.q;
        let p = a.p + b.p;
        let mut sheets = Vec::with_capacity(p);
        for l in 0..a.p {
            let mut m = DMatrix::<T>::zeros(q, q);
            for i in 0..a.q {
                for j in 0..a.q {
                    m[(i, j)] = a.c[l][(i, j)];
                }
            }
            sheets.push(m);
        }
        for l in 0..b.p {
            let mut m = DMatrix::<T>::zeros(q, q);
            for i in 0..b.q {
                for j in 0..b.q {
                    m[(a.q + i, a.q + j)] = b.c[l][(i, j)];
                }
            }
            sheets.push(m);
        }
        Self::new(q, p, sheets, format!("{}+{}", a.name, b.name)).expect("valid sum")
    }

    /// H1 (+) H1: q = 4, p = 2, two independent 2x2 symplectic blocks.
    pub fn h1_plus_h1() -> Self {
        Self::direct_sum(&Self::h1(), &Self::h1())
    }

    /// Random step-two algebra with seeded antisymmetric structure constants.
    pub fn random(q: usize, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sheets = Vec::with_capacity(p);
        for _ in 0..p {
            let mut m = DMatrix::<T>::zeros(q, q);
            for i in 0..q {
                for j in i + 1..q {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    m[(i, j)] = r(x);
                    m[(j, i)] = r(-x);
                }
            }
            sheets.push(m);
        }
        Self::new(q, p, sheets, format!("random_q{q}p{p}s{seed}")).expect("valid random")
    }

    /// The four algebras exercised throughout the test suites.
    pub fn bundled() -> Vec<Self> {
        vec![
            Self::h1(),
            Self::h1_plus_h1(),
            Self::free_two_step_3(),
            Self::quaternionic(),
        ]
    }
}

// ---- JSON spec file ----

#[derive(Serialize, Deserialize)]
struct AlgebraFile {
    q: usize,
    p: usize,
    c: Vec<Vec<Vec<f64>>>,
    name: String,
}

impl<T: Real> StepTwoAlgebra<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: AlgebraFile = serde_json::from_str(text)?;
        let mut sheets = Vec::with_capacity(raw.p);
        for l in 0..raw.p {
            let sheet = raw
                .c
                .get(l)
                .ok_or(Error::DimensionMismatch {
                    what: "c sheets",
                    expected: raw.p,
                    got: raw.c.len(),
                })?;
            let mut m = DMatrix::<T>::zeros(raw.q, raw.q);
            for i in 0..raw.q {
                for j in 0..raw.q {
                    let row = sheet.get(i).ok_or(Error::DimensionMismatch {
                        what: "c rows",
                        expected: raw.q,
                        got: sheet.len(),
                    })?;
                    let val = row.get(j).ok_or(Error::DimensionMismatch {
                        what: "c cols",
                        expected: raw.q,
                        got: row.len(),
                    })?;
                    m[(i, j)] = r(*val);
                }
            }
            sheets.push(m);
        }
        Self::new(raw.q, raw.p, sheets, raw.name)
    }

    pub fn to_json(&self) -> String {
        let c: Vec<Vec<Vec<f64>>> = self
            .c
            .iter()
            .map(|m| {
                (0..self.q)
                    .map(|i| {
                        (0..self.q)
                            .map(|j| m[(i, j)].to_f64().unwrap_or(f64::NAN))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&AlgebraFile {
            q: self.q,
            p: self.p,
            c,
            name: self.name.clone(),
        })
        .expect("algebra serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ---- the standard H1 lattice ----

/// The lattice of H1 generated by the unit translations (1,0,0) and (0,1,0).
/// Its elements are (m, n, c) with c in mn/2 + Z; the centre period is 1 and
/// the fundamental domain is v in [0,1)^2, z in [0,1) with unit volume.
#[derive(Clone, Copy, Debug, Default)]
pub struct H1Lattice;

impl H1Lattice {
    /// Lattice elements with |m|,|n| <= rv and |z| <= rz.
    pub fn ball<T: Real>(&self, rv: i64, rz: f64) -> Vec<GroupPoint<T>> {
        let mut out = Vec::new();
        for m in -rv..=rv {
            for n in -rv..=rv {
                let base = 0.5 * (m as f64) * (n as f64);
                // z = base + c, c integer, |z| <= rz
                let cmin = (-rz - base).ceil() as i64;
                let cmax = (rz - base).floor() as i64;
                for c in cmin..=cmax {
                    out.push(GroupPoint {
                        v: DVector::from_vec(vec![r(m as f64), r(n as f64)]),
                        z: DVector::from_vec(vec![r(base + c as f64)]),
                    });
                }
            }
        }
        out
    }

    /// Reduces x into the fundamental domain v in [0,1)^2, z in [0,1) by left
    /// lattice translations. Returns the representative.
    pub fn reduce<T: Real>(&self, x: &GroupPoint<T>) -> GroupPoint<T> {
        let mut v1 = x.v[0];
        let mut v2 = x.v[1];
        let mut z = x.z[0];
        // gamma_1^{-a} x = (v1 - a, v2, z - a v2 / 2)
        let a = v1.floor();
        v1 -= a;
        z -= a * v2 / r(2.0);
        // gamma_2^{-b} x = (v1, v2 - b, z + b v1 / 2)
        let b = v2.floor();
        v2 -= b;
        z += b * v1 / r(2.0);
        z -= z.floor();
        GroupPoint {
            v: DVector::from_vec(vec![v1, v2]),
            z: DVector::from_vec(vec![z]),
        }
    }
}

/// Gaussian-type decay certificate |f(v,z)| <= amp * exp(-(|v|^2+|z|^2)/scale^2).
#[derive(Clone, Copy, Debug)]
pub struct DecaySpec {
    pub amp: f64,
    pub scale: f64,
}

/// Periodization of a decaying function on H1 over the standard lattice:
/// returns x -> sum_gamma f(gamma x) sampled on a uniform grid over the
/// fundamental domain, together with the lattice ball actually used.
///
/// The truncation radius is grown until the certified Gaussian tail falls
/// below `tol`; if the required radius exceeds `max_radius` the sum is
/// declared unconverged.
pub fn periodize_h1<T: Real, F>(
    alg: &StepTwoAlgebra<T>,
    lattice: H1Lattice,
    f: F,
    decay: DecaySpec,
    grid_n: usize,
    tol: f64,
) -> Result<Vec<T>>
where
    F: Fn(&GroupPoint<T>) -> T,
{
    if alg.q() != 2 || alg.p() != 1 {
        return Err(Error::InvalidArgument(
            "periodize_h1 needs the h1 algebra".into(),
        ));
    }
    // Choose the radius from the decay certificate. For x in the fundamental
    // domain and gamma at graded distance rho, |gamma x| >= rho - c0 with a
    // domain-diameter constant; shells carry O(rho^2) lattice points.
    let mut radius = 2.0f64;
    let tail = |rad: f64| -> f64 {
        let mut t = 0.0;
        let mut rho = rad;
        while rho < rad + 40.0 {
            let shell = 16.0 * (rho + 2.0) * (rho + 2.0);
            let dist = (rho - 3.0).max(0.0);
            t += decay.amp * shell * (-dist * dist / (decay.scale * decay.scale)).exp();
            rho += 1.0;
        }
        t
    };
    let max_radius = 40.0;
    while tail(radius) > tol {
        radius += 1.0;
        if radius > max_radius {
            return Err(Error::Truncation {
                what: "lattice periodization",
                estimate: tail(radius),
                tol,
            });
        }
    }
    let ball = lattice.ball::<T>(radius as i64, radius);
    let n = grid_n;
    let h = T::one() / ru::<T>(n);
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = GroupPoint {
                    v: DVector::from_vec(vec![ru::<T>(i) * h, ru::<T>(j) * h]),
                    z: DVector::from_vec(vec![ru::<T>(k) * h]),
                };
                let mut acc = T::zero();
                for g in &ball {
                    let gx = alg.product(g, &x)?;
                    acc += f(&gx);
                }
                out.push(acc);
            }
        }
    }
    Ok(out)
}
