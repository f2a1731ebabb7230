//! Operator-valued symbols stored through their convolution kernels, the
//! group Fourier transform, restriction to the one-dimensional characters,
//! the commuting subclass, the semiclassical quantization on the Heisenberg
//! nilmanifold, and the Plancherel check.
//!
//! Kernels are the source of truth: a symbol is kappa_x(z) = a(x) phi(z)
//! with phi a finite sum of Gaussian-type terms, and every operator-side
//! object is derived from it by quadrature.

use crate::algebra::{GroupPoint, StepTwoAlgebra};
use crate::dual::{block_form, BlockForm};
use crate::error::Error;
use crate::hermite::{op_group_element, Truncation};
use crate::linalg::CMatrix;
use crate::manifold::Grid;
use crate::quadrature::{gauss_hermite_modified, gauss_legendre};
use crate::Result;
use nalgebra::DVector;
use num_complex::Complex;
use serde::Deserialize;
use std::sync::Arc;

pub type C64 = Complex<f64>;

/// Plancherel normalization for H1 in these conventions (symmetric
/// exponential coordinates, [V1,V2] = Z, f_hat(pi) = int f pi(x)^* dx):
/// d mu = c0 |lambda| d lambda with c0 = 1/(4 pi^2), derived from the
/// Weyl-transform Plancherel theorem.
pub const PLANCHEREL_C0: f64 = 1.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);

/// Group Fourier transform of a convolution reverses the factor order:
/// (f1 * f2)^ = f2^ f1^. Frozen here and asserted empirically in the tests.
pub const CONV_FT_REVERSES_ORDER: bool = true;

// ---- scalar x-amplitudes ----

/// Scalar amplitude a(x) on the nilmanifold.
#[derive(Clone)]
pub enum Amplitude {
    Const(C64),
    /// Real expression in the variables v1, v2, z (and pi).
    Expr(Arc<ExprFn>),
}

pub struct ExprFn {
    pub text: String,
    func: Box<dyn Fn(f64, f64, f64) -> f64>,
}

impl Amplitude {
    pub fn one() -> Self {
        Amplitude::Const(C64::new(1.0, 0.0))
    }

    pub fn constant(c: f64) -> Self {
        Amplitude::Const(C64::new(c, 0.0))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let expr: meval::Expr = text
            .parse()
            .map_err(|e| Error::Expression(format!("{e}")))?;
        let func = expr
            .bind3("v1", "v2", "z")
            .map_err(|e| Error::Expression(format!("{e}")))?;
        Ok(Amplitude::Expr(Arc::new(ExprFn {
            text: text.to_string(),
            func: Box::new(func),
        })))
    }

    pub fn eval(&self, x: &GroupPoint<f64>) -> C64 {
        match self {
            Amplitude::Const(c) => *c,
            Amplitude::Expr(f) => {
                let z = if x.z.is_empty() { 0.0 } else { x.z[0] };
                C64::new((f.func)(x.v[0], x.v.get(1).copied().unwrap_or(0.0), z), 0.0)
            }
        }
    }

    /// max |a| over a sample grid on the fundamental domain.
    pub fn sup_on_domain(&self, samples: usize) -> f64 {
        match self {
            Amplitude::Const(c) => c.norm(),
            Amplitude::Expr(_) => {
                let mut sup: f64 = 0.0;
                for i in 0..samples {
                    for j in 0..samples {
                        for k in 0..samples {
                            let x = GroupPoint {
                                v: DVector::from_vec(vec![
                                    i as f64 / samples as f64,
                                    j as f64 / samples as f64,
                                ]),
                                z: DVector::from_vec(vec![k as f64 / samples as f64]),
                            };
                            sup = sup.max(self.eval(&x).norm());
                        }
                    }
                }
                sup
            }
        }
    }
}

impl std::fmt::Debug for Amplitude {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Amplitude::Const(c) => write!(f, "Const({c})"),
            Amplitude::Expr(e) => write!(f, "Expr({})", e.text),
        }
    }
}

// ---- Gaussian-type functions on the group ----

/// One-dimensional centre profile.
#[derive(Clone, Copy, Debug)]
pub enum ZProfile {
    /// Mass-one Gaussian of width sigma.
    Gaussian { sigma: f64 },
    /// (z/sigma) times the mass-one Gaussian: integral zero, used where the
    /// centre transform must vanish at frequency zero.
    DzGaussian { sigma: f64 },
}

impl ZProfile {
    pub fn sigma(&self) -> f64 {
        match self {
            ZProfile::Gaussian { sigma } | ZProfile::DzGaussian { sigma } => *sigma,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        let s = self.sigma();
        let g = (-z * z / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s).sqrt();
        match self {
            ZProfile::Gaussian { .. } => g,
            ZProfile::DzGaussian { .. } => z / s * g,
        }
    }

    /// int rho(z) e^{-i xi z} dz.
    pub fn ft(&self, xi: f64) -> C64 {
        let s = self.sigma();
        let g = (-s * s * xi * xi / 2.0).exp();
        match self {
            ZProfile::Gaussian { .. } => C64::new(g, 0.0),
            ZProfile::DzGaussian { .. } => C64::new(0.0, -s * xi * g),
        }
    }
}

/// coef * exp(-|v - c|^2 / (2 sigma^2)) e^{i w . v} * prod_l rho_l(z_l - a_l - (B v)_l)
#[derive(Clone, Debug)]
pub struct GaussianTerm {
    pub coef: C64,
    pub v_center: Vec<f64>,
    pub v_sigma: f64,
    pub v_mod: Vec<f64>,
    pub z_center: Vec<f64>,
    /// Couples the centre argument to v: z'_l = z_l - a_l - sum_i B[l][i] v_i.
    /// Left translates of Gaussians produce exactly this shape.
    pub z_vcoupling: Option<nalgebra::DMatrix<f64>>,
    pub z_profiles: Vec<ZProfile>,
}

impl GaussianTerm {
    pub fn plain(coef: f64, v_dim: usize, v_sigma: f64, z_sigma: f64, p_dim: usize) -> Self {
        Self {
            coef: C64::new(coef, 0.0),
            v_center: vec![0.0; v_dim],
            v_sigma,
            v_mod: vec![0.0; v_dim],
            z_center: vec![0.0; p_dim],
            z_vcoupling: None,
            z_profiles: vec![ZProfile::Gaussian { sigma: z_sigma }; p_dim],
        }
    }

    pub fn eval(&self, v: &[f64], z: &[f64]) -> C64 {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            let d = vi - self.v_center[i];
            r2 += d * d;
            phase += self.v_mod[i] * vi;
        }
        let mut val = self.coef
            * C64::new((-r2 / (2.0 * self.v_sigma * self.v_sigma)).exp(), 0.0)
            * crate::scalar::cis(phase);
        for (l, prof) in self.z_profiles.iter().enumerate() {
            let mut arg = z[l] - self.z_center[l];
            if let Some(b) = &self.z_vcoupling {
                for (i, &vi) in v.iter().enumerate() {
                    arg -= b[(l, i)] * vi;
                }
            }
            val *= prof.eval(arg);
        }
        val
    }

    /// Centre transform at lambda evaluated for fixed v:
    /// int prod rho_l(z_l - a_l - (Bv)_l) e^{-i lambda . z} dz
    ///   = prod rho_l^(lambda_l) * e^{-i lambda.(a + Bv)}.
    /// Returns (scalar factor without the Bv phase, extra v-modulation -B^T lambda).
    pub fn z_ft_split(&self, lambda: &[f64]) -> (C64, Vec<f64>) {
        let mut fac = C64::new(1.0, 0.0);
        let mut phase = 0.0;
        for (l, prof) in self.z_profiles.iter().enumerate() {
            fac *= prof.ft(lambda[l]);
            phase -= lambda[l] * self.z_center[l];
        }
        fac *= crate::scalar::cis(phase);
        let vdim = self.v_center.len();
        let mut extra = vec![0.0; vdim];
        if let Some(b) = &self.z_vcoupling {
            for i in 0..vdim {
                for (l, &ll) in lambda.iter().enumerate() {
                    extra[i] -= b[(l, i)] * ll;
                }
            }
        }
        (fac, extra)
    }
}

/// A Schwartz-type function on G as a finite sum of Gaussian terms.
#[derive(Clone, Debug)]
pub struct GFunction {
    pub q: usize,
    pub p: usize,
    pub terms: Vec<GaussianTerm>,
}

impl GFunction {
    pub fn eval(&self, x: &GroupPoint<f64>) -> C64 {
        self.terms
            .iter()
            .map(|t| t.eval(x.v.as_slice(), x.z.as_slice()))
            .sum()
    }

    /// Mass-one isotropic Gaussian on H1.
    pub fn h1_gaussian(v_sigma: f64, z_sigma: f64) -> Self {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * v_sigma * v_sigma);
        Self {
            q: 2,
            p: 1,
            terms: vec![GaussianTerm::plain(norm, 2, v_sigma, z_sigma, 1)],
        }
    }

    /// Left translate f(x0^{-1} x) on H1, expressed exactly in Gaussian terms:
    /// the v-centre shifts, and the centre argument picks up the coupling
    /// z - z0 - omega(v0, v)/2.
    pub fn left_translate_h1(&self, x0: &GroupPoint<f64>) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            for i in 0..2 {
                t.v_center[i] += x0.v[i];
                // modulation phase is evaluated at shifted argument:
                // e^{i w.(v - v0)} = e^{-i w.v0} e^{i w.v}
                t.coef *= crate::scalar::cis(-t.v_mod[i] * x0.v[i]);
            }
            t.z_center[0] += x0.z[0];
            let mut b = t
                .z_vcoupling
                .clone()
                .unwrap_or_else(|| nalgebra::DMatrix::zeros(1, 2));
            // omega(v0, v)/2 = (v01 v2 - v02 v1)/2
            b[(0, 0)] += -x0.v[1] / 2.0;
            b[(0, 1)] += x0.v[0] / 2.0;
            t.z_vcoupling = Some(b);
        }
        out
    }

    /// L^2 norm squared by tensor quadrature with scale chosen from the terms.
    pub fn l2_norm_sq(&self, order: usize) -> f64 {
        let (sv, sz, _, _) = self.extents();
        let rule = gauss_hermite_modified::<f64>(order);
        let mut total = 0.0;
        let scale_v = sv * 1.5;
        let scale_z = sz * 1.5;
        for (i1, &t1) in rule.nodes.iter().enumerate() {
            for (i2, &t2) in rule.nodes.iter().enumerate() {
                for (i3, &t3) in rule.nodes.iter().enumerate() {
                    let x = GroupPoint {
                        v: DVector::from_vec(vec![scale_v * t1, scale_v * t2]),
                        z: DVector::from_vec(vec![scale_z * t3]),
                    };
                    total += rule.weights[i1]
                        * rule.weights[i2]
                        * rule.weights[i3]
                        * self.eval(&x).norm_sqr()
                        * scale_v
                        * scale_v
                        * scale_z;
                }
            }
        }
        total
    }

    /// (max v sigma+|center|, max z sigma+|center|, v mass centre, z centre)
    pub fn extents(&self) -> (f64, f64, [f64; 2], f64) {
        let mut sv = 0.0f64;
        let mut sz = 0.0f64;
        for t in &self.terms {
            let cnorm = t.v_center.iter().map(|c| c * c).sum::<f64>().sqrt();
            sv = sv.max(t.v_sigma + cnorm);
            for (l, prof) in t.z_profiles.iter().enumerate() {
                let coup = t
                    .z_vcoupling
                    .as_ref()
                    .map(|b| b.row(l).iter().map(|x| x.abs()).sum::<f64>())
                    .unwrap_or(0.0);
                sz = sz.max(prof.sigma() + t.z_center[l].abs() + coup * sv);
            }
        }
        (sv, sz, [0.0, 0.0], 0.0)
    }
}

// ---- the kernel symbol ----

/// Declared Gaussian-type decay certificate of a kernel.
#[derive(Clone, Copy, Debug)]
pub struct Envelope {
    pub amp: f64,
    pub scale_v: f64,
    pub scale_z: f64,
}

/// A symbol sigma(x, pi) stored as its convolution kernel
/// kappa_x(z) = a(x) phi(z).
#[derive(Clone, Debug)]
pub struct KernelSymbol {
    pub amplitude: Amplitude,
    pub phi: GFunction,
    pub envelope: Envelope,
}

impl KernelSymbol {
    pub fn new(amplitude: Amplitude, phi: GFunction) -> Self {
        let (sv, sz, _, _) = phi.extents();
        let amp = phi
            .terms
            .iter()
            .map(|t| {
                t.coef.norm()
                    * t.z_profiles
                        .iter()
                        .map(|p| 1.0 / (2.0 * std::f64::consts::PI * p.sigma().powi(2)).sqrt())
                        .product::<f64>()
            })
            .sum::<f64>();
        Self {
            amplitude,
            phi,
            envelope: Envelope {
                amp,
                scale_v: sv,
                scale_z: sz,
            },
        }
    }

    /// a(x) times the mass-one Gaussian kernel.
    pub fn separable_gaussian(amplitude: Amplitude, v_sigma: f64, z_sigma: f64) -> Self {
        Self::new(amplitude, GFunction::h1_gaussian(v_sigma, z_sigma))
    }

    pub fn kappa(&self, x: &GroupPoint<f64>, zpt: &GroupPoint<f64>) -> C64 {
        self.amplitude.eval(x) * self.phi.eval(zpt)
    }

    /// Spot check of the declared envelope on deterministic sample points.
    pub fn envelope_spot_check(&self, samples: usize) -> bool {
        let env = self.envelope;
        let sup_a = self.amplitude.sup_on_domain(8).max(1.0);
        for s in 0..samples {
            let t = s as f64 / samples as f64;
            let zpt = GroupPoint {
                v: DVector::from_vec(vec![3.0 * env.scale_v * t, -2.0 * env.scale_v * t]),
                z: DVector::from_vec(vec![2.5 * env.scale_z * (t - 0.5)]),
            };
            let r2 = zpt.v.norm_squared() / (env.scale_v * env.scale_v)
                + zpt.z.norm_squared() / (env.scale_z * env.scale_z);
            let bound = 1.05 * sup_a * env.amp * (-r2 / 4.0).exp() + 1e-12;
            let x = GroupPoint {
                v: DVector::from_vec(vec![0.3, 0.6]),
                z: DVector::from_vec(vec![0.1]),
            };
            if self.kappa(&x, &zpt).norm() > bound {
                return false;
            }
        }
        true
    }
}

// ---- symbol.json ----

#[derive(Deserialize)]
struct SymbolFile {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    a: Option<String>,
    phi: PhiFile,
}

#[derive(Deserialize)]
struct PhiFile {
    kind: String,
    scale: f64,
    #[serde(default)]
    zscale: Option<f64>,
    #[serde(default)]
    omega: Option<Vec<f64>>,
}

/// Parses the symbol schema:
/// {"type":"separable","a":"<expr in v1,v2,z>","phi":{"kind":"gaussian","scale":s}}.
/// Extension point: phi.kind = "modulated_gaussian" takes "omega": [w1,w2] and
/// an optional "zscale" (defaults to scale).
pub fn symbol_from_json(text: &str) -> Result<KernelSymbol> {
    let raw: SymbolFile = serde_json::from_str(text)?;
    if raw.kind != "separable" {
        return Err(Error::InvalidArgument(format!(
            "unknown symbol type {:?}",
            raw.kind
        )));
    }
    let amp = match raw.a.as_deref() {
        None | Some("1") => Amplitude::one(),
        Some(expr) => Amplitude::parse(expr)?,
    };
    let zscale = raw.phi.zscale.unwrap_or(raw.phi.scale);
    let mut phi = GFunction::h1_gaussian(raw.phi.scale, zscale);
    match raw.phi.kind.as_str() {
        "gaussian" => {}
        "modulated_gaussian" => {
            let omega = raw
                .phi
                .omega
                .ok_or_else(|| Error::InvalidArgument("modulated_gaussian needs omega".into()))?;
            if omega.len() != 2 {
                return Err(Error::DimensionMismatch {
                    what: "omega",
                    expected: 2,
                    got: omega.len(),
                });
            }
            phi.terms[0].v_mod = omega;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown phi kind {other:?}"
            )))
        }
    }
    Ok(KernelSymbol::new(amp, phi))
}

// ---- Fourier transform and restriction ----

/// Quadrature resolution for kernel-side transforms.
#[derive(Clone, Copy, Debug)]
pub struct KernelQuad {
    pub v_order: usize,
    pub group_quad: usize,
    pub tail_tol: f64,
}

impl Default for KernelQuad {
    fn default() -> Self {
        Self {
            v_order: 32,
            group_quad: 48,
            tail_tol: 1e-8,
        }
    }
}

/// sigma(x, pi^{lambda,nu}) = int kappa_x(z) pi(z)^* dz on the truncation.
///
/// The centre integral is done per term through the analytic transform; the
/// first-stratum integral uses tensor Gauss-Hermite quadrature scaled by the
/// declared envelope.
pub fn fourier_of_kernel(
    sym: &KernelSymbol,
    x: &GroupPoint<f64>,
    alg: &StepTwoAlgebra<f64>,
    lambda: &DVector<f64>,
    nu: &DVector<f64>,
    trunc: Truncation,
    quad: KernelQuad,
) -> Result<CMatrix<f64>> {
    let bf = block_form(alg, lambda, 1e-9)?;
    let qdim = alg.q();
    let scale = sym.envelope.scale_v * 1.4;
    // certified tail: envelope mass outside the node radius ~ sqrt(2 order) scale
    let reach = 0.9 * (2.0 * quad.v_order as f64).sqrt() * scale / sym.envelope.scale_v;
    let tail = sym.envelope.amp
        * (2.5 * sym.envelope.scale_v).powi(qdim as i32)
        * (-reach * reach / 2.0).exp();
    if tail > quad.tail_tol {
        return Err(Error::Truncation {
            what: "fourier_of_kernel v-domain",
            estimate: tail,
            tol: quad.tail_tol,
        });
    }
    let rule = gauss_hermite_modified::<f64>(quad.v_order);
    let dim = trunc.dim();
    let mut out = CMatrix::<f64>::zeros(dim, dim);
    let amp = sym.amplitude.eval(x);
    // iterate tensor v-nodes
    let mut idx = vec![0usize; qdim];
    loop {
        let mut w = 1.0;
        let mut v = DVector::<f64>::zeros(qdim);
        for (axis, &i) in idx.iter().enumerate() {
            w *= rule.weights[i] * scale;
            v[axis] = rule.nodes[i] * scale;
            let _ = axis;
        }
        // kernel centre transform at this v
        let mut kval = C64::new(0.0, 0.0);
        for t in &sym.phi.terms {
            let (zfac, extra_mod) = t.z_ft_split(lambda.as_slice());
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for i in 0..qdim {
                let d = v[i] - t.v_center[i];
                r2 += d * d;
                phase += (t.v_mod[i] + extra_mod[i]) * v[i];
            }
            kval += t.coef
                * zfac
                * C64::new((-r2 / (2.0 * t.v_sigma * t.v_sigma)).exp(), 0.0)
                * crate::scalar::cis(phase);
        }
        if kval.norm() > 1e-300 {
            let g = GroupPoint {
                v: v.clone(),
                z: DVector::zeros(alg.p()),
            };
            let u = op_group_element(alg, &bf, lambda, nu, trunc, &g, quad.group_quad)?;
            out += u.mat.adjoint() * (kval * C64::new(w, 0.0));
        }
        // advance the tensor index
        let mut axis = 0;
        loop {
            if axis == qdim {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < rule.nodes.len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == qdim {
            break;
        }
    }
    out *= amp;
    Ok(out)
}

/// sigma(x, pi^omega) = int kappa_x(v, z) e^{-i omega(v)} dv dz by quadrature.
pub fn restrict_to_characters(
    sym: &KernelSymbol,
    x: &GroupPoint<f64>,
    omega: &[f64],
    quad: KernelQuad,
) -> Result<C64> {
    let qdim = sym.phi.q;
    if omega.len() != qdim {
        return Err(Error::DimensionMismatch {
            what: "omega",
            expected: qdim,
            got: omega.len(),
        });
    }
    let scale = sym.envelope.scale_v * 1.4;
    let rule = gauss_hermite_modified::<f64>(quad.v_order);
    let zeros = vec![0.0f64; sym.phi.p];
    let mut total = C64::new(0.0, 0.0);
    let mut idx = vec![0usize; qdim];
    loop {
        let mut w = 1.0;
        let mut v = vec![0.0f64; qdim];
        for (axis, &i) in idx.iter().enumerate() {
            w *= rule.weights[i] * scale;
            v[axis] = rule.nodes[i] * scale;
        }
        // z-integral = centre transform at lambda = 0
        let mut kval = C64::new(0.0, 0.0);
        for t in &sym.phi.terms {
            let (zfac, _extra) = t.z_ft_split(&zeros);
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for i in 0..qdim {
                let d = v[i] - t.v_center[i];
                r2 += d * d;
                phase += t.v_mod[i] * v[i];
            }
            kval += t.coef
                * zfac
                * C64::new((-r2 / (2.0 * t.v_sigma * t.v_sigma)).exp(), 0.0)
                * crate::scalar::cis(phase);
        }
        let mut ophase = 0.0;
        for i in 0..qdim {
            ophase -= omega[i] * v[i];
        }
        total += kval * crate::scalar::cis(ophase) * C64::new(w, 0.0);
        let mut axis = 0;
        loop {
            if axis == qdim {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < rule.nodes.len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == qdim {
            break;
        }
    }
    Ok(sym.amplitude.eval(x) * total)
}

/// int_G sup_x |kappa_x(z)| dz by quadrature over the envelope domain.
pub fn kernel_l1_bound(sym: &KernelSymbol, quad: KernelQuad) -> f64 {
    let sup_a = self_sup(sym);
    let scale_v = sym.envelope.scale_v * 1.4;
    let scale_z = sym.envelope.scale_z * 1.4;
    let rule = gauss_hermite_modified::<f64>(quad.v_order);
    let mut total = 0.0;
    for (i1, &t1) in rule.nodes.iter().enumerate() {
        for (i2, &t2) in rule.nodes.iter().enumerate() {
            for (i3, &t3) in rule.nodes.iter().enumerate() {
                let zpt = GroupPoint {
                    v: DVector::from_vec(vec![scale_v * t1, scale_v * t2]),
                    z: DVector::from_vec(vec![scale_z * t3]),
                };
                let val = sym.phi.eval(&zpt).norm();
                total += rule.weights[i1]
                    * rule.weights[i2]
                    * rule.weights[i3]
                    * scale_v
                    * scale_v
                    * scale_z
                    * val;
            }
        }
    }
    sup_a * total
}

fn self_sup(sym: &KernelSymbol) -> f64 {
    sym.amplitude.sup_on_domain(24)
}

// ---- quantization on the H1 grid ----

/// Default ratio between the rescaled kernel width and the grid spacing
/// below which the quantization refuses to run.
pub const RESOLUTION_FACTOR: f64 = 1.5;

/// Op_eps(sigma) f on the grid, with the default resolution guard.
pub fn op_epsilon_apply(
    grid: &Grid,
    sym: &KernelSymbol,
    eps: f64,
    f: &[C64],
) -> Result<Vec<C64>> {
    op_epsilon_apply_with(grid, sym, eps, f, RESOLUTION_FACTOR)
}

/// Op_eps(sigma) f: lattice-periodized twisted convolution with the
/// eps-rescaled kernel, evaluated exactly in the centre frequency domain.
///
/// For f = sum_m F_m(v) e^{2 pi i m z}, the operator is block diagonal in m;
/// the block is a twisted planar convolution whose kernel is the centre
/// Fourier transform of the rescaled kernel at frequency 2 pi m. This keeps
/// the centre direction exact even when eps^2 is far below the z spacing.
pub fn op_epsilon_apply_with(
    grid: &Grid,
    sym: &KernelSymbol,
    eps: f64,
    f: &[C64],
    resolution_factor: f64,
) -> Result<Vec<C64>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if f.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            what: "grid function",
            expected: grid.dim(),
            got: f.len(),
        });
    }
    if sym.phi.q != 2 || sym.phi.p != 1 {
        return Err(Error::UnsupportedKernel("op_epsilon_apply (needs H1 kernel)"));
    }
    if sym
        .phi
        .terms
        .iter()
        .any(|t| t.z_vcoupling.is_some() || t.z_center.iter().any(|&c| c != 0.0))
    {
        return Err(Error::UnsupportedKernel(
            "op_epsilon_apply (centre-coupled kernels)",
        ));
    }
    let needed = resolution_factor * grid.h();
    let actual = eps * sym.envelope.scale_v;
    if actual < needed {
        return Err(Error::Unresolved { needed, actual });
    }
    let n = grid.n;
    let nz = grid.nz();
    let tau = 2.0 * std::f64::consts::PI;

    // centre DFT of f: F[m][i*n+j], m = 0..nz-1 representing frequencies
    // m and m - nz for m >= n.
    let mut fmodes: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n * n]; nz];
    let inv_nz = 1.0 / nz as f64;
    let tw: Vec<C64> = (0..nz)
        .map(|t| crate::scalar::cis(-tau * t as f64 / nz as f64))
        .collect();
    let mut fmax = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for m in 0..nz {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..nz {
                    acc += f[grid.flat(i, j, k)] * tw[(m * k) % nz];
                }
                let val = acc * inv_nz;
                fmodes[m][i * n + j] = val;
                fmax = fmax.max(val.norm());
            }
        }
    }

    // per-mode application; the centre direction is treated spectrally
    let live: Vec<usize> = (0..nz)
        .filter(|&m| fmodes[m].iter().any(|v| v.norm() > 1e-13 * fmax))
        .collect();
    let mut gmodes: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n * n]; nz];
    for &mstore in &live {
        let mtrue = if mstore >= n {
            mstore as i64 - nz as i64
        } else {
            mstore as i64
        };
        gmodes[mstore] = conv_block_apply(grid, sym, eps, mtrue, &fmodes[mstore]);
    }

    // inverse centre DFT and the pointwise amplitude
    let twinv: Vec<C64> = (0..nz)
        .map(|t| crate::scalar::cis(tau * t as f64 / nz as f64))
        .collect();
    let mut out = vec![C64::new(0.0, 0.0); grid.dim()];
    for i in 0..n {
        for j in 0..n {
            for k in 0..nz {
                let mut acc = C64::new(0.0, 0.0);
                for &m in &live {
                    let gm = gmodes[m][i * n + j];
                    if gm.re != 0.0 || gm.im != 0.0 {
                        acc += gm * twinv[(m * k) % nz];
                    }
                }
                out[grid.flat(i, j, k)] = acc;
            }
        }
    }
    for idx in 0..grid.dim() {
        let a = sym.amplitude.eval(&grid.point(idx));
        out[idx] *= a;
    }
    Ok(out)
}

/// Lattice ball radius for the rescaled kernel.
fn lattice_reach(sym: &KernelSymbol, eps: f64) -> i64 {
    (5.0 * sym.envelope.scale_v * eps + 1.5).ceil() as i64
}

/// Difference table of one term at lattice shift g: values of
/// eps^{-2} kappa_v((g + d h) / eps) over the true differences
/// d in [-(n-1), n-1]^2, or None when the whole block is negligible.
fn term_difference_table(
    grid: &Grid,
    term: &GaussianTerm,
    eps: f64,
    g1: i64,
    g2: i64,
) -> Option<Vec<C64>> {
    let n = grid.n as i64;
    let inv_q = eps.powi(-2);
    let mut tab = vec![C64::new(0.0, 0.0); (2 * n * n * 2) as usize];
    let side = 2 * n;
    let mut tab_max = 0.0f64;
    for d1 in -(n - 1)..=(n - 1) {
        for d2 in -(n - 1)..=(n - 1) {
            let u1 = (g1 as f64 + d1 as f64 * grid.h()) / eps;
            let u2 = (g2 as f64 + d2 as f64 * grid.h()) / eps;
            let du1 = u1 - term.v_center[0];
            let du2 = u2 - term.v_center[1];
            let r2 = du1 * du1 + du2 * du2;
            if r2 > 60.0 * term.v_sigma * term.v_sigma {
                continue;
            }
            let val = inv_q * (-r2 / (2.0 * term.v_sigma * term.v_sigma)).exp();
            let ph = term.v_mod[0] * u1 + term.v_mod[1] * u2;
            tab[((d1 + n) * side + (d2 + n)) as usize] = C64::new(val, 0.0) * crate::scalar::cis(ph);
            tab_max = tab_max.max(val);
        }
    }
    if tab_max * eps * eps < 1e-14 {
        None
    } else {
        Some(tab)
    }
}

/// One centre-frequency block of the quantization: maps the planar mode
/// F(v) to (Op F)(v) without the amplitude factor. The frequency-zero block
/// is a plain periodized convolution; nonzero frequencies carry the
/// symplectic phases, evaluated through an exact integer phase table.
pub fn conv_block_apply(
    grid: &Grid,
    sym: &KernelSymbol,
    eps: f64,
    mtrue: i64,
    fb: &[C64],
) -> Vec<C64> {
    let n = grid.n;
    let tau = 2.0 * std::f64::consts::PI;
    let wv = grid.h() * grid.h();
    let gmax = lattice_reach(sym, eps);
    let n2 = (n * n) as i64;
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for term in &sym.phi.terms {
        let zfac = term.z_profiles[0].ft(tau * mtrue as f64 * eps * eps);
        if zfac.norm() < 1e-14 {
            continue;
        }
        let coef = term.coef * zfac * C64::new(wv, 0.0);
        if mtrue == 0 {
            // phases are trivial at frequency zero: collapse the lattice sum
            // into one circular difference table, each physical point
            // g + c h visited exactly once
            let inv_q = eps.powi(-2);
            let mut circ = vec![C64::new(0.0, 0.0); n * n];
            for c1 in 0..n {
                for c2 in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for g1 in -gmax - 1..=gmax {
                        for g2 in -gmax - 1..=gmax {
                            let u1 = (g1 as f64 + c1 as f64 * grid.h()) / eps;
                            let u2 = (g2 as f64 + c2 as f64 * grid.h()) / eps;
                            let du1 = u1 - term.v_center[0];
                            let du2 = u2 - term.v_center[1];
                            let r2 = du1 * du1 + du2 * du2;
                            if r2 > 60.0 * term.v_sigma * term.v_sigma {
                                continue;
                            }
                            let val = inv_q * (-r2 / (2.0 * term.v_sigma * term.v_sigma)).exp();
                            let ph = term.v_mod[0] * u1 + term.v_mod[1] * u2;
                            acc += C64::new(val, 0.0) * crate::scalar::cis(ph);
                        }
                    }
                    circ[c1 * n + c2] = acc;
                }
            }
            for i1 in 0..n {
                for i2 in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j1 in 0..n {
                        for j2 in 0..n {
                            let c1 = (i1 + n - j1) % n;
                            let c2 = (i2 + n - j2) % n;
                            let t = circ[c1 * n + c2];
                            if t.re != 0.0 || t.im != 0.0 {
                                acc += t * fb[j1 * n + j2];
                            }
                        }
                    }
                    out[i1 * n + i2] += coef * acc;
                }
            }
        } else {
            let cis_tab: Vec<C64> = (0..2 * n2)
                .map(|t| crate::scalar::cis(std::f64::consts::PI * t as f64 / n2 as f64))
                .collect();
            for g1 in -gmax..=gmax {
                for g2 in -gmax..=gmax {
                    let Some(tab) = term_difference_table(grid, term, eps, g1, g2) else {
                        continue;
                    };
                    let side = 2 * n as i64;
                    // E3 = mtrue g1 g2 n^2 mod 2 n^2
                    let e3 = (mtrue * g1 * g2).rem_euclid(2) * n2;
                    for i1 in 0..n as i64 {
                        for i2 in 0..n as i64 {
                            // E1 = mtrue n (g1 i2 - g2 i1)
                            let e1 =
                                (mtrue * n as i64 * (g1 * i2 - g2 * i1)).rem_euclid(2 * n2);
                            let mut acc = C64::new(0.0, 0.0);
                            for j1 in 0..n as i64 {
                                for j2 in 0..n as i64 {
                                    let tv = tab[((i1 - j1 + n as i64) * side
                                        + (i2 - j2 + n as i64))
                                        as usize];
                                    if tv.re == 0.0 && tv.im == 0.0 {
                                        continue;
                                    }
                                    // E2 = -mtrue (j1 (i2 + n g2) - j2 (i1 + n g1))
                                    let e2 = (-(mtrue
                                        * (j1 * (i2 + n as i64 * g2)
                                            - j2 * (i1 + n as i64 * g1))))
                                        .rem_euclid(2 * n2);
                                    let e = ((e1 + e2 + e3) % (2 * n2)) as usize;
                                    acc += tv
                                        * cis_tab[e]
                                        * fb[(j1 * n as i64 + j2) as usize];
                                }
                            }
                            out[(i1 * n as i64 + i2) as usize] += coef * acc;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint block: (C^H w)(y) = sum_x conj(K_m(x, y)) w(x).
fn conv_block_apply_adjoint(
    grid: &Grid,
    sym: &KernelSymbol,
    eps: f64,
    mtrue: i64,
    wb: &[C64],
) -> Vec<C64> {
    let n = grid.n;
    let tau = 2.0 * std::f64::consts::PI;
    let wv = grid.h() * grid.h();
    let gmax = lattice_reach(sym, eps);
    let n2 = (n * n) as i64;
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    let cis_tab: Vec<C64> = (0..2 * n2)
        .map(|t| crate::scalar::cis(std::f64::consts::PI * t as f64 / n2 as f64))
        .collect();
    for term in &sym.phi.terms {
        let zfac = term.z_profiles[0].ft(tau * mtrue as f64 * eps * eps);
        if zfac.norm() < 1e-14 {
            continue;
        }
        let coef = (term.coef * zfac * C64::new(wv, 0.0)).conj();
        for g1 in -gmax..=gmax {
            for g2 in -gmax..=gmax {
                let Some(tab) = term_difference_table(grid, term, eps, g1, g2) else {
                    continue;
                };
                let side = 2 * n as i64;
                let e3 = (mtrue * g1 * g2).rem_euclid(2) * n2;
                for j1 in 0..n as i64 {
                    for j2 in 0..n as i64 {
                        let mut acc = C64::new(0.0, 0.0);
                        for i1 in 0..n as i64 {
                            for i2 in 0..n as i64 {
                                let tv = tab[((i1 - j1 + n as i64) * side
                                    + (i2 - j2 + n as i64))
                                    as usize];
                                if tv.re == 0.0 && tv.im == 0.0 {
                                    continue;
                                }
                                let e1 = (mtrue * n as i64 * (g1 * i2 - g2 * i1))
                                    .rem_euclid(2 * n2);
                                let e2 = (-(mtrue
                                    * (j1 * (i2 + n as i64 * g2)
                                        - j2 * (i1 + n as i64 * g1))))
                                    .rem_euclid(2 * n2);
                                let e = ((e1 + e2 + e3) % (2 * n2)) as usize;
                                acc += (tv * cis_tab[e]).conj()
                                    * wb[(i1 * n as i64 + i2) as usize];
                            }
                        }
                        out[(j1 * n as i64 + j2) as usize] += coef * acc;
                    }
                }
            }
        }
    }
    out
}

/// Probes whether the amplitude depends on the centre coordinate.
fn amplitude_centre_independent(sym: &KernelSymbol) -> bool {
    match &sym.amplitude {
        Amplitude::Const(_) => true,
        Amplitude::Expr(_) => {
            for (v1, v2) in [(0.13, 0.71), (0.52, 0.09), (0.88, 0.44)] {
                let probe = |z: f64| {
                    sym.amplitude.eval(&GroupPoint {
                        v: DVector::from_vec(vec![v1, v2]),
                        z: DVector::from_vec(vec![z]),
                    })
                };
                let base = probe(0.11);
                if (probe(0.57) - base).norm() > 1e-13 || (probe(0.93) - base).norm() > 1e-13 {
                    return false;
                }
            }
            true
        }
    }
}

/// Operator norm of one centre-frequency block (including the amplitude,
/// which must not depend on the centre coordinate), by power iteration on
/// the adjoint square.
pub fn op_epsilon_block_norm(
    grid: &Grid,
    sym: &KernelSymbol,
    eps: f64,
    mtrue: i64,
    iters: usize,
) -> Result<f64> {
    if !amplitude_centre_independent(sym) {
        return Err(Error::UnsupportedKernel(
            "block operator norm (centre-dependent amplitude)",
        ));
    }
    let n = grid.n;
    let amp: Vec<C64> = (0..n * n)
        .map(|p| {
            sym.amplitude.eval(&GroupPoint {
                v: DVector::from_vec(vec![
                    (p / n) as f64 * grid.h(),
                    (p % n) as f64 * grid.h(),
                ]),
                z: DVector::from_vec(vec![0.0]),
            })
        })
        .collect();
    let mut v: Vec<C64> = (0..n * n)
        .map(|i| C64::new(1.0 / (1.0 + (i % 13) as f64), 0.4 / (1.0 + (i % 7) as f64)))
        .collect();
    let nrm0 = (v.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
    v.iter_mut().for_each(|c| *c /= nrm0);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let mut w = conv_block_apply(grid, sym, eps, mtrue, &v);
        w.iter_mut().zip(&amp).for_each(|(x, a)| *x *= a);
        let mut wa: Vec<C64> = w.iter().zip(&amp).map(|(x, a)| x * a.conj()).collect();
        let u = conv_block_apply_adjoint(grid, sym, eps, mtrue, &wa);
        wa = u;
        let nrm = (wa.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
        if nrm == 0.0 {
            return Ok(0.0);
        }
        sigma = nrm.sqrt();
        v = wa.into_iter().map(|c| c / nrm).collect();
    }
    Ok(sigma)
}

/// Measured operator norm of the discretized Op_eps: the operator is block
/// diagonal over centre frequencies, so the norm is the maximum block norm.
/// Blocks whose centre transform factor already caps them below the current
/// best are skipped.
pub fn op_epsilon_norm(grid: &Grid, sym: &KernelSymbol, eps: f64, iters: usize) -> Result<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut best = 0.0f64;
    let mut zmax = 0.0f64;
    for term in &sym.phi.terms {
        zmax = zmax.max(term.z_profiles[0].ft(0.0).norm() * term.coef.norm());
    }
    for m in 0..grid.nz() {
        let mtrue = if m >= grid.n {
            m as i64 - grid.nz() as i64
        } else {
            m as i64
        };
        // cheap bound: the block kernel shrinks with the centre factor
        let mut cap = 0.0f64;
        for term in &sym.phi.terms {
            cap += term.z_profiles[0].ft(tau * mtrue as f64 * eps * eps).norm()
                * term.coef.norm();
        }
        if best > 0.0 && cap < 0.2 * zmax && cap / zmax.max(1e-300) < best * 1e-2 {
            continue;
        }
        let b = op_epsilon_block_norm(grid, sym, eps, mtrue, iters)?;
        best = best.max(b);
    }
    Ok(best)
}

// ---- the operator-symbol interface used by measures ----

/// Evaluation context for the infinite-dimensional points of the dual.
pub struct RepPoint<'a> {
    pub alg: &'a StepTwoAlgebra<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub trunc: Truncation,
}

/// A symbol evaluable at both kinds of points of the dual.
pub trait OperatorSymbol {
    fn at_character(&self, x: &GroupPoint<f64>, omega: &[f64]) -> C64;
    fn at_rep(&self, x: &GroupPoint<f64>, pt: &RepPoint) -> Result<CMatrix<f64>>;
    /// Uniform norm bound used in pairing estimates.
    fn sup_norm(&self) -> f64;
}

impl OperatorSymbol for KernelSymbol {
    fn at_character(&self, x: &GroupPoint<f64>, omega: &[f64]) -> C64 {
        restrict_to_characters(self, x, omega, KernelQuad::default()).unwrap_or(C64::new(0.0, 0.0))
    }

    fn at_rep(&self, x: &GroupPoint<f64>, pt: &RepPoint) -> Result<CMatrix<f64>> {
        fourier_of_kernel(
            self,
            x,
            pt.alg,
            &pt.lambda,
            &pt.nu,
            pt.trunc,
            KernelQuad::default(),
        )
    }

    fn sup_norm(&self) -> f64 {
        kernel_l1_bound(self, KernelQuad::default())
    }
}

/// a(x) psi(spec pi(-L)): explicitly diagonal, hence in the commuting class.
pub struct DiagonalSymbol {
    pub amplitude: Amplitude,
    pub psi: Arc<dyn Fn(f64) -> C64 + Send + Sync>,
    pub sup: f64,
}

impl OperatorSymbol for DiagonalSymbol {
    fn at_character(&self, x: &GroupPoint<f64>, omega: &[f64]) -> C64 {
        let o2 = omega.iter().map(|w| w * w).sum::<f64>();
        self.amplitude.eval(x) * (self.psi)(o2)
    }

    fn at_rep(&self, x: &GroupPoint<f64>, pt: &RepPoint) -> Result<CMatrix<f64>> {
        let bf = block_form(pt.alg, &pt.lambda, 1e-9)?;
        let nu2 = pt.nu.norm_squared();
        let dim = pt.trunc.dim();
        let mut m = CMatrix::<f64>::zeros(dim, dim);
        for (idx, alpha) in pt.trunc.alphas().enumerate() {
            m[(idx, idx)] = (self.psi)(bf.zeta(&alpha)? + nu2);
        }
        Ok(m * self.amplitude.eval(x))
    }

    fn sup_norm(&self) -> f64 {
        self.sup
    }
}

/// sigma eta: the infinite-dimensional part scaled by eta(lambda), the
/// character part by eta(0) (the kernel construction convolves the centre
/// direction, and characters see the total centre mass). Preserves the
/// commuting class.
pub struct EtaScaled<S> {
    pub base: S,
    pub eta: Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>,
    pub eta_at_zero: C64,
    pub eta_sup: f64,
}

pub fn multiply_by_eta<S: OperatorSymbol>(
    base: S,
    eta: Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>,
    centre_dim: usize,
    eta_sup: f64,
) -> EtaScaled<S> {
    let eta_at_zero = eta(&vec![0.0; centre_dim]);
    EtaScaled {
        base,
        eta,
        eta_at_zero,
        eta_sup,
    }
}

impl<S: OperatorSymbol> OperatorSymbol for EtaScaled<S> {
    fn at_character(&self, x: &GroupPoint<f64>, omega: &[f64]) -> C64 {
        self.base.at_character(x, omega) * self.eta_at_zero
    }

    fn at_rep(&self, x: &GroupPoint<f64>, pt: &RepPoint) -> Result<CMatrix<f64>> {
        let scale = (self.eta)(pt.lambda.as_slice());
        Ok(self.base.at_rep(x, pt)? * scale)
    }

    fn sup_norm(&self) -> f64 {
        self.base.sup_norm() * self.eta_sup
    }
}

// ---- Plancherel on H1 ----

#[derive(Clone, Copy, Debug)]
pub struct PlancherelOptions {
    pub lambda_max: f64,
    pub lambda_panels: usize,
    pub panel_order: usize,
    pub n_base: usize,
    pub n_max: usize,
    pub space_order: usize,
}

impl Default for PlancherelOptions {
    fn default() -> Self {
        Self {
            lambda_max: 0.0, // 0 = automatic from the centre profiles
            lambda_panels: 24,
            panel_order: 6,
            n_base: 24,
            n_max: 192,
            space_order: 72,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlancherelReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub lambda_max: f64,
    pub n_max_used: usize,
}

/// Verifies int |f|^2 = c0 int |lambda| ||f^(pi^lambda)||_HS^2 d lambda on H1
/// with c0 = [`PLANCHEREL_C0`] and Hilbert-Schmidt norms from truncated
/// matrices.
///
/// The matrix of f^(pi^lambda) is assembled per Gaussian term: the centre
/// and the Q-direction integrals are analytic, the P-direction and the
/// Hermite variable are quadrature. The truncation size grows like
/// 1/(sigma^2 |lambda|) near lambda = 0, capped at `n_max`; centre profiles
/// that vanish at frequency zero make the capped region negligible.
pub fn plancherel_check(f: &GFunction, opts: PlancherelOptions) -> Result<PlancherelReport> {
    if f.q != 2 || f.p != 1 {
        return Err(Error::UnsupportedKernel("plancherel_check (needs H1)"));
    }
    let lhs = f.l2_norm_sq(opts.space_order);

    // lambda domain from the centre decay: |z_ft| <= e^{-smin^2 lam^2/2}
    let smin = f
        .terms
        .iter()
        .map(|t| t.z_profiles[0].sigma())
        .fold(f64::INFINITY, f64::min);
    let lam_max = if opts.lambda_max > 0.0 {
        opts.lambda_max
    } else {
        4.3 / smin
    };
    let base = gauss_legendre::<f64>(opts.panel_order);
    let alg = StepTwoAlgebra::<f64>::h1();
    let mut rhs = 0.0;
    let mut n_used = 0usize;
    for sign in [1.0f64, -1.0] {
        for panel in 0..opts.lambda_panels {
            let a = lam_max * panel as f64 / opts.lambda_panels as f64;
            let b = lam_max * (panel + 1) as f64 / opts.lambda_panels as f64;
            let rule = base.scaled_to(a.max(1e-4), b);
            for (&lam_abs, &w) in rule.nodes.iter().zip(&rule.weights) {
                let lam = sign * lam_abs;
                let hs = hs_norm_sq_h1(f, &alg, lam, opts.n_base, opts.n_max, &mut n_used)?;
                rhs += w * PLANCHEREL_C0 * lam_abs * hs;
            }
        }
    }
    let rel_err = (rhs - lhs).abs() / lhs.max(1e-300);
    Ok(PlancherelReport {
        lhs,
        rhs,
        rel_err,
        lambda_max: lam_max,
        n_max_used: n_used,
    })
}

/// ||f^(pi^lambda)||_HS^2 on an adaptive truncation: the matrix is built in
/// closed form per Gaussian term and the HS norm of the truncated matrix is
/// returned.
fn hs_norm_sq_h1(
    f: &GFunction,
    alg: &StepTwoAlgebra<f64>,
    lam: f64,
    n_base: usize,
    n_max: usize,
    n_used: &mut usize,
) -> Result<f64> {
    let m = transform_matrix_h1(f, alg, lam, n_base, n_max, n_used)?;
    Ok(m.iter().map(|z| z.norm_sqr()).sum())
}

/// f^(pi^lambda) for an H1 Gaussian-term function, assembled exactly.
///
/// The transform of a centred unmodulated term is diagonal (Mehler):
///   d_k = (2 pi / eta) (s - 1)^k / s^{k+1},  s = 1/2 + 1/(eta sigma^2).
/// Centres and modulations conjugate the diagonal core by group-element
/// matrices: with y the first-stratum vector realizing the modulation as a
/// lattice of phases, the term transform is
///   coef zfac e^{i w c} pi(y) T0 pi(y)^* pi(c)^*.
pub fn transform_matrix_h1(
    f: &GFunction,
    alg: &StepTwoAlgebra<f64>,
    lam: f64,
    n_base: usize,
    n_max: usize,
    n_used: &mut usize,
) -> Result<CMatrix<f64>> {
    if f.q != 2 || f.p != 1 {
        return Err(Error::UnsupportedKernel("transform_matrix_h1"));
    }
    let eta = lam.abs();
    let lamv = DVector::from_vec(vec![lam]);
    let bf = block_form(alg, &lamv, 1e-9)?;
    // occupied levels: width demand 9/(sigma^2 eta), displacement demand
    // ~ |alpha|^2 with alpha the phase-space shift of centre and modulation
    let mut need = 0usize;
    for t in f.terms.iter() {
        let c2: f64 = t.v_center.iter().map(|c| c * c).sum();
        let w2: f64 = t.v_mod.iter().map(|m| m * m).sum::<f64>()
            + t.z_vcoupling
                .as_ref()
                .map(|b| b.iter().map(|x| (x * lam).powi(2)).sum())
                .unwrap_or(0.0);
        let shift2 = eta * c2 + w2 / eta.max(1e-9);
        let shift_modes = (0.8 * shift2 + 6.0 * shift2.sqrt()).ceil() as usize;
        let width_modes = (9.0 / (t.v_sigma * t.v_sigma * eta)).ceil() as usize;
        need = need.max(shift_modes).max(width_modes);
    }
    let n = (n_base + need).min(n_max).max(n_base);
    *n_used = (*n_used).max(n);
    let trunc = Truncation::new(1, n);
    let quad = n + 16;
    let nu = DVector::zeros(0);
    let mut m = CMatrix::<f64>::zeros(n, n);
    for term in &f.terms {
        let (zfac, extra_mod) = term.z_ft_split(&[lam]);
        if zfac.norm() < 1e-300 {
            continue;
        }
        let sig = term.v_sigma;
        let s = 0.5 + 1.0 / (eta * sig * sig);
        let mut core = CMatrix::<f64>::zeros(n, n);
        let mut d = (2.0 * std::f64::consts::PI / eta) / s;
        for k in 0..n {
            core[(k, k)] = C64::new(d, 0.0);
            d *= (s - 1.0) / s;
        }
        let w_eff = [
            term.v_mod[0] + extra_mod[0],
            term.v_mod[1] + extra_mod[1],
        ];
        let wc = w_eff[0] * term.v_center[0] + w_eff[1] * term.v_center[1];
        // centre conjugation phase: e^{i lam omega(c,u)/2} adds the
        // modulation (lam/2)(-c2, c1)
        let w2 = [
            w_eff[0] - lam / 2.0 * term.v_center[1],
            w_eff[1] + lam / 2.0 * term.v_center[0],
        ];
        let mut t_term = core;
        let w2n = (w2[0] * w2[0] + w2[1] * w2[1]).sqrt();
        if w2n > 1e-14 {
            // modulation e^{i w2 . u} = conjugation by pi(y), y = (-w2_2, w2_1)/lam
            let y = GroupPoint {
                v: DVector::from_vec(vec![-w2[1] / lam, w2[0] / lam]),
                z: DVector::zeros(1),
            };
            let py = op_group_element(alg, &bf, &lamv, &nu, trunc, &y, quad)?.mat;
            t_term = &py * t_term * py.adjoint();
        }
        let cn = (term.v_center[0] * term.v_center[0] + term.v_center[1] * term.v_center[1])
            .sqrt();
        if cn > 1e-14 {
            let c = GroupPoint {
                v: DVector::from_vec(term.v_center.clone()),
                z: DVector::zeros(1),
            };
            let pc = op_group_element(alg, &bf, &lamv, &nu, trunc, &c, quad)?.mat;
            t_term *= pc.adjoint();
        }
        m += t_term * (term.coef * zfac * crate::scalar::cis(wc));
    }
    Ok(m)
}

/// test hook: HS norm at one lambda with default sizing
pub fn debug_hs_norm(f: &GFunction, lam: f64) -> f64 {
    let alg = StepTwoAlgebra::<f64>::h1();
    let mut used = 0;
    hs_norm_sq_h1(f, &alg, lam, 24, 128, &mut used).unwrap()
}

// ---- sampled symbol fields and the commuting test ----

pub struct FieldEntry {
    pub x: GroupPoint<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub op: CMatrix<f64>,
    pub bf: BlockForm<f64>,
}

/// A symbol realized on finite sample sets of (x, lambda, nu).
pub struct SymbolField {
    pub trunc: Truncation,
    pub entries: Vec<FieldEntry>,
}

pub fn sample_field<S: OperatorSymbol>(
    sym: &S,
    alg: &StepTwoAlgebra<f64>,
    xs: &[GroupPoint<f64>],
    lambdas: &[DVector<f64>],
    trunc: Truncation,
) -> Result<SymbolField> {
    let mut entries = Vec::new();
    for lam in lambdas {
        let bf = block_form(alg, lam, 1e-9)?;
        let nu = DVector::zeros(bf.k);
        for x in xs {
            let pt = RepPoint {
                alg,
                lambda: lam.clone(),
                nu: nu.clone(),
                trunc,
            };
            let op = sym.at_rep(x, &pt)?;
            entries.push(FieldEntry {
                x: x.clone(),
                lambda: lam.clone(),
                nu: nu.clone(),
                op,
                bf: bf.clone(),
            });
        }
    }
    Ok(SymbolField { trunc, entries })
}

/// True when every sampled operator commutes with pi(-L) within `tol`;
/// returns the worst commutator norm.
pub fn is_in_b0(field: &SymbolField, tol: f64) -> (bool, f64) {
    let mut worst = 0.0f64;
    for e in &field.entries {
        let l = crate::hermite::op_sublaplacian(&e.bf, &e.nu, field.trunc)
            .expect("field entry conforms")
            .mat;
        let comm = &e.op * &l - &l * &e.op;
        worst = worst.max(crate::linalg::op_norm(&comm));
    }
    (worst <= tol, worst)
}
