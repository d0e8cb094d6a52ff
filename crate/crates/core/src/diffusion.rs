//! Kernel nonlinearity `G(u)(v)[x] = ∫ g(x, u(y)) v(y) dy` on the Dirichlet
//! Laplacian of (0,1), expressed in V-orthonormal Galerkin coordinates.
//!
//! With `φ_i = λ_i^{-ρ} e_i` and `e_i = √2 sin(iπx)`, a coordinate vector `u`
//! reconstructs the field `û = Σ u_j φ_j`, and
//! `G_{ac}(u) = λ_a^ρ ∬ e_a(x) g(x, û(y)) φ_c(y) dy dx`.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracint::Nonlinearity;
use crate::hilbert::{norm2, SpectralOperator};
use crate::quad::composite_gauss_legendre;

/// `λ_i = (iπ)²`, `i = 1..=d`.
pub fn laplacian_spectrum(d: usize) -> Result<SpectralOperator> {
    if d == 0 {
        return Err(Error::Domain("laplacian_spectrum needs d >= 1".into()));
    }
    SpectralOperator::new((1..=d).map(|i| (i as f64 * PI).powi(2)).collect())
}

/// `g(x, z)` together with `∂_z g, ..., ∂_z⁴ g`.
pub type KernelFn = fn(f64, f64) -> [f64; 5];

/// A named kernel.
#[derive(Clone, Copy)]
pub struct Kernel {
    pub name: &'static str,
    pub eval: KernelFn,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Kernel({})", self.name)
    }
}

fn tanh_derivs(z: f64) -> [f64; 5] {
    let t = z.tanh();
    let s = 1.0 - t * t;
    [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t), 8.0 * t * s * (2.0 - 3.0 * t * t)]
}

fn sin_derivs(z: f64) -> [f64; 5] {
    let (s, c) = z.sin_cos();
    [s, c, -s, -c, s]
}

fn scale5(a: f64, v: [f64; 5]) -> [f64; 5] {
    v.map(|x| a * x)
}

fn sin_tanh(x: f64, z: f64) -> [f64; 5] {
    scale5((PI * x).sin(), tanh_derivs(z))
}

fn sin_sin(x: f64, z: f64) -> [f64; 5] {
    scale5((PI * x).sin(), sin_derivs(z))
}

fn bump_tanh(x: f64, z: f64) -> [f64; 5] {
    scale5(4.0 * x * (1.0 - x), tanh_derivs(z))
}

/// Kernels addressable by name from a model spec.
#[derive(Debug, Clone)]
pub struct KernelRegistry {
    kernels: HashMap<String, Kernel>,
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut r = KernelRegistry { kernels: HashMap::new() };
        r.register(Kernel { name: "sin_tanh", eval: sin_tanh });
        r.register(Kernel { name: "sin_sin", eval: sin_sin });
        r.register(Kernel { name: "bump_tanh", eval: bump_tanh });
        r
    }
}

impl KernelRegistry {
    pub fn register(&mut self, kernel: Kernel) {
        self.kernels.insert(kernel.name.to_string(), kernel);
    }

    pub fn get(&self, name: &str) -> Result<Kernel> {
        self.kernels.get(name).copied().ok_or_else(|| {
            let mut known: Vec<_> = self.kernels.keys().cloned().collect();
            known.sort();
            Error::Config(format!("unknown kernel '{name}' (known: {})", known.join(", ")))
        })
    }
}

/// JSON model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kernel: String,
    pub d: usize,
    #[serde(default = "default_rho_eps")]
    pub rho_eps: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub quad_nodes: Option<usize>,
}

fn default_rho_eps() -> f64 {
    0.01
}

fn default_kappa() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(kernel: &str, d: usize) -> Self {
        ModelSpec { kernel: kernel.into(), d, rho_eps: default_rho_eps(), kappa: default_kappa(), quad_nodes: None }
    }
}

/// Bounds for `G` and its first three derivatives over a ball in V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub c_g: f64,
    pub c_dg: f64,
    pub c_d2g: f64,
    pub c_d3g: f64,
    /// Sup of the fourth derivative tensor; only used as a diagnostic.
    pub c_d4g: f64,
    pub radius: f64,
}

/// Scan settings for [`KernelModel::measure_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsScan {
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Multiplier applied to the scanned maxima.
    pub margin: f64,
}

impl Default for BoundsScan {
    fn default() -> Self {
        BoundsScan { radius: 2.0, samples: 200, seed: 0, margin: 1.25 }
    }
}

#[derive(Debug, Clone)]
pub struct KernelModel {
    kernel: Kernel,
    spec: ModelSpec,
    rho: f64,
    op: SpectralOperator,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `[m*d + i] = φ_i(x_m)`
    phi: Vec<f64>,
    /// `[m*d + a] = w_m λ_a^ρ e_a(x_m)`
    proj: Vec<f64>,
    bounds: Option<Bounds>,
}

impl KernelModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        Self::from_spec_with(spec, &KernelRegistry::default())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    pub fn from_spec_with(spec: &ModelSpec, registry: &KernelRegistry) -> Result<Self> {
        let kernel = registry.get(&spec.kernel)?;
        let d = spec.d;
        let op = laplacian_spectrum(d)?;
        if !(0.0..0.75).contains(&spec.rho_eps) {
            return Err(Error::Domain(format!("rho_eps must lie in [0, 0.75), got {}", spec.rho_eps)));
        }
        if !(spec.kappa > 0.0 && spec.kappa <= 1.0) {
            return Err(Error::Domain(format!("kappa must lie in (0, 1], got {}", spec.kappa)));
        }
        let m = spec.quad_nodes.unwrap_or(8 * d);
        if m < 2 * d {
            return Err(Error::Resolution(format!("{m} quadrature nodes cannot resolve {d} modes (need >= {})", 2 * d)));
        }
        let (nodes, weights) = composite_gauss_legendre(0.0, 1.0, m.div_ceil(8), 8);
        let rho = 0.25 + spec.rho_eps;
        let mut phi = Vec::with_capacity(nodes.len() * d);
        let mut proj = Vec::with_capacity(nodes.len() * d);
        for (x, w) in nodes.iter().zip(&weights) {
            for i in 0..d {
                let e = 2f64.sqrt() * ((i + 1) as f64 * PI * x).sin();
                let l = op.lambda(i);
                phi.push(l.powf(-rho) * e);
                proj.push(w * l.powf(rho) * e);
            }
        }
        Ok(KernelModel { kernel, spec: spec.clone(), rho, op, nodes, weights, phi, proj, bounds: None })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kappa(&self) -> f64 {
        self.spec.kappa
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn quad_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn bounds(&self) -> Option<Bounds> {
        self.bounds
    }

    pub fn set_bounds(&mut self, bounds: Bounds) {
        self.bounds = Some(bounds);
    }

    /// The field `Σ u_j φ_j` at the quadrature nodes.
    pub fn reconstruct(&self, u: &[f64]) -> Vec<f64> {
        let d = self.spec.d;
        self.phi.chunks(d).map(|row| row.iter().zip(u).map(|(p, x)| p * x).sum()).collect()
    }

    /// `H_a(y_m) = λ_a^ρ ∫ e_a(x) ∂_z^k g(x, û(y_m)) dx`, stored `[m*d + a]`.
    fn projected(&self, u: &[f64], order: usize) -> Vec<f64> {
        let d = self.spec.d;
        let uh = self.reconstruct(u);
        let mut out = vec![0.0; uh.len() * d];
        for (my, z) in uh.iter().enumerate() {
            let row = &mut out[my * d..(my + 1) * d];
            for (mx, x) in self.nodes.iter().enumerate() {
                let k = (self.kernel.eval)(*x, *z)[order];
                for (a, r) in row.iter_mut().enumerate() {
                    *r += self.proj[mx * d + a] * k;
                }
            }
        }
        out
    }

    /// `[a*d + c] = Σ_m w_m H_a(y_m) φ_c(y_m) Π_k ĥ_k(y_m)` for the given directions.
    fn contracted(&self, u: &[f64], dirs: &[&[f64]]) -> Vec<f64> {
        let d = self.spec.d;
        let h = self.projected(u, dirs.len());
        let fields: Vec<Vec<f64>> = dirs.iter().map(|x| self.reconstruct(x)).collect();
        let mut out = vec![0.0; d * d];
        for m in 0..self.nodes.len() {
            let f: f64 = self.weights[m] * fields.iter().map(|x| x[m]).product::<f64>();
            for a in 0..d {
                let ha = h[m * d + a] * f;
                for c in 0..d {
                    out[a * d + c] += ha * self.phi[m * d + c];
                }
            }
        }
        out
    }

    /// `G(u)` as a d×d row-major matrix.
    pub fn g_matrix(&self, u: &[f64]) -> Vec<f64> {
        self.contracted(u, &[])
    }

    /// `DG(u)(·, h)`.
    pub fn dg_apply(&self, u: &[f64], h: &[f64]) -> Vec<f64> {
        self.contracted(u, &[h])
    }

    /// `D²G(u)(·, h1, h2)`.
    pub fn d2g_apply(&self, u: &[f64], h1: &[f64], h2: &[f64]) -> Vec<f64> {
        self.contracted(u, &[h1, h2])
    }

    /// `D³G(u)(·, h1, h2, h3)`.
    pub fn d3g_apply(&self, u: &[f64], h1: &[f64], h2: &[f64], h3: &[f64]) -> Vec<f64> {
        self.contracted(u, &[h1, h2, h3])
    }

    /// Frobenius norm of the full k-th derivative tensor `D^kG(u)`, which
    /// bounds every operator norm used by the Lipschitz inequalities.
    pub fn derivative_norm(&self, u: &[f64], order: usize) -> f64 {
        let d = self.spec.d;
        let nm = self.nodes.len();
        let h = self.projected(u, order);
        // Tensor entries Σ_m w_m H_a φ_c φ_{j1}..φ_{jk}; indices run over d^(order+2).
        let mut acc = 0.0;
        let count = d.pow(order as u32 + 1);
        for a in 0..d {
            let mut total = 0.0;
            for flat in 0..count {
                let mut idx = flat;
                let mut s = 0.0;
                let mut factors = Vec::with_capacity(order + 1);
                for _ in 0..=order {
                    factors.push(idx % d);
                    idx /= d;
                }
                for m in 0..nm {
                    let mut p = self.weights[m] * h[m * d + a];
                    for &f in &factors {
                        p *= self.phi[m * d + f];
                    }
                    s += p;
                }
                total += s * s;
            }
            acc += total;
        }
        acc.sqrt()
    }

    /// Scans a V-ball and records `margin × max` of each derivative norm.
    pub fn measure_bounds(&mut self, scan: BoundsScan) -> Bounds {
        let d = self.spec.d;
        let mut points = vec![vec![0.0; d]];
        points.extend(ball_samples(d, scan.radius, scan.samples, scan.seed));
        let maxima: Vec<[f64; 5]> = points
            .par_iter()
            .map(|u| {
                let mut r = [0.0; 5];
                for (k, x) in r.iter_mut().enumerate() {
                    *x = self.derivative_norm(u, k);
                }
                r
            })
            .collect();
        let mut m = [0.0f64; 5];
        for r in maxima {
            for k in 0..5 {
                m[k] = m[k].max(r[k]);
            }
        }
        let b = Bounds {
            c_g: scan.margin * m[0],
            c_dg: scan.margin * m[1],
            c_d2g: scan.margin * m[2],
            c_d3g: scan.margin * m[3],
            c_d4g: scan.margin * m[4],
            radius: scan.radius,
        };
        self.bounds = Some(b);
        b
    }

    /// `‖(-A)^κ G(u) e_c‖` for every column `c`.
    pub fn column_kappa_norms(&self, u: &[f64]) -> Vec<f64> {
        let d = self.spec.d;
        let g = self.g_matrix(u);
        (0..d)
            .map(|c| {
                let col: Vec<f64> = (0..d).map(|a| g[a * d + c]).collect();
                crate::hilbert::frac_power_norm(&self.op, &col, self.spec.kappa)
            })
            .collect()
    }
}

impl Nonlinearity for KernelModel {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn g(&self, u: &[f64]) -> Vec<f64> {
        self.g_matrix(u)
    }

    fn dg(&self, u: &[f64]) -> Vec<f64> {
        let d = self.spec.d;
        let h = self.projected(u, 1);
        let mut out = vec![0.0; d * d * d];
        for m in 0..self.nodes.len() {
            let w = self.weights[m];
            for a in 0..d {
                let ha = w * h[m * d + a];
                for c in 0..d {
                    let hc = ha * self.phi[m * d + c];
                    for j in 0..d {
                        out[(a * d + c) * d + j] += hc * self.phi[m * d + j];
                    }
                }
            }
        }
        out
    }
}

/// Points drawn uniformly from the Euclidean ball of the given radius.
pub fn ball_samples(d: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm2(&x).max(f64::MIN_POSITIVE);
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            x.iter_mut().for_each(|v| *v *= r / n);
            x
        })
        .collect()
}

/// Worst ratio `lhs / rhs` per inequality, over all sampled quadruples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub bounds: Bounds,
    pub samples: usize,
    pub worst: [f64; 7],
}

impl LipschitzReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst.iter().all(|r| *r <= 1.0 + tol)
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn fro(a: &[f64]) -> f64 {
    norm2(a)
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 1e-14 * (1.0 + rhs) {
        0.0
    } else {
        lhs / rhs
    }
}

impl KernelModel {
    /// Evaluates the seven inequalities for one quadruple. Operator norms on
    /// the left are taken as Hilbert–Schmidt norms of the coordinate tensors.
    pub fn lipschitz_ratios(&self, b: &Bounds, u1: &[f64], u2: &[f64], v1: &[f64], v2: &[f64]) -> [f64; 7] {
        let g = |u: &[f64]| self.g_matrix(u);
        let dgn = |u: &[f64]| self.dg(u);
        let (gu1, gu2, gv1, gv2) = (g(u1), g(u2), g(v1), g(v2));
        let du1v1 = norm2(&sub(u1, v1));
        let du2v2 = norm2(&sub(u2, v2));
        let du1u2 = norm2(&sub(u1, u2));
        let dv1v2 = norm2(&sub(v1, v2));
        let cross = norm2(&sub(&sub(u1, v1), &sub(u2, v2)));
        let u12 = sub(u1, u2);
        let v12 = sub(v1, v2);
        let taylor_u = sub(&sub(&gu1, &gu2), &self.dg_apply(u2, &u12));
        let taylor_v = sub(&sub(&gv1, &gv2), &self.dg_apply(v2, &v12));
        let (dgu1, dgu2, dgv1, dgv2) = (dgn(u1), dgn(u2), dgn(v1), dgn(v2));
        [
            ratio(fro(&gu1), b.c_g),
            ratio(fro(&sub(&gu1, &gv1)), b.c_dg * du1v1),
            ratio(fro(&sub(&dgu1, &dgv1)), b.c_d2g * du1v1),
            ratio(fro(&taylor_u), b.c_d2g * du1u2 * du1u2),
            ratio(
                fro(&sub(&sub(&gu1, &gv1), &sub(&gu2, &gv2))),
                b.c_dg * cross + b.c_d2g * du1u2 * (du1v1 + du2v2),
            ),
            ratio(
                fro(&sub(&sub(&dgu1, &dgv1), &sub(&dgu2, &dgv2))),
                b.c_d2g * cross + b.c_d3g * du1u2 * (du1v1 + du2v2),
            ),
            ratio(
                fro(&sub(&taylor_u, &taylor_v)),
                b.c_d2g * (du1u2 + dv1v2) * cross + b.c_d3g * dv1v2 * du2v2 * (du1u2 + cross),
            ),
        ]
    }

    /// Checks the seven inequalities on random quadruples drawn from the
    /// bounds' ball; measures bounds first if none are set.
    pub fn lipschitz_suite(&mut self, samples: usize, seed: u64) -> LipschitzReport {
        let b = match self.bounds {
            Some(b) => b,
            None => self.measure_bounds(BoundsScan { seed: seed ^ 0x5eed, ..BoundsScan::default() }),
        };
        let d = self.spec.d;
        let pts = ball_samples(d, b.radius, 4 * samples, seed);
        let worst = pts
            .par_chunks(4)
            .map(|q| self.lipschitz_ratios(&b, &q[0], &q[1], &q[2], &q[3]))
            .reduce(
                || [0.0; 7],
                |mut a, r| {
                    for k in 0..7 {
                        a[k] = a[k].max(r[k]);
                    }
                    a
                },
            );
        LipschitzReport { bounds: b, samples, worst }
    }
}
