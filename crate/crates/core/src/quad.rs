//! Quadrature building blocks.
//!
//! Product-integration weights for the singular kernels that appear in the
//! fractional derivatives, Jacobi-weighted panel weights for the outer
//! integrals, Gauss–Legendre rules and the exponential helpers used by the
//! segment-exact area formulas.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

/// Weights `W_m` with `∫_0^{x_M} f(x) x^{-1-γ} dx = Σ_{m>=1} W_m f(x_m)` for
/// `f` linear between the nodes and `f(0) = 0`.
///
/// `nodes` must start at zero and increase strictly. `W_0` is returned as zero.
pub fn singular_weights(nodes: &[f64], gamma: f64) -> Vec<f64> {
    let m = nodes.len();
    let mut w = vec![0.0; m];
    if m < 2 {
        return w;
    }
    // first panel: f(x) = f_1 x / x_1
    let x1 = nodes[1];
    w[1] += x1.powf(-gamma) / (1.0 - gamma);
    for i in 1..m - 1 {
        let (a, b) = (nodes[i], nodes[i + 1]);
        let h = b - a;
        let l = (a / b).ln();
        let i0 = if gamma == 0.0 { -l } else { -a.powf(-gamma) * (gamma * l).exp_m1() / gamma };
        let i1 = (b.powf(1.0 - gamma) - a.powf(1.0 - gamma)) / (1.0 - gamma);
        w[i] += (b * i0 - i1) / h;
        w[i + 1] += (i1 - a * i0) / h;
    }
    w
}

/// [`singular_weights`] on the unit-spaced nodes `0, 1, ..., n`, cached.
///
/// For spacing `h` the weights scale by `h^{-γ}`.
pub fn unit_singular_weights(n: usize, gamma: f64) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<RwLock<HashMap<(u64, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (gamma.to_bits(), n);
    if let Some(w) = cache.read().expect("weight cache poisoned").get(&key) {
        return w.clone();
    }
    let nodes: Vec<f64> = (0..=n).map(|k| k as f64).collect();
    let w = Arc::new(singular_weights(&nodes, gamma));
    cache.write().expect("weight cache poisoned").insert(key, w.clone());
    w
}

/// Unit-spaced singular weights for every upper node `n <= nmax` at once.
///
/// For nodes `0, 1, ..., n` the weight of node `m < n` does not depend on `n`;
/// only the last node sees a single panel.
#[derive(Debug, Clone)]
pub struct UnitSingularTable {
    gamma: f64,
    interior: Vec<f64>,
}

impl UnitSingularTable {
    pub fn new(nmax: usize, gamma: f64) -> Self {
        let mut interior = vec![0.0; nmax + 1];
        for m in 1..=nmax {
            interior[m] = Self::left_part(m, gamma) + Self::right_part(m, gamma);
        }
        Self { gamma, interior }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Weight of node `m` in the rule with last node `n`.
    #[inline]
    pub fn weight(&self, m: usize, n: usize) -> f64 {
        if m == n {
            Self::left_part(m, self.gamma)
        } else {
            self.interior[m]
        }
    }

    /// `(∫_{m-1}^m x^{-γ}, ∫_{m-1}^m x^{-1-γ})`, stable for small `|γ|`.
    fn moments(m: usize, gamma: f64) -> (f64, f64) {
        let (a, b) = ((m - 1) as f64, m as f64);
        let i1 = (b.powf(1.0 - gamma) - a.powf(1.0 - gamma)) / (1.0 - gamma);
        let l = (a / b).ln();
        let i0 = if gamma == 0.0 { -l } else { -a.powf(-gamma) * (gamma * l).exp_m1() / gamma };
        (i1, i0)
    }

    // contribution of panel [m-1, m] to node m
    fn left_part(m: usize, gamma: f64) -> f64 {
        if m == 1 {
            return 1.0 / (1.0 - gamma);
        }
        let (i1, i0) = Self::moments(m, gamma);
        i1 - (m - 1) as f64 * i0
    }

    // contribution of panel [m, m+1] to node m
    fn right_part(m: usize, gamma: f64) -> f64 {
        let (i1, i0) = Self::moments(m + 1, gamma);
        (m + 1) as f64 * i0 - i1
    }
}

/// Weights `Ω_k` with `∫_0^1 g(x) x^{-a}(1-x)^{-b} dx ≈ Σ_k Ω_k g(k/n)` for `g`
/// linear on each of the `n` uniform panels. Requires `a, b < 1`.
pub fn jacobi_panel_weights(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 1 && a < 1.0 && b < 1.0);
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        w[0] = beta_fn(1.0 - a, 2.0 - b);
        w[1] = beta_fn(2.0 - a, 1.0 - b);
        return w;
    }
    let dx = 1.0 / n as f64;
    // first panel via series of (1-x)^{-b}; last panel by reflection
    let (m0, m1) = end_panel_moments(dx, a, b);
    w[0] += m0 - m1 / dx;
    w[1] += m1 / dx;
    let (r0, r1) = end_panel_moments(dx, b, a);
    // in reflected variable y = 1 - x the hat of node n is (dx - y)/dx
    w[n] += r0 - r1 / dx;
    w[n - 1] += r1 / dx;
    let gl = gauss_legendre(20);
    for k in 1..n - 1 {
        let (xa, xb) = (k as f64 * dx, (k + 1) as f64 * dx);
        let (c, r) = (0.5 * (xa + xb), 0.5 * dx);
        for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
            let x = c + r * z;
            let wt = r * wz * x.powf(-a) * (1.0 - x).powf(-b);
            w[k] += wt * (xb - x) / dx;
            w[k + 1] += wt * (x - xa) / dx;
        }
    }
    w
}

/// Cached [`jacobi_panel_weights`].
pub fn cached_jacobi_weights(n: usize, a: f64, b: f64) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<RwLock<HashMap<(u64, u64, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let key = (a.to_bits(), b.to_bits(), n);
    if let Some(w) = cache.read().expect("weight cache poisoned").get(&key) {
        return w.clone();
    }
    let w = Arc::new(jacobi_panel_weights(n, a, b));
    cache.write().expect("weight cache poisoned").insert(key, w.clone());
    w
}

/// `(∫_0^h x^{-a}(1-x)^{-b} dx, ∫_0^h x^{1-a}(1-x)^{-b} dx)` for `h <= 1/2`.
fn end_panel_moments(h: f64, a: f64, b: f64) -> (f64, f64) {
    // (1-x)^{-b} = Σ c_j x^j with c_0 = 1, c_{j+1} = c_j (b + j)/(j + 1)
    let mut c = 1.0;
    let (mut m0, mut m1) = (0.0, 0.0);
    let mut hp = h.powf(1.0 - a);
    for j in 0..400 {
        let jf = j as f64;
        let t0 = c * hp / (jf + 1.0 - a);
        let t1 = c * hp * h / (jf + 2.0 - a);
        m0 += t0;
        m1 += t1;
        if t0.abs() < 1e-18 * m0.abs() && j > 4 {
            break;
        }
        c *= (b + jf) / (jf + 1.0);
        hp *= h;
    }
    (m0, m1)
}

pub fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn beta_fn(a: f64, b: f64) -> f64 {
    (statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b) - statrs::function::gamma::ln_gamma(a + b)).exp()
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn gauss_legendre(n: usize) -> GaussLegendre {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    GaussLegendre { nodes, weights }
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` panels of `order` points.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let gl = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut x = Vec::with_capacity(panels * order);
    let mut w = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
            x.push(c + 0.5 * h * z);
            w.push(0.5 * h * wz);
        }
    }
    (x, w)
}

/// `(1 - e^{-z})/z`, equal to one at `z = 0`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 - z / 2.0 + z * z / 6.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// `(z - 1 + e^{-z})/z²`, equal to one half at `z = 0`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0
    } else {
        (z + (-z).exp_m1()) / (z * z)
    }
}

/// `(1 - (1+z)e^{-z})/z²`, equal to one half at `z = 0`.
pub fn phi3(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0
    } else {
        (-(-z).exp_m1() - z * (-z).exp()) / (z * z)
    }
}

/// `(1/2 - φ1(z) + φ3(z))/z`, equal to one sixth at `z = 0`.
///
/// `h³ψ(λh) = ∫_0^h x (1 - e^{-λ(h-x)})/λ dx`.
pub fn psi(z: f64) -> f64 {
    if z.abs() < 0.5 {
        // Σ_{n>=1} (-z)^{n-1} / (n! (n+1) (n+2))
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 1.0;
        for n in 1..=16 {
            fact *= n as f64;
            sum += pow / (fact * (n + 1) as f64 * (n + 2) as f64);
            pow *= -z;
        }
        sum
    } else {
        (0.5 - phi1(z) + phi3(z)) / z
    }
}
