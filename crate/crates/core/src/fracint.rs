//! Fractional derivatives and the integrals built from them.
//!
//! All derivatives use a real-valued convention. With
//!
//! ```text
//! D^α_{s+}F[r]   = (F(r)/(r-s)^α + α ∫_s^r (F(r)-F(q))/(r-q)^{1+α} dq) / Γ(1-α)
//! D̃ξ[r]          = ((ξ(t)-ξ(r))/(t-r)^{1-α} + (1-α) ∫_r^t (ξ(q)-ξ(r))/(q-r)^{2-α} dq) / Γ(α)
//! ```
//!
//! the Young integral is `∫_s^t D^α_{s+}F[r] D̃ξ[r] dr`, and the rough
//! integral is the compensated first term minus the area term
//! `∫_s^t D^{2α-1}_{s+}DG(u)[r] : D̃(𝒟̃v)[r] dr`.
//!
//! Singular inner integrals are evaluated with exact product weights against
//! the piecewise-linear interpolant of the numerator. Outer integrals are
//! computed on the rescaled integrands `(r-s)^a (t-r)^b (...)`, which are
//! bounded, using Jacobi-weighted product weights. Partial panels next to the
//! diagonal are therefore integrated in closed form and need no cutoff.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{chen_residual, AreaField, GridPath, TimeGrid};
use crate::noise::NoisePath;
use crate::quad::{gamma_fn, jacobi_panel_weights, singular_weights, UnitSingularTable};

/// Order of the fractional derivatives and the outer refinement factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub alpha: f64,
    /// Outer panels per grid step.
    pub quad_n: usize,
    /// `(β, β')` when the caller wants the parameter window checked.
    pub exponents: Option<(f64, f64)>,
    /// Relative Chen tolerance checked by [`rough_integral`]; `None` skips the check.
    pub chen_tol: Option<f64>,
}

impl FracParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("fractional order must lie in (0,1), got {alpha}")));
        }
        Ok(Self { alpha, quad_n: 1, exponents: None, chen_tol: Some(1e-8) })
    }

    pub fn with_exponents(mut self, beta: f64, beta_prime: f64) -> Self {
        self.exponents = Some((beta, beta_prime));
        self
    }

    pub fn with_quad_n(mut self, quad_n: usize) -> Self {
        self.quad_n = quad_n.max(1);
        self
    }

    pub fn with_chen_tol(mut self, tol: Option<f64>) -> Self {
        self.chen_tol = tol;
        self
    }
}

/// Young window: `β > α` and `α + β' > 1`.
pub fn check_young_window(alpha: f64, beta: f64, beta_prime: f64) -> Result<()> {
    if beta > alpha && alpha + beta_prime > 1.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("Young window needs β > α and α + β' > 1 (α={alpha}, β={beta}, β'={beta_prime})")))
    }
}

/// Rough window (H1): `1 - β' < α < 2β` and `α < (β + 1)/2`.
pub fn check_rough_window(alpha: f64, beta: f64, beta_prime: f64) -> Result<()> {
    if 1.0 - beta_prime < alpha && alpha < 2.0 * beta && alpha < (beta + 1.0) / 2.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "(H1) needs 1-β' < α < 2β and α < (β+1)/2 (α={alpha}, β={beta}, β'={beta_prime})"
        )))
    }
}

/// Matrix-valued coefficient `G(u)` and its derivative.
///
/// `g` returns the `d×d` matrix row-major, `G[a*d + c]` mapping noise mode `c`
/// to component `a`. `dg` returns `∂G_{ac}/∂u_j` at index `(a*d + c)*d + j`.
pub trait Nonlinearity: Sync {
    fn dim(&self) -> usize;
    fn g(&self, u: &[f64]) -> Vec<f64>;
    fn dg(&self, u: &[f64]) -> Vec<f64>;
}

/// `G(u) ≡ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantG {
    pub dim: usize,
    pub matrix: Vec<f64>,
}

impl Nonlinearity for ConstantG {
    fn dim(&self) -> usize {
        self.dim
    }
    fn g(&self, _u: &[f64]) -> Vec<f64> {
        self.matrix.clone()
    }
    fn dg(&self, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim.pow(3)]
    }
}

/// `G(u(t_k))` and `DG(u(t_k))` on every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GSamples {
    pub dim: usize,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
}

impl GSamples {
    pub fn sample(model: &dyn Nonlinearity, u: &GridPath) -> Result<Self> {
        let d = model.dim();
        if d != u.dim() {
            return Err(Error::Structural(format!("model dimension {d} differs from path dimension {}", u.dim())));
        }
        let m = u.grid().len();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m).into_par_iter().map(|k| (model.g(u.at(k)), model.dg(u.at(k)))).collect();
        let mut g = Vec::with_capacity(m * d * d);
        let mut dg = Vec::with_capacity(m * d * d * d);
        for (a, b) in rows {
            g.extend(a);
            dg.extend(b);
        }
        if g.iter().chain(&dg).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("nonlinearity produced non-finite values".into()));
        }
        Ok(Self { dim: d, g, dg })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dim: self.dim, g: self.g.iter().map(|x| x * c).collect(), dg: self.dg.iter().map(|x| x * c).collect() }
    }
}

// ---------------------------------------------------------------------------
// Indexed kernels on uniform grids. Arrays are local to a window starting at
// `s` (index 0); `decay`, when given, is `e^{-λ_a m h}` at `[m*d + a]` and
// twists row `a` of the integrand by the semigroup.

/// Weight tables shared by the kernels.
#[derive(Debug, Clone)]
pub struct Tables {
    pub alpha: f64,
    pub right: UnitSingularTable,
    pub left: UnitSingularTable,
    pub area: Option<UnitSingularTable>,
}

impl Tables {
    pub fn new(alpha: f64, nmax: usize) -> Self {
        let area = (2.0 * alpha - 1.0 > 0.0).then(|| UnitSingularTable::new(nmax, 2.0 * alpha - 1.0));
        Self { alpha, right: UnitSingularTable::new(nmax, alpha), left: UnitSingularTable::new(nmax, 1.0 - alpha), area }
    }
}

/// `(r_i - s)^α D̂^α_{s+}G(u)[r_i]`, the compensated derivative.
pub(crate) fn compensated_scaled(tab: &Tables, d: usize, g: &[f64], dg: &[f64], u: &[f64], decay: Option<&[f64]>, i: usize) -> Vec<f64> {
    let alpha = tab.alpha;
    let dd = d * d;
    let gi = &g[i * dd..(i + 1) * dd];
    let ui = &u[i * d..(i + 1) * d];
    let mut acc = vec![0.0; dd];
    let mut du = vec![0.0; d];
    for m in 1..=i {
        let q = i - m;
        let w = tab.right.weight(m, i);
        let gq = &g[q * dd..(q + 1) * dd];
        let dgq = &dg[q * dd * d..(q + 1) * dd * d];
        for j in 0..d {
            du[j] = ui[j] - u[q * d + j];
        }
        for a in 0..d {
            let tw = decay.map_or(1.0, |e| e[m * d + a]);
            for c in 0..d {
                let ac = a * d + c;
                let mut taylor = gq[ac];
                let row = &dgq[ac * d..(ac + 1) * d];
                for j in 0..d {
                    taylor += row[j] * du[j];
                }
                acc[ac] += w * (gi[ac] - tw * taylor);
            }
        }
    }
    let sc = alpha * (i as f64).powf(alpha);
    let gm = gamma_fn(1.0 - alpha);
    (0..dd).map(|x| (gi[x] + sc * acc[x]) / gm).collect()
}

/// `(r_i - s)^{2α-1} D^{2α-1}_{s+}DG(u)[r_i]`.
pub(crate) fn area_right_scaled(tab: &Tables, d: usize, dg: &[f64], decay: Option<&[f64]>, i: usize) -> Vec<f64> {
    let tab2 = tab.area.as_ref().expect("area table requires α > 1/2");
    let e = 2.0 * tab.alpha - 1.0;
    let n = d * d * d;
    let di = &dg[i * n..(i + 1) * n];
    let mut acc = vec![0.0; n];
    for m in 1..=i {
        let w = tab2.weight(m, i);
        let dq = &dg[(i - m) * n..(i - m + 1) * n];
        for a in 0..d {
            let tw = decay.map_or(1.0, |x| x[m * d + a]);
            for y in a * d * d..(a + 1) * d * d {
                acc[y] += w * (di[y] - tw * dq[y]);
            }
        }
    }
    let sc = e * (i as f64).powf(e);
    let gm = gamma_fn(1.0 - e);
    (0..n).map(|x| (di[x] + sc * acc[x]) / gm).collect()
}

/// `(t - r_i)^{1-α} D̃ξ[r_i]` with `t` at local index `k`; `ξ` has `dim` components.
pub(crate) fn left_scaled(tab: &Tables, dim: usize, xi: &[f64], k: usize, i: usize) -> Vec<f64> {
    let alpha = tab.alpha;
    let xi_i = &xi[i * dim..(i + 1) * dim];
    let n = k - i;
    let mut acc = vec![0.0; dim];
    for m in 1..=n {
        let w = tab.left.weight(m, n);
        let xq = &xi[(i + m) * dim..(i + m + 1) * dim];
        for x in 0..dim {
            acc[x] += w * (xq[x] - xi_i[x]);
        }
    }
    let sc = (1.0 - alpha) * (n as f64).powf(1.0 - alpha);
    let g = gamma_fn(alpha);
    (0..dim).map(|x| (xi[k * dim + x] - xi_i[x] + sc * acc[x]) / g).collect()
}

/// `𝒟̃v[q_j]` relative to `t = base + k`, for `j` in the window `base..=base+k`.
pub(crate) fn area_transform(tab: &Tables, v: &AreaField, base: usize, k: usize, j: usize, h: f64) -> Vec<f64> {
    area_transform_by(tab, v.dim() * v.dim(), |a, b| v.at(base + a, base + b), k, j, h)
}

/// [`area_transform`] with the area read through `vat(a, b)` in window indices.
fn area_transform_by<V: AsRef<[f64]>>(tab: &Tables, dd: usize, vat: impl Fn(usize, usize) -> V, k: usize, j: usize, h: f64) -> Vec<f64> {
    if j == k {
        return vec![0.0; dd];
    }
    let alpha = tab.alpha;
    let n = k - j;
    let mut acc = vec![0.0; dd];
    for m in 1..=n {
        let w = tab.left.weight(m, n);
        let vm = vat(j, j + m);
        for (x, y) in acc.iter_mut().zip(vm.as_ref()) {
            *x += w * y;
        }
    }
    let vt = vat(j, k);
    let vt = vt.as_ref();
    let sc = (1.0 - alpha) * (n as f64).powf(1.0 - alpha);
    let den = gamma_fn(alpha) * (n as f64 * h).powf(1.0 - alpha);
    (0..dd).map(|x| (vt[x] + sc * acc[x]) / den).collect()
}

/// `Σ_{c,j} P[a,c,j] M[j,c]`.
pub(crate) fn contract(d: usize, p: &[f64], m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for a in 0..d {
        let mut s = 0.0;
        for c in 0..d {
            for j in 0..d {
                s += p[(a * d + c) * d + j] * m[j * d + c];
            }
        }
        out[a] = s;
    }
    out
}

pub(crate) fn matvec(d: usize, m: &[f64], x: &[f64]) -> Vec<f64> {
    (0..d).map(|a| (0..d).map(|c| m[a * d + c] * x[c]).sum()).collect()
}

/// Jacobi product weights for `∫_s^t f(r)(r-s)^{-a}(t-r)^{-b} dr` on `k` panels,
/// including the `(t-s)^{1-a-b}` factor.
pub(crate) fn outer_weights(k: usize, a: f64, b: f64, len: f64) -> Vec<f64> {
    let sc = len.powf(1.0 - a - b);
    jacobi_panel_weights(k, a, b).into_iter().map(|w| w * sc).collect()
}

// ---------------------------------------------------------------------------
// General-node versions for off-grid arguments.

fn interior_times(grid: &TimeGrid, a: f64, b: f64) -> Vec<f64> {
    let h = grid.dt();
    let eps = 1e-9 * h;
    grid.times().into_iter().filter(|&q| q > a + eps && q < b - eps).collect()
}

fn check_inside(grid: &TimeGrid, t: f64) -> Result<()> {
    let eps = 1e-12 * (1.0 + grid.t_end.abs().max(grid.t0.abs()));
    if t < grid.t0 - eps || t > grid.t_end + eps {
        return Err(Error::Domain(format!("{t} lies outside [{}, {}]", grid.t0, grid.t_end)));
    }
    Ok(())
}

/// `(r-s)^α D^α_{s+}F[r]`, exact for the piecewise-linear interpolant of `F`.
fn right_scaled_general(f: &GridPath, alpha: f64, s: f64, r: f64) -> Vec<f64> {
    let dim = f.dim();
    let fr = f.interpolate(r);
    let g = gamma_fn(1.0 - alpha);
    if r - s <= 0.0 {
        return fr.iter().map(|x| x / g).collect();
    }
    let mut qs = vec![r];
    qs.extend(interior_times(f.grid(), s, r).into_iter().rev());
    qs.push(s);
    let nodes: Vec<f64> = qs.iter().map(|q| r - q).collect();
    let w = singular_weights(&nodes, alpha);
    let mut acc = vec![0.0; dim];
    for (m, q) in qs.iter().enumerate().skip(1) {
        let fq = f.interpolate(*q);
        for x in 0..dim {
            acc[x] += w[m] * (fr[x] - fq[x]);
        }
    }
    let sc = alpha * (r - s).powf(alpha);
    (0..dim).map(|x| (fr[x] + sc * acc[x]) / g).collect()
}

/// `(t-r)^{1-α} D̃ξ[r]`, exact for the piecewise-linear interpolant of `ξ`.
fn left_scaled_general(xi: &GridPath, alpha: f64, t: f64, r: f64) -> Vec<f64> {
    let dim = xi.dim();
    if t - r <= 0.0 {
        return vec![0.0; dim];
    }
    let xr = xi.interpolate(r);
    let xt = xi.interpolate(t);
    let mut qs = vec![r];
    qs.extend(interior_times(xi.grid(), r, t));
    qs.push(t);
    let nodes: Vec<f64> = qs.iter().map(|q| q - r).collect();
    let w = singular_weights(&nodes, 1.0 - alpha);
    let mut acc = vec![0.0; dim];
    for (m, q) in qs.iter().enumerate().skip(1) {
        let xq = xi.interpolate(*q);
        for x in 0..dim {
            acc[x] += w[m] * (xq[x] - xr[x]);
        }
    }
    let sc = (1.0 - alpha) * (t - r).powf(1.0 - alpha);
    (0..dim).map(|x| (xt[x] - xr[x] + sc * acc[x]) / gamma_fn(alpha)).collect()
}

/// Right-sided derivative `D^α_{s+}F[r]` of a sampled path, componentwise.
///
/// Returns `+∞` in every component at `r = s`.
pub fn frac_derivative_right(f: &GridPath, alpha: f64, s: f64, r: f64) -> Result<Vec<f64>> {
    FracParams::new(alpha)?;
    check_inside(f.grid(), s)?;
    check_inside(f.grid(), r)?;
    if r < s {
        return Err(Error::Domain(format!("right derivative needs s <= r, got s={s}, r={r}")));
    }
    if r == s {
        return Ok(vec![f64::INFINITY; f.dim()]);
    }
    let p = right_scaled_general(f, alpha, s, r);
    let sc = (r - s).powf(-alpha);
    Ok(p.into_iter().map(|x| x * sc).collect())
}

/// Left-sided derivative of order `1-α` of `ξ_{t-}` at `r`, componentwise.
pub fn frac_derivative_left(xi: &GridPath, alpha: f64, t: f64, r: f64) -> Result<Vec<f64>> {
    FracParams::new(alpha)?;
    check_inside(xi.grid(), t)?;
    check_inside(xi.grid(), r)?;
    if r > t {
        return Err(Error::Domain(format!("left derivative needs r <= t, got r={r}, t={t}")));
    }
    if r == t {
        return Ok(vec![0.0; xi.dim()]);
    }
    let q = left_scaled_general(xi, alpha, t, r);
    let sc = (t - r).powf(alpha - 1.0);
    Ok(q.into_iter().map(|x| x * sc).collect())
}

/// `∫_s^t D^α_{s+}F[r] D̃ξ[r] dr`.
///
/// `F` is either scalar (`dim 1`) or a `d×d` matrix path with `d = ξ.dim()`.
pub fn young_integral(f: &GridPath, xi: &GridPath, params: &FracParams, s: f64, t: f64) -> Result<Vec<f64>> {
    let alpha = params.alpha;
    FracParams::new(alpha)?;
    if let Some((b, bp)) = params.exponents {
        check_young_window(alpha, b, bp)?;
    }
    let d = xi.dim();
    if f.dim() != 1 && f.dim() != d * d {
        return Err(Error::Structural(format!("integrand must be scalar or {d}x{d}, has {} components", f.dim())));
    }
    check_inside(f.grid(), s)?;
    check_inside(f.grid(), t)?;
    check_inside(xi.grid(), s)?;
    check_inside(xi.grid(), t)?;
    if t <= s {
        return Err(Error::Domain(format!("integral needs s < t, got s={s}, t={t}")));
    }
    let steps = ((t - s) / xi.grid().dt().min(f.grid().dt()) - 1e-9).ceil().max(1.0) as usize;
    let n = steps * params.quad_n;
    let w = outer_weights(n, alpha, 1.0 - alpha, t - s);
    let parts: Vec<Vec<f64>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let r = s + (t - s) * i as f64 / n as f64;
            let p = right_scaled_general(f, alpha, s, r);
            let q = left_scaled_general(xi, alpha, t, r);
            if f.dim() == 1 {
                q.iter().map(|x| p[0] * x).collect()
            } else {
                matvec(d, &p, &q)
            }
        })
        .collect();
    let mut out = vec![0.0; d];
    for (wi, v) in w.iter().zip(&parts) {
        for a in 0..d {
            out[a] += wi * v[a];
        }
    }
    Ok(out)
}

fn grid_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    grid.index_of(t).ok_or_else(|| Error::Domain(format!("{t} is not a grid point")))
}

/// Compensated derivative `D̂^α_{s+}G(u)[r]`; `s` and `r` must be grid points.
pub fn compensated_derivative(gs: &GSamples, u: &GridPath, alpha: f64, s: f64, r: f64) -> Result<Vec<f64>> {
    FracParams::new(alpha)?;
    let js = grid_index(u.grid(), s)?;
    let jr = grid_index(u.grid(), r)?;
    if jr < js {
        return Err(Error::Domain(format!("compensated derivative needs s <= r, got s={s}, r={r}")));
    }
    let d = gs.dim;
    if jr == js {
        return Ok(vec![f64::INFINITY; d * d]);
    }
    let tab = Tables::new(alpha, jr - js);
    let dd = d * d;
    let p = compensated_scaled(
        &tab,
        d,
        &gs.g[js * dd..(jr + 1) * dd],
        &gs.dg[js * dd * d..(jr + 1) * dd * d],
        &u.values()[js * d..(jr + 1) * d],
        None,
        jr - js,
    );
    let sc = (r - s).powf(-alpha);
    Ok(p.into_iter().map(|x| x * sc).collect())
}

/// `𝒟^{1-α}_{t-}v[r]` of an area; `r` and `t` must be grid points.
pub fn tensor_derivative(v: &AreaField, alpha: f64, t: f64, r: f64) -> Result<Vec<f64>> {
    FracParams::new(alpha)?;
    let jt = grid_index(v.grid(), t)?;
    let jr = grid_index(v.grid(), r)?;
    if jr > jt {
        return Err(Error::Domain(format!("tensor derivative needs r <= t, got r={r}, t={t}")));
    }
    let tab = Tables::new(alpha, jt - jr);
    Ok(area_transform(&tab, v, jr, jt - jr, 0, v.grid().dt()))
}

/// Rough terms on a window split into `m` panels per grid step. Samples are
/// interpolated linearly; within a grid step the area is extended as
/// `½Δu⊗Δω x² + (v_k - ½Δu⊗Δω) x` in the step fraction `x`, which keeps Chen's
/// relation on the refined grid.
#[allow(clippy::too_many_arguments)]
fn refined_terms(gs: &GSamples, u: &GridPath, v: &AreaField, omega: &GridPath, base: usize, k: usize, m: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let d = gs.dim;
    let dd = d * d;
    let kk = k * m;
    let fine = |src: &[f64], width: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity((kk + 1) * width);
        for p in 0..=kk {
            let (c, x) = (base + p / m, (p % m) as f64 / m as f64);
            let lo = &src[c * width..(c + 1) * width];
            if x == 0.0 {
                out.extend_from_slice(lo);
            } else {
                let hi = &src[(c + 1) * width..(c + 2) * width];
                out.extend(lo.iter().zip(hi).map(|(a, b)| a + x * (b - a)));
            }
        }
        out
    };
    let (g, dg, uf, wf) = (fine(&gs.g, dd), fine(&gs.dg, dd * d), fine(u.values(), d), fine(omega.values(), d));
    let at = |x: &[f64], p: usize| x[p * d..(p + 1) * d].to_vec();
    // Local area of fine points p < q inside one grid step.
    let inside = |p: usize, q: usize| -> Vec<f64> {
        if p == q {
            return vec![0.0; dd];
        }
        let c = p / m;
        let (du, dw) = (diff(&at(&uf, (c + 1) * m), &at(&uf, c * m)), diff(&at(&wf, (c + 1) * m), &at(&wf, c * m)));
        let vc = v.at(base + c, base + c + 1);
        let x = (q - p) as f64 / m as f64;
        (0..dd).map(|i| 0.5 * du[i / d] * dw[i % d] * x * x + (vc[i] - 0.5 * du[i / d] * dw[i % d]) * x).collect()
    };
    let vat = |p: usize, q: usize| -> Vec<f64> {
        let (a, b) = (p.div_ceil(m) * m, q / m * m);
        if a >= b {
            return inside(p, q);
        }
        let mut out = inside(p, a);
        let (vab, vbq) = (v.at(base + a / m, base + b / m), inside(b, q));
        let (up, ua, ub) = (at(&uf, p), at(&uf, a), at(&uf, b));
        let (wa, wb, wq) = (at(&wf, a), at(&wf, b), at(&wf, q));
        for i in 0..dd {
            let (x, y) = (i / d, i % d);
            out[i] += vab[i] + vbq[i] + (ua[x] - up[x]) * (wq[y] - wa[y]) + (ub[x] - ua[x]) * (wq[y] - wb[y]);
        }
        out
    };
    let win = Window { g: &g, dg: &dg, u: &uf, omega: &wf };
    let tab = Tables::new(alpha, kk);
    window_terms(&tab, d, &win, vat, kk, u.grid().dt() / m as f64, None)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Value of the rough integral together with its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughIntegral {
    pub value: Vec<f64>,
    pub compensated_term: Vec<f64>,
    pub area_term: Vec<f64>,
}

/// Both terms of the rough integral on the window `base..=base+k`. With
/// `decay`, the integrand is `S(t-·)G(u(·))`, `t` being the window end.
pub(crate) fn rough_terms(
    tab: &Tables,
    gs: &GSamples,
    u: &GridPath,
    v: &AreaField,
    omega: &GridPath,
    base: usize,
    k: usize,
    decay: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let d = gs.dim;
    let dd = d * d;
    let h = u.grid().dt();
    let window = Window {
        g: &gs.g[base * dd..(base + k + 1) * dd],
        dg: &gs.dg[base * dd * d..(base + k + 1) * dd * d],
        u: &u.values()[base * d..(base + k + 1) * d],
        omega: &omega.values()[base * d..(base + k + 1) * d],
    };
    window_terms(tab, d, &window, |a, b| v.at(base + a, base + b), k, h, decay)
}

/// Samples of one integration window, indexed from its left end.
struct Window<'a> {
    g: &'a [f64],
    dg: &'a [f64],
    u: &'a [f64],
    omega: &'a [f64],
}

fn window_terms<V: AsRef<[f64]>>(
    tab: &Tables,
    d: usize,
    win: &Window,
    vat: impl Fn(usize, usize) -> V + Sync,
    k: usize,
    h: f64,
    decay: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let dd = d * d;
    let alpha = tab.alpha;
    let (g, dg, uu, om) = (win.g, win.dg, win.u, win.omega);
    let w1 = outer_weights(k, alpha, 1.0 - alpha, k as f64 * h);
    let w2 = outer_weights(k, 2.0 * alpha - 1.0, 1.0 - alpha, k as f64 * h);
    let f: Vec<f64> = (0..=k).into_par_iter().flat_map_iter(|j| area_transform_by(tab, dd, &vat, k, j, h)).collect();
    let (t1, t2) = (0..=k)
        .into_par_iter()
        .map(|i| {
            let tw = |a: usize| decay.map_or(1.0, |e| e[(k - i) * d + a]);
            let p1 = compensated_scaled(tab, d, g, dg, uu, decay, i);
            let q = left_scaled(tab, d, om, k, i);
            let a1: Vec<f64> = matvec(d, &p1, &q).into_iter().enumerate().map(|(a, x)| x * w1[i] * tw(a)).collect();
            let p2 = area_right_scaled(tab, d, dg, decay, i);
            let r = left_scaled(tab, dd, &f, k, i);
            let a2: Vec<f64> = contract(d, &p2, &r).into_iter().enumerate().map(|(a, x)| x * w2[i] * tw(a)).collect();
            (a1, a2)
        })
        .reduce(
            || (vec![0.0; d], vec![0.0; d]),
            |(mut a, mut b), (c, e)| {
                for x in 0..d {
                    a[x] += c[x];
                    b[x] += e[x];
                }
                (a, b)
            },
        );
    (t1, t2)
}

/// `∫_s^t G(u) dω` for a Chen-coupled pair `(u, v)`; `s` and `t` must be grid points.
pub fn rough_integral(u: &GridPath, v: &AreaField, omega: &NoisePath, model: &dyn Nonlinearity, params: &FracParams, s: f64, t: f64) -> Result<RoughIntegral> {
    let alpha = params.alpha;
    FracParams::new(alpha)?;
    match params.exponents {
        Some((b, bp)) => check_rough_window(alpha, b, bp)?,
        None if alpha <= 0.5 => return Err(Error::Contract(format!("rough integral needs α > 1/2, got {alpha}"))),
        None => {}
    }
    let grid = u.grid();
    if !grid.same_as(v.grid()) || !grid.same_as(omega.grid()) {
        return Err(Error::Structural("path, area and noise must share a grid".into()));
    }
    let d = u.dim();
    if v.dim() != d || omega.dim() != d || model.dim() != d {
        return Err(Error::Structural("path, area, noise and model must share a dimension".into()));
    }
    let js = grid_index(grid, s)?;
    let jt = grid_index(grid, t)?;
    if jt <= js {
        return Err(Error::Domain(format!("integral needs s < t, got s={s}, t={t}")));
    }
    if let Some(tol) = params.chen_tol {
        let (us, vs, ws) = (u.restrict(js, jt)?, v.restrict(js, jt)?, omega.path.restrict(js, jt)?);
        let res = chen_residual(&us, &vs, &ws)?;
        let mut scale = 1.0f64;
        for a in 0..vs.grid().len() {
            for b in a + 1..vs.grid().len() {
                scale = vs.at(a, b).iter().fold(scale, |m, x| m.max(x.abs()));
            }
        }
        if res > tol * scale {
            return Err(Error::Contract(format!("Chen residual {res:.3e} exceeds tolerance {:.3e}", tol * scale)));
        }
    }
    let gs = GSamples::sample(model, u)?;
    let (t1, t2) = if params.quad_n == 1 {
        let tab = Tables::new(alpha, jt - js);
        rough_terms(&tab, &gs, u, v, &omega.path, js, jt - js, None)
    } else {
        refined_terms(&gs, u, v, &omega.path, js, jt - js, params.quad_n, alpha)
    };
    let value = t1.iter().zip(&t2).map(|(a, b)| a - b).collect();
    Ok(RoughIntegral { value, compensated_term: t1, area_term: t2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn right_derivative_examples() {
        let one = GridPath::constant(grid(16), &[1.0]);
        let v = frac_derivative_right(&one, 0.5, 0.0, 1.0).unwrap()[0];
        assert!((v - 1.0 / PI.sqrt()).abs() < 1e-13);
        let id = GridPath::from_fn(grid(16), 1, |t| vec![t]).unwrap();
        let v = frac_derivative_right(&id, 0.5, 0.0, 1.0).unwrap()[0];
        assert!((v - 2.0 / PI.sqrt()).abs() < 1e-12);
        let v = frac_derivative_right(&id, 0.5, 0.0, 0.3).unwrap()[0];
        assert!((v - 0.3f64.sqrt() * 2.0 / PI.sqrt()).abs() < 1e-12);
        assert!(frac_derivative_right(&id, 0.5, 0.2, 0.2).unwrap()[0].is_infinite());
    }

    #[test]
    fn right_derivative_self_converges_on_square() {
        // D^α q² at r=1: (1 + 2α/((1-α)(2-α)))... compare against a fine grid
        let exact = |a: f64| {
            // F(r)/r^a + a ∫ (r²-q²)/(r-q)^{1+a}; closed form Γ(3)/Γ(3-a) r^{2-a}
            2.0 / gamma_fn(3.0 - a)
        };
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let sq = GridPath::from_fn(grid(n), 1, |t| vec![t * t]).unwrap();
            let v = frac_derivative_right(&sq, 0.4, 0.0, 1.0).unwrap()[0];
            errs.push((v - exact(0.4)).abs());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1]);
        assert!((errs[1] / errs[2]).log2() > 1.0, "{errs:?}");
    }

    #[test]
    fn left_derivative_examples() {
        let c = GridPath::constant(grid(16), &[2.0]);
        assert_eq!(frac_derivative_left(&c, 0.6, 1.0, 0.25).unwrap()[0], 0.0);
        let id = GridPath::from_fn(grid(16), 1, |t| vec![t]).unwrap();
        for (a, r) in [(0.6, 0.25), (0.7, 0.0), (0.55, 0.4)] {
            let v = frac_derivative_left(&id, a, 1.0, r).unwrap()[0];
            let want = (1.0 - r as f64).powf(a) / gamma_fn(1.0 + a);
            assert!((v - want).abs() < 1e-12, "{a} {r}: {v} vs {want}");
        }
        assert_eq!(frac_derivative_left(&id, 0.6, 1.0, 1.0).unwrap()[0], 0.0);
    }

    #[test]
    fn left_derivative_self_converges_near_root() {
        let f = |n: usize| {
            let p = GridPath::from_fn(grid(n), 1, |t| vec![t.powf(0.45)]).unwrap();
            frac_derivative_left(&p, 0.6, 1.0, 0.0).unwrap()[0]
        };
        let (a, b, c) = (f(64), f(256), f(1024));
        assert!((c - b).abs() < (b - a).abs());
    }

    #[test]
    fn young_examples() {
        let p = FracParams::new(0.4).unwrap();
        let one = GridPath::constant(grid(16), &[1.0]);
        let id = GridPath::from_fn(grid(16), 1, |t| vec![t]).unwrap();
        let v = young_integral(&one, &id, &p, 0.0, 1.0).unwrap()[0];
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        let zero = GridPath::constant(grid(16), &[0.0]);
        assert_eq!(young_integral(&zero, &id, &p, 0.0, 1.0).unwrap()[0], 0.0);
        let fine = GridPath::from_fn(grid(256), 1, |t| vec![t]).unwrap();
        let v = young_integral(&fine, &fine, &p, 0.0, 1.0).unwrap()[0];
        assert!((v - 0.5).abs() < 1e-4, "{v}");
        let bad = p.with_exponents(0.3, 0.45);
        assert!(matches!(young_integral(&fine, &fine, &bad, 0.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn young_matches_riemann_stieltjes_for_smooth_data() {
        let g = grid(512);
        let f = GridPath::from_fn(g, 1, |t| vec![(2.0 * t).cos()]).unwrap();
        let xi = GridPath::from_fn(g, 1, |t| vec![(3.0 * t).sin()]).unwrap();
        let p = FracParams::new(0.45).unwrap();
        let v = young_integral(&f, &xi, &p, 0.1, 0.9).unwrap()[0];
        // ∫ cos(2r) 3cos(3r) dr = 1.5 (sin(5r)/5 + sin(r))
        let prim = |r: f64| 1.5 * ((5.0 * r).sin() / 5.0 + r.sin());
        assert!((v - (prim(0.9) - prim(0.1))).abs() < 1e-4, "{v}");
    }

    #[test]
    fn compensated_examples() {
        let g = grid(32);
        let u = GridPath::from_fn(g, 1, |t| vec![t]).unwrap();
        let cst = ConstantG { dim: 1, matrix: vec![3.0] };
        let gs = GSamples::sample(&cst, &u).unwrap();
        let v = compensated_derivative(&gs, &u, 0.6, 0.0, 0.5).unwrap()[0];
        assert!((v - 3.0 / (gamma_fn(0.4) * 0.5f64.powf(0.6))).abs() < 1e-12);
        struct Sq;
        impl Nonlinearity for Sq {
            fn dim(&self) -> usize {
                1
            }
            fn g(&self, u: &[f64]) -> Vec<f64> {
                vec![u[0] * u[0]]
            }
            fn dg(&self, u: &[f64]) -> Vec<f64> {
                vec![2.0 * u[0]]
            }
        }
        struct Lin;
        impl Nonlinearity for Lin {
            fn dim(&self) -> usize {
                1
            }
            fn g(&self, u: &[f64]) -> Vec<f64> {
                vec![2.0 * u[0] + 1.0]
            }
            fn dg(&self, _u: &[f64]) -> Vec<f64> {
                vec![2.0]
            }
        }
        let gl = GSamples::sample(&Lin, &u).unwrap();
        let v = compensated_derivative(&gl, &u, 0.6, 0.25, 0.75).unwrap()[0];
        assert!((v - 2.5 / (gamma_fn(0.4) * 0.5f64.powf(0.6))).abs() < 1e-12);
        // remainder (r-q)² is not linear, so compare on a fine grid
        let fine = grid(2048);
        let uf = GridPath::from_fn(fine, 1, |t| vec![t]).unwrap();
        let gsq = GSamples::sample(&Sq, &uf).unwrap();
        let a = 0.6;
        let v = compensated_derivative(&gsq, &uf, a, 0.0, 1.0).unwrap()[0];
        let want = (1.0 + a / (2.0 - a)) / gamma_fn(1.0 - a);
        assert!((v - want).abs() < 1e-4, "{v} vs {want}");
    }

    #[test]
    fn tensor_derivative_examples() {
        let g = grid(32);
        let zero = AreaField::zeros(g, 1);
        assert_eq!(tensor_derivative(&zero, 0.6, 1.0, 0.25).unwrap(), vec![0.0]);
        let lin = AreaField::from_fn(g, 1, |j, k| vec![g.time(k) - g.time(j)]).unwrap();
        let v = tensor_derivative(&lin, 0.6, 1.0, 0.25).unwrap()[0];
        assert!((v - 0.75f64.powf(0.6) / gamma_fn(1.6)).abs() < 1e-12);
        assert_eq!(tensor_derivative(&lin, 0.6, 1.0, 1.0).unwrap(), vec![0.0]);
        let p = |n: usize| {
            let g = grid(n);
            let f = AreaField::from_fn(g, 1, |j, k| vec![(g.time(k) - g.time(j)).powf(0.85)]).unwrap();
            tensor_derivative(&f, 0.6, 1.0, 0.0).unwrap()[0]
        };
        let (a, b, c) = (p(32), p(128), p(512));
        assert!((c - b).abs() < (b - a).abs());
    }

    fn trig_noise(g: TimeGrid) -> NoisePath {
        NoisePath::from_fn(g, 2, |t| vec![(2.0 * PI * t).sin() / 3.0, (t * 3.0).cos() - 1.0]).unwrap()
    }

    struct Tanhish;
    impl Nonlinearity for Tanhish {
        fn dim(&self) -> usize {
            2
        }
        fn g(&self, u: &[f64]) -> Vec<f64> {
            vec![u[0].tanh(), 0.5 * u[1].sin(), 0.3, u[0] * u[1]]
        }
        fn dg(&self, u: &[f64]) -> Vec<f64> {
            let c = u[0].tanh();
            vec![1.0 - c * c, 0.0, 0.0, 0.5 * u[1].cos(), 0.0, 0.0, u[1], u[0]]
        }
    }

    #[test]
    fn rough_integral_constant_noise_and_constant_g() {
        let g = grid(64);
        let u = GridPath::from_fn(g, 2, |t| vec![t.sin(), t * t]).unwrap();
        let flat = NoisePath::new(GridPath::zeros(g, 2));
        let v = crate::area::path_area(&u, &flat).unwrap();
        let p = FracParams::new(0.6).unwrap();
        let r = rough_integral(&u, &v, &flat, &Tanhish, &p, 0.0, 1.0).unwrap();
        assert!(r.value.iter().all(|x| x.abs() < 1e-14));
        let c = ConstantG { dim: 2, matrix: vec![1.0, 2.0, -0.5, 0.25] };
        let mut errs = Vec::new();
        for n in [64usize, 256] {
            let g = grid(n);
            let u = GridPath::from_fn(g, 2, |t| vec![t.sin(), t * t]).unwrap();
            let w = trig_noise(g);
            let v = crate::area::path_area(&u, &w).unwrap();
            let r = rough_integral(&u, &v, &w, &c, &p, 0.25, 0.75).unwrap();
            let dw = w.path.increment(n / 4, 3 * n / 4);
            let want = matvec(2, &c.matrix, &dw);
            let err = (0..2).map(|a| (r.value[a] - want[a]).abs()).fold(0.0, f64::max);
            errs.push(err / crate::hilbert::norm2(&want));
        }
        assert!(errs[1] < errs[0] && errs[1] < 1e-3, "{errs:?}");
    }

    #[test]
    fn rough_integral_matches_riemann_stieltjes_for_smooth_data() {
        let n = 1024;
        let g = grid(n);
        let u = GridPath::from_fn(g, 2, |t| vec![0.3 + t.sin(), 0.5 * (2.0 * t).cos()]).unwrap();
        let w = trig_noise(g);
        let v = crate::area::path_area(&u, &w).unwrap();
        let p = FracParams::new(0.6).unwrap().with_exponents(0.45, 0.48).with_chen_tol(None);
        let r = rough_integral(&u, &v, &w, &Tanhish, &p, 0.0, 1.0).unwrap();
        // midpoint Riemann–Stieltjes sum on a finer grid
        let m = 20000;
        let mut want = [0.0; 2];
        for k in 0..m {
            let (a, b) = (k as f64 / m as f64, (k + 1) as f64 / m as f64);
            let mid = 0.5 * (a + b);
            let um = [0.3 + mid.sin(), 0.5 * (2.0 * mid).cos()];
            let gm = Tanhish.g(&um);
            let dw = [((2.0 * PI * b).sin() - (2.0 * PI * a).sin()) / 3.0, (3.0 * b).cos() - (3.0 * a).cos()];
            for i in 0..2 {
                want[i] += gm[i * 2] * dw[0] + gm[i * 2 + 1] * dw[1];
            }
        }
        for i in 0..2 {
            assert!((r.value[i] - want[i]).abs() < 1e-3, "{:?} vs {want:?}", r.value);
        }
    }

    #[test]
    fn refined_panels_reduce_the_quadrature_error() {
        let g = grid(64);
        let uf = |t: f64| vec![0.3 + t.sin(), 0.5 * (2.0 * t).cos()];
        let u = GridPath::from_fn(g, 2, uf).unwrap();
        let w = trig_noise(g);
        let v = crate::area::path_area(&u, &w).unwrap();
        let (s, t) = (0.25, 0.75);
        let m = 20000;
        let mut want = [0.0; 2];
        for k in 0..m {
            let (a, b) = (s + (t - s) * k as f64 / m as f64, s + (t - s) * (k + 1) as f64 / m as f64);
            let gm = Tanhish.g(&uf(0.5 * (a + b)));
            let dw = [((2.0 * PI * b).sin() - (2.0 * PI * a).sin()) / 3.0, (3.0 * b).cos() - (3.0 * a).cos()];
            for i in 0..2 {
                want[i] += gm[i * 2] * dw[0] + gm[i * 2 + 1] * dw[1];
            }
        }
        let err = |quad_n: usize| {
            let p = FracParams::new(0.6).unwrap().with_quad_n(quad_n);
            let r = rough_integral(&u, &v, &w, &Tanhish, &p, s, t).unwrap().value;
            (0..2).map(|i| (r[i] - want[i]).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(1), err(8));
        assert!(fine < coarse / 3.0, "{fine:e} vs {coarse:e}");
    }

    #[test]
    fn rough_integral_checks_chen_and_window() {
        let g = grid(16);
        let u = GridPath::from_fn(g, 2, |t| vec![t, t]).unwrap();
        let w = trig_noise(g);
        let v = AreaField::zeros(g, 2);
        let p = FracParams::new(0.6).unwrap();
        assert!(matches!(rough_integral(&u, &v, &w, &Tanhish, &p, 0.0, 1.0), Err(Error::Contract(_))));
        let v = crate::area::path_area(&u, &w).unwrap();
        let bad = p.with_exponents(0.25, 0.3);
        assert!(matches!(rough_integral(&u, &v, &w, &Tanhish, &bad, 0.0, 1.0), Err(Error::Contract(_))));
    }
}
