//! Mild path-area solutions `U = (u, v)` of `du = Au dt + G(u) dω` on a
//! diagonal spectral operator.
//!
//! The fixed-point map `𝒯 = (𝒯₁, 𝒯₂)` acts on a pair over one interval.
//! `𝒯₁` is a semigroup-twisted rough integral; `𝒯₂` is the area of the
//! resulting path against `ω`. Both are assembled from per-segment pieces:
//!
//! ```text
//! Y_k = ∫_{τ_k}^{τ_{k+1}} S(τ_{k+1}-r) G(u(r)) dω(r)          (rough, fractional)
//! X_k = ∫_{τ_k}^{τ_{k+1}} ω_S(r, τ_{k+1}) G(u(r)) ω̇(r) dr     (closed form)
//! ū(τ_{k+1}) = S(h) ū(τ_k) + Y_k
//! v̄(s,t)_{ab} = ū_a(s) (ω_S(s,t) - Δω(s,t))_{ab}
//!               + Σ_{s<=k<t} X_{k,ab} + Y_{k,a} ω_S(τ_{k+1}, t)_{ab}
//! ```
//!
//! The output pair satisfies the Chen equality for every input, and the
//! fixed point is additive over concatenated intervals.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::area::{panel_moments, SegmentNoise};
use crate::error::{Error, Result};
use crate::fracint::{
    area_right_scaled, area_transform, check_rough_window, compensated_scaled, contract, left_scaled, outer_weights, rough_terms, GSamples,
    Nonlinearity, Tables,
};
use crate::hilbert::{chen_residual, frac_power_norm, norm2, AreaField, GridPath, PathAreaPair, SpectralOperator, TimeGrid};
use crate::noise::NoisePath;
use crate::quad::phi1;

/// How `𝒯₁` evaluates the rough integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Fractional integral per segment, propagated by the semigroup.
    #[default]
    Spliced,
    /// One fractional integral over `[T_{i-1}, t]` for every grid time `t`.
    Window,
}

/// Exponents, tolerances and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub hurst: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub beta_second: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub gamma: f64,
    /// Schedule constant; measured from the run when absent.
    pub c: Option<f64>,
    /// Schedule integer; derived from `c` when absent.
    pub k: Option<f64>,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Grid steps per executed interval before any halving.
    pub interval_steps: usize,
    /// Sub-panels per noise segment in the fractional quadrature.
    pub sub_panels: usize,
    pub max_halvings: usize,
    /// Factor applied to the measured constant.
    pub c_safety: f64,
    pub scheme: Scheme,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            hurst: 0.45,
            beta: 0.40,
            beta_prime: 0.43,
            beta_second: 0.44,
            alpha: 0.62,
            kappa: 1.0,
            gamma: 0.8,
            c: None,
            k: None,
            fp_tol: 1e-10,
            fp_max_iter: 80,
            interval_steps: 64,
            sub_panels: 8,
            max_halvings: 4,
            c_safety: 2.0,
            scheme: Scheme::Spliced,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let (b, bp, bs, h, a) = (self.beta, self.beta_prime, self.beta_second, self.hurst, self.alpha);
        if !(1.0 / 3.0 < b && b < bp && bp < bs && bs < h && h <= 0.5) {
            return Err(Error::Config(format!(
                "(H1) needs 1/3 < β < β′ < β″ < H <= 1/2, got β={b}, β′={bp}, β″={bs}, H={h}"
            )));
        }
        check_rough_window(a, b, bp).map_err(|e| Error::Config(format!("(H1) α window: {e}")))?;
        if !(self.kappa + bp > 1.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("need κ + β′ > 1 and κ <= 1, got κ={}", self.kappa)));
        }
        if !(a < self.gamma && self.gamma < 1.0) {
            return Err(Error::Config(format!("need α < γ < 1, got γ={}", self.gamma)));
        }
        if !(self.fp_tol > 0.0 && self.fp_max_iter > 0) {
            return Err(Error::Config("fixed-point tolerance and iteration cap must be positive".into()));
        }
        if self.interval_steps == 0 || self.sub_panels == 0 {
            return Err(Error::Config("interval_steps and sub_panels must be positive".into()));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("schedule constant must be positive, got {c}")));
            }
        }
        if let Some(k) = self.k {
            if !(k >= 1.0 && k.is_finite()) {
                return Err(Error::Config(format!("schedule integer must be >= 1, got {k}")));
            }
        }
        if !(self.c_safety >= 1.0) {
            return Err(Error::Config("c_safety must be >= 1".into()));
        }
        Ok(())
    }
}

/// `|||u|||_β + ‖v‖_{β+β′}` on the pair's grid.
pub fn x_seminorm(u: &GridPath, v: &AreaField, beta: f64, beta_prime: f64) -> Result<f64> {
    Ok(u.holder_seminorm(beta, false)? + v.area_seminorm(beta + beta_prime, None)?)
}

/// X-seminorm of the difference of two pairs on one grid.
pub fn x_distance(a: &PathAreaPair, b: &PathAreaPair, beta: f64, beta_prime: f64) -> Result<f64> {
    let du = GridPath::new(*a.u.grid(), a.u.dim(), a.u.values().iter().zip(b.u.values()).map(|(x, y)| x - y).collect())?;
    x_seminorm(&du, &a.v.difference(&b.v)?, beta, beta_prime)
}

/// Tables for the rough integral over one segment split into sub-panels.
#[derive(Debug, Clone)]
struct SegmentKernel {
    m: usize,
    tab: Tables,
    w1: Vec<f64>,
    w2: Vec<f64>,
    /// scaled left derivative of the unit linear path at sub-node `i`
    q: Vec<f64>,
    /// the same for the unit quadratic area
    l: Vec<f64>,
    /// `[p*d + a] = e^{-λ_a p η}`
    decay: Vec<f64>,
    /// per mode: panel moments on one sub-panel
    moments: Vec<[f64; 4]>,
}

impl SegmentKernel {
    fn new(alpha: f64, m: usize, h: f64, rates: &[f64]) -> Result<Self> {
        let eta = h / m as f64;
        let tab = Tables::new(alpha, m);
        let w1 = outer_weights(m, alpha, 1.0 - alpha, h);
        let w2 = outer_weights(m, 2.0 * alpha - 1.0, 1.0 - alpha, h);
        let lin: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let q = (0..=m).map(|i| left_scaled(&tab, 1, &lin, m, i)[0]).collect();
        let sub = TimeGrid::new(0.0, h, m)?;
        let unit = AreaField::from_fn(sub, 1, |a, b| vec![((b - a) as f64 / m as f64).powi(2)])?;
        let f: Vec<f64> = (0..=m).map(|j| area_transform(&tab, &unit, 0, m, j, eta)[0]).collect();
        let l = (0..=m).map(|i| left_scaled(&tab, 1, &f, m, i)[0]).collect();
        let d = rates.len();
        let mut decay = vec![0.0; (m + 1) * d];
        for p in 0..=m {
            for a in 0..d {
                decay[p * d + a] = (-rates[a] * p as f64 * eta).exp();
            }
        }
        let moments = rates.iter().map(|&r| panel_moments(r, eta)).collect();
        Ok(Self { m, tab, w1, w2, q, l, decay, moments })
    }
}

/// Rough and classical pieces of one segment.
#[derive(Debug, Clone)]
struct Pieces {
    y: Vec<f64>,
    x: Vec<f64>,
}

/// The fixed-point map on a fixed noise path.
pub struct Solver<'a> {
    model: &'a dyn Nonlinearity,
    op: SpectralOperator,
    noise: NoisePath,
    seg: SegmentNoise,
    params: SolverParams,
    kernel: SegmentKernel,
    /// `e^{-λ_a h}`
    step_decay: Vec<f64>,
}

impl<'a> Solver<'a> {
    /// `noise` must be piecewise linear (carry a dyadic level); the solver
    /// grid is the noise grid.
    pub fn new(model: &'a dyn Nonlinearity, op: &SpectralOperator, noise: &NoisePath, params: SolverParams) -> Result<Self> {
        params.validate()?;
        let d = model.dim();
        if op.dim() != d || noise.dim() != d {
            return Err(Error::Structural(format!(
                "model ({d}), operator ({}) and noise ({}) dimensions differ",
                op.dim(),
                noise.dim()
            )));
        }
        let seg = SegmentNoise::new(noise, op.eigenvalues())?;
        let h = noise.grid().dt();
        let kernel = SegmentKernel::new(params.alpha, params.sub_panels, h, op.eigenvalues())?;
        let step_decay = op.eigenvalues().iter().map(|l| (-l * h).exp()).collect();
        Ok(Solver { model, op: op.clone(), noise: noise.clone(), seg, params, kernel, step_decay })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        self.noise.grid()
    }

    pub fn noise(&self) -> &NoisePath {
        &self.noise
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `|x|_{V_κ}`.
    pub fn kappa_norm(&self, x: &[f64]) -> f64 {
        frac_power_norm(&self.op, x, self.params.kappa)
    }

    /// Global grid index of time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.grid().index_of(t).ok_or_else(|| Error::Domain(format!("{t} is not a grid time")))
    }

    fn interval_grid(&self, j0: usize, j1: usize) -> Result<TimeGrid> {
        self.grid().sub(j0, j1)
    }

    fn check_pair(&self, u: &GridPath, v: &AreaField, j0: usize, j1: usize) -> Result<()> {
        let g = self.interval_grid(j0, j1)?;
        if !u.grid().same_as(&g) || !v.grid().same_as(&g) {
            return Err(Error::Structural(format!("pair does not live on the interval grid {j0}..={j1}")));
        }
        if u.dim() != self.dim() || v.dim() != self.dim() {
            return Err(Error::Structural("pair dimension differs from the model".into()));
        }
        Ok(())
    }

    /// Pieces of global segment `kg` for the iterate values at its ends and its area.
    fn pieces(&self, kg: usize, ua: &[f64], ub: &[f64], vseg: &[f64], rough: bool) -> Result<Pieces> {
        let d = self.dim();
        let dd = d * d;
        let sk = &self.kernel;
        let m = sk.m;
        let h = self.grid().dt();
        let eta = h / m as f64;
        let mut us = Vec::with_capacity((m + 1) * d);
        for i in 0..=m {
            let s = i as f64 / m as f64;
            us.extend((0..d).map(|j| ua[j] + s * (ub[j] - ua[j])));
        }
        let mut g = Vec::with_capacity((m + 1) * dd);
        let mut dg = Vec::with_capacity(if rough { (m + 1) * dd * d } else { 0 });
        for i in 0..=m {
            let ui = &us[i * d..(i + 1) * d];
            g.extend(self.model.g(ui));
            if rough {
                dg.extend(self.model.dg(ui));
            }
        }
        if g.iter().chain(&dg).any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("nonlinearity produced non-finite values on segment {kg}")));
        }
        let slope: Vec<f64> = (0..d).map(|c| self.seg.slope(kg, c)).collect();
        // g_a(r) = [G(u(r)) ω̇]_a at every sub-node
        let mut gw = vec![0.0; (m + 1) * d];
        for i in 0..=m {
            let gi = &g[i * dd..(i + 1) * dd];
            for a in 0..d {
                gw[i * d + a] = (0..d).map(|c| gi[a * d + c] * slope[c]).sum();
            }
        }
        let lambdas = self.seg.lambdas();
        let mut x = vec![0.0; dd];
        for a in 0..d {
            let mo = sk.moments[a];
            let mut acc = 0.0;
            for p in 0..m {
                let y = (m - 1 - p) as f64 * eta;
                let (g0, g1) = (gw[p * d + a], gw[(p + 1) * d + a]);
                let e = sk.decay[(m - 1 - p) * d + a];
                acc += y * phi1(lambdas[a] * y) * eta * 0.5 * (g0 + g1) + e * (mo[0] * g0 + mo[1] * (g1 - g0));
            }
            for b in 0..d {
                x[a * d + b] = slope[b] * acc;
            }
        }
        let mut y = vec![0.0; d];
        if rough {
            let dw: Vec<f64> = slope.iter().map(|s| s * h).collect();
            for i in 0..=m {
                let p1 = compensated_scaled(&sk.tab, d, &g, &dg, &us, Some(&sk.decay), i);
                let p2 = area_right_scaled(&sk.tab, d, &dg, Some(&sk.decay), i);
                let vm: Vec<f64> = vseg.iter().map(|v| v * sk.l[i]).collect();
                let a2 = contract(d, &p2, &vm);
                for a in 0..d {
                    let a1: f64 = (0..d).map(|c| p1[a * d + c] * dw[c]).sum::<f64>() * sk.q[i];
                    y[a] += sk.decay[(m - i) * d + a] * (sk.w1[i] * a1 - sk.w2[i] * a2[a]);
                }
            }
        }
        Ok(Pieces { y, x })
    }

    /// `𝒯(U)` on the interval `j0..=j1` with initial value `u0`.
    pub fn apply(&self, pair: &PathAreaPair, u0: &[f64], j0: usize, j1: usize) -> Result<PathAreaPair> {
        let (u, v) = (&pair.u, &pair.v);
        self.check_pair(u, v, j0, j1)?;
        let d = self.dim();
        let n = j1 - j0;
        let spliced = self.params.scheme == Scheme::Spliced;
        let mut pieces: Vec<Pieces> = (0..n)
            .into_par_iter()
            .map(|k| self.pieces(j0 + k, u.at(k), u.at(k + 1), v.at(k, k + 1), spliced))
            .collect::<Result<_>>()?;
        let mut ubar = vec![0.0; (n + 1) * d];
        ubar[..d].copy_from_slice(u0);
        if spliced {
            for k in 0..n {
                for a in 0..d {
                    ubar[(k + 1) * d + a] = self.step_decay[a] * ubar[k * d + a] + pieces[k].y[a];
                }
            }
        } else {
            let window = self.window_t1(u, v, u0, j0, j1)?;
            ubar.copy_from_slice(window.values());
            for k in 0..n {
                for a in 0..d {
                    pieces[k].y[a] = ubar[(k + 1) * d + a] - self.step_decay[a] * ubar[k * d + a];
                }
            }
        }
        let grid = self.interval_grid(j0, j1)?;
        let ubar = GridPath::new(grid, d, ubar)?;
        let vbar = self.assemble_area(&ubar, &pieces, j0)?;
        PathAreaPair::new(ubar, vbar)
    }

    /// `v̄` from the pieces; see the module documentation.
    fn assemble_area(&self, ubar: &GridPath, pieces: &[Pieces], j0: usize) -> Result<AreaField> {
        let d = self.dim();
        let dd = d * d;
        let n = pieces.len();
        let h = self.grid().dt();
        let lam = self.seg.lambdas();
        let p1: Vec<f64> = lam.iter().map(|l| h * phi1(l * h)).collect();
        let om = &self.noise.path;
        let cols: Vec<Vec<f64>> = (1..=n)
            .into_par_iter()
            .map(|t| {
                let mut col = vec![0.0; t * dd];
                let mut ws = vec![0.0; dd];
                let mut acc = vec![0.0; dd];
                let wt = om.at(j0 + t);
                for k in (0..t).rev() {
                    let pk = &pieces[k];
                    for a in 0..d {
                        for b in 0..d {
                            acc[a * d + b] += pk.x[a * d + b] + pk.y[a] * ws[a * d + b];
                        }
                    }
                    for a in 0..d {
                        let e = self.step_decay[a];
                        for b in 0..d {
                            ws[a * d + b] = self.seg.slope(j0 + k, b) * p1[a] + e * ws[a * d + b];
                        }
                    }
                    let wk = om.at(j0 + k);
                    let uk = ubar.at(k);
                    let out = &mut col[k * dd..(k + 1) * dd];
                    for a in 0..d {
                        for b in 0..d {
                            out[a * d + b] = uk[a] * (ws[a * d + b] - (wt[b] - wk[b])) + acc[a * d + b];
                        }
                    }
                }
                col
            })
            .collect();
        let mut v = AreaField::zeros(*ubar.grid(), d);
        for (t, col) in cols.iter().enumerate() {
            let t = t + 1;
            for k in 0..t {
                v.set(k, t, &col[k * dd..(k + 1) * dd]);
            }
        }
        Ok(v)
    }

    /// `t ↦ S(t-T_{i-1})u0 + ∫_{T_{i-1}}^t S(t-r)G(u(r)) dω(r)` by one
    /// fractional integral per grid time.
    fn window_t1(&self, u: &GridPath, v: &AreaField, u0: &[f64], j0: usize, j1: usize) -> Result<GridPath> {
        let d = self.dim();
        let n = j1 - j0;
        let h = self.grid().dt();
        let gs = GSamples::sample(self.model, u)?;
        let tab = Tables::new(self.params.alpha, n);
        let lam = self.op.eigenvalues();
        let mut decay = vec![0.0; (n + 1) * d];
        for p in 0..=n {
            for a in 0..d {
                decay[p * d + a] = (-lam[a] * p as f64 * h).exp();
            }
        }
        let om = self.noise.path.restrict(j0, j1)?;
        let rows: Vec<Vec<f64>> = (1..=n)
            .into_par_iter()
            .map(|k| {
                let (t1, t2) = rough_terms(&tab, &gs, u, v, &om, 0, k, Some(&decay));
                (0..d).map(|a| decay[k * d + a] * u0[a] + t1[a] - t2[a]).collect()
            })
            .collect();
        let mut vals = u0.to_vec();
        for r in rows {
            vals.extend(r);
        }
        GridPath::new(*u.grid(), d, vals)
    }

    /// `𝒯₁(U)`.
    pub fn t1_apply(&self, pair: &PathAreaPair, u0: &[f64], j0: usize, j1: usize) -> Result<GridPath> {
        Ok(self.apply(pair, u0, j0, j1)?.u)
    }

    /// `𝒯₂(U)`.
    pub fn t2_apply(&self, pair: &PathAreaPair, u0: &[f64], j0: usize, j1: usize) -> Result<AreaField> {
        Ok(self.apply(pair, u0, j0, j1)?.v)
    }

    /// The ball center `(u ≡ u0, v ≡ 0)`.
    pub fn center(&self, u0: &[f64], j0: usize, j1: usize) -> Result<PathAreaPair> {
        let g = self.interval_grid(j0, j1)?;
        PathAreaPair::new(GridPath::constant(g, u0), AreaField::zeros(g, self.dim()))
    }
}

/// A converged fixed point on one interval.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub index: usize,
    /// Global grid indices of the interval ends.
    pub j0: usize,
    pub j1: usize,
    pub pair: PathAreaPair,
    pub iterations: usize,
    /// Largest ratio of successive iterate distances.
    pub contraction_ratio: f64,
    /// `|||U - 𝒯(U)|||_X` of the accepted iterate.
    pub fixed_point_residual: f64,
    pub x_norm: f64,
    pub chen_residual: f64,
    pub initial_kappa_norm: f64,
    pub terminal_kappa_norm: f64,
    /// Largest `|||𝒯(U)|||_X / (ΔT^{κ-β}ρ + ΔT^{β′-β} + ΔT^{β′+β}|||U|||²_X)` over the iterates.
    pub c_lemma: f64,
    pub halvings: usize,
}

impl LocalSolution {
    pub fn t_start(&self) -> f64 {
        self.pair.u.grid().t0
    }

    pub fn t_end(&self) -> f64 {
        self.pair.u.grid().t_end
    }

    pub fn length(&self) -> f64 {
        self.t_end() - self.t_start()
    }

    pub fn terminal_value(&self) -> &[f64] {
        self.pair.u.at(self.pair.u.grid().n)
    }
}

impl<'a> Solver<'a> {
    /// Picard iteration from the ball center.
    pub fn local_solve(&self, u0: &[f64], j0: usize, j1: usize) -> Result<LocalSolution> {
        self.local_solve_from(u0, j0, j1, None)
    }

    /// Picard iteration from `initial`, or from the ball center.
    pub fn local_solve_from(&self, u0: &[f64], j0: usize, j1: usize, initial: Option<PathAreaPair>) -> Result<LocalSolution> {
        if u0.len() != self.dim() || u0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("initial value must be finite with the model dimension".into()));
        }
        let p = &self.params;
        let (b, bp, kap) = (p.beta, p.beta_prime, p.kappa);
        let dt = self.grid().dt() * (j1 - j0) as f64;
        let rho = self.kappa_norm(u0);
        let mut cur = match initial {
            Some(pair) => {
                self.check_pair(&pair.u, &pair.v, j0, j1)?;
                pair
            }
            None => self.center(u0, j0, j1)?,
        };
        let mut cur_norm = x_seminorm(&cur.u, &cur.v, b, bp)?;
        let mut prev_delta: Option<f64> = None;
        let mut ratio = 0.0f64;
        let mut c_lemma = 0.0f64;
        for it in 0..=p.fp_max_iter {
            let next = self.apply(&cur, u0, j0, j1)?;
            let next_norm = x_seminorm(&next.u, &next.v, b, bp)?;
            let bound = dt.powf(kap - b) * rho + dt.powf(bp - b) + dt.powf(bp + b) * cur_norm * cur_norm;
            c_lemma = c_lemma.max(next_norm / bound);
            let delta = x_distance(&next, &cur, b, bp)?;
            if !delta.is_finite() {
                return Err(Error::Numeric(format!("iterate diverged on {j0}..={j1}")));
            }
            if delta < p.fp_tol {
                let chen = chen_residual(&next.u, &next.v, &self.noise.path.restrict(j0, j1)?)?;
                let terminal = self.kappa_norm(next.u.at(j1 - j0));
                return Ok(LocalSolution {
                    index: 0,
                    j0,
                    j1,
                    iterations: it,
                    contraction_ratio: ratio,
                    fixed_point_residual: delta,
                    x_norm: next_norm,
                    chen_residual: chen,
                    initial_kappa_norm: rho,
                    terminal_kappa_norm: terminal,
                    c_lemma,
                    halvings: 0,
                    pair: next,
                });
            }
            if let Some(pd) = prev_delta {
                ratio = ratio.max(delta / pd);
            }
            prev_delta = Some(delta);
            cur = next;
            cur_norm = next_norm;
        }
        Err(Error::Contraction { interval: 0, iterations: p.fp_max_iter, ratio })
    }
}

/// Iterated concatenation of consecutive pairs; `omega` lives on the union grid.
///
/// Cross pairs `s <= b < t` get `v(s,b) + v(b,t) + (u(b)-u(s))⊗(ω(t)-ω(b))`.
pub fn concatenate_pairs(pieces: &[&PathAreaPair], omega: &GridPath) -> Result<PathAreaPair> {
    let first = pieces.first().ok_or_else(|| Error::Domain("nothing to concatenate".into()))?;
    let d = first.u.dim();
    let dd = d * d;
    let mut offsets = vec![0usize];
    for (i, p) in pieces.iter().enumerate() {
        if p.u.dim() != d {
            return Err(Error::Structural("pieces differ in dimension".into()));
        }
        if i > 0 {
            let prev = pieces[i - 1];
            let (a, b) = (prev.u.at(prev.u.grid().n), p.u.at(0));
            let scale = 1.0 + norm2(a);
            if norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()) > 1e-9 * scale {
                return Err(Error::Contract(format!("piece {i} does not start where piece {} ends", i - 1)));
            }
            let eps = 1e-9 * (1.0 + prev.u.grid().t_end.abs());
            if (prev.u.grid().t_end - p.u.grid().t0).abs() > eps || (prev.u.grid().dt() - p.u.grid().dt()).abs() > eps {
                return Err(Error::Contract(format!("piece {i} is not adjacent to piece {} on a common step", i - 1)));
            }
        }
        offsets.push(offsets[i] + p.u.grid().n);
    }
    let n = *offsets.last().unwrap();
    let grid = TimeGrid::new(first.u.grid().t0, pieces.last().unwrap().u.grid().t_end, n)?;
    if !omega.grid().same_as(&grid) || omega.dim() != d {
        return Err(Error::Structural("noise must live on the union grid".into()));
    }
    let mut vals = Vec::with_capacity((n + 1) * d);
    for (i, p) in pieces.iter().enumerate() {
        let skip = usize::from(i > 0);
        vals.extend_from_slice(&p.u.values()[skip * d..]);
    }
    let u = GridPath::new(grid, d, vals)?;
    let mut v = AreaField::zeros(grid, d);
    for (i, p) in pieces.iter().enumerate().rev() {
        let (o, e) = (offsets[i], offsets[i + 1]);
        for s in o..e {
            for t in s + 1..=e {
                v.set(s, t, p.v.at(s - o, t - o));
            }
            if e < n {
                let vsb = p.v.at(s - o, e - o).to_vec();
                let (us, ub, wb) = (u.at(s).to_vec(), u.at(e).to_vec(), omega.at(e).to_vec());
                for t in e + 1..=n {
                    let wt = omega.at(t);
                    let mut m = vec![0.0; dd];
                    let vbt = v.at(e, t);
                    for a in 0..d {
                        for b in 0..d {
                            m[a * d + b] = vsb[a * d + b] + vbt[a * d + b] + (ub[a] - us[a]) * (wt[b] - wb[b]);
                        }
                    }
                    v.set(s, t, &m);
                }
            }
        }
    }
    PathAreaPair::new(u, v)
}

/// Concatenation of two adjacent local solutions.
pub fn concatenate(first: &LocalSolution, second: &LocalSolution, omega: &NoisePath) -> Result<PathAreaPair> {
    if first.j1 != second.j0 {
        return Err(Error::Contract(format!("intervals {}..={} and {}..={} are not adjacent", first.j0, first.j1, second.j0, second.j1)));
    }
    concatenate_pairs(&[&first.pair, &second.pair], &omega.path.restrict(first.j0, second.j1)?)
}

/// Whether the four schedule inequalities hold for `K` at interval `i`.
pub fn schedule_inequalities(k: f64, i: f64, rho0: f64, c: f64, p: &SolverParams) -> [bool; 4] {
    let (b, bp, kap) = (p.beta, p.beta_prime, p.kappa);
    let x = k * i;
    let sum_bound = rho0 + 2.0 * c * k.powf(-bp) * i.powf(1.0 - bp) / (1.0 - bp);
    [
        sum_bound < x.powf(1.0 - bp),
        4.0 * c * c * (x.powf(1.0 - kap - 2.0 * bp) + x.powf(-2.0 * bp)) < 1.0,
        c * x.powf(b - bp) * (1.0 + 16.0 * c * c * (x.powf(2.0 - 2.0 * kap - 2.0 * bp) + x.powf(-2.0 * bp))) < 0.5,
        8.0 * c * c * (x.powf(2.0 - 2.0 * kap - 2.0 * bp) + x.powf(-2.0 * bp)) < 1.0,
    ]
}

/// The analytic step schedule `ΔT_i = 1/(Ki)` over a span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub rho0: f64,
    pub c: f64,
    pub k: f64,
    pub span: f64,
    /// `ln i*`, where `i*` is the first index with `Σ_{j<=i*} 1/(Kj) >= span`.
    pub ln_i_star: f64,
    /// `i*` when it fits in 64 bits.
    pub i_star: Option<u64>,
    /// Interval indices at which the inequalities were checked.
    pub checked: Vec<f64>,
    pub all_hold: bool,
    /// `(T_i, ΔT_i)` for the first few intervals, measured from the span start.
    pub head: Vec<(f64, f64)>,
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn harmonic(i: u64) -> f64 {
    if i < 1000 {
        (1..=i).map(|j| 1.0 / j as f64).sum()
    } else {
        let x = i as f64;
        x.ln() + EULER_GAMMA + 0.5 / x - 1.0 / (12.0 * x * x)
    }
}

/// Smallest `K` satisfying the schedule inequalities at `i = 1`, checked
/// again on a doubling set of `i` up to `i*`.
pub fn step_schedule(rho0: f64, c: f64, p: &SolverParams, span: f64) -> Result<ScheduleReport> {
    if !(c > 0.0 && c.is_finite()) || !(rho0 >= 0.0 && rho0.is_finite()) {
        return Err(Error::Domain(format!("schedule needs c > 0 and ρ₀ >= 0, got c={c}, ρ₀={rho0}")));
    }
    let ok = |k: f64| schedule_inequalities(k, 1.0, rho0, c, p).iter().all(|x| *x);
    let k = match p.k {
        Some(k) => {
            if !ok(k) {
                return Err(Error::Config(format!("K = {k} violates the schedule inequalities for c = {c}, ρ₀ = {rho0}")));
            }
            k
        }
        None => {
            let mut hi = 1.0f64;
            while !ok(hi) {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(Error::Config(format!("no K <= 1e300 satisfies the schedule inequalities for c = {c}")));
                }
            }
            let mut lo = hi / 2.0;
            if hi > 1.0 {
                while hi / lo > 1.0 + 1e-12 {
                    let mid = (lo * hi).sqrt();
                    if ok(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
            hi.ceil()
        }
    };
    let target = k * span.max(0.0);
    let (ln_i_star, i_star) = if span <= 0.0 {
        (f64::NEG_INFINITY, Some(0))
    } else if target <= 1.0 {
        (0.0, Some(1))
    } else if target - EULER_GAMMA < 40.0 {
        let mut i = ((target - EULER_GAMMA).exp().floor() as u64).max(1);
        while i > 1 && harmonic(i - 1) >= target {
            i -= 1;
        }
        while harmonic(i) < target {
            i += 1;
        }
        ((i as f64).ln(), Some(i))
    } else {
        (target - EULER_GAMMA, None)
    };
    let limit = if ln_i_star.is_finite() { ln_i_star.min(60.0 * std::f64::consts::LN_2) } else { 0.0 };
    let mut checked = Vec::new();
    let mut all_hold = true;
    let mut i = 1.0f64;
    while i.ln() <= limit + 1e-12 {
        checked.push(i);
        all_hold &= schedule_inequalities(k, i, rho0, c, p).iter().all(|x| *x);
        i *= 2.0;
    }
    let mut head = Vec::new();
    let mut t = 0.0;
    for j in 1..=8u32 {
        let dt = 1.0 / (k * j as f64);
        if t >= span {
            break;
        }
        t = (t + dt).min(span);
        head.push((t, dt));
    }
    Ok(ScheduleReport { rho0, c, k, span, ln_i_star, i_star, checked, all_hold, head })
}

/// Per-interval record of a global solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalDiagnostics {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub fixed_point_residual: f64,
    pub x_norm: f64,
    pub chen_residual: f64,
    /// Against a single `𝒯` over this interval and the next one.
    pub additivity_residual: Option<f64>,
    pub kappa_norm_end: f64,
    /// `ρ₀ + Σ_{j<=i} 2c ΔT_j^{β′}`, from the second interval on.
    pub regularity_bound: Option<f64>,
    pub radius: Option<f64>,
    pub within_ball: Option<bool>,
    pub halvings: usize,
}

/// Concatenated solution with its pieces and schedule.
#[derive(Debug, Clone)]
pub struct GlobalSolution {
    pub pair: PathAreaPair,
    pub intervals: Vec<LocalSolution>,
    pub diagnostics: Vec<IntervalDiagnostics>,
    /// Largest per-interval estimate of the lemma constant.
    pub c_measured: f64,
    /// Constant used for the schedule and the bounds.
    pub c: f64,
    /// `|u(T₀)|_{V_κ}` at the end of the first interval.
    pub rho0: f64,
    pub schedule: ScheduleReport,
    /// `1/K` for the schedule seeded with `|u0|_V`.
    pub t0_analytic: f64,
    pub regularity_holds: bool,
}

impl GlobalSolution {
    pub fn max_chen_residual(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.chen_residual).fold(0.0, f64::max)
    }

    pub fn max_additivity_residual(&self) -> f64 {
        self.diagnostics.iter().filter_map(|d| d.additivity_residual).fold(0.0, f64::max)
    }

    pub fn max_contraction_ratio(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.contraction_ratio).fold(0.0, f64::max)
    }

    pub fn terminal_value(&self) -> &[f64] {
        self.pair.u.at(self.pair.u.grid().n)
    }
}

fn at_interval(e: Error, index: usize) -> Error {
    match e {
        Error::Contraction { iterations, ratio, .. } => Error::Contraction { interval: index, iterations, ratio },
        Error::Numeric(m) => Error::Numeric(format!("interval {index}: {m}")),
        Error::Schedule(m) => Error::Schedule(format!("interval {index}: {m}")),
        other => other,
    }
}

impl<'a> Solver<'a> {
    /// Local solve with interval halving while the contraction ratio is not below one.
    fn solve_piece(&self, u0: &[f64], j0: usize, len: usize, index: usize) -> Result<LocalSolution> {
        let mut len = len;
        let mut halvings = 0;
        loop {
            let can_halve = halvings < self.params.max_halvings && len > 1;
            match self.local_solve(u0, j0, j0 + len) {
                Ok(mut sol) if sol.contraction_ratio < 1.0 || !can_halve => {
                    sol.index = index;
                    sol.halvings = halvings;
                    return Ok(sol);
                }
                Ok(_) | Err(Error::Contraction { .. }) if can_halve => {
                    len /= 2;
                    halvings += 1;
                }
                Ok(_) => unreachable!(),
                Err(e) => return Err(at_interval(e, index)),
            }
        }
    }

    /// Solution on `[t_start, t_end]` from `u0`, both grid times.
    pub fn global_solve(&self, u0: &[f64], t_start: f64, t_end: f64) -> Result<GlobalSolution> {
        let (js, je) = (self.index_of(t_start)?, self.index_of(t_end)?);
        if je <= js {
            return Err(Error::Domain(format!("need t_start < t_end, got {t_start} and {t_end}")));
        }
        let p = self.params;
        let mut intervals: Vec<LocalSolution> = Vec::new();
        let mut j = js;
        let mut cur = u0.to_vec();
        while j < je {
            let len = p.interval_steps.min(je - j);
            let sol = self.solve_piece(&cur, j, len, intervals.len())?;
            j = sol.j1;
            cur = sol.terminal_value().to_vec();
            intervals.push(sol);
        }
        let omega = self.noise.path.restrict(js, je)?;
        let pair = concatenate_pairs(&intervals.iter().map(|s| &s.pair).collect::<Vec<_>>(), &omega)?;

        let additivity: Vec<Option<f64>> = (0..intervals.len())
            .into_par_iter()
            .map(|i| {
                if i + 1 >= intervals.len() {
                    return Ok(None);
                }
                let (a, b) = (&intervals[i], &intervals[i + 1]);
                let joined = concatenate_pairs(&[&a.pair, &b.pair], &self.noise.path.restrict(a.j0, b.j1)?)?;
                let again = self.apply(&joined, joined.u.at(0), a.j0, b.j1)?;
                let du = again.u.values().iter().zip(joined.u.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let diff = again.v.difference(&joined.v)?;
                let n = joined.u.grid().n;
                let mut dv = 0.0f64;
                for s in 0..n {
                    for t in s + 1..=n {
                        dv = dv.max(norm2(diff.at(s, t)));
                    }
                }
                Ok(Some(du.max(dv)))
            })
            .collect::<Result<_>>()?;

        let (b, bp) = (p.beta, p.beta_prime);
        let mut c_measured = 0.0f64;
        for (i, s) in intervals.iter().enumerate() {
            c_measured = c_measured.max(s.c_lemma);
            if i > 0 {
                let dt = s.length();
                let grow = (s.terminal_kappa_norm - s.initial_kappa_norm).max(0.0);
                c_measured = c_measured.max(grow / (dt.powf(bp) * (1.0 + dt.powf(2.0 * b) * s.x_norm * s.x_norm)));
            }
        }
        let c = p.c.unwrap_or(p.c_safety * c_measured).max(1e-300);
        let rho0 = intervals[0].terminal_kappa_norm;
        let t0 = intervals[0].t_end();
        let schedule = step_schedule(rho0, c, &p, self.grid().time(je) - t0)?;
        let t0_analytic = 1.0 / step_schedule(norm2(u0), c, &p, 0.0)?.k;

        let mut diagnostics = Vec::with_capacity(intervals.len());
        let mut bound = rho0;
        let mut regularity_holds = true;
        for (i, s) in intervals.iter().enumerate() {
            let dt = s.length();
            let (radius, regularity_bound) = if i == 0 {
                (None, None)
            } else {
                bound += 2.0 * c * dt.powf(bp);
                regularity_holds &= s.terminal_kappa_norm <= bound * (1.0 + 1e-12);
                let a = dt.powf(p.kappa - b) * s.initial_kappa_norm + dt.powf(bp - b);
                let disc = 1.0 - 4.0 * c * c * dt.powf(bp + b) * a;
                ((disc >= 0.0).then(|| 2.0 * c * a / (1.0 + disc.sqrt())), Some(bound))
            };
            diagnostics.push(IntervalDiagnostics {
                index: i,
                t_start: s.t_start(),
                t_end: s.t_end(),
                dt,
                iterations: s.iterations,
                contraction_ratio: s.contraction_ratio,
                fixed_point_residual: s.fixed_point_residual,
                x_norm: s.x_norm,
                chen_residual: s.chen_residual,
                additivity_residual: additivity[i],
                kappa_norm_end: s.terminal_kappa_norm,
                regularity_bound,
                radius,
                within_ball: radius.map(|r| s.x_norm <= r),
                halvings: s.halvings,
            });
        }
        Ok(GlobalSolution { pair, intervals, diagnostics, c_measured, c, rho0, schedule, t0_analytic, regularity_holds })
    }
}
