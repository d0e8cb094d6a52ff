//! Driving noise: trace-class fractional Brownian motion and its dyadic
//! piecewise-linear approximations.
//!
//! Mode `i` of the noise is `√q_i β_i^H` with independent scalar fBm `β_i^H`.
//! Paths are sampled exactly on uniform grids by circulant embedding of the
//! fractional Gaussian noise covariance, and are pinned so that `ω(0) = 0`
//! whenever the window contains the origin.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{format_f64, grid_from_times, parse_f64, GridPath, TimeGrid};

/// Law of the driving noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    pub mode_variances: Vec<f64>,
    pub seed: u64,
}

impl FbmSpec {
    /// `q_i = i^{-p}` for `i = 1..=modes`.
    pub fn with_power_decay(hurst: f64, modes: usize, p: f64, seed: u64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::Domain(format!("decay exponent must exceed 1 for a trace-class covariance, got {p}")));
        }
        let q = (1..=modes).map(|i| (i as f64).powf(-p)).collect();
        Self::new(hurst, q, seed)
    }

    pub fn new(hurst: f64, mode_variances: Vec<f64>, seed: u64) -> Result<Self> {
        let s = Self { hurst, mode_variances, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 1.0 / 3.0 && self.hurst <= 0.5) {
            return Err(Error::Domain(format!("Hurst parameter must lie in (1/3, 1/2], got {}", self.hurst)));
        }
        if self.mode_variances.is_empty() {
            return Err(Error::Domain("need at least one noise mode".into()));
        }
        if self.mode_variances.iter().any(|q| !(*q > 0.0) || !q.is_finite()) {
            return Err(Error::Domain("mode variances must be positive".into()));
        }
        if self.mode_variances.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("mode variances must be nonincreasing".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mode_variances.len()
    }
}

/// A noise path together with the dyadic level it was linearised at, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub path: GridPath,
    pub dyadic_level: Option<u32>,
}

impl NoisePath {
    pub fn new(path: GridPath) -> Self {
        Self { path, dyadic_level: None }
    }

    /// Deterministic path `t ↦ f(t)`; shifted so that the value at zero vanishes.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut path = GridPath::from_fn(grid, dim, f)?;
        pin_at_origin(&mut path);
        Ok(Self::new(path))
    }

    pub fn grid(&self) -> &TimeGrid {
        self.path.grid()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Restriction to the grid points `j..=k`; the dyadic level is dropped
    /// unless the endpoints are dyadic nodes of the original path.
    pub fn restrict(&self, j: usize, k: usize) -> Result<NoisePath> {
        let path = self.path.restrict(j, k)?;
        let dyadic_level = self.dyadic_level.filter(|&n| {
            let step = self.dyadic_step(n);
            step.is_some_and(|s| {
                let t0 = self.grid().time(j);
                let t1 = self.grid().time(k);
                is_multiple(t0, s) && is_multiple(t1, s)
            })
        });
        Ok(NoisePath { path, dyadic_level })
    }

    /// Restriction to the window `[a, b]`, both grid points.
    pub fn window(&self, a: f64, b: f64) -> Result<NoisePath> {
        let g = self.grid();
        let j = g.index_of(a).ok_or_else(|| Error::Domain(format!("{a} is not a grid point")))?;
        let k = g.index_of(b).ok_or_else(|| Error::Domain(format!("{b} is not a grid point")))?;
        self.restrict(j, k)
    }

    /// Dyadic level whose mesh equals the grid step, if there is one.
    pub fn finest_level(&self) -> Option<u32> {
        let g = self.grid();
        let ratio = horizon(g) / g.dt();
        let n = ratio.log2().round();
        (n >= 0.0 && (2f64.powf(n) - ratio).abs() < 1e-8 * ratio && is_multiple(g.t0, g.dt())).then_some(n as u32)
    }

    /// The same path marked as piecewise linear at the grid resolution.
    pub fn as_piecewise_linear(&self) -> Result<NoisePath> {
        if self.dyadic_level.is_some() {
            return Ok(self.clone());
        }
        let level = self.finest_level().ok_or_else(|| Error::Domain("grid step is not a dyadic fraction of the horizon".into()))?;
        Ok(NoisePath { path: self.path.clone(), dyadic_level: Some(level) })
    }

    fn dyadic_step(&self, n: u32) -> Option<f64> {
        let g = self.grid();
        Some(horizon(g) / 2f64.powi(n as i32))
    }

    /// Writes `time,mode_1..mode_d`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dim();
        let mut header = vec!["time".to_string()];
        header.extend((1..=d).map(|i| format!("mode_{i}")));
        w.write_record(&header)?;
        for k in 0..self.grid().len() {
            let mut row = vec![format_f64(self.grid().time(k))];
            row.extend(self.path.at(k).iter().map(|v| format_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`NoisePath::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<NoisePath> {
        let mut r = csv::Reader::from_path(path)?;
        let d = r.headers()?.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| Error::Format("noise csv needs a time column and at least one mode".into()))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            times.push(parse_f64(&rec[0])?);
            for i in 0..d {
                values.push(parse_f64(&rec[1 + i])?);
            }
        }
        let grid = grid_from_times(&times)?;
        Ok(NoisePath::new(GridPath::new(grid, d, values)?))
    }
}

/// Horizon `T` of a window: the largest absolute endpoint.
fn horizon(g: &TimeGrid) -> f64 {
    g.t0.abs().max(g.t_end.abs())
}

fn is_multiple(t: f64, step: f64) -> bool {
    let x = t / step;
    (x - x.round()).abs() < 1e-8
}

fn pin_at_origin(path: &mut GridPath) {
    let g = *path.grid();
    let k0 = g.index_of(0.0).unwrap_or(0);
    let base = path.at(k0).to_vec();
    for k in 0..g.len() {
        for (v, b) in path.at_mut(k).iter_mut().zip(&base) {
            *v -= b;
        }
    }
}

/// `½(|t|^{2H} + |s|^{2H} - |t-s|^{2H})`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.abs().powf(h2) + s.abs().powf(h2) - (t - s).abs().powf(h2))
}

/// Eigenvalues of the circulant embedding of `n` fGn increments of step `h`.
fn circulant_eigenvalues(hurst: f64, n: usize, h: f64) -> Result<Vec<f64>> {
    let h2 = 2.0 * hurst;
    let gam = |k: usize| {
        let k = k as f64;
        0.5 * h.powf(h2) * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
    };
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex::new(gam(k), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut c);
    let scale = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let mut eig = Vec::with_capacity(m);
    for z in c {
        if z.re < -1e-10 * scale {
            return Err(Error::Numeric(format!("circulant embedding is not positive semidefinite (eigenvalue {:.3e})", z.re)));
        }
        eig.push(z.re.max(0.0));
    }
    Ok(eig)
}

/// Exact sample of the noise on `grid`.
///
/// The grid may extend to negative times; the path is pinned at the origin
/// when the origin is a grid point and at the left endpoint otherwise.
pub fn sample_fbm(spec: &FbmSpec, grid: &TimeGrid) -> Result<NoisePath> {
    spec.validate()?;
    let n = grid.n;
    let d = spec.dim();
    let eig = circulant_eigenvalues(spec.hurst, n, grid.dt())?;
    let m = 2 * n;
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut increments = vec![vec![0.0; n]; d];
    let mut mode = 0;
    while mode < d {
        let mut buf: Vec<Complex<f64>> = eig
            .iter()
            .map(|l| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                Complex::new(a, b) * (l / m as f64).sqrt()
            })
            .collect();
        fft.process(&mut buf);
        for k in 0..n {
            increments[mode][k] = buf[k].re;
        }
        if mode + 1 < d {
            for k in 0..n {
                increments[mode + 1][k] = buf[k].im;
            }
        }
        mode += 2;
    }
    let mut values = vec![0.0; grid.len() * d];
    for (i, inc) in increments.iter().enumerate() {
        let sq = spec.mode_variances[i].sqrt();
        let mut acc = 0.0;
        for k in 0..n {
            acc += inc[k];
            values[(k + 1) * d + i] = sq * acc;
        }
    }
    let mut path = GridPath::new(*grid, d, values)?;
    pin_at_origin(&mut path);
    Ok(NoisePath::new(path))
}

/// Independent samples for a list of seeds, in parallel.
pub fn sample_fbm_ensemble(spec: &FbmSpec, grid: &TimeGrid, seeds: &[u64]) -> Result<Vec<NoisePath>> {
    seeds
        .par_iter()
        .map(|&seed| sample_fbm(&FbmSpec { seed, ..spec.clone() }, grid))
        .collect()
}

/// Piecewise-linear interpolant of `ω` through the dyadic nodes `k 2^{-n} T`,
/// resampled onto the original grid.
pub fn dyadic_linearize(omega: &NoisePath, n: u32) -> Result<NoisePath> {
    let g = *omega.grid();
    let step = horizon(&g) / 2f64.powi(n as i32);
    let h = g.dt();
    let ratio = step / h;
    if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-8 {
        return Err(Error::Domain(format!("dyadic level {n} is too fine for a grid with {} steps", g.n)));
    }
    if !is_multiple(g.t0, step) || !is_multiple(g.t_end, step) {
        return Err(Error::Domain(format!("window endpoints are not nodes of dyadic level {n}")));
    }
    let r = ratio.round() as usize;
    let d = omega.dim();
    let mut values = vec![0.0; g.len() * d];
    for k in 0..g.len() {
        let a = (k / r) * r;
        let b = (a + r).min(g.n);
        let th = if b == a { 0.0 } else { (k - a) as f64 / (b - a) as f64 };
        for i in 0..d {
            let (va, vb) = (omega.path.at(a)[i], omega.path.at(b)[i]);
            values[k * d + i] = va + th * (vb - va);
        }
    }
    Ok(NoisePath { path: GridPath::new(g, d, values)?, dyadic_level: Some(n) })
}

/// Wiener shift `(θ_τ ω)(t) = ω(t + τ) - ω(τ)` on the window `[t0 - τ, t_end - τ]`.
pub fn wiener_shift(omega: &NoisePath, tau: f64) -> Result<NoisePath> {
    let g = *omega.grid();
    let h = g.dt();
    let m = tau / h;
    if (m - m.round()).abs() > 1e-8 {
        return Err(Error::Domain(format!("shift {tau} is not a multiple of the grid step {h}")));
    }
    let base_idx = g.index_of(tau).ok_or_else(|| Error::Domain(format!("shift {tau} leaves the sampled window")))?;
    let base = omega.path.at(base_idx).to_vec();
    let grid = TimeGrid { t0: g.t0 - tau, t_end: g.t_end - tau, n: g.n };
    let d = omega.dim();
    let mut values = omega.path.values().to_vec();
    for k in 0..g.len() {
        for i in 0..d {
            values[k * d + i] -= base[i];
        }
    }
    let level = omega.dyadic_level.filter(|&n| is_multiple(tau, horizon(&g) / 2f64.powi(n as i32)));
    Ok(NoisePath { path: GridPath::new(grid, d, values)?, dyadic_level: level })
}

/// Statistic used by [`estimate_holder_exponent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncrementStat {
    /// Largest absolute increment at each scale.
    Sup,
    /// Root mean square increment at each scale.
    Rms,
}

/// Least-squares slope of `log M(h)` against `log h` over dyadic lags
/// `h = 2^j Δt`, `j = 0..levels`, for one mode.
pub fn estimate_holder_exponent(omega: &NoisePath, mode: usize, levels: u32, stat: IncrementStat) -> Result<f64> {
    let g = omega.grid();
    if levels < 2 || (1usize << levels) >= g.n {
        return Err(Error::Domain("need at least two dyadic lags shorter than the window".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 0..levels {
        let lag = 1usize << j;
        let incs = (0..g.n + 1 - lag).map(|k| (omega.path.at(k + lag)[mode] - omega.path.at(k)[mode]).abs());
        let m = match stat {
            IncrementStat::Sup => incs.fold(0.0, f64::max),
            IncrementStat::Rms => {
                let (s, c) = incs.fold((0.0, 0usize), |(s, c), x| (s + x * x, c + 1));
                (s / c as f64).sqrt()
            }
        };
        xs.push((lag as f64 * g.dt()).ln());
        ys.push(m.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        assert!((fbm_covariance(0.4, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((fbm_covariance(0.5, 1.0, 2.0) - 1.0).abs() < 1e-15);
        assert!(fbm_covariance(0.5, -1.0, 1.0).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(FbmSpec::with_power_decay(0.3, 2, 2.0, 1).is_err());
        assert!(FbmSpec::with_power_decay(0.6, 2, 2.0, 1).is_err());
        assert!(FbmSpec::with_power_decay(0.4, 2, 1.0, 1).is_err());
        let s = FbmSpec::with_power_decay(0.5, 3, 2.0, 1).unwrap();
        assert_eq!(s.mode_variances, vec![1.0, 0.25, 1.0 / 9.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_pinned() {
        let spec = FbmSpec::with_power_decay(0.4, 3, 2.0, 11).unwrap();
        let g = TimeGrid::new(-1.0, 1.0, 64).unwrap();
        let a = sample_fbm(&spec, &g).unwrap();
        let b = sample_fbm(&spec, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.path.at(32), &[0.0, 0.0, 0.0]);
        let c = sample_fbm(&FbmSpec { seed: 12, ..spec }, &g).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn brownian_increments_have_step_variance() {
        let spec = FbmSpec::with_power_decay(0.5, 2, 2.0, 3).unwrap();
        let g = TimeGrid::new(0.0, 4.0, 4096).unwrap();
        let w = sample_fbm(&spec, &g).unwrap();
        for (i, q) in [1.0, 0.25].iter().enumerate() {
            let var: f64 = (0..g.n).map(|k| (w.path.at(k + 1)[i] - w.path.at(k)[i]).powi(2)).sum::<f64>() / g.n as f64;
            let want = q * g.dt();
            assert!((var / want - 1.0).abs() < 0.08, "mode {i}: {var} vs {want}");
        }
    }

    #[test]
    fn dyadic_linearization_interpolates_nodes() {
        let spec = FbmSpec::with_power_decay(0.45, 2, 2.0, 5).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let w = sample_fbm(&spec, &g).unwrap();
        let wn = dyadic_linearize(&w, 3).unwrap();
        assert_eq!(wn.dyadic_level, Some(3));
        for k in (0..=64).step_by(8) {
            assert_eq!(wn.path.at(k), w.path.at(k));
        }
        assert!(dyadic_linearize(&w, 7).is_err());
        let lin = NoisePath::from_fn(g, 1, |t| vec![2.0 * t]).unwrap();
        let l2 = dyadic_linearize(&lin, 2).unwrap();
        for k in 0..=64 {
            assert!((l2.path.at(k)[0] - lin.path.at(k)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_examples() {
        let g = TimeGrid::new(-1.0, 1.0, 40).unwrap();
        let lin = NoisePath::from_fn(g, 1, |t| vec![t]).unwrap();
        let s = wiener_shift(&lin, 0.25).unwrap();
        for k in 0..=40 {
            let t = s.grid().time(k);
            assert!((s.path.at(k)[0] - t).abs() < 1e-14);
        }
        let spec = FbmSpec::with_power_decay(0.4, 2, 2.0, 9).unwrap();
        let w = sample_fbm(&spec, &g).unwrap();
        assert_eq!(wiener_shift(&w, 0.0).unwrap(), w);
        let ab = wiener_shift(&wiener_shift(&w, 0.1).unwrap(), 0.2).unwrap();
        let c = wiener_shift(&w, 0.3).unwrap();
        for k in 0..=40 {
            for i in 0..2 {
                assert!((ab.path.at(k)[i] - c.path.at(k)[i]).abs() < 1e-14);
            }
        }
        assert!(wiener_shift(&w, 0.01).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("roughflow-noise-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = FbmSpec::with_power_decay(0.4, 2, 2.0, 9).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 32).unwrap();
        let w = sample_fbm(&spec, &g).unwrap();
        w.write_csv(dir.join("w.csv")).unwrap();
        assert_eq!(NoisePath::read_csv(dir.join("w.csv")).unwrap(), w);
        std::fs::remove_dir_all(dir).ok();
    }
}
