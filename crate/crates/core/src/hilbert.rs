//! Galerkin representation of the state space.
//!
//! A [`SpectralOperator`] stores the eigenvalues of `-A`; everything else in the
//! crate lives in the corresponding `d`-dimensional coordinate space. Paths are
//! sampled on uniform [`TimeGrid`]s and areas are stored for ordered grid pairs.
//!
//! All seminorms are computed over grid pairs only, so they are lower bounds of
//! the continuum quantities.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal generator with eigenvalues `0 < λ_1 <= ... <= λ_d` of `-A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Domain("spectrum must have at least one mode".into()));
        }
        if !eigenvalues.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(Error::Domain("eigenvalues must be finite and positive".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("eigenvalues must be nondecreasing".into()));
        }
        Ok(Self { eigenvalues })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    /// `e^{-λ_i t}` for every mode.
    pub fn decay(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (-l * t).exp()).collect()
    }
}

/// `(-A)^{γ-δ} S(t) x` for `x` given in `V_δ` coordinates.
///
/// Component `i` is scaled by `λ_i^{γ-δ} e^{-λ_i t}`.
pub fn apply_semigroup(op: &SpectralOperator, t: f64, x: &[f64], delta: f64, gamma: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("semigroup time must be nonnegative, got {t}")));
    }
    if x.len() != op.dim() {
        return Err(Error::Structural(format!("vector has {} entries, spectrum has {}", x.len(), op.dim())));
    }
    let p = gamma - delta;
    Ok(op
        .eigenvalues
        .iter()
        .zip(x)
        .map(|(l, xi)| l.powf(p) * (-l * t).exp() * xi)
        .collect())
}

/// `|x|_{V_δ} = sqrt(Σ λ_i^{2δ} x_i²)`.
pub fn frac_power_norm(op: &SpectralOperator, x: &[f64], delta: f64) -> f64 {
    op.eigenvalues
        .iter()
        .zip(x)
        .map(|(l, xi)| l.powf(2.0 * delta) * xi * xi)
        .sum::<f64>()
        .sqrt()
}

/// Sharp constant in `|(-A)^p S(t)| <= c t^{-p}`: `(p/e)^p`, floored at one.
pub fn smoothing_constant(p: f64) -> f64 {
    if p <= 0.0 {
        1.0
    } else {
        (p / std::f64::consts::E).powf(p).max(1.0)
    }
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Uniform grid `t_k = t0 + k Δt`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("grid needs at least one step".into()));
        }
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::Domain(format!("grid end {t_end} must exceed start {t0}")));
        }
        Ok(Self { t0, t_end, n })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n as f64
    }

    /// Number of points, `n + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point equal to `t` up to a small relative tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.n as f64 || (x - k).abs() > 1e-8 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Sub-grid covering points `j..=k`.
    pub fn sub(&self, j: usize, k: usize) -> Result<TimeGrid> {
        if j >= k || k > self.n {
            return Err(Error::Domain(format!("invalid sub-grid {j}..={k} of {} steps", self.n)));
        }
        Ok(TimeGrid { t0: self.time(j), t_end: self.time(k), n: k - j })
    }

    /// Every `stride`-th point; `stride` must divide the step count.
    pub fn coarsen(&self, stride: usize) -> Result<TimeGrid> {
        if stride == 0 || self.n % stride != 0 {
            return Err(Error::Domain(format!("stride {stride} does not divide {} steps", self.n)));
        }
        Ok(TimeGrid { t0: self.t0, t_end: self.t_end, n: self.n / stride })
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        let tol = 1e-10 * (1.0 + self.t_end.abs().max(self.t0.abs()));
        self.n == other.n && (self.t0 - other.t0).abs() <= tol && (self.t_end - other.t_end).abs() <= tol
    }
}

/// A path sampled on a grid with values in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl GridPath {
    /// `values` is row-major: point `k` occupies `values[k*dim..(k+1)*dim]`.
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("path dimension must be positive".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::Structural(format!(
                "expected {} values for {} points of dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("path values must be finite".into()));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, dim, values: vec![0.0; grid.len() * dim] }
    }

    pub fn constant(grid: TimeGrid, x: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.len() * x.len());
        for _ in 0..grid.len() {
            values.extend_from_slice(x);
        }
        Self { grid, dim: x.len(), values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for t in grid.times() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::Structural("sampler returned wrong dimension".into()));
            }
            values.extend(v);
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment(&self, j: usize, k: usize) -> Vec<f64> {
        self.at(k).iter().zip(self.at(j)).map(|(a, b)| a - b).collect()
    }

    /// Linear interpolation at an arbitrary time inside the grid.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let h = self.grid.dt();
        let x = ((t - self.grid.t0) / h).clamp(0.0, self.grid.n as f64);
        let k = (x.floor() as usize).min(self.grid.n - 1);
        let th = x - k as f64;
        self.at(k)
            .iter()
            .zip(self.at(k + 1))
            .map(|(a, b)| a + th * (b - a))
            .collect()
    }

    /// Restriction to the points `j..=k`.
    pub fn restrict(&self, j: usize, k: usize) -> Result<GridPath> {
        let grid = self.grid.sub(j, k)?;
        Ok(GridPath { grid, dim: self.dim, values: self.values[j * self.dim..(k + 1) * self.dim].to_vec() })
    }

    /// Values at every `stride`-th point.
    pub fn subsample(&self, stride: usize) -> Result<GridPath> {
        let grid = self.grid.coarsen(stride)?;
        let values = (0..grid.len()).flat_map(|k| self.at(k * stride).iter().copied()).collect();
        GridPath::new(grid, self.dim, values)
    }

    pub fn scaled(&self, c: f64) -> GridPath {
        GridPath { grid: self.grid, dim: self.dim, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len()).map(|k| norm2(self.at(k))).fold(0.0, f64::max)
    }

    /// Grid maximum of `w(s)|u(t)-u(s)|/(t-s)^β` over pairs `s < t`.
    ///
    /// Unweighted: `w ≡ 1`. Weighted: `w(s) = (s - t0)^β` and only pairs with
    /// `s > t0` enter.
    pub fn holder_seminorm(&self, beta: f64, weighted: bool) -> Result<f64> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Domain(format!("Hölder exponent must lie in (0,1), got {beta}")));
        }
        let n = self.grid.len();
        let h = self.grid.dt();
        let start = usize::from(weighted);
        let m = (start..n)
            .into_par_iter()
            .map(|j| {
                let w = if weighted { (j as f64 * h).powf(beta) } else { 1.0 };
                let mut best = 0.0f64;
                for k in j + 1..n {
                    let mut s = 0.0;
                    for i in 0..self.dim {
                        let d = self.values[k * self.dim + i] - self.values[j * self.dim + i];
                        s += d * d;
                    }
                    best = best.max(s.sqrt() / ((k - j) as f64 * h).powf(beta));
                }
                w * best
            })
            .reduce(|| 0.0, f64::max);
        Ok(m)
    }

    /// Writes `index,time,u_1..u_d`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string(), "time".to_string()];
        header.extend((1..=self.dim).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        for k in 0..self.grid.len() {
            let mut row = vec![k.to_string(), format_f64(self.grid.time(k))];
            row.extend(self.at(k).iter().map(|v| format_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`GridPath::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<GridPath> {
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len().checked_sub(2).filter(|d| *d > 0).ok_or_else(|| Error::Format("path csv needs index, time and at least one value column".into()))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            times.push(parse_f64(&rec[1])?);
            for i in 0..dim {
                values.push(parse_f64(&rec[2 + i])?);
            }
        }
        let grid = grid_from_times(&times)?;
        GridPath::new(grid, dim, values)
    }
}

/// Area field `v(s,t) ∈ R^{d×d}` on ordered grid pairs `j <= k`.
///
/// Storage is triangular and each matrix is row-major. The diagonal is kept
/// at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaField {
    grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl AreaField {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        let m = grid.len();
        Self { grid, dim, data: vec![0.0; m * (m + 1) / 2 * dim * dim] }
    }

    /// Builds a field from `f(j, k)` for every pair `j < k`.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(usize, usize) -> Vec<f64> + Sync) -> Result<Self> {
        let mut out = Self::zeros(grid, dim);
        let m = grid.len();
        let dd = dim * dim;
        let rows: Vec<(usize, Vec<f64>)> = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut row = vec![0.0; (m - j) * dd];
                for k in j + 1..m {
                    let v = f(j, k);
                    row[(k - j) * dd..(k - j + 1) * dd].copy_from_slice(&v[..dd]);
                }
                (j, row)
            })
            .collect();
        for (j, row) in rows {
            let o = out.offset(j, j);
            out.data[o..o + row.len()].copy_from_slice(&row);
        }
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("area values must be finite".into()));
        }
        Ok(out)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offset(&self, j: usize, k: usize) -> usize {
        let m = self.grid.len();
        (j * m - j * j.saturating_sub(1) / 2 + (k - j)) * self.dim * self.dim
    }

    pub fn at(&self, j: usize, k: usize) -> &[f64] {
        debug_assert!(j <= k && k < self.grid.len());
        let o = self.offset(j, k);
        &self.data[o..o + self.dim * self.dim]
    }

    pub fn at_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        debug_assert!(j <= k && k < self.grid.len());
        let o = self.offset(j, k);
        let dd = self.dim * self.dim;
        &mut self.data[o..o + dd]
    }

    pub fn set(&mut self, j: usize, k: usize, m: &[f64]) {
        if j == k {
            return;
        }
        self.at_mut(j, k).copy_from_slice(m);
    }

    /// Restriction to the pairs inside points `j..=k`.
    pub fn restrict(&self, j: usize, k: usize) -> Result<AreaField> {
        let grid = self.grid.sub(j, k)?;
        let mut out = AreaField::zeros(grid, self.dim);
        for a in j..=k {
            for b in a + 1..=k {
                out.set(a - j, b - j, self.at(a, b));
            }
        }
        Ok(out)
    }

    /// Pairs of every `stride`-th point.
    pub fn subsample(&self, stride: usize) -> Result<AreaField> {
        let grid = self.grid.coarsen(stride)?;
        let mut out = AreaField::zeros(grid, self.dim);
        for a in 0..grid.len() {
            for b in a + 1..grid.len() {
                out.set(a, b, self.at(a * stride, b * stride));
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> AreaField {
        AreaField { grid: self.grid, dim: self.dim, data: self.data.iter().map(|v| c * v).collect() }
    }

    /// Entrywise difference `self - other` on a shared grid.
    pub fn difference(&self, other: &AreaField) -> Result<AreaField> {
        if !self.grid.same_as(&other.grid) || self.dim != other.dim {
            return Err(Error::Structural("area fields live on different grids".into()));
        }
        Ok(AreaField {
            grid: self.grid,
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Grid maximum of `w(s)‖v(s,t)‖_F/(t-s)^exponent`.
    ///
    /// With `weight = Some(β)`, `w(s) = (s - t0)^β` and only pairs with
    /// `s > t0` enter; otherwise `w ≡ 1`.
    pub fn area_seminorm(&self, exponent: f64, weight: Option<f64>) -> Result<f64> {
        if !(exponent > 0.0 && exponent < 2.0) {
            return Err(Error::Domain(format!("area exponent must lie in (0,2), got {exponent}")));
        }
        let m = self.grid.len();
        let h = self.grid.dt();
        let start = usize::from(weight.is_some());
        let r = (start..m)
            .into_par_iter()
            .map(|j| {
                let w = weight.map_or(1.0, |b| (j as f64 * h).powf(b));
                let mut best = 0.0f64;
                for k in j + 1..m {
                    best = best.max(norm2(self.at(j, k)) / ((k - j) as f64 * h).powf(exponent));
                }
                w * best
            })
            .reduce(|| 0.0, f64::max);
        Ok(r)
    }

    /// Writes `j,k,s,t,v_1_1..v_d_d` for every pair `j < k`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["j".to_string(), "k".into(), "s".into(), "t".into()];
        for a in 1..=self.dim {
            for b in 1..=self.dim {
                header.push(format!("v_{a}_{b}"));
            }
        }
        w.write_record(&header)?;
        let m = self.grid.len();
        for j in 0..m {
            for k in j + 1..m {
                let mut row = vec![j.to_string(), k.to_string(), format_f64(self.grid.time(j)), format_f64(self.grid.time(k))];
                row.extend(self.at(j, k).iter().map(|v| format_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`AreaField::write_csv`]; missing pairs are zero.
    pub fn read_csv(path: impl AsRef<Path>, grid: TimeGrid) -> Result<AreaField> {
        let mut r = csv::Reader::from_path(path)?;
        let cols = r.headers()?.len();
        let dim = ((cols.saturating_sub(4)) as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim + 4 != cols {
            return Err(Error::Format("area csv must have j,k,s,t and d² value columns".into()));
        }
        let mut out = AreaField::zeros(grid, dim);
        for rec in r.records() {
            let rec = rec?;
            let j: usize = rec[0].parse().map_err(|_| Error::Format("bad pair index".into()))?;
            let k: usize = rec[1].parse().map_err(|_| Error::Format("bad pair index".into()))?;
            if j >= k || k >= grid.len() {
                return Err(Error::Format(format!("pair ({j},{k}) outside the grid")));
            }
            let vals: Result<Vec<f64>> = (0..dim * dim).map(|i| parse_f64(&rec[4 + i])).collect();
            out.set(j, k, &vals?);
        }
        Ok(out)
    }
}

/// A path together with an area on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAreaPair {
    pub u: GridPath,
    pub v: AreaField,
}

impl PathAreaPair {
    pub fn new(u: GridPath, v: AreaField) -> Result<Self> {
        if !u.grid().same_as(v.grid()) || u.dim() != v.dim() {
            return Err(Error::Structural("path and area live on different grids".into()));
        }
        Ok(Self { u, v })
    }
}

/// Largest Frobenius violation of the Chen equality
/// `v(s,r) + v(r,t) + (u(r)-u(s))⊗(ω(t)-ω(r)) = v(s,t)` over grid triples.
pub fn chen_residual(u: &GridPath, v: &AreaField, omega: &GridPath) -> Result<f64> {
    if !u.grid().same_as(v.grid()) || !u.grid().same_as(omega.grid()) {
        return Err(Error::Structural("chen residual needs a shared grid".into()));
    }
    if u.dim() != v.dim() || omega.dim() != v.dim() {
        return Err(Error::Structural("chen residual needs a shared dimension".into()));
    }
    let d = u.dim();
    let m = u.grid().len();
    let r = (0..m)
        .into_par_iter()
        .map(|s| {
            let mut best = 0.0f64;
            let mut du = vec![0.0; d];
            for r in s + 1..m {
                for i in 0..d {
                    du[i] = u.at(r)[i] - u.at(s)[i];
                }
                let vsr = v.at(s, r);
                for t in r + 1..m {
                    let vrt = v.at(r, t);
                    let vst = v.at(s, t);
                    let mut acc = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            let dw = omega.at(t)[b] - omega.at(r)[b];
                            let e = vsr[a * d + b] + vrt[a * d + b] + du[a] * dw - vst[a * d + b];
                            acc += e * e;
                        }
                    }
                    best = best.max(acc.sqrt());
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(r)
}

/// Grid metadata written next to CSV exports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridManifest {
    pub t0: f64,
    pub t_end: f64,
    pub n: usize,
    pub dim: usize,
    pub eigenvalues: Option<Vec<f64>>,
}

impl GridManifest {
    pub fn new(grid: &TimeGrid, dim: usize, op: Option<&SpectralOperator>) -> Self {
        Self { t0: grid.t0, t_end: grid.t_end, n: grid.n, dim, eigenvalues: op.map(|o| o.eigenvalues().to_vec()) }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.t_end, self.n)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Recovers a uniform grid from a list of sample times.
pub fn grid_from_times(times: &[f64]) -> Result<TimeGrid> {
    if times.len() < 2 {
        return Err(Error::Format("need at least two sample times".into()));
    }
    let n = times.len() - 1;
    let grid = TimeGrid::new(times[0], times[n], n)?;
    let h = grid.dt();
    for (k, t) in times.iter().enumerate() {
        if (t - grid.time(k)).abs() > 1e-9 * h.max(1.0) + 1e-6 * h {
            return Err(Error::Format(format!("sample times are not uniform near index {k}")));
        }
    }
    Ok(grid)
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.17e}")
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}
