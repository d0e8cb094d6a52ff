//! Second-level objects built from a piecewise-linear noise path.
//!
//! For a diagonal semigroup `S(t) = diag(e^{-λ_a t})` the operator area acts
//! on a matrix `E` by `[A(s,t)·E]_{ab} = Σ_c E_{ac} A_{acb}(s,t)` with
//!
//! ```text
//! A_{acb}(s,t) = ∫_s^t ∫_s^ξ e^{-λ_a(ξ-r)} ω̇_c(r) dr ω̇_b(ξ) dξ,
//! ```
//!
//! and the auxiliary operators are
//! `[ω_S(s,t)]_{ab} = ∫_s^t e^{-λ_a(ξ-s)} dω_b(ξ)` and
//! `[S_ω(s,t)]_{ac} = ∫_s^t e^{-λ_a(t-r)} dω_c(r)`.
//! On a piecewise-linear path all three are sums of closed-form segment
//! integrals, and satisfy the Chen equality
//! `A(s,t) = A(s,r) + A(r,t) + [ω_S(r,t)]_{ab} [S_ω(s,r)]_{ac}` exactly at
//! segment boundaries.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dashmap::DashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hilbert::{AreaField, GridPath, TimeGrid};
use crate::noise::NoisePath;
use crate::quad::{phi1, phi2, phi3, psi};

/// Slopes of a piecewise-linear noise path together with the semigroup rates.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentNoise {
    grid: TimeGrid,
    dim: usize,
    level: u32,
    lambdas: Vec<f64>,
    slopes: Vec<f64>,
}

impl SegmentNoise {
    /// `rates` are the semigroup decay rates `λ_a >= 0`, usually the operator eigenvalues.
    pub fn new(omega: &NoisePath, rates: &[f64]) -> Result<Self> {
        let level = omega
            .dyadic_level
            .ok_or_else(|| Error::Contract("segment-exact areas need a piecewise-linear noise path with a dyadic level".into()))?;
        let d = omega.dim();
        if rates.len() != d {
            return Err(Error::Structural(format!("{} decay rates for {d} noise modes", rates.len())));
        }
        if rates.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Domain("decay rates must be finite and nonnegative".into()));
        }
        let g = *omega.grid();
        let h = g.dt();
        let mut slopes = Vec::with_capacity(g.n * d);
        for k in 0..g.n {
            for i in 0..d {
                slopes.push((omega.path.at(k + 1)[i] - omega.path.at(k)[i]) / h);
            }
        }
        Ok(Self { grid: g, dim: d, level, lambdas: rates.to_vec(), slopes })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Slope of mode `i` on segment `[t_k, t_{k+1}]`.
    #[inline]
    pub fn slope(&self, k: usize, i: usize) -> f64 {
        self.slopes[k * self.dim + i]
    }

    /// `ω_S(j,k)`, `d×d` row-major.
    pub fn omega_s(&self, j: usize, k: usize) -> Vec<f64> {
        let d = self.dim;
        let h = self.grid.dt();
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            let z = self.lambdas[a] * h;
            let p1 = h * phi1(z);
            let mut decay = 1.0;
            let step = (-z).exp();
            for seg in j..k {
                for b in 0..d {
                    out[a * d + b] += decay * self.slope(seg, b) * p1;
                }
                decay *= step;
            }
        }
        out
    }

    /// `S_ω(j,k)`, `d×d` row-major.
    pub fn s_omega(&self, j: usize, k: usize) -> Vec<f64> {
        let d = self.dim;
        let h = self.grid.dt();
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            let z = self.lambdas[a] * h;
            let p1 = h * phi1(z);
            let e = (-z).exp();
            for seg in j..k {
                for c in 0..d {
                    out[a * d + c] = e * out[a * d + c] + self.slope(seg, c) * p1;
                }
            }
        }
        out
    }

    /// `A(j, k')` for every `k'` in `j+1..=k`, by segment recursion.
    fn area_row(&self, j: usize, k: usize) -> Vec<Vec<f64>> {
        let d = self.dim;
        let h = self.grid.dt();
        let mut jm = vec![0.0; d * d];
        let mut acc = vec![0.0; d * d * d];
        let mut rows = Vec::with_capacity(k - j);
        for seg in j..k {
            for a in 0..d {
                let z = self.lambdas[a] * h;
                let p1 = h * phi1(z);
                let p2 = h * h * phi2(z);
                let e = (-z).exp();
                for c in 0..d {
                    let mc = self.slope(seg, c);
                    let inner = jm[a * d + c] * p1 + mc * p2;
                    for b in 0..d {
                        acc[(a * d + c) * d + b] += inner * self.slope(seg, b);
                    }
                    jm[a * d + c] = e * jm[a * d + c] + mc * p1;
                }
            }
            rows.push(acc.clone());
        }
        rows
    }
}

/// Twist operators `ω_S` and `S_ω` of a piecewise-linear path.
pub fn twist_ops(omega: &NoisePath, rates: &[f64], s: usize, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let seg = SegmentNoise::new(omega, rates)?;
    check_pair(seg.grid(), s, t)?;
    Ok((seg.omega_s(s, t), seg.s_omega(s, t)))
}

fn check_pair(grid: &TimeGrid, s: usize, t: usize) -> Result<()> {
    if s > t || t > grid.n {
        return Err(Error::Domain(format!("pair ({s},{t}) is not ordered inside a grid of {} steps", grid.n)));
    }
    Ok(())
}

/// Lazily evaluated operator area, memoised per grid pair.
#[derive(Debug)]
pub struct OperatorArea {
    grid: TimeGrid,
    dim: usize,
    level: u32,
    source: Option<SegmentNoise>,
    memo: DashMap<(usize, usize), Arc<Vec<f64>>>,
}

impl OperatorArea {
    pub fn new(omega: &NoisePath, rates: &[f64]) -> Result<Self> {
        let seg = SegmentNoise::new(omega, rates)?;
        Ok(Self { grid: seg.grid, dim: seg.dim, level: seg.level, source: Some(seg), memo: DashMap::new() })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn segments(&self) -> Option<&SegmentNoise> {
        self.source.as_ref()
    }

    /// Number of memoised pairs.
    pub fn cached_pairs(&self) -> usize {
        self.memo.len()
    }

    /// `A(j,k)` as `d³` entries at `(a*d + c)*d + b`.
    pub fn get(&self, j: usize, k: usize) -> Result<Arc<Vec<f64>>> {
        check_pair(&self.grid, j, k)?;
        if j == k {
            return Ok(Arc::new(vec![0.0; self.dim.pow(3)]));
        }
        if let Some(v) = self.memo.get(&(j, k)) {
            return Ok(v.clone());
        }
        let seg = self.source.as_ref().ok_or_else(|| Error::Contract(format!("pair ({j},{k}) is not stored in the loaded area")))?;
        let rows = seg.area_row(j, k);
        let mut out = None;
        for (off, row) in rows.into_iter().enumerate() {
            let row = Arc::new(row);
            if off + j + 1 == k {
                out = Some(row.clone());
            }
            self.memo.entry((j, j + off + 1)).or_insert(row);
        }
        Ok(out.expect("row reaches k"))
    }

    /// `[A(j,k)·E]_{ab} = Σ_c E_{ac} A_{acb}`.
    pub fn action(&self, j: usize, k: usize, e: &[f64]) -> Result<Vec<f64>> {
        let a = self.get(j, k)?;
        Ok(apply_area(self.dim, &a, e))
    }

    /// Writes the selected pairs and a JSON sidecar with a SHA-256 checksum.
    pub fn write_bin(&self, path: impl AsRef<Path>, pairs: &[(usize, usize)], eigenvalues: &[f64]) -> Result<AreaSidecar> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(32 + pairs.len() * (16 + 8 * self.dim.pow(3)));
        for v in [self.dim as u64, self.grid.n as u64, self.level as u64, pairs.len() as u64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &(j, k) in pairs {
            let a = self.get(j, k)?;
            buf.extend_from_slice(&(j as u64).to_le_bytes());
            buf.extend_from_slice(&(k as u64).to_le_bytes());
            for x in a.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let side = AreaSidecar {
            dim: self.dim,
            n: self.grid.n,
            level: self.level,
            pairs: pairs.len(),
            t0: self.grid.t0,
            t_end: self.grid.t_end,
            eigenvalues: eigenvalues.to_vec(),
            sha256: hex_digest(&buf),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(side)
    }

    /// Reads a blob written by [`OperatorArea::write_bin`], verifying its checksum.
    pub fn read_bin(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let side: AreaSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if hex_digest(&buf) != side.sha256 {
            return Err(Error::Format(format!("checksum mismatch for {}", path.display())));
        }
        let mut cur = 0usize;
        let next_u64 = |cur: &mut usize| -> Result<u64> {
            let bytes = buf.get(*cur..*cur + 8).ok_or_else(|| Error::Format("truncated area blob".into()))?;
            *cur += 8;
            Ok(u64::from_le_bytes(bytes.try_into().expect("eight bytes")))
        };
        let d = next_u64(&mut cur)? as usize;
        let n = next_u64(&mut cur)? as usize;
        let level = next_u64(&mut cur)? as u32;
        let count = next_u64(&mut cur)? as usize;
        if d != side.dim || n != side.n || count != side.pairs {
            return Err(Error::Format("area header disagrees with its sidecar".into()));
        }
        let grid = TimeGrid::new(side.t0, side.t_end, n)?;
        let memo = DashMap::new();
        for _ in 0..count {
            let j = next_u64(&mut cur)? as usize;
            let k = next_u64(&mut cur)? as usize;
            check_pair(&grid, j, k)?;
            let mut a = Vec::with_capacity(d * d * d);
            for _ in 0..d * d * d {
                a.push(f64::from_bits(next_u64(&mut cur)?));
            }
            memo.insert((j, k), Arc::new(a));
        }
        if cur != buf.len() {
            return Err(Error::Format("trailing bytes in area blob".into()));
        }
        Ok(Self { grid, dim: d, level, source: None, memo })
    }
}

/// Metadata stored next to an area blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSidecar {
    pub dim: usize,
    pub n: usize,
    pub level: u32,
    pub pairs: usize,
    pub t0: f64,
    pub t_end: f64,
    pub eigenvalues: Vec<f64>,
    pub sha256: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Every ordered pair, or only pairs of dyadic nodes at `coarse_level`.
pub fn pair_selection(grid: &TimeGrid, coarse_step: Option<usize>) -> Vec<(usize, usize)> {
    let step = coarse_step.unwrap_or(1).max(1);
    let nodes: Vec<usize> = (0..=grid.n).step_by(step).collect();
    let mut out = Vec::new();
    for (i, &j) in nodes.iter().enumerate() {
        for &k in &nodes[i + 1..] {
            out.push((j, k));
        }
    }
    out
}

/// `[A·E]_{ab} = Σ_c E_{ac} A_{acb}`.
pub fn apply_area(d: usize, a: &[f64], e: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for x in 0..d {
        for c in 0..d {
            let exc = e[x * d + c];
            if exc == 0.0 {
                continue;
            }
            for b in 0..d {
                out[x * d + b] += exc * a[(x * d + c) * d + b];
            }
        }
    }
    out
}

/// Single entry `A(s,t)` of the operator area.
pub fn smooth_area(omega: &NoisePath, rates: &[f64], s: usize, t: usize) -> Result<Vec<f64>> {
    let area = OperatorArea::new(omega, rates)?;
    Ok(area.get(s, t)?.as_ref().clone())
}

/// The `d²` matrix units followed by `extra` standard Gaussian matrices.
pub fn probe_matrices(d: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(d * d + extra);
    for i in 0..d * d {
        let mut e = vec![0.0; d * d];
        e[i] = 1.0;
        out.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        out.push((0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    out
}

/// Largest relative Frobenius violation of the operator Chen equality over probes.
pub fn area_chen_residual(area: &OperatorArea, s: usize, r: usize, t: usize, probes: &[Vec<f64>]) -> Result<f64> {
    if !(s <= r && r <= t) {
        return Err(Error::Domain(format!("need s <= r <= t, got ({s},{r},{t})")));
    }
    let seg = area.segments().ok_or_else(|| Error::Contract("Chen check needs the generating noise".into()))?;
    let d = area.dim();
    let (asr, art, ast) = (area.get(s, r)?, area.get(r, t)?, area.get(s, t)?);
    let ws = seg.omega_s(r, t);
    let sw = seg.s_omega(s, r);
    let mut worst = 0.0f64;
    for e in probes {
        let (x, y, z) = (apply_area(d, &asr, e), apply_area(d, &art, e), apply_area(d, &ast, e));
        let mut num = 0.0;
        for a in 0..d {
            for b in 0..d {
                let cross: f64 = (0..d).map(|c| e[a * d + c] * sw[a * d + c]).sum::<f64>() * ws[a * d + b];
                let res = x[a * d + b] + y[a * d + b] + cross - z[a * d + b];
                num += res * res;
            }
        }
        let den = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den > 0.0 {
            worst = worst.max(num.sqrt() / den);
        }
    }
    Ok(worst)
}

/// `(u⊗ω)(s,t) = ∫_s^t (u(r)-u(s)) ⊗ dω(r)` with `u` and `ω` linear between grid points.
pub fn u_tensor_omega(u: &GridPath, omega: &NoisePath, s: usize, t: usize) -> Result<Vec<f64>> {
    check_shared(u, omega)?;
    check_pair(u.grid(), s, t)?;
    let d = u.dim();
    let mut acc = vec![0.0; d * d];
    for seg in s..t {
        for a in 0..d {
            let base = u.at(seg)[a] - u.at(s)[a] + 0.5 * (u.at(seg + 1)[a] - u.at(seg)[a]);
            for b in 0..d {
                acc[a * d + b] += base * (omega.path.at(seg + 1)[b] - omega.path.at(seg)[b]);
            }
        }
    }
    Ok(acc)
}

/// [`u_tensor_omega`] for every pair of the grid.
pub fn path_area(u: &GridPath, omega: &NoisePath) -> Result<AreaField> {
    check_shared(u, omega)?;
    let d = u.dim();
    let m = u.grid().len();
    let mut out = AreaField::zeros(*u.grid(), d);
    let mut acc = vec![0.0; d * d];
    for j in 0..m {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for seg in j..m - 1 {
            for a in 0..d {
                let base = u.at(seg)[a] - u.at(j)[a] + 0.5 * (u.at(seg + 1)[a] - u.at(seg)[a]);
                for b in 0..d {
                    acc[a * d + b] += base * (omega.path.at(seg + 1)[b] - omega.path.at(seg)[b]);
                }
            }
            out.set(j, seg + 1, &acc);
        }
    }
    Ok(out)
}

fn check_shared(u: &GridPath, omega: &NoisePath) -> Result<()> {
    if !u.grid().same_as(omega.grid()) || u.dim() != omega.dim() {
        return Err(Error::Structural("path and noise must share grid and dimension".into()));
    }
    Ok(())
}

/// Closed-form moments of one panel `[0, η]` with `y = η - x`:
/// `(∫(1-e^{-λy})/λ, ∫(x/η)(1-e^{-λy})/λ, ∫e^{-λy}, ∫(x/η)e^{-λy})`.
#[inline]
pub(crate) fn panel_moments(lambda: f64, eta: f64) -> [f64; 4] {
    let z = lambda * eta;
    let p1 = phi1(z);
    [eta * eta * phi2(z), eta * eta * psi(z), eta * p1, eta * (p1 - phi3(z))]
}

/// `w(t)(s,q)` acting on `Ẽ`, namely `-∫_s^q [ω_S(r,t)]_{ab} Σ_{j,c} Ẽ_{ajc}(u_j(r)-u_j(s)) dω_c(r)`.
///
/// `Ẽ` has entries at `(a*d + j)*d + c`; the result is `d×d` row-major.
/// Each segment integral is evaluated in closed form for linear `u`.
pub fn w_element(u: &GridPath, seg: &SegmentNoise, e_tilde: &[f64], t: usize, s: usize, q: usize) -> Result<Vec<f64>> {
    if !u.grid().same_as(seg.grid()) || u.dim() != seg.dim() {
        return Err(Error::Structural("path and noise must share grid and dimension".into()));
    }
    if !(s <= q && q <= t && t <= seg.grid().n) {
        return Err(Error::Domain(format!("need s <= q <= t on the grid, got ({s},{q},{t})")));
    }
    let d = u.dim();
    if e_tilde.len() != d * d * d {
        return Err(Error::Structural(format!("Ẽ needs {} entries", d * d * d)));
    }
    let h = seg.grid().dt();
    let mut w = seg.omega_s(q, t);
    let mut out = vec![0.0; d * d];
    for k in (s..q).rev() {
        let mom: Vec<[f64; 4]> = seg.lambdas().iter().map(|&l| panel_moments(l, h)).collect();
        for a in 0..d {
            let (mut f0, mut f1) = (0.0, 0.0);
            for j in 0..d {
                let d0 = u.at(k)[j] - u.at(s)[j];
                let dj = u.at(k + 1)[j] - u.at(k)[j];
                for c in 0..d {
                    let em = e_tilde[(a * d + j) * d + c] * seg.slope(k, c);
                    f0 += em * d0;
                    f1 += em * dj;
                }
            }
            let m = mom[a];
            for b in 0..d {
                out[a * d + b] -= seg.slope(k, b) * (f0 * m[0] + f1 * m[1]) + w[a * d + b] * (f0 * m[2] + f1 * m[3]);
            }
        }
        // ω_S(k, t) from ω_S(k+1, t)
        for a in 0..d {
            let z = seg.lambdas()[a] * h;
            let (p1, e) = (h * phi1(z), (-z).exp());
            for b in 0..d {
                w[a * d + b] = seg.slope(k, b) * p1 + e * w[a * d + b];
            }
        }
    }
    Ok(out)
}
