//! Reference integrators for smooth noise and the dyadic convergence study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracint::Nonlinearity;
use crate::hilbert::{PathAreaPair, SpectralOperator, TimeGrid};
use crate::noise::{dyadic_linearize, NoisePath};
use crate::solver::{x_distance, Solver, SolverParams};

/// `ω_i(t) = amp_i sin(freq_i t + phase_i) - amp_i sin(phase_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigNoise {
    pub amps: Vec<f64>,
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

impl TrigNoise {
    /// Mode `i` gets amplitude `amp`, frequency `i + 1` and phase `0.3 i`.
    pub fn standard(d: usize, amp: f64) -> Self {
        Self {
            amps: vec![amp; d],
            freqs: (1..=d).map(|i| i as f64).collect(),
            phases: (0..d).map(|i| 0.3 * i as f64).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| self.amps[i] * ((self.freqs[i] * t + self.phases[i]).sin() - self.phases[i].sin())).collect()
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|i| self.amps[i] * self.freqs[i] * (self.freqs[i] * t + self.phases[i]).cos()).collect()
    }

    /// Grid samples, linear between grid points.
    pub fn sample(&self, grid: TimeGrid) -> Result<NoisePath> {
        if self.freqs.len() != self.dim() || self.phases.len() != self.dim() {
            return Err(Error::Config("amps, freqs and phases need equal lengths".into()));
        }
        NoisePath::from_fn(grid, self.dim(), |t| self.value(t))?.as_piecewise_linear()
    }
}

fn drift(model: &dyn Nonlinearity, w: &TrigNoise, t: f64, u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let g = model.g(u);
    let dw = w.derivative(t);
    (0..d).map(|a| (0..d).map(|b| g[a * d + b] * dw[b]).sum()).collect()
}

fn check(model: &dyn Nonlinearity, op: &SpectralOperator, w: &TrigNoise, u0: &[f64], steps: usize) -> Result<()> {
    let d = op.dim();
    if model.dim() != d || w.dim() != d || u0.len() != d {
        return Err(Error::Structural(format!("dimension mismatch: operator {d}, model {}, noise {}, u0 {}", model.dim(), w.dim(), u0.len())));
    }
    if steps == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    Ok(())
}

/// Classical RK4 for `u' = -Λu + G(u) ω'(t)` on `[0, t1]`.
pub fn rk4_reference(model: &dyn Nonlinearity, op: &SpectralOperator, w: &TrigNoise, u0: &[f64], t1: f64, steps: usize) -> Result<Vec<f64>> {
    check(model, op, w, u0, steps)?;
    let lam = op.eigenvalues();
    let f = |t: f64, u: &[f64]| -> Vec<f64> { drift(model, w, t, u).iter().zip(u).zip(lam).map(|((g, x), l)| g - l * x).collect() };
    let h = t1 / steps as f64;
    let mut u = u0.to_vec();
    let axpy = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = f(t, &u);
        let k2 = f(t + h / 2.0, &axpy(&u, &k1, h / 2.0));
        let k3 = f(t + h / 2.0, &axpy(&u, &k2, h / 2.0));
        let k4 = f(t + h, &axpy(&u, &k3, h));
        for j in 0..u.len() {
            u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    Ok(u)
}

/// Lawson (integrating-factor) RK4: RK4 on `z = e^{Λt}u`, which removes the
/// stiffness of the linear part.
pub fn lawson_reference(model: &dyn Nonlinearity, op: &SpectralOperator, w: &TrigNoise, u0: &[f64], t1: f64, steps: usize) -> Result<Vec<f64>> {
    check(model, op, w, u0, steps)?;
    let h = t1 / steps as f64;
    let half = op.decay(h / 2.0);
    let full = op.decay(h);
    let mul = |e: &[f64], x: &[f64]| -> Vec<f64> { e.iter().zip(x).map(|(a, b)| a * b).collect() };
    let axpy = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let mut u = u0.to_vec();
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = drift(model, w, t, &u);
        let uh = mul(&half, &u);
        let k2 = drift(model, w, t + h / 2.0, &axpy(&uh, &mul(&half, &k1), h / 2.0));
        let k3 = drift(model, w, t + h / 2.0, &axpy(&uh, &k2, h / 2.0));
        let k4 = drift(model, w, t + h, &axpy(&mul(&full, &u), &mul(&half, &k3), h));
        for j in 0..u.len() {
            u[j] = full[j] * u[j] + h / 6.0 * (full[j] * k1[j] + 2.0 * half[j] * (k2[j] + k3[j]) + k4[j]);
        }
    }
    Ok(u)
}

/// Solutions driven by the dyadic interpolants of one noise path, compared on
/// a common coarse grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<u32>,
    pub compare_level: u32,
    /// `|||P_{n+1} - P_n|||_X` for consecutive levels.
    pub distances: Vec<f64>,
    /// `distances[i+1] / distances[i]`.
    pub ratios: Vec<f64>,
    /// `(distances.last / distances.first)^{1/(len-1)}`.
    pub mean_ratio: f64,
    pub terminal_values: Vec<Vec<f64>>,
}

/// Solves on `[0, t_end]` for every level in `levels` (increasing) and
/// measures consecutive differences on the grid of `compare_level`.
pub fn dyadic_convergence(
    omega: &NoisePath,
    model: &dyn Nonlinearity,
    op: &SpectralOperator,
    u0: &[f64],
    t_end: f64,
    levels: &[u32],
    compare_level: u32,
    params: SolverParams,
) -> Result<ConvergenceReport> {
    if levels.len() < 3 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("need at least three increasing dyadic levels".into()));
    }
    if compare_level > levels[0] {
        return Err(Error::Config(format!("comparison level {compare_level} is finer than the coarsest level {}", levels[0])));
    }
    let solve = |n: u32| -> Result<PathAreaPair> {
        let w = dyadic_linearize(omega, n)?;
        Ok(Solver::new(model, op, &w, params)?.global_solve(u0, 0.0, t_end)?.pair)
    };
    let pairs: Vec<PathAreaPair> = {
        use rayon::prelude::*;
        levels.par_iter().map(|&n| solve(n)).collect::<Result<_>>()?
    };
    let stride = comparison_stride(omega.grid(), compare_level)?;
    let coarse_pairs: Vec<PathAreaPair> = pairs
        .iter()
        .map(|p| PathAreaPair::new(p.u.subsample(stride)?, p.v.subsample(stride)?))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = coarse_pairs
        .windows(2)
        .map(|w| x_distance(&w[0], &w[1], params.beta, params.beta_prime))
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = distances.windows(2).map(|w| w[1] / w[0]).collect();
    let mean_ratio = (distances[distances.len() - 1] / distances[0]).powf(1.0 / (distances.len() - 1) as f64);
    Ok(ConvergenceReport {
        levels: levels.to_vec(),
        compare_level,
        distances,
        ratios,
        mean_ratio,
        terminal_values: pairs.iter().map(|p| p.u.at(p.u.grid().n).to_vec()).collect(),
    })
}

fn comparison_stride(fine: &TimeGrid, level: u32) -> Result<usize> {
    let step = fine.t0.abs().max(fine.t_end.abs()) / 2f64.powi(level as i32);
    let r = step / fine.dt();
    if r < 1.0 - 1e-9 || (r - r.round()).abs() > 1e-8 {
        return Err(Error::Domain(format!("comparison level {level} does not fit a grid with {} steps", fine.n)));
    }
    Ok(r.round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{KernelModel, ModelSpec};
    use crate::fracint::ConstantG;
    use crate::noise::{sample_fbm, FbmSpec};

    #[test]
    fn integrators_match_the_linear_closed_form() {
        // G ≡ c gives u(t) = e^{-λt}u0 + c ∫ e^{-λ(t-s)} ω'(s) ds
        let op = SpectralOperator::new(vec![3.0]).unwrap();
        let model = ConstantG { dim: 1, matrix: vec![0.7] };
        let w = TrigNoise { amps: vec![2.0], freqs: vec![5.0], phases: vec![0.1] };
        let (l, a, f, p) = (3.0f64, 2.0, 5.0, 0.1);
        let prim = |s: f64| a * f * (l * (f * s + p).cos() + f * (f * s + p).sin()) * (l * s).exp() / (l * l + f * f);
        let exact = (-l).exp() * (0.4 + 0.7 * (prim(1.0) - prim(0.0)));
        for r in [rk4_reference(&model, &op, &w, &[0.4], 1.0, 400).unwrap(), lawson_reference(&model, &op, &w, &[0.4], 1.0, 400).unwrap()] {
            assert!((r[0] - exact).abs() < 1e-9, "{} vs {exact}", r[0]);
        }
    }

    #[test]
    fn lawson_agrees_with_rk4_on_a_kernel_model() {
        let model = KernelModel::from_spec(&ModelSpec::new("sin_tanh", 3)).unwrap();
        let op = model.operator().clone();
        let w = TrigNoise::standard(3, 1.5);
        let u0 = [0.5, -0.2, 0.1];
        let a = rk4_reference(&model, &op, &w, &u0, 1.0, 8000).unwrap();
        let b = lawson_reference(&model, &op, &w, &u0, 1.0, 2000).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert!(rk4_reference(&model, &op, &TrigNoise::standard(2, 1.0), &u0, 1.0, 10).is_err());
    }

    #[test]
    fn convergence_on_smooth_noise_is_fast() {
        let model = KernelModel::from_spec(&ModelSpec::new("sin_tanh", 2)).unwrap();
        let op = model.operator().clone();
        let w = TrigNoise::standard(2, 1.0).sample(TimeGrid::new(0.0, 1.0, 128).unwrap()).unwrap();
        let rep = dyadic_convergence(&w, &model, &op, &[0.3, 0.2], 1.0, &[3, 4, 5, 6], 3, SolverParams::default()).unwrap();
        assert_eq!(rep.distances.len(), 3);
        // linear interpolation error decays like 4^{-n} in sup norm
        assert!(rep.mean_ratio < 0.6, "{rep:?}");
        assert!(dyadic_convergence(&w, &model, &op, &[0.3, 0.2], 1.0, &[4, 3, 5], 3, SolverParams::default()).is_err());
    }

    #[test]
    fn convergence_on_rough_noise_reports_ratios() {
        let model = KernelModel::from_spec(&ModelSpec::new("sin_tanh", 2)).unwrap();
        let op = model.operator().clone();
        let spec = FbmSpec::with_power_decay(0.45, 2, 2.0, 5).unwrap();
        let w = sample_fbm(&spec, &TimeGrid::new(0.0, 1.0, 256).unwrap()).unwrap();
        let rep = dyadic_convergence(&w, &model, &op, &[0.3, 0.2], 1.0, &[4, 5, 6, 7, 8], 4, SolverParams::default()).unwrap();
        assert!(rep.distances.iter().all(|d| d.is_finite() && *d > 0.0));
        assert_eq!(rep.ratios.len(), 3);
        assert!(rep.mean_ratio < 1.0, "{rep:?}");
    }
}
