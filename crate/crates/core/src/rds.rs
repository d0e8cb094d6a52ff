//! Random-dynamical-system checks: the cocycle property of the solution map
//! and shift-stationarity of the operator area.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::area::{apply_area, OperatorArea};
use crate::error::{Error, Result};
use crate::fracint::Nonlinearity;
use crate::hilbert::{norm2, SpectralOperator};
use crate::noise::{wiener_shift, NoisePath};
use crate::solver::{Solver, SolverParams};

/// `|φ(t,ω,u0) - φ(t-τ, θ_τω, φ(τ,ω,u0))|` in V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleReport {
    pub tau: f64,
    pub t: f64,
    pub residual: f64,
    pub per_mode: Vec<f64>,
    /// `max(1, |φ(t,ω,u0)|)`, for relative comparisons.
    pub scale: f64,
}

/// Solves on `[0, t]` with `ω` and on `[0, t-τ]` with `θ_τω` from `u(τ)`.
/// `τ` and `t` must be grid times with `0 <= τ <= t`.
pub fn cocycle_residual(
    omega: &NoisePath,
    model: &dyn Nonlinearity,
    op: &SpectralOperator,
    u0: &[f64],
    tau: f64,
    t: f64,
    params: SolverParams,
) -> Result<CocycleReport> {
    if !(0.0 <= tau && tau <= t) {
        return Err(Error::Domain(format!("need 0 <= τ <= t, got τ={tau}, t={t}")));
    }
    let direct = Solver::new(model, op, omega, params)?;
    let (j0, jt) = (direct.index_of(0.0)?, direct.index_of(t)?);
    let jtau = direct.index_of(tau)?;
    let end = if jt > j0 {
        let sol = direct.global_solve(u0, 0.0, t)?;
        (sol.pair.u.at(jtau - j0).to_vec(), sol.terminal_value().to_vec())
    } else {
        (u0.to_vec(), u0.to_vec())
    };
    let (at_tau, at_t) = end;
    let shifted_end = if jt > jtau {
        let shifted = wiener_shift(omega, tau)?;
        let s = Solver::new(model, op, &shifted, params)?;
        s.global_solve(&at_tau, 0.0, t - tau)?.terminal_value().to_vec()
    } else {
        at_tau
    };
    let per_mode: Vec<f64> = at_t.iter().zip(&shifted_end).map(|(a, b)| (a - b).abs()).collect();
    Ok(CocycleReport { tau, t, residual: norm2(&per_mode), per_mode, scale: norm2(&at_t).max(1.0) })
}

/// [`cocycle_residual`] for every shift in `taus`, in parallel.
pub fn cocycle_table(
    omega: &NoisePath,
    model: &dyn Nonlinearity,
    op: &SpectralOperator,
    u0: &[f64],
    taus: &[f64],
    t: f64,
    params: SolverParams,
) -> Result<Vec<CocycleReport>> {
    taus.par_iter().map(|&tau| cocycle_residual(omega, model, op, u0, tau, t, params)).collect()
}

/// `max ‖A(ω)(τ+s, τ+t)·E - A(θ_τω)(s,t)·E‖_F` over the given time pairs and probes.
pub fn area_shift_residual(omega: &NoisePath, rates: &[f64], tau: f64, pairs: &[(f64, f64)], probes: &[Vec<f64>]) -> Result<f64> {
    let shifted = wiener_shift(omega, tau)?;
    let a = OperatorArea::new(omega, rates)?;
    let b = OperatorArea::new(&shifted, rates)?;
    let d = omega.dim();
    let find = |g: &crate::hilbert::TimeGrid, t: f64| g.index_of(t).ok_or_else(|| Error::Domain(format!("{t} is not a grid time")));
    let mut worst = 0.0f64;
    for &(s, t) in pairs {
        if !(s < t) {
            return Err(Error::Domain(format!("pairs need s < t, got ({s}, {t})")));
        }
        let x = a.get(find(omega.grid(), tau + s)?, find(omega.grid(), tau + t)?)?;
        let y = b.get(find(shifted.grid(), s)?, find(shifted.grid(), t)?)?;
        for e in probes {
            let diff: Vec<f64> = apply_area(d, &x, e).iter().zip(apply_area(d, &y, e)).map(|(p, q)| p - q).collect();
            worst = worst.max(norm2(&diff));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::area::probe_matrices;
    use crate::diffusion::{KernelModel, ModelSpec};
    use crate::hilbert::TimeGrid;
    use crate::noise::{sample_fbm, FbmSpec};

    fn fbm(d: usize, t0: f64, t1: f64, n: usize, seed: u64) -> NoisePath {
        let spec = FbmSpec::with_power_decay(0.45, d, 2.0, seed).unwrap();
        sample_fbm(&spec, &TimeGrid::new(t0, t1, n).unwrap()).unwrap().as_piecewise_linear().unwrap()
    }

    #[test]
    fn cocycle_on_piecewise_linear_noise() {
        let model = KernelModel::from_spec(&ModelSpec::new("sin_tanh", 3)).unwrap();
        let op = model.operator().clone();
        let w = fbm(3, -1.0, 1.0, 256, 11);
        let mut p = SolverParams::default();
        p.interval_steps = 32;
        let u0 = [0.4, 0.1, -0.3];
        let zero = cocycle_residual(&w, &model, &op, &u0, 0.0, 0.75, p).unwrap();
        assert_eq!(zero.residual, 0.0);
        for tau in [0.125, 0.3125, 0.75] {
            let r = cocycle_residual(&w, &model, &op, &u0, tau, 0.75, p).unwrap();
            assert!(r.residual <= 10.0 * p.fp_tol * r.scale, "{tau}: {}", r.residual);
        }
        assert!(cocycle_residual(&w, &model, &op, &u0, 0.5, 0.25, p).is_err());
    }

    #[test]
    fn area_shift_examples() {
        let g = TimeGrid::new(0.0, 1.0, 32).unwrap();
        let affine = NoisePath::from_fn(g, 2, |t| vec![t, -2.0 * t]).unwrap().as_piecewise_linear().unwrap();
        let probes = probe_matrices(2, 2, 1);
        let pairs = [(0.0, 0.25), (0.125, 0.5)];
        assert_eq!(area_shift_residual(&affine, &[1.0, 3.0], 0.0, &pairs, &probes).unwrap(), 0.0);
        assert!(area_shift_residual(&affine, &[1.0, 3.0], 0.25, &pairs, &probes).unwrap() < 1e-15);
        let w = fbm(2, 0.0, 1.0, 64, 3);
        assert!(area_shift_residual(&w, &[1.0, 3.0], 0.25, &pairs, &probes).unwrap() < 1e-13);
        assert!(area_shift_residual(&w, &[1.0, 3.0], 0.25, &[(0.5, 0.9)], &probes).is_err());
    }
}
