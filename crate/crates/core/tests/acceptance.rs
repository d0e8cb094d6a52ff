//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that every line is printed. Reference
//! values come from oracles written here: closed forms, a Lanczos Γ, RK4,
//! a Lawson integrator and midpoint Riemann–Stieltjes sums.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use roughflow::area::{area_chen_residual, path_area, probe_matrices, OperatorArea};
use roughflow::diffusion::{KernelModel, ModelSpec};
use roughflow::fracint::{frac_derivative_right, rough_integral, young_integral, FracParams, Nonlinearity};
use roughflow::hilbert::{chen_residual, GridPath, PathAreaPair, TimeGrid};
use roughflow::noise::{dyadic_linearize, estimate_holder_exponent, sample_fbm, sample_fbm_ensemble, FbmSpec, IncrementStat, NoisePath};
use roughflow::rds::cocycle_residual;
use roughflow::solver::{step_schedule, x_distance, GlobalSolution, Solver, SolverParams};
use roughflow::study::dyadic_convergence;

const SEEDS: u64 = 20;
const D: usize = 4;
const N: usize = 256;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------- oracles ----------

/// Lanczos approximation, g = 7.
fn gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let a = C.iter().enumerate().skip(1).fold(C[0], |a, (i, c)| a + c / (x + i as f64));
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

fn fbm_cov(h: f64, s: f64, t: f64) -> f64 {
    0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `ω_i(t) = sin((i+1)t + 0.3i) - sin(0.3i)` scaled by `amp`, and its derivative.
fn trig(d: usize, amp: f64) -> (impl Fn(f64) -> Vec<f64> + Sync, impl Fn(f64) -> Vec<f64> + Sync) {
    let w = move |t: f64| (0..d).map(|i| amp * (((i + 1) as f64 * t + 0.3 * i as f64).sin() - (0.3 * i as f64).sin())).collect();
    let dw = move |t: f64| (0..d).map(|i| amp * (i + 1) as f64 * ((i + 1) as f64 * t + 0.3 * i as f64).cos()).collect();
    (w, dw)
}

fn matvec(d: usize, m: &[f64], x: &[f64]) -> Vec<f64> {
    (0..d).map(|a| (0..d).map(|b| m[a * d + b] * x[b]).sum()).collect()
}

fn rk4(f: impl Fn(f64, &[f64]) -> Vec<f64>, u0: &[f64], t1: f64, steps: usize) -> Vec<f64> {
    let h = t1 / steps as f64;
    let mut u = u0.to_vec();
    let ax = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = f(t, &u);
        let k2 = f(t + h / 2.0, &ax(&u, &k1, h / 2.0));
        let k3 = f(t + h / 2.0, &ax(&u, &k2, h / 2.0));
        let k4 = f(t + h, &ax(&u, &k3, h));
        for j in 0..u.len() {
            u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    u
}

/// Integrating-factor RK4 for `u' = -Λu + N(t, u)`.
fn lawson(lam: &[f64], nl: impl Fn(f64, &[f64]) -> Vec<f64>, u0: &[f64], t1: f64, steps: usize) -> Vec<f64> {
    let h = t1 / steps as f64;
    let e = |s: f64| -> Vec<f64> { lam.iter().map(|l| (-l * s).exp()).collect() };
    let (e1, e2) = (e(h), e(h / 2.0));
    let mut u = u0.to_vec();
    for i in 0..steps {
        let t = i as f64 * h;
        let n = u.len();
        let k1 = nl(t, &u);
        let a: Vec<f64> = (0..n).map(|j| e2[j] * (u[j] + h / 2.0 * k1[j])).collect();
        let k2 = nl(t + h / 2.0, &a);
        let b: Vec<f64> = (0..n).map(|j| e2[j] * u[j] + h / 2.0 * k2[j]).collect();
        let k3 = nl(t + h / 2.0, &b);
        let c: Vec<f64> = (0..n).map(|j| e1[j] * u[j] + h * e2[j] * k3[j]).collect();
        let k4 = nl(t + h, &c);
        for j in 0..n {
            u[j] = e1[j] * u[j] + h / 6.0 * (e1[j] * k1[j] + 2.0 * e2[j] * (k2[j] + k3[j]) + k4[j]);
        }
    }
    u
}

/// The four schedule inequalities exactly as displayed, without simplification.
fn schedule_holds(k: f64, i: f64, rho0: f64, c: f64, p: &SolverParams) -> bool {
    let (b, bp, ka) = (p.beta, p.beta_prime, p.kappa);
    let x = k * i;
    let inner = 8.0 * c * c * x.powf(2.0 * b - 2.0 * ka) * x.powf(2.0 - 2.0 * bp) + 8.0 * c * c * x.powf(2.0 * b - 2.0 * bp);
    rho0 + 2.0 * c * k.powf(-bp) / (1.0 - bp) * i.powf(1.0 - bp) < x.powf(1.0 - bp)
        && 4.0 * c * c * x.powf(-bp - b) * (x.powf(b - ka) * x.powf(1.0 - bp) + x.powf(b - bp)) < 1.0
        && c * x.powf(b - bp) * (1.0 + 2.0 * x.powf(-2.0 * b) * inner) < 0.5
        && c * x.powf(-bp) + c * x.powf(-bp - 2.0 * b) * inner < 2.0 * c * x.powf(-bp)
}

fn pair_scale(p: &PathAreaPair) -> f64 {
    let g = p.u.grid().len();
    let mut s = p.u.values().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for a in 0..g {
        for b in a + 1..g {
            s = p.v.at(a, b).iter().fold(s, |m, x| m.max(x.abs()));
        }
    }
    s
}

// ---------- shared fixtures ----------

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(0.0, 1.0, n).unwrap()
}

fn model(d: usize) -> KernelModel {
    KernelModel::from_spec(&ModelSpec::new("sin_tanh", d)).unwrap()
}

fn u0(d: usize) -> Vec<f64> {
    (0..d).map(|i| 0.5 / (i + 1) as f64).collect()
}

fn fbm(d: usize, n: usize, seed: u64) -> NoisePath {
    let spec = FbmSpec::with_power_decay(0.45, d, 2.0, seed).unwrap();
    sample_fbm(&spec, &grid(n)).unwrap()
}

struct Run {
    noise: NoisePath,
    sol: GlobalSolution,
}

fn runs(m: &KernelModel, p: SolverParams) -> Vec<Run> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let noise = fbm(D, N, seed).as_piecewise_linear().unwrap();
            let sol = Solver::new(m, m.operator(), &noise, p).unwrap().global_solve(&u0(D), 0.0, 1.0).unwrap();
            Run { noise, sol }
        })
        .collect()
}

// ---------- criteria ----------

fn c1_fractional_identities() -> Verdict {
    let one = GridPath::constant(grid(64), &[1.0]);
    let mut e_const = 0.0f64;
    for a in [0.3, 0.5, 0.62, 0.8] {
        for (s, r) in [(0.0, 1.0), (0.25, 0.75), (0.5, 0.875)] {
            let v = frac_derivative_right(&one, a, s, r).unwrap()[0];
            e_const = e_const.max((v - (r - s).powf(-a) / gamma(1.0 - a)).abs());
        }
    }
    let id = GridPath::from_fn(grid(512), 1, |t| vec![t]).unwrap();
    let mut e_id = 0.0f64;
    for a in [0.3, 0.5, 0.62, 0.8] {
        for r in [1.0, 0.5, 0.25] {
            let v = frac_derivative_right(&id, a, 0.0, r).unwrap()[0];
            e_id = e_id.max((v - r.powf(1.0 - a) / gamma(2.0 - a)).abs());
        }
    }
    let id64 = GridPath::from_fn(grid(64), 1, |t| vec![t]).unwrap();
    let mut e_young = 0.0f64;
    for a in [0.3, 0.45, 0.6] {
        let v = young_integral(&one, &id64, &FracParams::new(a).unwrap(), 0.0, 1.0).unwrap()[0];
        e_young = e_young.max((v - 1.0).abs());
    }
    verdict(
        e_const <= 1e-10 && e_id <= 1e-6 && e_young <= 1e-6,
        format!("D^α 1 err {e_const:.1e} (tol 1e-10), D^α q err {e_id:.1e} (tol 1e-6), young(1, id) err {e_young:.1e} (tol 1e-6)"),
    )
}

fn c2_rough_integral_oracle() -> Verdict {
    let m = model(D);
    let g = grid(N);
    let (w, dw) = trig(D, 1.0);
    let uf = |t: f64| -> Vec<f64> { (0..D).map(|i| 0.3 + (0.5 + i as f64 * 0.7 * t).sin()).collect() };
    let u = GridPath::from_fn(g, D, uf).unwrap();
    let omega = NoisePath::from_fn(g, D, &w).unwrap();
    let v = path_area(&u, &omega).unwrap();
    let p = FracParams::new(0.62).unwrap().with_exponents(0.40, 0.43).with_quad_n(8);
    let mut worst = 0.0f64;
    for (s, t) in [(0.0, 1.0), (0.25, 0.75), (0.5, 1.0)] {
        let got = rough_integral(&u, &v, &omega, &m, &p, s, t).unwrap().value;
        let steps = 40_000;
        let h = (t - s) / steps as f64;
        let mut want = vec![0.0; D];
        for k in 0..steps {
            let r = s + (k as f64 + 0.5) * h;
            let inc: Vec<f64> = dw(r).iter().map(|x| x * h).collect();
            for (acc, x) in want.iter_mut().zip(matvec(D, &m.g(&uf(r)), &inc)) {
                *acc += x;
            }
        }
        worst = worst.max(norm(&diff(&got, &want)) / norm(&want));
    }
    verdict(worst <= 1e-3, format!("max relative error {worst:.2e} over 3 windows (tol 1e-3, N={N}, d={D}, 8 panels per step)"))
}

fn c3_solver_oracles() -> Verdict {
    let p = SolverParams::default();
    // d = 1: ω = 2 sin t
    let m1 = model(1);
    let lam1 = m1.operator().lambda(0);
    let w1 = NoisePath::from_fn(grid(N), 1, |t| vec![2.0 * t.sin()]).unwrap().as_piecewise_linear().unwrap();
    let s1 = Solver::new(&m1, m1.operator(), &w1, p).unwrap().global_solve(&[1.5], 0.0, 1.0).unwrap();
    let mut e1 = 0.0f64;
    for k in 1..=8 {
        let t = k as f64 / 8.0;
        let r = rk4(|t, u| vec![-lam1 * u[0] + m1.g(u)[0] * 2.0 * t.cos()], &[1.5], t, 4000 * k)[0];
        e1 = e1.max((s1.pair.u.at(k * N / 8)[0] - r).abs() / r.abs());
    }
    // d = 4, trigonometric noise
    let m4 = model(D);
    let lam = m4.operator().eigenvalues().to_vec();
    let (w, dw) = trig(D, 1.5);
    let w4 = NoisePath::from_fn(grid(N), D, &w).unwrap().as_piecewise_linear().unwrap();
    let s4 = Solver::new(&m4, m4.operator(), &w4, p).unwrap().global_solve(&u0(D), 0.0, 1.0).unwrap();
    let mut e4 = 0.0f64;
    for k in 1..=8 {
        let t = k as f64 / 8.0;
        let r = lawson(&lam, |t, u| matvec(D, &m4.g(u), &dw(t)), &u0(D), t, 1000 * k);
        e4 = e4.max(norm(&diff(s4.pair.u.at(k * N / 8), &r)) / norm(&r));
    }
    verdict(e1 <= 1e-3 && e4 <= 5e-3, format!("d=1 vs RK4 {e1:.2e} (tol 1e-3), d=4 vs Lawson RK4 {e4:.2e} (tol 5e-3)"))
}

fn c4_dyadic_cauchy() -> Verdict {
    let m = model(D);
    let p = SolverParams::default();
    let reports: Vec<_> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| dyadic_convergence(&fbm(D, N, seed), &m, m.operator(), &u0(D), 1.0, &[4, 5, 6, 7, 8], 4, p).unwrap())
        .collect();
    let good = reports.iter().filter(|r| r.mean_ratio < 1.0).count();
    let strict = reports.iter().filter(|r| r.ratios.iter().all(|x| *x < 1.0)).count();
    let worst = reports.iter().map(|r| r.mean_ratio).fold(0.0, f64::max);
    verdict(
        good * 10 >= 9 * SEEDS as usize,
        format!("mean ratio < 1 for {good}/{SEEDS} seeds (need 90%), largest {worst:.3}; every ratio < 1 for {strict}/{SEEDS}"),
    )
}

fn c5_chen(runs: &[Run]) -> Verdict {
    let mut worst = 0.0f64;
    for r in runs {
        let res = chen_residual(&r.sol.pair.u, &r.sol.pair.v, &r.noise.path).unwrap();
        worst = worst.max(res / pair_scale(&r.sol.pair));
    }
    let m = model(D);
    let probes = probe_matrices(D, 2, 3);
    let mut area_worst = 0.0f64;
    for r in runs.iter().take(5) {
        let area = OperatorArea::new(&r.noise, m.operator().eigenvalues()).unwrap();
        for (s, mid, t) in [(0, 64, 128), (0, 1, 2), (17, 64, 255), (100, 101, 256), (3, 130, 200)] {
            area_worst = area_worst.max(area_chen_residual(&area, s, mid, t, &probes).unwrap());
        }
    }
    verdict(
        worst <= 1e-6 && area_worst <= 1e-10,
        format!("solution Chen {worst:.1e}·scale (tol 1e-6), operator-area Chen {area_worst:.1e} (tol 1e-10)"),
    )
}

fn c6_additivity(runs: &[Run]) -> Verdict {
    let mut worst = 0.0f64;
    let mut joins = 0;
    for r in runs {
        let scale = pair_scale(&r.sol.pair);
        for d in &r.sol.diagnostics {
            if let Some(a) = d.additivity_residual {
                worst = worst.max(a / scale);
                joins += 1;
            }
        }
    }
    verdict(joins > 0 && worst <= 1e-6, format!("max residual {worst:.1e}·scale over {joins} interior points (tol 1e-6)"))
}

fn c7_schedule(runs: &[Run]) -> Verdict {
    let p = SolverParams::default();
    let mut cases = vec![(1.0, 2.0)];
    cases.extend(runs.iter().map(|r| (r.sol.rho0, r.sol.c)));
    let mut ok_ineq = true;
    let mut ok_sum = true;
    let mut k_max = 0.0f64;
    let mut k_min = f64::INFINITY;
    let mut ln_i_star = 0.0f64;
    for (rho0, c) in cases {
        let rep = step_schedule(rho0, c, &p, 1.0).unwrap();
        k_max = k_max.max(rep.k);
        k_min = k_min.min(rep.k);
        ln_i_star = ln_i_star.max(rep.ln_i_star);
        // i = 1, 2, 3, ... then log-spaced while K i stays finite
        let mut i = 1.0;
        while rep.k * i < 1e250 {
            ok_ineq &= schedule_holds(rep.k, i, rho0, c, &p);
            i = if i < 64.0 { i + 1.0 } else { i * 1.7 };
        }
        // Σ_{j<=i*} 1/(Kj) >= 1 and Σ_{j<i*} 1/(Kj) < 1, through ln i + γ
        let h = |ln_i: f64| ln_i + 0.577_215_664_901_532_9;
        ok_sum &= rep.ln_i_star.is_finite() && rep.all_hold;
        if rep.i_star.is_none() {
            ok_sum &= h(rep.ln_i_star) / rep.k >= 1.0 - 1e-12;
        }
        if let Some(n) = rep.i_star {
            // direct sum when short, else H_n = ln n + γ + 1/(2n) - 1/(12n²)
            let harmonic = if n <= 10_000_000 {
                (1..=n).map(|j| 1.0 / j as f64).sum::<f64>()
            } else {
                let x = n as f64;
                x.ln() + 0.577_215_664_901_532_9 + 0.5 / x - 1.0 / (12.0 * x * x)
            };
            ok_sum &= harmonic / rep.k >= 1.0 - 1e-12 && (harmonic - 1.0 / n as f64) / rep.k < 1.0;
        }
    }
    let contracting = runs.iter().filter(|r| r.sol.intervals.iter().all(|l| l.contraction_ratio < 1.0)).count();
    let half = runs.iter().filter(|r| r.sol.intervals.iter().all(|l| l.contraction_ratio < 0.5)).count();
    let worst = runs.iter().flat_map(|r| r.sol.intervals.iter().map(|l| l.contraction_ratio)).fold(0.0, f64::max);
    verdict(
        ok_ineq && ok_sum && contracting * 20 >= 19 * runs.len(),
        format!(
            "inequalities {}, interval sum reaches T {} (K from {k_min:.2e} to {k_max:.2e}, ln i* up to {ln_i_star:.2e}); contraction < 1 in {contracting}/{} runs, < 1/2 in {half}, worst {worst:.3}",
            if ok_ineq { "hold" } else { "fail" },
            if ok_sum { "yes" } else { "no" },
            runs.len()
        ),
    )
}

fn c8_regularity(runs: &[Run]) -> Verdict {
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for r in runs {
        for d in &r.sol.diagnostics {
            if let Some(b) = d.regularity_bound {
                checked += 1;
                worst = worst.max(d.kappa_norm_end / b);
                ok &= d.kappa_norm_end <= b;
            }
        }
        ok &= r.sol.regularity_holds;
    }
    verdict(ok && checked > 0, format!("largest |u(T_i)|_κ / bound = {worst:.3} over {checked} steps"))
}

fn c9_cocycle() -> Verdict {
    let m = model(D);
    let p = SolverParams::default();
    let fp_tol = p.fp_tol;
    // piecewise linear at dyadic level 5, shifts at level-3 nodes
    let pl: Vec<f64> = (0..5u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let w = dyadic_linearize(&fbm(D, 128, 100 + seed), 5).unwrap();
            [0.125, 0.375, 0.5, 0.75].map(|tau| cocycle_residual(&w, &m, m.operator(), &u0(D), tau, 1.0, p).unwrap().residual)
        })
        .collect();
    let raw: Vec<f64> = (0..10u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let w = fbm(D, 128, 200 + seed).as_piecewise_linear().unwrap();
            [3.0 / 128.0, 0.25, 0.5, 81.0 / 128.0].map(|tau| {
                let r = cocycle_residual(&w, &m, m.operator(), &u0(D), tau, 1.0, p).unwrap();
                r.residual / r.scale
            })
        })
        .collect();
    let a = pl.iter().copied().fold(0.0, f64::max);
    let b = raw.iter().copied().fold(0.0, f64::max);
    verdict(
        a <= 10.0 * fp_tol && b <= 5e-3,
        format!("piecewise-linear {a:.1e} (tol {:.0e}), raw fBm {b:.1e}·scale (tol 5e-3, N=128, d={D}, 10 seeds)", 10.0 * fp_tol),
    )
}

fn c10_fbm_law() -> Verdict {
    let h = 0.45;
    let spec = FbmSpec::new(h, vec![1.0, 0.25], 0).unwrap();
    let seeds: Vec<u64> = (0..10_000).collect();
    let paths = sample_fbm_ensemble(&spec, &grid(16), &seeds).unwrap();
    let mut worst = 0.0f64;
    for (mode, q) in [(0usize, 1.0), (1, 0.25)] {
        for (j, k) in [(4, 4), (8, 8), (16, 16), (4, 8), (8, 16), (4, 16), (12, 16)] {
            let emp = paths.iter().map(|p| p.path.at(j)[mode] * p.path.at(k)[mode]).sum::<f64>() / paths.len() as f64;
            let want = q * fbm_cov(h, j as f64 / 16.0, k as f64 / 16.0);
            worst = worst.max((emp - want).abs() / want);
        }
    }
    let est: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let spec = FbmSpec::new(h, vec![1.0], seed).unwrap();
            estimate_holder_exponent(&sample_fbm(&spec, &grid(4096)).unwrap(), 0, 8, IncrementStat::Rms).unwrap()
        })
        .collect();
    let dev = est.iter().map(|e| (e - h).abs()).fold(0.0, f64::max);
    verdict(
        worst <= 0.05 && dev <= 0.05,
        format!("covariance rel err {:.1}% (tol 5%, 10^4 samples), Hölder estimate off by at most {dev:.3} (tol 0.05)", 100.0 * worst),
    )
}

fn c11_uniqueness(runs: &[Run], m: &KernelModel, p: SolverParams) -> Verdict {
    let worst = runs
        .par_iter()
        .map(|r| {
            let s = Solver::new(m, m.operator(), &r.noise, p).unwrap();
            let mut worst = 0.0f64;
            for l in &r.sol.intervals {
                let g = *l.pair.u.grid();
                let start = l.pair.u.at(0).to_vec();
                let u = GridPath::from_fn(g, D, |t| start.iter().enumerate().map(|(i, x)| x + 0.3 * ((i + 1) as f64 * 7.0 * t).sin()).collect()).unwrap();
                let v = path_area(&u, &r.noise.restrict(l.j0, l.j1).unwrap()).unwrap();
                let other = s.local_solve_from(&start, l.j0, l.j1, Some(PathAreaPair::new(u, v).unwrap())).unwrap();
                worst = worst.max(x_distance(&other.pair, &l.pair, p.beta, p.beta_prime).unwrap());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    verdict(worst <= 10.0 * p.fp_tol, format!("largest X-distance between fixed points {worst:.1e} (tol {:.0e}, {} runs)", 10.0 * p.fp_tol, runs.len()))
}

fn main() {
    let started = Instant::now();
    let m = model(D);
    let p = SolverParams::default();
    let shared = runs(&m, p);
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut push = |id, name, v: Verdict| {
        println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    push(1, "fractional identities", c1_fractional_identities());
    push(2, "rough integral vs Riemann–Stieltjes", c2_rough_integral_oracle());
    push(3, "solver vs classical integrators", c3_solver_oracles());
    push(4, "dyadic approximations are Cauchy", c4_dyadic_cauchy());
    push(5, "Chen relations", c5_chen(&shared));
    push(6, "additivity at concatenation points", c6_additivity(&shared));
    push(7, "step schedule", c7_schedule(&shared));
    push(8, "regularity recursion", c8_regularity(&shared));
    push(9, "cocycle property", c9_cocycle());
    push(10, "fBm law", c10_fbm_law());
    push(11, "uniqueness of the fixed point", c11_uniqueness(&shared, &m, p));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass in {:.0} s", results.len() - failed.len(), results.len(), started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
