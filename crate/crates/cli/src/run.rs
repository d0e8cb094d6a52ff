use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use roughflow::area::{area_chen_residual, probe_matrices, OperatorArea};
use roughflow::hilbert::{norm2, TimeGrid};
use roughflow::noise::{dyadic_linearize, estimate_holder_exponent, sample_fbm, IncrementStat, NoisePath};
use roughflow::rds::cocycle_table;
use roughflow::solver::{step_schedule, Solver};
use roughflow::study::{dyadic_convergence, lawson_reference, rk4_reference, TrigNoise};
use serde_json::json;

use crate::config::{ExperimentConfig, Kind, Reference};
use crate::{Failed, Invalid};

/// Files written by a pipeline, relative to the output directory.
pub type Artifacts = Vec<String>;

/// Artifacts plus a numeric check that failed after they were written.
pub struct Outcome {
    pub files: Artifacts,
    pub failure: Option<Failed>,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = match cfg.kind()? {
        Kind::Noise => noise(cfg, out),
        Kind::AreaConvergence => area_convergence(cfg, out),
        Kind::Solve => solve(cfg, out),
        Kind::Oracle => return oracle(cfg, out),
        Kind::Cocycle => cocycle(cfg, out),
        Kind::Schedule => schedule(cfg, out),
        Kind::Convergence => convergence(cfg, out),
    }?;
    Ok(Outcome { files, failure: None })
}

fn grid(cfg: &ExperimentConfig) -> anyhow::Result<TimeGrid> {
    Ok(TimeGrid::new(cfg.noise.window[0], cfg.noise.window[1], cfg.noise.grid_n)?)
}

fn sample(cfg: &ExperimentConfig, modes: usize, seed: u64) -> anyhow::Result<NoisePath> {
    let spec = cfg.noise.spec(modes, seed)?;
    Ok(sample_fbm(&spec, &grid(cfg)?)?.as_piecewise_linear()?)
}

fn write(out: &Path, name: &str, text: &str, files: &mut Artifacts) -> anyhow::Result<()> {
    std::fs::write(out.join(name), text).with_context(|| format!("writing {name}"))?;
    files.push(name.to_string());
    Ok(())
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value, files: &mut Artifacts) -> anyhow::Result<()> {
    write(out, name, &serde_json::to_string_pretty(value)?, files)
}

fn noise(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let modes = match (cfg.noise.modes, &cfg.model) {
        (Some(m), _) => m,
        (None, Some(_)) => cfg.model()?.spec().d,
        (None, None) => return Err(Invalid("field `noise.modes` is required without a model".into()).into()),
    };
    let mut files = Artifacts::new();
    let mut summary = Vec::new();
    for &seed in &cfg.seeds {
        let spec = cfg.noise.spec(modes, seed)?;
        let path = sample_fbm(&spec, &grid(cfg)?)?;
        let name = match (&cfg.noise.file_name, cfg.seeds.len()) {
            (Some(f), 1) => f.clone(),
            _ => format!("noise_seed{seed}.csv"),
        };
        path.write_csv(out.join(&name))?;
        files.push(name);
        let levels = ((cfg.noise.grid_n as f64).log2().floor() as u32).saturating_sub(2).min(6);
        let holder: Vec<Option<f64>> = (0..modes).map(|i| estimate_holder_exponent(&path, i, levels, IncrementStat::Rms).ok()).collect();
        println!("seed {seed}: {modes} modes on {} steps, Hölder estimate of mode 1: {}", cfg.noise.grid_n, fmt_opt(holder[0]));
        summary.push(json!({ "seed": seed, "holder_rms": holder }));
    }
    if cfg.noise.file_name.is_none() || cfg.seeds.len() > 1 {
        write_json(out, "noise_summary.json", &json!(summary), &mut files)?;
    }
    Ok(files)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn area_convergence(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let model = cfg.model()?;
    let d = model.spec().d;
    let rates = model.operator().eigenvalues().to_vec();
    let g = grid(cfg)?;
    let (j0, j1) = span_indices(&g, cfg.t_end)?;
    let finest = *cfg.levels.iter().max().ok_or_else(|| Invalid("field `levels` must not be empty".into()))?;
    let stride = stride(&g, cfg.compare_level)?;
    let probes = probe_matrices(d, 2, 7);
    let mut csv = String::from("seed,level,distance,ratio\n");
    let mut chen = 0.0f64;
    for &seed in &cfg.seeds {
        let w = sample(cfg, d, seed)?;
        let areas = cfg
            .levels
            .iter()
            .map(|&n| Ok(OperatorArea::new(&dyadic_linearize(&w, n)?, &rates)?))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut prev = None;
        for (i, pair) in areas.windows(2).enumerate() {
            let mut dist = 0.0f64;
            for a in (j0..=j1).step_by(stride) {
                for b in (a + stride..=j1).step_by(stride) {
                    let (x, y) = (pair[0].get(a, b)?, pair[1].get(a, b)?);
                    let diff: Vec<f64> = x.iter().zip(y.iter()).map(|(p, q)| p - q).collect();
                    dist = dist.max(norm2(&diff));
                }
            }
            let ratio = prev.map(|p: f64| dist / p);
            writeln!(csv, "{seed},{},{dist:e},{}", cfg.levels[i + 1], ratio.map_or(String::new(), |r| format!("{r:e}")))?;
            prev = Some(dist);
        }
        let last = &areas[cfg.levels.iter().position(|&n| n == finest).expect("finest level listed")];
        let mid = j0 + (j1 - j0) / 2;
        chen = chen.max(area_chen_residual(last, j0, mid, j1, &probes)?);
    }
    println!("operator-area Chen residual at level {finest}: {chen:.3e}");
    let mut files = Artifacts::new();
    write(out, "area_convergence.csv", &csv, &mut files)?;
    write_json(out, "area_summary.json", &json!({ "chen_residual": chen, "levels": cfg.levels }), &mut files)?;
    Ok(files)
}

fn span_indices(g: &TimeGrid, t_end: f64) -> anyhow::Result<(usize, usize)> {
    let j0 = g.index_of(0.0).ok_or_else(|| Invalid("the noise window must contain 0 as a grid point".into()))?;
    let j1 = g.index_of(t_end).ok_or_else(|| Invalid(format!("t_end = {t_end} is not a grid point")))?;
    Ok((j0, j1))
}

fn stride(g: &TimeGrid, level: u32) -> anyhow::Result<usize> {
    let step = g.t0.abs().max(g.t_end.abs()) / 2f64.powi(level as i32);
    let r = step / g.dt();
    if r < 1.0 - 1e-9 || (r - r.round()).abs() > 1e-8 {
        return Err(Invalid(format!("field `compare_level`: level {level} does not fit a grid with {} steps", g.n)).into());
    }
    Ok(r.round() as usize)
}

fn solve(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let model = cfg.model()?;
    let d = model.spec().d;
    let u0 = cfg.initial_value(d);
    let mut files = Artifacts::new();
    for &seed in &cfg.seeds {
        let w = sample(cfg, d, seed)?;
        let sol = Solver::new(&model, model.operator(), &w, cfg.params)?.global_solve(&u0, 0.0, cfg.t_end)?;
        let name = format!("solution_seed{seed}.csv");
        sol.pair.u.write_csv(out.join(&name))?;
        files.push(name);
        println!(
            "seed {seed}: {} intervals, max contraction ratio {:.3}, max Chen residual {:.2e}, regularity bound {}",
            sol.intervals.len(),
            sol.max_contraction_ratio(),
            sol.max_chen_residual(),
            if sol.regularity_holds { "holds" } else { "violated" }
        );
        let report = json!({
            "seed": seed,
            "terminal_value": sol.terminal_value(),
            "c_measured": sol.c_measured,
            "c": sol.c,
            "rho0": sol.rho0,
            "t0_analytic": sol.t0_analytic,
            "regularity_holds": sol.regularity_holds,
            "max_chen_residual": sol.max_chen_residual(),
            "max_additivity_residual": sol.max_additivity_residual(),
            "max_contraction_ratio": sol.max_contraction_ratio(),
            "schedule": sol.schedule,
            "intervals": sol.diagnostics,
        });
        write_json(out, &format!("diagnostics_seed{seed}.json"), &report, &mut files)?;
    }
    Ok(files)
}

fn oracle(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    let model = cfg.model()?;
    let d = model.spec().d;
    let op = model.operator();
    let u0 = cfg.initial_value(d);
    let o = &cfg.oracle;
    let reference = o.reference.unwrap_or(if d == 1 { Reference::Rk4 } else { Reference::Lawson });
    let trig = TrigNoise::standard(d, o.amplitude);
    let g = grid(cfg)?;
    let sol = Solver::new(&model, op, &trig.sample(g)?, cfg.params)?.global_solve(&u0, 0.0, cfg.t_end)?;
    let (j0, _) = span_indices(&g, cfg.t_end)?;
    let mut csv = String::from("time,relative_error\n");
    let mut worst = 0.0f64;
    for k in 1..=o.checkpoints.max(1) {
        let t = cfg.t_end * k as f64 / o.checkpoints.max(1) as f64;
        let j = g.index_of(t).ok_or_else(|| Invalid(format!("checkpoint {t} is not a grid point; change `oracle.checkpoints`")))?;
        let steps = ((o.reference_steps as f64 * t / cfg.t_end).ceil() as usize).max(1);
        let r = match reference {
            Reference::Rk4 => rk4_reference(&model, op, &trig, &u0, t, steps)?,
            Reference::Lawson => lawson_reference(&model, op, &trig, &u0, t, steps)?,
        };
        let u = sol.pair.u.at(j - j0);
        let diff: Vec<f64> = u.iter().zip(&r).map(|(a, b)| a - b).collect();
        let rel = norm2(&diff) / norm2(&r).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        writeln!(csv, "{t:e},{rel:e}")?;
    }
    let name = match reference {
        Reference::Rk4 => "RK4",
        Reference::Lawson => "Lawson RK4",
    };
    println!("max relative error vs {name}: {worst:.3e}");
    let mut files = Artifacts::new();
    write(out, "oracle.csv", &csv, &mut files)?;
    write_json(out, "oracle.json", &json!({ "reference": reference, "max_relative_error": worst, "tolerance": o.tolerance }), &mut files)?;
    let failure = o.tolerance.filter(|&tol| worst > tol).map(|tol| Failed(format!("oracle error {worst:.3e} exceeds the tolerance {tol:.1e}")));
    Ok(Outcome { files, failure })
}

fn cocycle(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let model = cfg.model()?;
    let d = model.spec().d;
    let u0 = cfg.initial_value(d);
    let taus = if cfg.taus.is_empty() { (0..4).map(|k| cfg.t_end * k as f64 / 4.0).collect() } else { cfg.taus.clone() };
    let mut csv = String::from("seed,tau,t,residual,scale\n");
    let mut worst = 0.0f64;
    for &seed in &cfg.seeds {
        let w = sample(cfg, d, seed)?;
        for r in cocycle_table(&w, &model, model.operator(), &u0, &taus, cfg.t_end, cfg.params)? {
            worst = worst.max(r.residual / r.scale);
            writeln!(csv, "{seed},{:e},{:e},{:e},{:e}", r.tau, r.t, r.residual, r.scale)?;
        }
    }
    println!("max scaled cocycle residual: {worst:.3e}");
    let mut files = Artifacts::new();
    write(out, "cocycle.csv", &csv, &mut files)?;
    Ok(files)
}

fn schedule(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let s = &cfg.schedule;
    let rep = step_schedule(s.rho0, s.c, &cfg.params, s.span)?;
    println!("K = {:.6e}", rep.k);
    match rep.i_star {
        Some(i) => println!("i* = {i}"),
        None => println!("ln i* = {:.6e}", rep.ln_i_star),
    }
    println!("inequalities hold at the checked indices: {}", rep.all_hold);
    println!("{:>4} {:>24} {:>24}", "i", "T_i", "dT_i");
    let mut csv = String::from("i,T_i,dT_i\n");
    for (i, (t, dt)) in rep.head.iter().enumerate() {
        println!("{:>4} {:>24.16e} {:>24.16e}", i + 1, t, dt);
        writeln!(csv, "{},{t:e},{dt:e}", i + 1)?;
    }
    let mut files = Artifacts::new();
    write(out, "schedule.csv", &csv, &mut files)?;
    write_json(out, "schedule.json", &serde_json::to_value(&rep)?, &mut files)?;
    Ok(files)
}

fn convergence(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Artifacts> {
    let model = cfg.model()?;
    let d = model.spec().d;
    let u0 = cfg.initial_value(d);
    let mut csv = String::from("seed,level,distance,ratio\n");
    let mut reports = Vec::new();
    let mut contracting = 0;
    for &seed in &cfg.seeds {
        let w = sample_fbm(&cfg.noise.spec(d, seed)?, &grid(cfg)?)?;
        let rep = dyadic_convergence(&w, &model, model.operator(), &u0, cfg.t_end, &cfg.levels, cfg.compare_level, cfg.params)?;
        for (i, dist) in rep.distances.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { format!("{:e}", rep.ratios[i - 1]) };
            writeln!(csv, "{seed},{},{dist:e},{ratio}", rep.levels[i + 1])?;
        }
        contracting += usize::from(rep.mean_ratio < 1.0);
        reports.push(json!({ "seed": seed, "report": rep }));
    }
    println!("mean Cauchy ratio below 1 for {contracting} of {} seeds", cfg.seeds.len());
    let mut files = Artifacts::new();
    write(out, "convergence.csv", &csv, &mut files)?;
    write_json(out, "convergence.json", &json!({ "contracting_seeds": contracting, "seeds": reports }), &mut files)?;
    Ok(files)
}
