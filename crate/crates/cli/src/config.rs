use std::path::{Path, PathBuf};

use anyhow::Context;
use roughflow::diffusion::{KernelModel, ModelSpec};
use roughflow::noise::FbmSpec;
use roughflow::solver::SolverParams;
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Noise,
    AreaConvergence,
    Solve,
    Oracle,
    Cocycle,
    Schedule,
    Convergence,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Noise => "noise",
            Kind::AreaConvergence => "area-convergence",
            Kind::Solve => "solve",
            Kind::Oracle => "oracle",
            Kind::Cocycle => "cocycle",
            Kind::Schedule => "schedule",
            Kind::Convergence => "convergence",
        }
    }
}

/// A model given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Inline(ModelSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub hurst: f64,
    /// Mode variances `q_i = i^{-p}`.
    pub decay_p: f64,
    /// Number of modes; defaults to the model dimension.
    pub modes: Option<usize>,
    pub window: [f64; 2],
    pub grid_n: usize,
    /// Output file name for a single-seed sample.
    pub file_name: Option<String>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { hurst: 0.45, decay_p: 2.0, modes: None, window: [0.0, 1.0], grid_n: 256, file_name: None }
    }
}

impl NoiseConfig {
    pub fn spec(&self, modes: usize, seed: u64) -> roughflow::Result<FbmSpec> {
        FbmSpec::with_power_decay(self.hurst, modes, self.decay_p, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Rk4,
    Lawson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Chosen from the dimension when absent: RK4 for d = 1, Lawson otherwise.
    pub reference: Option<Reference>,
    pub amplitude: f64,
    pub reference_steps: usize,
    pub checkpoints: usize,
    /// Largest acceptable relative error; exceeding it is a numeric failure.
    pub tolerance: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { reference: None, amplitude: 1.5, reference_steps: 20_000, checkpoints: 8, tolerance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub rho0: f64,
    pub c: f64,
    pub span: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { rho0: 1.0, c: 2.0, span: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// May be left out when the subcommand names the kind.
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub model: Option<ModelRef>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub params: SolverParams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Initial condition in V-coordinates; `0.5, 0.25, ...` when absent.
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<u32>,
    #[serde(default = "default_compare_level")]
    pub compare_level: u32,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_t_end() -> f64 {
    1.0
}
fn default_levels() -> Vec<u32> {
    (4..=8).collect()
}
fn default_compare_level() -> u32 {
    4
}

impl ExperimentConfig {
    /// Reads a config and resolves a model path relative to the config file,
    /// so that the result is self-contained.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        if let Some(ModelRef::Path(p)) = &cfg.model {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = std::fs::read_to_string(&full).map_err(|e| Invalid(format!("cannot read model {}: {e}", full.display())))?;
            let spec: ModelSpec = serde_json::from_str(&text).map_err(|e| Invalid(format!("model {}: {e}", full.display())))?;
            cfg.model = Some(ModelRef::Inline(spec));
        }
        Ok(cfg)
    }

    /// Fixes the kind from the subcommand; a conflicting `kind` field is an error.
    pub fn with_kind(mut self, kind: Kind) -> anyhow::Result<Self> {
        match self.kind {
            Some(k) if k != kind => Err(Invalid(format!("config kind `{}` does not match subcommand `{}`", k.name(), kind.name())).into()),
            _ => {
                self.kind = Some(kind);
                Ok(self)
            }
        }
    }

    pub fn kind(&self) -> anyhow::Result<Kind> {
        self.kind.ok_or_else(|| Invalid("config needs a `kind`".into()).into())
    }

    /// Field-level checks run before any computation.
    pub fn validate(&self) -> anyhow::Result<()> {
        let kind = self.kind()?;
        if kind != Kind::Noise {
            self.params.validate().context("field `params`")?;
        }
        if self.seeds.is_empty() {
            return Err(Invalid("field `seeds` must not be empty".into()).into());
        }
        let n = &self.noise;
        if !(n.window[1] > n.window[0]) || n.grid_n == 0 {
            return Err(Invalid(format!("field `noise`: need window[1] > window[0] and grid_n > 0, got {:?}, {}", n.window, n.grid_n)).into());
        }
        if (n.hurst - self.params.hurst).abs() > 1e-12 && kind != Kind::Noise {
            return Err(Invalid(format!("field `noise.hurst` ({}) differs from `params.hurst` ({})", n.hurst, self.params.hurst)).into());
        }
        if matches!(kind, Kind::AreaConvergence | Kind::Solve | Kind::Oracle | Kind::Cocycle | Kind::Convergence) {
            let model = self.model().context("field `model`")?;
            if let Some(u0) = &self.u0 {
                if u0.len() != model.spec().d {
                    return Err(Invalid(format!("field `u0` has {} entries, the model has d = {}", u0.len(), model.spec().d)).into());
                }
            }
            if !(self.t_end > 0.0 && self.t_end <= n.window[1]) || n.window[0] > 0.0 {
                return Err(Invalid(format!("field `t_end`: need 0 < t_end <= {} with the window containing 0", n.window[1])).into());
            }
        }
        if kind == Kind::Cocycle && self.taus.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(Invalid("field `taus`: every shift must lie in [0, t_end]".into()).into());
        }
        if kind == Kind::Schedule {
            let s = &self.schedule;
            if !(s.rho0 >= 0.0 && s.c > 0.0 && s.span > 0.0) {
                return Err(Invalid("field `schedule`: need rho0 >= 0, c > 0 and span > 0".into()).into());
            }
        }
        Ok(())
    }

    pub fn model(&self) -> anyhow::Result<KernelModel> {
        match &self.model {
            Some(ModelRef::Inline(spec)) => Ok(KernelModel::from_spec(spec)?),
            Some(ModelRef::Path(p)) => Err(Invalid(format!("model path {} was not resolved", p.display())).into()),
            None => Err(Invalid("this experiment needs a `model`".into()).into()),
        }
    }

    pub fn initial_value(&self, d: usize) -> Vec<f64> {
        self.u0.clone().unwrap_or_else(|| (0..d).map(|i| 0.5 / (i + 1) as f64).collect())
    }
}
