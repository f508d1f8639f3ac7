//! Run configuration files. Every section is strict about unknown keys and
//! anything left out falls back to the library defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use mupre::harness::{Checks, SweepConfig};
use mupre::models::{Activation, ModelKind};
use mupre::optim::{EpsMode, Normalize, OptimizerConfig, Rule, WeightDecayMode};
use mupre::scaling::{Param, PlanTable, ScalingPlan, WdScaling};

/// Bad input from the user; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub scaling: ScalingSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> ModelKind {
    ModelKind::Mlp
}

fn default_depths() -> Vec<usize> {
    vec![3]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_input_dim() -> usize {
    1
}

/// Optimizer fields over the defaults of `OptimizerConfig::new(rule)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub rule: Rule,
    pub e_l: Option<f64>,
    pub e_r: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub eps_mode: Option<EpsMode>,
    #[serde(alias = "graft_rule")]
    pub graft: Option<Rule>,
    pub graft_ref_eps: Option<f64>,
    pub graft_eps: Option<f64>,
    pub block_in: Option<usize>,
    pub block_out: Option<usize>,
    pub normalize: Option<Normalize>,
    pub precond_freq: Option<usize>,
    pub ns_iters: Option<usize>,
    pub ns_polish: Option<usize>,
    pub rms_align: Option<bool>,
}

impl OptimizerSection {
    pub fn resolve(&self) -> OptimizerConfig {
        let mut o = OptimizerConfig::new(self.rule);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { o.$f = v; } )* };
        }
        set!(
            e_l,
            e_r,
            beta1,
            beta2,
            eps,
            eps_mode,
            graft_ref_eps,
            graft_eps,
            normalize,
            precond_freq,
            ns_iters,
            ns_polish,
            rms_align
        );
        o.graft = self.graft.or(o.graft);
        o.block_in = self.block_in.or(o.block_in);
        o.block_out = self.block_out.or(o.block_out);
        o
    }
}

/// Scaling-plan fields over the defaults of `ScalingPlan::new(param)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub param: Param,
    pub base_width: Option<usize>,
    pub base_depth: Option<usize>,
    pub eta_base: Option<f64>,
    pub wd_base: Option<f64>,
    pub wd_mode: Option<WdScaling>,
    pub wd_apply: Option<WeightDecayMode>,
    pub alpha_depth: Option<f64>,
    pub init_c: Option<f64>,
    /// Plan file whose entries replace the computed ones, relative to the config file.
    pub overrides: Option<PathBuf>,
}

impl ScalingSection {
    pub fn resolve(&self) -> ScalingPlan {
        let mut p = ScalingPlan::new(self.param);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        set!(
            base_width,
            base_depth,
            eta_base,
            wd_base,
            wd_mode,
            wd_apply,
            alpha_depth,
            init_c
        );
        p
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Base learning rates for `lrsweep`; defaults to the plan's `eta_base`.
    #[serde(default)]
    pub lr_grid: Option<Vec<f64>>,
    /// Number of seeds, counted up from the model seed.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Defaults to 10 and 200, dropping any beyond `steps`.
    #[serde(default)]
    pub probe_steps: Option<Vec<usize>>,
    #[serde(default)]
    pub checks: Checks,
}

fn default_steps() -> usize {
    200
}

fn default_batch_size() -> usize {
    32
}

fn default_seeds() -> usize {
    1
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch_size(),
            lr_grid: None,
            seeds: default_seeds(),
            probe_steps: None,
            checks: Checks::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Jsonl]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

/// Reads and parses a JSON file, reporting syntax and schema errors with
/// their line and column.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, UsageError> {
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

pub struct Loaded {
    pub config: RunConfig,
    pub sweep: SweepConfig,
}

pub fn load(path: &Path, seed: Option<u64>) -> Result<Loaded, UsageError> {
    let mut config: RunConfig = read_json(path)?;
    if let Some(s) = seed {
        config.model.seed = s;
    }
    let overrides = match &config.scaling.overrides {
        Some(p) => {
            let p = path.parent().map_or_else(|| p.clone(), |dir| dir.join(p));
            Some(read_json::<PlanTable>(&p)?)
        }
        None => None,
    };
    let opt = config.optimizer.resolve();
    opt.validate()
        .map_err(|e| UsageError(format!("{}: optimizer: {e}", path.display())))?;
    let plan = config.scaling.resolve();
    let sw = &config.sweep;
    if sw.seeds == 0 {
        return Err(UsageError(format!(
            "{}: sweep.seeds must be at least 1",
            path.display()
        )));
    }
    let probe_steps = match &sw.probe_steps {
        Some(p) => p.clone(),
        None => [10, 200].into_iter().filter(|&t| t <= sw.steps).collect(),
    };
    let sweep = SweepConfig {
        kind: config.model.kind,
        activation: config.model.activation,
        input_dim: config.model.input_dim,
        opt,
        lr_grid: sw.lr_grid.clone().unwrap_or_else(|| vec![plan.eta_base]),
        plan,
        overrides,
        widths: config.model.widths.clone(),
        depths: config.model.depths.clone(),
        steps: sw.steps,
        batch_size: sw.batch_size,
        seeds: (0..sw.seeds as u64)
            .map(|i| config.model.seed.wrapping_add(i))
            .collect(),
        probe_steps,
        checks: sw.checks.clone(),
    };
    sweep
        .validate()
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(Loaded { config, sweep })
}
