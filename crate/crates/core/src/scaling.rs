//! Per-layer hyperparameters from layer shapes.
//!
//! Every multiplier is a ratio: the rule evaluated at the layer's shape over
//! the same rule at the base shape `(D_base, L_base)`, so a base-shaped layer
//! gets exactly 1 and SP and μP coincide there.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{EpsMode, OptimizerConfig, Rule, WeightDecayMode};

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("invalid layer `{0}`: {1}")]
    InvalidLayer(String, String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("override for unknown layer `{0}`")]
    UnknownOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Embedding,
    Hidden,
    Readout,
    Bias,
}

impl std::str::FromStr for Role {
    type Err = ScalingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" => Ok(Role::Embedding),
            "hidden" => Ok(Role::Hidden),
            "readout" => Ok(Role::Readout),
            "bias" => Ok(Role::Bias),
            other => Err(ScalingError::UnknownRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    #[serde(rename = "sp")]
    Sp,
    #[serde(rename = "mup")]
    MuP,
    SpectralNorm,
    MuonKimiTheta1,
    MuonKimiAdamexp,
    MuonAdamexp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WdScaling {
    Constant,
    InvWidth,
}

/// A weight matrix as seen by the scaling rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub role: Role,
    pub d_in: usize,
    pub d_out: usize,
    /// Fan-in and fan-out of this layer in the base-width model.
    pub base_d_in: usize,
    pub base_d_out: usize,
    pub in_residual: bool,
    /// Model depth for residual-block layers, 1 otherwise.
    pub depth_l: usize,
    pub b_in: Option<usize>,
    pub b_out: Option<usize>,
    /// Zero-initialised regardless of role (e.g. residual branch outputs).
    pub zero_init: bool,
}

impl LayerSpec {
    /// A layer already at its base shape, outside any residual block.
    pub fn new(name: &str, role: Role, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.to_string(),
            role,
            d_in,
            d_out,
            base_d_in: d_in,
            base_d_out: d_out,
            in_residual: false,
            depth_l: 1,
            b_in: None,
            b_out: None,
            zero_init: false,
        }
    }

    pub fn with_base(mut self, base_d_in: usize, base_d_out: usize) -> Self {
        self.base_d_in = base_d_in;
        self.base_d_out = base_d_out;
        self
    }

    pub fn in_residual(mut self, depth: usize) -> Self {
        self.in_residual = true;
        self.depth_l = depth;
        self
    }

    pub fn with_blocks(mut self, b_out: usize, b_in: usize) -> Self {
        self.b_out = Some(b_out);
        self.b_in = Some(b_in);
        self
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        let bad = |m: &str| Err(ScalingError::InvalidLayer(self.name.clone(), m.to_string()));
        if self.d_in == 0 || self.d_out == 0 || self.base_d_in == 0 || self.base_d_out == 0 {
            return bad("dimensions must be positive");
        }
        if self.depth_l == 0 {
            return bad("depth must be positive");
        }
        if self.role == Role::Bias && self.d_in != 1 {
            return bad("bias parameters have d_in = 1");
        }
        if self.b_in == Some(0) || self.b_out == Some(0) {
            return bad("block sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingPlan {
    pub param: Param,
    pub base_width: usize,
    pub base_depth: usize,
    pub eta_base: f64,
    pub wd_base: f64,
    pub wd_mode: WdScaling,
    pub wd_apply: WeightDecayMode,
    pub alpha_depth: f64,
    /// Hidden-layer init constant `c` in `σ = c/√d_in`.
    pub init_c: f64,
}

impl ScalingPlan {
    pub fn new(param: Param) -> Self {
        Self {
            param,
            base_width: 128,
            base_depth: 3,
            eta_base: 1e-2,
            wd_base: 0.0,
            wd_mode: WdScaling::Constant,
            wd_apply: WeightDecayMode::Independent,
            alpha_depth: if param == Param::Sp { 0.0 } else { 1.0 },
            init_c: 1.0,
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.param == Param::Sp {
            0.0
        } else {
            self.alpha_depth
        }
    }
}

/// Shape quantities entering the rules for one evaluation point.
#[derive(Debug, Clone, Copy)]
struct Shape {
    d_in: f64,
    d_out: f64,
    l: f64,
    b_in: f64,
    b_out: f64,
    n_blk: f64,
}

impl Shape {
    fn at(spec: &LayerSpec, base: bool, base_depth: usize, blocked: bool) -> Shape {
        let (d_in, d_out) = if base {
            (spec.base_d_in, spec.base_d_out)
        } else {
            (spec.d_in, spec.d_out)
        };
        let l = match (spec.in_residual, base) {
            (false, _) => 1,
            (true, false) => spec.depth_l,
            (true, true) => base_depth,
        };
        let (b_in, b_out) = if blocked {
            (
                spec.b_in.unwrap_or(d_in).min(d_in),
                spec.b_out.unwrap_or(d_out).min(d_out),
            )
        } else {
            (d_in, d_out)
        };
        let n_blk = d_in.div_ceil(b_in) * d_out.div_ceil(b_out);
        Shape {
            d_in: d_in as f64,
            d_out: d_out as f64,
            l: l as f64,
            b_in: b_in as f64,
            b_out: b_out as f64,
            n_blk: n_blk as f64,
        }
    }
}

fn eta_formula(rule: Rule, e_l: f64, e_r: f64, s: Shape) -> f64 {
    match rule {
        Rule::Sgd => s.l * s.d_out / s.d_in,
        Rule::Adam | Rule::AdaMuon => 1.0 / s.d_in,
        Rule::Muon => (s.d_out / s.d_in).sqrt(),
        Rule::Shampoo => {
            let e = e_l + e_r;
            (s.d_out / s.d_in).powf(1.0 - e) / (s.l.powf(2.0 * e - 1.0) * s.n_blk.powf(e))
        }
        Rule::Soap => s.b_out.powf(e_l / 2.0) * s.b_in.powf(e_r / 2.0) / s.d_in,
    }
}

fn eps_formula(rule: Rule, e_l: f64, e_r: f64, mode: EpsMode, s: Shape) -> f64 {
    match rule {
        Rule::Sgd => 1.0,
        Rule::Adam => 1.0 / (s.l * s.d_out),
        Rule::AdaMuon => (1.0 / (s.d_in * s.d_out)).sqrt(),
        Rule::Muon => (s.d_in / s.d_out).sqrt() / s.l,
        // Relative damping already tracks λ_max, which carries this scale.
        Rule::Shampoo if mode == EpsMode::Relative => 1.0,
        Rule::Shampoo => s.d_in / (s.l * s.l * s.d_out * s.n_blk),
        Rule::Soap => s.b_out.powf(e_l / 2.0) * s.b_in.powf(e_r / 2.0) / (s.l * s.d_out),
    }
}

fn ratio(spec: &LayerSpec, plan: &ScalingPlan, blocked: bool, f: impl Fn(Shape) -> f64) -> f64 {
    f(Shape::at(spec, false, plan.base_depth, blocked))
        / f(Shape::at(spec, true, plan.base_depth, blocked))
}

/// The rule whose learning-rate column applies to this layer.
fn lr_rule(spec: &LayerSpec, opt: &OptimizerConfig) -> (Rule, f64, f64, bool) {
    if spec.role == Role::Bias {
        return (Rule::Adam, 0.0, 0.0, false);
    }
    match opt.graft {
        Some(reference) => (reference, 0.0, 0.0, false),
        None => (opt.rule, opt.e_l, opt.e_r, opt.is_blocked()),
    }
}

fn with_opt_blocks(spec: &LayerSpec, opt: &OptimizerConfig) -> LayerSpec {
    let mut s = spec.clone();
    if s.b_in.is_none() {
        s.b_in = opt.block_in;
    }
    if s.b_out.is_none() {
        s.b_out = opt.block_out;
    }
    s
}

/// Learning-rate multiplier relative to the base shape.
pub fn lr_multiplier(
    spec: &LayerSpec,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
) -> Result<f64, ScalingError> {
    spec.validate()?;
    let spec = &with_opt_blocks(spec, opt);
    match plan.param {
        Param::Sp | Param::SpectralNorm => Ok(1.0),
        Param::MuP => {
            let (rule, e_l, e_r, blocked) = lr_rule(spec, opt);
            Ok(ratio(spec, plan, blocked, |s| {
                eta_formula(rule, e_l, e_r, s)
            }))
        }
        variant => {
            if opt.rule != Rule::Muon || opt.graft.is_some() {
                return Err(ScalingError::Unsupported(format!(
                    "{variant:?} applies to ungrafted muon only, got {}",
                    opt.rule.name()
                )));
            }
            alt_muon_multiplier(spec, variant)
        }
    }
}

/// ε multipliers for the primary rule, the grafting reference, and the
/// grafting ratio guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsScales {
    pub primary: f64,
    pub reference: Option<f64>,
    pub graft: Option<f64>,
}

pub fn eps_scales(
    spec: &LayerSpec,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
) -> Result<EpsScales, ScalingError> {
    spec.validate()?;
    if plan.param == Param::Sp {
        return Ok(EpsScales {
            primary: 1.0,
            reference: opt.graft.map(|_| 1.0),
            graft: opt.graft.map(|_| 1.0),
        });
    }
    let spec = &with_opt_blocks(spec, opt);
    let blocked = opt.is_blocked();
    let primary = ratio(spec, plan, blocked, |s| {
        eps_formula(opt.rule, opt.e_l, opt.e_r, opt.eps_mode, s)
    });
    let reference = opt.graft.map(|r| {
        ratio(spec, plan, false, |s| {
            eps_formula(r, 0.0, 0.0, EpsMode::Absolute, s)
        })
    });
    let graft = opt.graft.map(|_| {
        ratio(spec, plan, blocked, |s| {
            (s.d_out / s.d_in).sqrt() / eta_formula(opt.rule, opt.e_l, opt.e_r, s)
        })
    });
    Ok(EpsScales {
        primary,
        reference,
        graft,
    })
}

/// ε multiplier of the primary rule relative to the base shape.
pub fn eps_scale(
    spec: &LayerSpec,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
) -> Result<f64, ScalingError> {
    Ok(eps_scales(spec, opt, plan)?.primary)
}

pub fn init_sigma(spec: &LayerSpec, plan: &ScalingPlan) -> f64 {
    if spec.zero_init {
        return 0.0;
    }
    match spec.role {
        Role::Hidden => plan.init_c / (spec.d_in as f64).sqrt(),
        Role::Embedding => 0.1,
        Role::Readout | Role::Bias => 0.0,
    }
}

/// `L^(-α)`
pub fn residual_multiplier(l: usize, alpha: f64) -> f64 {
    (l as f64).powf(-alpha)
}

pub fn wd_scale(d: usize, d_base: usize, mode: WdScaling) -> f64 {
    match mode {
        WdScaling::Constant => 1.0,
        WdScaling::InvWidth => d_base as f64 / d as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuonVariant {
    MuonKimiTheta1,
    MuonKimiAdamexp,
    MuonAdamexp,
}

/// Learning-rate ratio of the alternative Muon scalings. `param` must be one
/// of the three Muon variants.
pub fn alt_muon_multiplier(spec: &LayerSpec, param: Param) -> Result<f64, ScalingError> {
    let gamma = |d_in: usize, d_out: usize| 0.2 * (d_in.max(d_out) as f64).sqrt();
    let gamma_ratio = gamma(spec.d_in, spec.d_out) / gamma(spec.base_d_in, spec.base_d_out);
    let adam_ratio = spec.base_d_in as f64 / spec.d_in as f64;
    match param {
        Param::MuonKimiTheta1 => Ok(gamma_ratio),
        Param::MuonKimiAdamexp => Ok(gamma_ratio * adam_ratio),
        Param::MuonAdamexp => Ok(adam_ratio),
        other => Err(ScalingError::Unsupported(format!(
            "{other:?} is not a muon variant"
        ))),
    }
}

/// Resolved hyperparameters for one layer. Serialised field names are part
/// of the plan file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerHyper {
    pub eta: f64,
    pub eps: f64,
    pub sigma_init: f64,
    pub residual_mult: f64,
    pub lambda_wd: f64,
}

/// Layer name → hyperparameters, the plan file contents.
pub type PlanTable = BTreeMap<String, LayerHyper>;

/// A dimension in a model manifest: tied to the model width or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dim {
    Fixed(usize),
    Symbolic(DimName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimName {
    Width,
}

impl Dim {
    fn resolve(self, width: usize) -> usize {
        match self {
            Dim::Fixed(d) => d,
            Dim::Symbolic(DimName::Width) => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLayer {
    pub name: String,
    pub role: Role,
    pub d_in: Dim,
    pub d_out: Dim,
    #[serde(default)]
    pub in_residual: bool,
    #[serde(default)]
    pub zero_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub width: usize,
    pub depth: usize,
    pub layers: Vec<ManifestLayer>,
}

impl ModelManifest {
    pub fn layer_specs(&self, opt: &OptimizerConfig, plan: &ScalingPlan) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|m| LayerSpec {
                name: m.name.clone(),
                role: m.role,
                d_in: m.d_in.resolve(self.width),
                d_out: m.d_out.resolve(self.width),
                base_d_in: m.d_in.resolve(plan.base_width),
                base_d_out: m.d_out.resolve(plan.base_width),
                in_residual: m.in_residual,
                depth_l: if m.in_residual { self.depth } else { 1 },
                b_in: opt.block_in,
                b_out: opt.block_out,
                zero_init: m.zero_init,
            })
            .collect()
    }
}

pub fn layer_hyper(
    spec: &LayerSpec,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
    width: usize,
) -> Result<LayerHyper, ScalingError> {
    let residual_mult = if spec.in_residual {
        residual_multiplier(spec.depth_l, plan.effective_alpha())
            / residual_multiplier(plan.base_depth, plan.effective_alpha())
    } else {
        1.0
    };
    Ok(LayerHyper {
        eta: plan.eta_base * lr_multiplier(spec, opt, plan)?,
        eps: opt.eps * eps_scale(spec, opt, plan)?,
        sigma_init: init_sigma(spec, plan),
        residual_mult,
        lambda_wd: plan.wd_base * wd_scale(width, plan.base_width, plan.wd_mode),
    })
}

/// Hyperparameters for every manifest layer; `overrides` replace computed
/// entries wholesale.
pub fn build_plan(
    manifest: &ModelManifest,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
    overrides: Option<&PlanTable>,
) -> Result<PlanTable, ScalingError> {
    let mut table = PlanTable::new();
    for spec in manifest.layer_specs(opt, plan) {
        let hyper = layer_hyper(&spec, opt, plan, manifest.width)?;
        table.insert(spec.name.clone(), hyper);
    }
    if let Some(o) = overrides {
        for (name, h) in o {
            match table.get_mut(name) {
                Some(slot) => *slot = *h,
                None => return Err(ScalingError::UnknownOverride(name.clone())),
            }
        }
    }
    Ok(table)
}

/// Per-layer optimizer config with the plan's ε values substituted.
pub fn layer_optimizer(
    spec: &LayerSpec,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
    hyper: &LayerHyper,
) -> Result<OptimizerConfig, ScalingError> {
    let scales = eps_scales(spec, opt, plan)?;
    let mut cfg = if spec.role == Role::Bias {
        OptimizerConfig::new(Rule::Adam).with_betas(opt.beta1, opt.beta2)
    } else {
        opt.clone()
    };
    cfg.eps = hyper.eps;
    if let Some(r) = scales.reference {
        cfg.graft_ref_eps = opt.graft_ref_eps * r;
    }
    if let Some(g) = scales.graft {
        cfg.graft_eps = opt.graft_eps * g;
    }
    Ok(cfg)
}
