//! Optimizer update rules and the wrappers that post-process their output.
//!
//! Every step returns a raw update direction `Q(G)`; the learning rate is
//! applied by the caller (`W ← W − η·Q(G)`).

mod rules;
mod state;
mod wrappers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{spectral_norm_exact, LinalgError, Matrix};

pub use rules::{adam_step, adamuon_step, muon_step, sgd_step, shampoo_step, soap_step};
pub use state::{BlockState, LayerState};
pub use wrappers::{
    apply_weight_decay, block_geometry, block_partition, graft, reassemble, rms_normalize,
    rms_target, spectral_normalize, spectral_normalize_exact, Block, WeightDecayMode,
};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("division by zero: eps = 0 and the second moment has a zero entry")]
    ZeroDenominator,
    #[error("preconditioner state corrupted: {0}")]
    StateCorrupt(String),
    #[error("weight decay must be nonnegative, got {0}")]
    NegativeDecay(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Sgd,
    Adam,
    Shampoo,
    Soap,
    Muon,
    #[serde(alias = "ada_muon")]
    AdaMuon,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Adam => "adam",
            Rule::Shampoo => "shampoo",
            Rule::Soap => "soap",
            Rule::Muon => "muon",
            Rule::AdaMuon => "adamuon",
        }
    }
}

/// How Shampoo's `eps` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsMode {
    Absolute,
    /// `eps · λ_max` of the (bias-corrected) factor it regularises.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    None,
    Spectral,
    Rms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: Rule,
    /// Shampoo inverse exponents, or SOAP 0/1 side indicators.
    pub e_l: f64,
    pub e_r: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eps_mode: EpsMode,
    /// Reference optimizer `Q₁` whose update norm is grafted onto this rule.
    #[serde(alias = "graft_rule")]
    pub graft: Option<Rule>,
    /// `eps` used by the reference optimizer.
    pub graft_ref_eps: f64,
    /// Guard in the grafting ratio `‖Q₁‖/(‖Q₂‖ + eps)`.
    pub graft_eps: f64,
    pub block_in: Option<usize>,
    pub block_out: Option<usize>,
    pub normalize: Normalize,
    pub precond_freq: usize,
    pub ns_iters: usize,
    pub ns_polish: usize,
    /// AdaMuon only: rescale to RMS 0.2 (Frobenius `0.2·√(d_in·d_out)`).
    pub rms_align: bool,
}

impl OptimizerConfig {
    /// Defaults for `rule`: β₁ = 0.9, β₂ = 0.95, ε = 1e-8 absolute, except
    /// Shampoo which uses `e = 1/2` per side and relative ε = 1e-5.
    pub fn new(rule: Rule) -> Self {
        let (e, eps, eps_mode) = match rule {
            Rule::Shampoo => (0.5, 1e-5, EpsMode::Relative),
            Rule::Soap => (1.0, 1e-8, EpsMode::Absolute),
            _ => (0.0, 1e-8, EpsMode::Absolute),
        };
        Self {
            rule,
            e_l: e,
            e_r: e,
            beta1: 0.9,
            beta2: 0.95,
            eps,
            eps_mode,
            graft: None,
            graft_ref_eps: 1e-8,
            graft_eps: 1e-8,
            block_in: None,
            block_out: None,
            normalize: Normalize::None,
            precond_freq: 1,
            ns_iters: 5,
            ns_polish: 3,
            rms_align: false,
        }
    }

    pub fn with_exponents(mut self, e_l: f64, e_r: f64) -> Self {
        self.e_l = e_l;
        self.e_r = e_r;
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64, mode: EpsMode) -> Self {
        self.eps = eps;
        self.eps_mode = mode;
        self
    }

    pub fn with_blocks(mut self, block_out: usize, block_in: usize) -> Self {
        self.block_out = Some(block_out);
        self.block_in = Some(block_in);
        self
    }

    pub fn with_graft(mut self, reference: Rule) -> Self {
        self.graft = Some(reference);
        self
    }

    pub fn with_normalize(mut self, normalize: Normalize) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn is_blocked(&self) -> bool {
        self.block_in.is_some() || self.block_out.is_some()
    }

    /// Config of the grafting reference optimizer, sharing betas.
    pub fn reference(&self) -> Option<OptimizerConfig> {
        self.graft.map(|rule| {
            let mut r = OptimizerConfig::new(rule).with_betas(self.beta1, self.beta2);
            r.eps = self.graft_ref_eps;
            r.eps_mode = EpsMode::Absolute;
            r.ns_iters = self.ns_iters;
            r.ns_polish = self.ns_polish;
            r
        })
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::Config(m));
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        for (name, v) in [
            ("eps", self.eps),
            ("graft_ref_eps", self.graft_ref_eps),
            ("graft_eps", self.graft_eps),
            ("e_l", self.e_l),
            ("e_r", self.e_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and nonnegative"));
            }
        }
        if self.rule == Rule::Soap && [self.e_l, self.e_r].iter().any(|&e| e != 0.0 && e != 1.0) {
            return bad("SOAP side indicators e_l, e_r must be 0 or 1".into());
        }
        if self.is_blocked() && !matches!(self.rule, Rule::Shampoo | Rule::Soap) {
            return bad(format!(
                "blocking requires shampoo or soap, got {}",
                self.rule.name()
            ));
        }
        if self.block_in == Some(0) || self.block_out == Some(0) {
            return bad("block sizes must be positive".into());
        }
        if self.precond_freq == 0 || self.ns_iters == 0 {
            return bad("precond_freq and ns_iters must be positive".into());
        }
        if let Some(r) = self.graft {
            if r == self.rule {
                return bad("grafting a rule onto itself".into());
            }
        }
        Ok(())
    }
}

/// An update direction with its Frobenius norm and, when measured, its exact
/// spectral norm and stable rank.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub update: Matrix,
    pub frob: f64,
    pub spec: Option<f64>,
    /// `None` for the zero update or when unmeasured.
    pub srank: Option<f64>,
}

impl UpdateReport {
    /// Frobenius norm only.
    pub fn new(update: Matrix) -> Self {
        let frob = update.frob_norm();
        Self {
            update,
            frob,
            spec: None,
            srank: None,
        }
    }

    /// Frobenius norm, exact spectral norm and stable rank.
    pub fn measured(update: Matrix) -> Result<Self, OptimError> {
        let mut r = Self::new(update);
        r.measure()?;
        Ok(r)
    }

    pub fn measure(&mut self) -> Result<(), OptimError> {
        if self.spec.is_some() {
            return Ok(());
        }
        let spec = spectral_norm_exact(&self.update)?;
        self.spec = Some(spec);
        self.srank = (spec > 0.0).then(|| (self.frob / spec).powi(2));
        Ok(())
    }
}

/// Layer shape information needed by the normalising wrappers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepShape {
    pub d_out: usize,
    pub d_in: usize,
}

/// Full per-layer step: primary rule (blocked if configured), optional
/// grafting, then optional spectral or RMS normalisation.
pub fn step(
    state: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
    measure: bool,
) -> Result<UpdateReport, OptimError> {
    cfg.validate()?;
    let shape = StepShape {
        d_out: g.rows(),
        d_in: g.cols(),
    };
    let primary = rules::primary_update(state, g, cfg)?;
    let mut report = UpdateReport::new(primary);
    if let Some(ref_cfg) = cfg.reference() {
        let ref_state = state
            .reference
            .get_or_insert_with(|| Box::new(LayerState::new(shape.d_out, shape.d_in, 0)));
        let q1 = UpdateReport::new(rules::primary_update(ref_state, g, &ref_cfg)?);
        report = graft(&q1, &report, cfg.graft_eps);
    }
    let update = match cfg.normalize {
        Normalize::None => report.update,
        Normalize::Rms => rms_normalize(&report.update, shape.d_out, shape.d_in),
        Normalize::Spectral => {
            let (u, pi) = spectral_normalize(&report.update, &state.pi, shape.d_out, shape.d_in)?;
            state.pi = pi;
            u
        }
    };
    let mut report = UpdateReport::new(update);
    if measure {
        report.measure()?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(OptimizerConfig::new(Rule::Soap)
            .with_exponents(0.5, 1.0)
            .validate()
            .is_err());
        assert!(OptimizerConfig::new(Rule::Muon)
            .with_blocks(4, 4)
            .validate()
            .is_err());
        assert!(OptimizerConfig::new(Rule::Shampoo)
            .with_blocks(4, 4)
            .validate()
            .is_ok());
        assert!(OptimizerConfig::new(Rule::Adam)
            .with_betas(1.0, 0.9)
            .validate()
            .is_err());
        assert!(OptimizerConfig::new(Rule::Adam)
            .with_graft(Rule::Adam)
            .validate()
            .is_err());
    }

    #[test]
    fn report_stable_rank_identity() {
        let r = UpdateReport::measured(Matrix::from_diag(&[2.0, 1.0, 1.0])).unwrap();
        let s = r.spec.unwrap();
        assert!((r.srank.unwrap() - r.frob * r.frob / (s * s)).abs() < 1e-12);
        let z = UpdateReport::measured(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(z.srank, None);
    }
}
