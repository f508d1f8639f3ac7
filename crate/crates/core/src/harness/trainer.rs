//! Single training runs of the desk-scale models with per-layer optimizers
//! and hyperparameters resolved from a scaling plan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{LinalgError, Matrix};
use crate::models::{coord_probe, probe_inputs, synth_batch, ArchConfig, Model, Teacher};
use crate::optim::{apply_weight_decay, step, LayerState, OptimError, OptimizerConfig};
use crate::rng::SeededRng;
use crate::scaling::{build_plan, layer_optimizer, LayerHyper, PlanTable, ScalingPlan};

use super::HarnessError;

/// A run is aborted once its loss exceeds this multiple of the first loss.
pub const DIVERGENCE_FACTOR: f64 = 1e4;

const PROBE_COUNT: usize = 8;
const EVAL_BATCH: usize = 256;
const TEACHER_SEED: u64 = 0x7ea;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub arch: ArchConfig,
    pub opt: OptimizerConfig,
    pub plan: ScalingPlan,
    /// Replaces computed plan entries by layer name.
    pub overrides: Option<PlanTable>,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 1-based steps at which the one-step feature update is probed.
    pub probe_steps: Vec<usize>,
    /// Emit a record at every step rather than only at probe and final steps.
    pub record_every_step: bool,
    /// Measure the exact spectral norm and stable rank of every update.
    pub measure_rank: bool,
}

/// One CSV row: one layer of one run at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub width: usize,
    pub depth: usize,
    pub step: usize,
    pub eta_base: f64,
    pub loss: f64,
    pub layer: String,
    pub delta_h_rms: Option<f64>,
    pub srank: Option<f64>,
    pub spec_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub width: usize,
    pub depth: usize,
    pub eta_base: f64,
    pub layers: Vec<String>,
    /// `(d_out, d_in)` per layer.
    pub shapes: Vec<(usize, usize)>,
    pub records: Vec<MetricRecord>,
    pub initial_loss: f64,
    /// Loss on a fixed evaluation batch after training; `+∞` if diverged.
    pub final_loss: f64,
    pub diverged_at: Option<usize>,
    /// Probe step → per-layer RMS of the change in pre-activations.
    pub delta_h: BTreeMap<usize, Vec<f64>>,
    /// Probe step → per-layer RMS of `ΔW x` on the pre-step layer inputs,
    /// scaled by the residual multiplier for residual blocks.
    pub direct: BTreeMap<usize, Vec<f64>>,
    /// Per step, per layer: stable rank of the update (when measured and nonzero).
    pub srank: Vec<Vec<Option<f64>>>,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Resolved plan and per-layer optimizer configs for an architecture.
pub fn resolve_layers(
    arch: &ArchConfig,
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
    overrides: Option<&PlanTable>,
) -> Result<(Vec<String>, Vec<LayerHyper>, Vec<OptimizerConfig>), HarnessError> {
    let manifest = arch.manifest();
    let table = build_plan(&manifest, opt, plan, overrides)?;
    let mut names = Vec::new();
    let mut hypers = Vec::new();
    let mut cfgs = Vec::new();
    for spec in manifest.layer_specs(opt, plan) {
        let hyper = table[&spec.name];
        cfgs.push(layer_optimizer(&spec, opt, plan, &hyper)?);
        names.push(spec.name);
        hypers.push(hyper);
    }
    Ok((names, hypers, cfgs))
}

fn is_divergence(e: &OptimError) -> bool {
    matches!(
        e,
        OptimError::Linalg(LinalgError::NonFinite)
            | OptimError::Linalg(LinalgError::NoConvergence(_))
    )
}

pub fn train(spec: &RunSpec) -> Result<RunResult, HarnessError> {
    if spec.steps == 0 || spec.batch_size == 0 {
        return Err(HarnessError::Invalid(
            "steps and batch size must be positive".into(),
        ));
    }
    let arch = &spec.arch;
    let (names, hypers, cfgs) =
        resolve_layers(arch, &spec.opt, &spec.plan, spec.overrides.as_ref())?;
    let sigmas: Vec<f64> = hypers.iter().map(|h| h.sigma_init).collect();
    let in_residual: Vec<bool> = arch
        .manifest()
        .layers
        .iter()
        .map(|l| l.in_residual)
        .collect();
    let residual_mult = in_residual
        .iter()
        .zip(&hypers)
        .find(|(r, _)| **r)
        .map_or(1.0, |(_, h)| h.residual_mult);
    let mut model = Model::init(arch, &sigmas, residual_mult, spec.seed)?;
    let mut states: Vec<LayerState> = model
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let s = SeededRng::derived(spec.seed, 0x5eed + i as u64).next_u64();
            LayerState::new(w.rows(), w.cols(), s)
        })
        .collect();
    let teacher = Teacher::new(arch.input_dim, TEACHER_SEED);
    let probes = probe_inputs(arch.input_dim, PROBE_COUNT);
    let n = model.num_layers();
    let mut out = RunResult {
        run_id: spec.run_id.clone(),
        width: arch.width,
        depth: arch.depth,
        eta_base: spec.plan.eta_base,
        layers: names.clone(),
        shapes: model.weights.iter().map(Matrix::shape).collect(),
        records: Vec::new(),
        initial_loss: f64::NAN,
        final_loss: f64::INFINITY,
        diverged_at: None,
        delta_h: BTreeMap::new(),
        direct: BTreeMap::new(),
        srank: Vec::new(),
    };
    for t in 1..=spec.steps {
        let batch = synth_batch(
            SeededRng::derived(spec.seed, 0xda7a_0000 + t as u64).next_u64(),
            spec.batch_size,
            &teacher,
            arch.input_dim,
        )?;
        let (loss, cache) = model.forward(&batch.inputs, Some(&batch.targets))?;
        if t == 1 {
            out.initial_loss = loss;
        }
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * out.initial_loss.max(f64::MIN_POSITIVE) {
            out.diverged_at = Some(t);
            break;
        }
        let probing = spec.probe_steps.contains(&t);
        let before = if probing {
            Some(model.forward(&probes, None)?.1)
        } else {
            None
        };
        let grads = model.backward(&cache)?;
        let mut ranks = vec![None; n];
        let mut specs = vec![None; n];
        let mut deltas: Vec<Matrix> = Vec::with_capacity(n);
        let mut failed = false;
        for i in 0..n {
            let report = match step(&mut states[i], &grads[i], &cfgs[i], spec.measure_rank) {
                Ok(r) => r,
                Err(e) if is_divergence(&e) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            let eta = hypers[i].eta;
            ranks[i] = report.srank;
            specs[i] = report.spec.map(|s| eta * s);
            let w = &mut model.weights[i];
            let old = w.clone();
            if hypers[i].lambda_wd > 0.0 {
                *w = apply_weight_decay(w, hypers[i].lambda_wd, spec.plan.wd_apply, eta)?;
            }
            w.axpby(1.0, -eta, &report.update)?;
            deltas.push(w.sub(&old)?);
        }
        if failed || model.weights.iter().any(|w| !w.is_finite()) {
            out.diverged_at = Some(t);
            break;
        }
        if let Some(before) = &before {
            let (_, after) = model.forward(&probes, None)?;
            let mut dh = Vec::with_capacity(n);
            let mut direct = Vec::with_capacity(n);
            for i in 0..n {
                dh.push(coord_probe(before, &after, i)?);
                let x_prev = if i == 0 {
                    &before.inputs
                } else {
                    &before.post[i - 1]
                };
                let m = if in_residual[i] { residual_mult } else { 1.0 };
                direct.push(m * deltas[i].matmul(x_prev)?.rms());
            }
            out.delta_h.insert(t, dh);
            out.direct.insert(t, direct);
        }
        out.srank.push(ranks.clone());
        if probing || spec.record_every_step || t == spec.steps {
            for i in 0..n {
                out.records.push(MetricRecord {
                    run_id: spec.run_id.clone(),
                    width: arch.width,
                    depth: arch.depth,
                    step: t,
                    eta_base: spec.plan.eta_base,
                    loss,
                    layer: names[i].clone(),
                    delta_h_rms: out.delta_h.get(&t).map(|v| v[i]),
                    srank: ranks[i],
                    spec_norm: specs[i],
                });
            }
        }
    }
    if out.diverged_at.is_none() {
        let eval = synth_batch(
            SeededRng::derived(spec.seed, 0xe7a1).next_u64(),
            EVAL_BATCH,
            &teacher,
            arch.input_dim,
        )?;
        let (loss, _) = model.forward(&eval.inputs, Some(&eval.targets))?;
        out.final_loss = if loss.is_finite() {
            loss
        } else {
            f64::INFINITY
        };
    }
    Ok(out)
}
