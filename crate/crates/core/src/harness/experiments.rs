//! Width/depth sweeps built from [`train`] runs, and the step-1 width
//! exponent check built from the rank-1 oracle.

use serde::{Deserialize, Serialize};

use crate::models::{Activation, ArchConfig, ModelKind};
use crate::optim::OptimizerConfig;
use crate::rng::SeededRng;
use crate::scaling::{layer_hyper, layer_optimizer, LayerSpec, PlanTable, Role, ScalingPlan};

use super::fit::{exponent_fit, ExponentFit};
use super::oracle::rank1_oracle;
use super::trainer::{train, RunResult, RunSpec};
use super::HarnessError;

fn default_early_slope_max() -> f64 {
    0.15
}

fn default_depth_slope_tol() -> f64 {
    0.2
}

fn default_srank_tol() -> f64 {
    1e-6
}

/// Which feature update the depth check regresses against depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthMetric {
    /// Full change of each block's pre-activation, averaged over blocks.
    #[default]
    Full,
    /// Each block's own contribution `m·ΔW x`, averaged over blocks.
    Direct,
}

/// Pass/fail thresholds. These are calibration constants of the harness,
/// not derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    /// Largest allowed |slope| of Δh vs width at the first probe step.
    #[serde(default = "default_early_slope_max")]
    pub early_slope_max: f64,
    /// Largest allowed |slope| at the last probe step, if checked.
    #[serde(default)]
    pub late_slope_max: Option<f64>,
    /// Largest allowed |log₂ drift| of the loss-optimal η_base, if checked.
    #[serde(default)]
    pub drift_max_octaves: Option<f64>,
    #[serde(default)]
    pub depth_metric: DepthMetric,
    /// Expected slope of the depth metric vs depth.
    #[serde(default)]
    pub depth_slope: f64,
    #[serde(default = "default_depth_slope_tol")]
    pub depth_slope_tol: f64,
    /// Allowed excess of a stable rank over `min(D, tB)`.
    #[serde(default = "default_srank_tol")]
    pub srank_tol: f64,
    /// Layers judged by the coordinate check; the readout layer if unset.
    #[serde(default)]
    pub layers: Option<Vec<String>>,
    /// First probe step of the late window the stable-rank scan averages
    /// Δh over before fitting against width.
    #[serde(default)]
    pub window_from: Option<usize>,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            early_slope_max: default_early_slope_max(),
            late_slope_max: None,
            drift_max_octaves: None,
            depth_metric: DepthMetric::Full,
            depth_slope: 0.0,
            depth_slope_tol: default_depth_slope_tol(),
            srank_tol: default_srank_tol(),
            layers: None,
            window_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: ModelKind,
    pub activation: Activation,
    pub input_dim: usize,
    pub opt: OptimizerConfig,
    pub plan: ScalingPlan,
    pub overrides: Option<PlanTable>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    /// η_base values for the learning-rate sweep.
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub probe_steps: Vec<usize>,
    pub checks: Checks,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.into()));
        if self.widths.is_empty() || self.depths.is_empty() || self.seeds.is_empty() {
            return bad("widths, depths and seeds must be nonempty");
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) || self.widths[0] == 0 {
            return bad("widths must be positive and strictly ascending");
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) || self.depths[0] == 0 {
            return bad("depths must be positive and strictly ascending");
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if self.probe_steps.iter().any(|&s| s == 0 || s > self.steps) {
            return bad("probe steps must lie in 1..=steps");
        }
        if self.lr_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("lr grid entries must be positive");
        }
        self.opt.validate()?;
        Ok(())
    }

    fn arch(&self, width: usize, depth: usize) -> ArchConfig {
        ArchConfig {
            kind: self.kind,
            width,
            depth,
            input_dim: self.input_dim,
            activation: self.activation,
        }
    }

    fn probes(&self) -> Vec<usize> {
        let mut p = self.probe_steps.clone();
        p.sort_unstable();
        p.dedup();
        p
    }

    fn run(&self, tag: &str, width: usize, depth: usize, eta_base: f64, seed: u64) -> RunSpec {
        let mut plan = self.plan.clone();
        plan.eta_base = eta_base;
        RunSpec {
            run_id: format!("{tag}-w{width}-d{depth}-lr{eta_base:e}-s{seed}"),
            arch: self.arch(width, depth),
            opt: self.opt.clone(),
            plan,
            overrides: self.overrides.clone(),
            steps: self.steps,
            batch_size: self.batch_size,
            seed,
            probe_steps: self.probes(),
            record_every_step: false,
            measure_rank: false,
        }
    }
}

/// Runs a batch of independent jobs, returning results in input order.
pub trait Executor {
    fn run_all(&self, specs: &[RunSpec]) -> Vec<Result<RunResult, HarnessError>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run_all(&self, specs: &[RunSpec]) -> Vec<Result<RunResult, HarnessError>> {
        specs.iter().map(train).collect()
    }
}

fn run_checked(exec: &dyn Executor, specs: &[RunSpec]) -> Result<Vec<RunResult>, HarnessError> {
    exec.run_all(specs).into_iter().collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Slope of one layer's metric against width (or depth) at one probe step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSlope {
    pub step: usize,
    pub layer: String,
    /// `None` when fewer than two sizes produced a positive value.
    pub fit: Option<ExponentFit>,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheckReport {
    pub runs: Vec<RunResult>,
    pub slopes: Vec<LayerSlope>,
    /// Run ids excluded from the fits because they diverged.
    pub diverged: Vec<String>,
    pub early_max_abs_slope: Option<f64>,
    pub late_max_abs_slope: Option<f64>,
    pub pass: bool,
}

impl CoordCheckReport {
    pub fn slope(&self, step: usize, layer: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.step == step && s.layer == layer)
            .and_then(|s| s.fit.map(|f| f.slope))
    }
}

/// Per-layer slopes of `metric(run)[layer]` against `size(run)` at each
/// probe step, averaging over seeds. Runs that diverged still contribute the
/// probe steps they reached.
fn layer_slopes(
    runs: &[RunResult],
    probes: &[usize],
    size: impl Fn(&RunResult) -> usize,
    metric: impl Fn(&RunResult, usize) -> Option<Vec<f64>>,
    layers: &[String],
) -> Vec<LayerSlope> {
    let mut sizes: Vec<usize> = runs.iter().map(&size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Vec::new();
    for &step in probes {
        for (li, layer) in layers.iter().enumerate() {
            let mut xs = Vec::new();
            let mut values = Vec::new();
            for &s in &sizes {
                let vals: Vec<f64> = runs
                    .iter()
                    .filter(|r| size(r) == s)
                    .filter_map(|r| metric(r, step).and_then(|v| v.get(li).copied()))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let m = mean(&vals);
                if m > 0.0 && m.is_finite() {
                    xs.push(s as f64);
                    values.push(m);
                }
            }
            let fit = exponent_fit(&xs, &values).ok();
            out.push(LayerSlope {
                step,
                layer: layer.clone(),
                fit,
                xs,
                values,
            });
        }
    }
    out
}

fn max_abs_slope(slopes: &[LayerSlope], step: usize, judged: &[String]) -> Option<f64> {
    slopes
        .iter()
        .filter(|s| s.step == step && judged.contains(&s.layer))
        .filter_map(|s| s.fit.map(|f| f.slope.abs()))
        .reduce(f64::max)
}

/// Per-layer slopes of Δh-rms vs width after averaging each run's Δh over
/// all probe steps `>= from`. Reported with `step = from`.
pub fn window_slopes(runs: &[RunResult], from: usize) -> Vec<LayerSlope> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let window = |r: &RunResult, _: usize| -> Option<Vec<f64>> {
        let rows: Vec<&Vec<f64>> = r.delta_h.range(from..).map(|(_, v)| v).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(
            (0..rows[0].len())
                .map(|i| rows.iter().map(|v| v[i]).sum::<f64>() / n)
                .collect(),
        )
    };
    layer_slopes(runs, &[from], |r| r.width, window, &first.layers)
}

/// Δh-rms vs width at each probe step for every layer, with a fixed η_base.
/// Pass/fail looks at the layers named in the checks (the readout by default).
pub fn coord_check(
    cfg: &SweepConfig,
    exec: &dyn Executor,
) -> Result<CoordCheckReport, HarnessError> {
    cfg.validate()?;
    if cfg.widths.len() < 3 {
        return Err(HarnessError::Invalid(
            "coordinate check needs at least three widths".into(),
        ));
    }
    if cfg.probe_steps.is_empty() {
        return Err(HarnessError::Invalid(
            "coordinate check needs a probe step".into(),
        ));
    }
    let depth = cfg.depths[0];
    let specs: Vec<RunSpec> = cfg
        .widths
        .iter()
        .flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s)))
        .map(|(w, s)| cfg.run("coord", w, depth, cfg.plan.eta_base, s))
        .collect();
    let runs = run_checked(exec, &specs)?;
    let probes = cfg.probes();
    let layers = runs[0].layers.clone();
    let slopes = layer_slopes(
        &runs,
        &probes,
        |r| r.width,
        |r, t| r.delta_h.get(&t).cloned(),
        &layers,
    );
    let judged = match &cfg.checks.layers {
        Some(names) => {
            if let Some(bad) = names.iter().find(|n| !layers.contains(n)) {
                return Err(HarnessError::Invalid(format!(
                    "unknown layer {bad} in checks"
                )));
            }
            names.clone()
        }
        None => vec![layers.last().expect("models have a readout").clone()],
    };
    let early = max_abs_slope(&slopes, probes[0], &judged);
    let late = max_abs_slope(&slopes, *probes.last().expect("nonempty"), &judged);
    let mut pass = early.is_some_and(|s| s <= cfg.checks.early_slope_max);
    if let Some(limit) = cfg.checks.late_slope_max {
        pass &= late.is_some_and(|s| s <= limit);
    }
    let diverged: Vec<String> = runs
        .iter()
        .filter(|r| r.diverged())
        .map(|r| r.run_id.clone())
        .collect();
    pass &= diverged.is_empty();
    Ok(CoordCheckReport {
        runs,
        slopes,
        diverged,
        early_max_abs_slope: early,
        late_max_abs_slope: late,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrCell {
    pub width: usize,
    pub eta_base: f64,
    /// Mean final loss over seeds; `+∞` if any seed diverged.
    pub loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSweepReport {
    pub runs: Vec<RunResult>,
    pub cells: Vec<LrCell>,
    /// Loss-optimal η_base per width (`None` if every cell diverged).
    pub argmin: Vec<(usize, Option<f64>)>,
    /// `log₂(η*_largest / η*_smallest)`.
    pub drift_octaves: Option<f64>,
    pub pass: bool,
}

pub fn lr_sweep(cfg: &SweepConfig, exec: &dyn Executor) -> Result<LrSweepReport, HarnessError> {
    cfg.validate()?;
    if cfg.lr_grid.is_empty() {
        return Err(HarnessError::Invalid("learning-rate grid is empty".into()));
    }
    let depth = cfg.depths[0];
    let mut specs = Vec::new();
    for &w in &cfg.widths {
        for &eta in &cfg.lr_grid {
            for &s in &cfg.seeds {
                specs.push(cfg.run("lr", w, depth, eta, s));
            }
        }
    }
    let runs = run_checked(exec, &specs)?;
    let mut cells = Vec::new();
    let mut argmin = Vec::new();
    let per_cell = cfg.seeds.len();
    for (wi, &w) in cfg.widths.iter().enumerate() {
        let mut best: Option<(f64, f64)> = None;
        for (ei, &eta) in cfg.lr_grid.iter().enumerate() {
            let start = (wi * cfg.lr_grid.len() + ei) * per_cell;
            let group = &runs[start..start + per_cell];
            let diverged = group
                .iter()
                .any(|r| r.diverged() || !r.final_loss.is_finite());
            let loss = if diverged {
                f64::INFINITY
            } else {
                mean(&group.iter().map(|r| r.final_loss).collect::<Vec<_>>())
            };
            if loss.is_finite() && best.is_none_or(|(_, l)| loss < l) {
                best = Some((eta, loss));
            }
            cells.push(LrCell {
                width: w,
                eta_base: eta,
                loss,
                diverged,
            });
        }
        argmin.push((w, best.map(|b| b.0)));
    }
    let drift_octaves = match (
        argmin.first().and_then(|a| a.1),
        argmin.last().and_then(|a| a.1),
    ) {
        (Some(a), Some(b)) => Some((b / a).log2()),
        _ => None,
    };
    let pass = match cfg.checks.drift_max_octaves {
        Some(limit) => drift_octaves.is_some_and(|d| d.abs() <= limit),
        None => true,
    };
    Ok(LrSweepReport {
        runs,
        cells,
        argmin,
        drift_octaves,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub width: usize,
    pub layer: String,
    /// Stable rank at the first step with a nonzero update.
    pub first_nonzero: Option<(usize, f64)>,
    /// Mean over seeds at the first and last probe step.
    pub at_first_probe: Option<f64>,
    pub at_last_probe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankScanReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<RankSummary>,
    /// `(run id, step, layer, srank, bound)` where `srank > min(D, tB) + tol`.
    pub violations: Vec<(String, usize, String, f64, f64)>,
    /// Late-window Δh slopes vs width, when a window is configured.
    pub window: Vec<LayerSlope>,
    pub pass: bool,
}

pub fn rank_scan(cfg: &SweepConfig, exec: &dyn Executor) -> Result<RankScanReport, HarnessError> {
    cfg.validate()?;
    let depth = cfg.depths[0];
    let specs: Vec<RunSpec> = cfg
        .widths
        .iter()
        .flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s)))
        .map(|(w, s)| {
            let mut r = cfg.run("rank", w, depth, cfg.plan.eta_base, s);
            r.record_every_step = true;
            r.measure_rank = true;
            r
        })
        .collect();
    let runs = run_checked(exec, &specs)?;
    let probes = cfg.probes();
    let mut violations = Vec::new();
    let mut summary = Vec::new();
    for r in &runs {
        for (t0, ranks) in r.srank.iter().enumerate() {
            let t = t0 + 1;
            for (li, s) in ranks.iter().enumerate() {
                if let Some(s) = *s {
                    let (d_out, d_in) = r.shapes[li];
                    let bound = d_out.min(d_in).min(t * cfg.batch_size) as f64;
                    if s > bound + cfg.checks.srank_tol {
                        violations.push((r.run_id.clone(), t, r.layers[li].clone(), s, bound));
                    }
                }
            }
        }
    }
    for &w in &cfg.widths {
        let group: Vec<&RunResult> = runs.iter().filter(|r| r.width == w).collect();
        for (li, layer) in group[0].layers.iter().enumerate() {
            let at = |t: usize| -> Option<f64> {
                let v: Vec<f64> = group
                    .iter()
                    .filter_map(|r| r.srank.get(t.checked_sub(1)?).and_then(|s| s[li]))
                    .collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            let first_nonzero = group[0]
                .srank
                .iter()
                .enumerate()
                .find_map(|(t0, s)| s[li].map(|v| (t0 + 1, v)));
            summary.push(RankSummary {
                width: w,
                layer: layer.clone(),
                first_nonzero,
                at_first_probe: probes.first().and_then(|&t| at(t)),
                at_last_probe: probes.last().and_then(|&t| at(t)),
            });
        }
    }
    let window = cfg
        .checks
        .window_from
        .map(|t| window_slopes(&runs, t))
        .unwrap_or_default();
    let pass = violations.is_empty() && runs.iter().all(|r| !r.diverged());
    Ok(RankScanReport {
        runs,
        summary,
        violations,
        window,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthCheckReport {
    pub runs: Vec<RunResult>,
    /// Block-averaged metric vs depth, one entry per probe step (layer "blocks").
    pub slopes: Vec<LayerSlope>,
    pub diverged: Vec<String>,
    pub early_slope: Option<f64>,
    pub pass: bool,
}

/// Block-averaged feature update vs depth at fixed width.
pub fn depth_check(
    cfg: &SweepConfig,
    exec: &dyn Executor,
) -> Result<DepthCheckReport, HarnessError> {
    cfg.validate()?;
    if cfg.kind != ModelKind::ResMlp {
        return Err(HarnessError::Invalid(
            "depth check needs the residual MLP".into(),
        ));
    }
    if cfg.depths.len() < 2 || cfg.probe_steps.is_empty() {
        return Err(HarnessError::Invalid(
            "depth check needs two depths and a probe step".into(),
        ));
    }
    let width = cfg.widths[0];
    let specs: Vec<RunSpec> = cfg
        .depths
        .iter()
        .flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s)))
        .map(|(d, s)| cfg.run("depth", width, d, cfg.plan.eta_base, s))
        .collect();
    let runs = run_checked(exec, &specs)?;
    let probes = cfg.probes();
    let metric = cfg.checks.depth_metric;
    let block_mean = |r: &RunResult, t: usize| -> Option<Vec<f64>> {
        let per_layer = match metric {
            DepthMetric::Full => r.delta_h.get(&t)?,
            DepthMetric::Direct => r.direct.get(&t)?,
        };
        let blocks: Vec<f64> = r
            .layers
            .iter()
            .zip(per_layer)
            .filter(|(name, _)| name.starts_with("block_"))
            .map(|(_, v)| *v)
            .collect();
        Some(vec![mean(&blocks)])
    };
    let slopes = layer_slopes(
        &runs,
        &probes,
        |r| r.depth,
        block_mean,
        &["blocks".to_string()],
    );
    let early_slope = slopes.first().and_then(|s| s.fit.map(|f| f.slope));
    let diverged: Vec<String> = runs
        .iter()
        .filter(|r| r.diverged())
        .map(|r| r.run_id.clone())
        .collect();
    let pass = diverged.is_empty()
        && early_slope
            .is_some_and(|s| (s - cfg.checks.depth_slope).abs() <= cfg.checks.depth_slope_tol);
    Ok(DepthCheckReport {
        runs,
        slopes,
        diverged,
        early_slope,
        pass,
    })
}

/// Layer shape family for the width-exponent check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// `width × width`
    Hidden,
    /// `width × fixed`
    FanOut,
    /// `fixed × width`
    FanIn,
}

impl ShapeFamily {
    fn dims(self, width: usize, fixed: usize) -> (usize, usize) {
        match self {
            ShapeFamily::Hidden => (width, width),
            ShapeFamily::FanOut => (width, fixed),
            ShapeFamily::FanIn => (fixed, width),
        }
    }
}

/// Correlation between the gradient's input and the probe input.
const PROBE_CORRELATION: f64 = 0.5;

/// Log-log slope of `‖Q(δxᵀ)x'‖_rms` against width at the first step, with
/// `η = 1` and the plan's ε scaling, on aligned random vectors with
/// `δ ~ N(0, 1)/d_out`, `x ~ N(0, 1)` and `x' = ρx + √(1−ρ²)z`.
pub fn update_exponent(
    opt: &OptimizerConfig,
    plan: &ScalingPlan,
    family: ShapeFamily,
    widths: &[usize],
    fixed: usize,
    draws: usize,
    seed: u64,
) -> Result<ExponentFit, HarnessError> {
    if draws == 0 {
        return Err(HarnessError::Invalid("need at least one draw".into()));
    }
    let mut values = Vec::with_capacity(widths.len());
    for &w in widths {
        let (d_out, d_in) = family.dims(w, fixed);
        let (b_out, b_in) = family.dims(plan.base_width, fixed);
        let spec = LayerSpec::new("probe", Role::Hidden, d_in, d_out).with_base(b_in, b_out);
        let hyper = layer_hyper(&spec, opt, plan, w)?;
        let cfg = layer_optimizer(&spec, opt, plan, &hyper)?;
        let mut rng = SeededRng::derived(seed, w as u64);
        let mut acc = 0.0;
        for _ in 0..draws {
            let delta: Vec<f64> = rng
                .normal_vec(d_out)
                .into_iter()
                .map(|v| v / d_out as f64)
                .collect();
            let x = rng.normal_vec(d_in);
            let z = rng.normal_vec(d_in);
            let rho = PROBE_CORRELATION;
            let xp: Vec<f64> = x
                .iter()
                .zip(&z)
                .map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b)
                .collect();
            let q = rank1_oracle(&cfg, &delta, &x, &xp, 1.0)?;
            acc += (q.iter().map(|v| v * v).sum::<f64>() / q.len() as f64).sqrt();
        }
        values.push(acc / draws as f64);
    }
    let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    exponent_fit(&xs, &values)
}
