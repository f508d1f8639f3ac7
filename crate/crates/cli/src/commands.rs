use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mupre::harness::{
    compute_multiplier, coord_check, depth_check, gram_suite, lr_sweep, rank1_suite, rank_scan,
    train, Executor, HarnessError, LayerSlope, LrCell, OracleCheck, OracleTolerances, RankSummary,
    RunResult, RunSpec, Sequential,
};
use mupre::models::ArchConfig;
use mupre::scaling::build_plan;

use crate::config::{self, Format, Loaded, UsageError};
use crate::output::{write_artifacts, write_atomic};
use crate::Env;

/// Runs jobs on a dedicated thread pool, keeping input order.
struct Pool(rayon::ThreadPool);

impl Executor for Pool {
    fn run_all(&self, specs: &[RunSpec]) -> Vec<Result<RunResult, HarnessError>> {
        self.0.install(|| specs.par_iter().map(train).collect())
    }
}

fn executor(jobs: usize) -> Result<Box<dyn Executor>> {
    if jobs == 1 {
        return Ok(Box::new(Sequential));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(Box::new(Pool(pool)))
}

/// Invalid experiment setups are usage errors; everything else is a failure
/// while running.
fn harness<T>(r: Result<T, HarnessError>) -> Result<T> {
    r.map_err(|e| match e {
        HarnessError::Invalid(m) => UsageError(m).into(),
        HarnessError::Scaling(e) => UsageError(e.to_string()).into(),
        other => anyhow::Error::new(other),
    })
}

fn load(env: &Env) -> Result<Loaded> {
    Ok(config::load(env.config_path()?, env.seed)?)
}

struct Sink {
    dir: PathBuf,
    formats: Vec<Format>,
}

impl Sink {
    fn new(env: &Env, loaded: &Loaded) -> Self {
        let out = &loaded.config.output;
        let dir = env
            .out_dir(out.dir.as_deref())
            .unwrap_or_else(|| PathBuf::from("."));
        let formats = env.format.map_or_else(|| out.formats.clone(), |f| vec![f]);
        Self { dir, formats }
    }

    fn write<S: Serialize>(&self, stem: &str, runs: &[RunResult], summary: &S) -> Result<()> {
        for p in write_artifacts(&self.dir, stem, &self.formats, runs, summary)? {
            println!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"))
}

fn print_slopes(slopes: &[LayerSlope]) {
    for s in slopes {
        match s.fit {
            Some(f) => println!(
                "  step {:>5}  {:<12} slope {:+.4}  r2 {:.3}",
                s.step, s.layer, f.slope, f.r2
            ),
            None => println!("  step {:>5}  {:<12} slope -", s.step, s.layer),
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn plan(env: &Env, width: Option<usize>, depth: Option<usize>) -> Result<bool> {
    let loaded = load(env)?;
    let sw = &loaded.sweep;
    let arch = ArchConfig {
        kind: sw.kind,
        width: width.unwrap_or(sw.widths[0]),
        depth: depth.unwrap_or(sw.depths[0]),
        input_dim: sw.input_dim,
        activation: sw.activation,
    };
    let table = harness(
        build_plan(&arch.manifest(), &sw.opt, &sw.plan, sw.overrides.as_ref()).map_err(Into::into),
    )?;
    let text = serde_json::to_string_pretty(&table)?;
    println!("{text}");
    if let Some(dir) = env.out_dir(loaded.config.output.dir.as_deref()) {
        let p = write_atomic(&dir, "plan.json", |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
        eprintln!("wrote {}", p.display());
    }
    Ok(true)
}

#[derive(Serialize)]
struct CoordSummary<'a> {
    record_type: &'static str,
    command: &'static str,
    pass: bool,
    early_max_abs_slope: Option<f64>,
    late_max_abs_slope: Option<f64>,
    diverged: &'a [String],
    slopes: &'a [LayerSlope],
}

pub fn coordcheck(env: &Env) -> Result<bool> {
    let loaded = load(env)?;
    let exec = executor(env.jobs)?;
    let r = harness(coord_check(&loaded.sweep, exec.as_ref()))?;
    println!("coordinate check");
    print_slopes(&r.slopes);
    println!(
        "  early max |slope| {}  late max |slope| {}  diverged {}  {}",
        fmt_opt(r.early_max_abs_slope),
        fmt_opt(r.late_max_abs_slope),
        r.diverged.len(),
        verdict(r.pass)
    );
    let summary = CoordSummary {
        record_type: "summary",
        command: "coordcheck",
        pass: r.pass,
        early_max_abs_slope: r.early_max_abs_slope,
        late_max_abs_slope: r.late_max_abs_slope,
        diverged: &r.diverged,
        slopes: &r.slopes,
    };
    Sink::new(env, &loaded).write("coordcheck", &r.runs, &summary)?;
    Ok(r.pass)
}

#[derive(Serialize)]
struct ArgminLine {
    width: usize,
    eta_base: Option<f64>,
}

#[derive(Serialize)]
struct LrSummary<'a> {
    record_type: &'static str,
    command: &'static str,
    pass: bool,
    argmin: Vec<ArgminLine>,
    drift_octaves: Option<f64>,
    cells: &'a [LrCell],
}

pub fn lrsweep(env: &Env) -> Result<bool> {
    let loaded = load(env)?;
    let exec = executor(env.jobs)?;
    let r = harness(lr_sweep(&loaded.sweep, exec.as_ref()))?;
    println!("learning-rate sweep");
    for c in &r.cells {
        let loss = if c.diverged {
            "diverged".to_string()
        } else {
            format!("{:.6}", c.loss)
        };
        println!(
            "  width {:>6}  eta_base {:<10e} loss {loss}",
            c.width, c.eta_base
        );
    }
    for (w, eta) in &r.argmin {
        println!(
            "  width {w:>6}  best eta_base {}",
            eta.map_or_else(|| "-".into(), |e| format!("{e:e}"))
        );
    }
    println!(
        "  drift {} octaves  {}",
        fmt_opt(r.drift_octaves),
        verdict(r.pass)
    );
    let summary = LrSummary {
        record_type: "summary",
        command: "lrsweep",
        pass: r.pass,
        argmin: r
            .argmin
            .iter()
            .map(|&(width, eta_base)| ArgminLine { width, eta_base })
            .collect(),
        drift_octaves: r.drift_octaves,
        cells: &r.cells,
    };
    Sink::new(env, &loaded).write("lrsweep", &r.runs, &summary)?;
    Ok(r.pass)
}

#[derive(Serialize)]
struct Violation<'a> {
    run_id: &'a str,
    step: usize,
    layer: &'a str,
    srank: f64,
    bound: f64,
}

#[derive(Serialize)]
struct RankSummaryLine<'a> {
    record_type: &'static str,
    command: &'static str,
    pass: bool,
    summary: &'a [RankSummary],
    violations: Vec<Violation<'a>>,
    window: &'a [LayerSlope],
}

pub fn rankscan(env: &Env) -> Result<bool> {
    let loaded = load(env)?;
    let exec = executor(env.jobs)?;
    let r = harness(rank_scan(&loaded.sweep, exec.as_ref()))?;
    println!("stable-rank scan");
    for s in &r.summary {
        let first = s
            .first_nonzero
            .map_or_else(|| "-".into(), |(t, v)| format!("{v:.4} at step {t}"));
        println!(
            "  width {:>6}  {:<12} first {first}  first probe {}  last probe {}",
            s.width,
            s.layer,
            fmt_opt(s.at_first_probe),
            fmt_opt(s.at_last_probe)
        );
    }
    if !r.window.is_empty() {
        println!("late-window feature updates");
        print_slopes(&r.window);
    }
    println!(
        "  bound violations {}  {}",
        r.violations.len(),
        verdict(r.pass)
    );
    let summary = RankSummaryLine {
        record_type: "summary",
        command: "rankscan",
        pass: r.pass,
        summary: &r.summary,
        violations: r
            .violations
            .iter()
            .map(|(run_id, step, layer, srank, bound)| Violation {
                run_id,
                step: *step,
                layer,
                srank: *srank,
                bound: *bound,
            })
            .collect(),
        window: &r.window,
    };
    Sink::new(env, &loaded).write("rankscan", &r.runs, &summary)?;
    Ok(r.pass)
}

#[derive(Serialize)]
struct DepthSummary<'a> {
    record_type: &'static str,
    command: &'static str,
    pass: bool,
    early_slope: Option<f64>,
    diverged: &'a [String],
    slopes: &'a [LayerSlope],
}

pub fn depthcheck(env: &Env) -> Result<bool> {
    let loaded = load(env)?;
    let exec = executor(env.jobs)?;
    let r = harness(depth_check(&loaded.sweep, exec.as_ref()))?;
    println!("depth check");
    print_slopes(&r.slopes);
    println!(
        "  early slope {}  diverged {}  {}",
        fmt_opt(r.early_slope),
        r.diverged.len(),
        verdict(r.pass)
    );
    let summary = DepthSummary {
        record_type: "summary",
        command: "depthcheck",
        pass: r.pass,
        early_slope: r.early_slope,
        diverged: &r.diverged,
        slopes: &r.slopes,
    };
    Sink::new(env, &loaded).write("depthcheck", &r.runs, &summary)?;
    Ok(r.pass)
}

/// Optional configuration of the oracle command.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleConfig {
    #[serde(default = "default_draws")]
    draws: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    tolerances: OracleTolerances,
}

fn default_draws() -> usize {
    100
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            seed: 0,
            tolerances: OracleTolerances::default(),
        }
    }
}

pub fn oracle(env: &Env) -> Result<bool> {
    let mut cfg: OracleConfig = match &env.config {
        Some(p) => config::read_json(p)?,
        None => OracleConfig::default(),
    };
    if let Some(s) = env.seed {
        cfg.seed = s;
    }
    if cfg.draws == 0 {
        return Err(UsageError("oracle draws must be at least 1".into()).into());
    }
    let mut checks: Vec<OracleCheck> = harness(rank1_suite(cfg.draws, cfg.seed, &cfg.tolerances))?;
    checks.extend(harness(gram_suite(cfg.seed, &cfg.tolerances))?);
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{:<40} draws {:>4}  max rel err {:.3e}  tol {:.0e}  {}",
            c.name,
            c.draws,
            c.max_rel_err,
            c.tolerance,
            verdict(c.pass)
        );
    }
    if let Some(dir) = env.out_dir(None) {
        let p = write_atomic(&dir, "oracle.jsonl", |w| {
            Ok(mupre::harness::write_jsonl(w, &checks)?)
        })?;
        println!("wrote {}", p.display());
    }
    Ok(pass)
}

#[derive(Debug, Deserialize)]
struct Point {
    compute: f64,
    loss: f64,
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<Point>() {
        let p = row.map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        out.push((p.compute, p.loss));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct MultiplierRow {
    compute: f64,
    loss: f64,
    baseline_compute: f64,
    multiplier: f64,
    extrapolated: bool,
    non_monotone: bool,
}

pub fn multiplier(env: &Env, baseline: &Path, candidate: &Path) -> Result<bool> {
    let base = read_points(baseline)?;
    let cand = read_points(candidate)?;
    let mut rows = Vec::with_capacity(cand.len());
    for &(c, l) in &cand {
        let m = harness(compute_multiplier(&base, (c, l)))?;
        rows.push(MultiplierRow {
            compute: c,
            loss: l,
            baseline_compute: m.baseline_compute,
            multiplier: m.multiplier,
            extrapolated: m.extrapolated,
            non_monotone: m.non_monotone,
        });
    }
    println!(
        "{:>14} {:>10} {:>16} {:>10}  flags",
        "compute", "loss", "baseline_compute", "multiplier"
    );
    for r in &rows {
        let mut flags = Vec::new();
        if r.extrapolated {
            flags.push("extrapolated");
        }
        if r.non_monotone {
            flags.push("non-monotone baseline");
        }
        println!(
            "{:>14.6e} {:>10.6} {:>16.6e} {:>10.4}  {}",
            r.compute,
            r.loss,
            r.baseline_compute,
            r.multiplier,
            flags.join(", ")
        );
    }
    if let Some(dir) = env.out_dir(None) {
        let p = write_atomic(&dir, "multiplier.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            for r in &rows {
                wr.serialize(r)?;
            }
            wr.flush()?;
            Ok(())
        })
        .context("writing multiplier table")?;
        println!("wrote {}", p.display());
    }
    Ok(true)
}
