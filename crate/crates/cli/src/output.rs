use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use mupre::harness::{write_jsonl, write_records_csv, MetricRecord, RunResult};

use crate::config::Format;

/// Writes `name` in `dir` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(
    dir: &Path,
    name: &str,
    fill: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct RunLine<'a> {
    pub record_type: &'static str,
    pub run_id: &'a str,
    pub width: usize,
    pub depth: usize,
    pub eta_base: f64,
    pub initial_loss: f64,
    /// `null` when the run diverged.
    pub final_loss: Option<f64>,
    pub diverged_at: Option<usize>,
}

impl<'a> RunLine<'a> {
    pub fn new(r: &'a RunResult) -> Self {
        Self {
            record_type: "run",
            run_id: &r.run_id,
            width: r.width,
            depth: r.depth,
            eta_base: r.eta_base,
            initial_loss: r.initial_loss,
            final_loss: r.final_loss.is_finite().then_some(r.final_loss),
            diverged_at: r.diverged_at,
        }
    }
}

/// `{stem}.csv` with every run's metric records and `{stem}.jsonl` with one
/// line per run followed by the summary line, as selected by `formats`.
pub fn write_artifacts<S: Serialize>(
    dir: &Path,
    stem: &str,
    formats: &[Format],
    runs: &[RunResult],
    summary: &S,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if formats.contains(&Format::Csv) {
        let records: Vec<MetricRecord> = runs
            .iter()
            .flat_map(|r| r.records.iter().cloned())
            .collect();
        written.push(write_atomic(dir, &format!("{stem}.csv"), |w| {
            Ok(write_records_csv(w, &records)?)
        })?);
    }
    if formats.contains(&Format::Jsonl) {
        let lines: Vec<RunLine> = runs.iter().map(RunLine::new).collect();
        written.push(write_atomic(dir, &format!("{stem}.jsonl"), |w| {
            write_jsonl(&mut *w, &lines)?;
            write_jsonl(&mut *w, std::slice::from_ref(summary))?;
            Ok(())
        })?);
    }
    Ok(written)
}
