use serde::{Deserialize, Serialize};

use crate::linalg::{power_iter_step, spectral_norm_exact, LinalgError, Matrix, PowerIterState};

use super::{OptimError, UpdateReport};

/// `(‖Q₁‖_F / (‖Q₂‖_F + eps)) · Q₂`
pub fn graft(q1: &UpdateReport, q2: &UpdateReport, eps: f64) -> UpdateReport {
    let denom = q2.frob + eps;
    let ratio = if denom > 0.0 { q1.frob / denom } else { 0.0 };
    let update = q2.update.scale(ratio);
    UpdateReport {
        frob: q2.frob * ratio,
        spec: q2.spec.map(|s| s * ratio),
        srank: q2.srank,
        update,
    }
}

/// A sub-block of a matrix and its top-left position in the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub r0: usize,
    pub c0: usize,
    pub matrix: Matrix,
}

/// Tiling of a `rows × cols` matrix into `b_out × b_in` blocks in row-major
/// block order; trailing blocks keep whatever size remains. Block sizes
/// larger than the matrix are clamped to it.
pub fn block_geometry(
    rows: usize,
    cols: usize,
    b_out: usize,
    b_in: usize,
) -> Result<Vec<(usize, usize, usize, usize)>, OptimError> {
    if b_out == 0 || b_in == 0 {
        return Err(OptimError::Config("block sizes must be positive".into()));
    }
    let (b_out, b_in) = (b_out.min(rows), b_in.min(cols));
    let mut out = Vec::new();
    for r0 in (0..rows).step_by(b_out) {
        for c0 in (0..cols).step_by(b_in) {
            out.push((r0, c0, b_out.min(rows - r0), b_in.min(cols - c0)));
        }
    }
    Ok(out)
}

pub fn block_partition(g: &Matrix, b_out: usize, b_in: usize) -> Result<Vec<Block>, OptimError> {
    Ok(block_geometry(g.rows(), g.cols(), b_out, b_in)?
        .into_iter()
        .map(|(r0, c0, r, c)| Block {
            r0,
            c0,
            matrix: g.submatrix(r0, c0, r, c),
        })
        .collect())
}

pub fn reassemble(blocks: &[Block], rows: usize, cols: usize) -> Result<Matrix, OptimError> {
    let mut out = Matrix::zeros(rows, cols);
    for b in blocks {
        if b.r0 + b.matrix.rows() > rows || b.c0 + b.matrix.cols() > cols {
            return Err(LinalgError::Shape(format!(
                "block at ({}, {}) of size {}x{} exceeds {rows}x{cols}",
                b.r0,
                b.c0,
                b.matrix.rows(),
                b.matrix.cols()
            ))
            .into());
        }
        out.set_submatrix(b.r0, b.c0, &b.matrix);
    }
    Ok(out)
}

/// Rescales `update` to spectral norm `√(d_out/d_in)` using one online power
/// iteration step. A zero estimate passes the update through and leaves the
/// state untouched.
pub fn spectral_normalize(
    update: &Matrix,
    state: &PowerIterState,
    d_out: usize,
    d_in: usize,
) -> Result<(Matrix, PowerIterState), OptimError> {
    let next = power_iter_step(update, state)?;
    if next.sigma_hat == 0.0 {
        return Ok((update.clone(), state.clone()));
    }
    let target = (d_out as f64 / d_in as f64).sqrt();
    Ok((update.scale(target / next.sigma_hat), next))
}

/// [`spectral_normalize`] with the exact spectral norm in place of the estimate.
pub fn spectral_normalize_exact(
    update: &Matrix,
    d_out: usize,
    d_in: usize,
) -> Result<Matrix, OptimError> {
    let sigma = spectral_norm_exact(update)?;
    if sigma == 0.0 {
        return Ok(update.clone());
    }
    Ok(update.scale((d_out as f64 / d_in as f64).sqrt() / sigma))
}

/// Entrywise RMS that gives each one-hot column spectral norm `√(d_out/d_in)`.
pub fn rms_target(d_out: usize, d_in: usize) -> f64 {
    (d_out as f64 / d_in as f64).sqrt() / (d_out as f64).sqrt()
}

pub fn rms_normalize(update: &Matrix, d_out: usize, d_in: usize) -> Matrix {
    let rms = update.rms();
    if rms == 0.0 {
        return update.clone();
    }
    update.scale(rms_target(d_out, d_in) / rms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecayMode {
    /// `W ← W − λW`
    Independent,
    /// `W ← W − ηλW`
    Coupled,
}

pub fn apply_weight_decay(
    w: &Matrix,
    lambda: f64,
    mode: WeightDecayMode,
    eta: f64,
) -> Result<Matrix, OptimError> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(OptimError::NegativeDecay(lambda));
    }
    let factor = match mode {
        WeightDecayMode::Independent => lambda,
        WeightDecayMode::Coupled => eta * lambda,
    };
    if factor == 0.0 {
        return Ok(w.clone());
    }
    Ok(w.scale(1.0 - factor))
}
