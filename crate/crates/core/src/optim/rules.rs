use crate::linalg::{
    inv_power_from_eig, newton_schulz_with, sym_eig, EigDecomp, LinalgError, Matrix, NsConfig,
};

use super::state::{BlockState, LayerState};
use super::wrappers::block_geometry;
use super::{EpsMode, OptimError, OptimizerConfig, Rule, UpdateReport};

/// Rotated second-moment entries at or below this fraction of the block's
/// largest `√v̂` are treated as rotation roundoff and produce no update.
const ROTATED_FLUSH: f64 = 1e-12;

/// Tolerated negative eigenvalue of a preconditioner factor, relative to its largest.
const PSD_TOL: f64 = 1e-8;

pub fn adam_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(adam(s, g, cfg)?)
}

pub fn shampoo_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(shampoo(s, g, cfg)?)
}

pub fn soap_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(soap(s, g, cfg)?)
}

pub fn muon_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(muon(s, g, cfg)?)
}

pub fn adamuon_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(adamuon(s, g, cfg)?)
}

pub fn sgd_step(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, OptimError> {
    UpdateReport::measured(sgd(s, g, cfg)?)
}

pub(super) fn primary_update(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<Matrix, OptimError> {
    match cfg.rule {
        Rule::Sgd => sgd(s, g, cfg),
        Rule::Adam => adam(s, g, cfg),
        Rule::Shampoo => shampoo(s, g, cfg),
        Rule::Soap => soap(s, g, cfg),
        Rule::Muon => muon(s, g, cfg),
        Rule::AdaMuon => adamuon(s, g, cfg),
    }
}

fn begin(s: &mut LayerState, g: &Matrix) -> Result<(), OptimError> {
    if g.shape() != (s.rows, s.cols) {
        return Err(LinalgError::Shape(format!(
            "gradient is {}x{}, state expects {}x{}",
            g.rows(),
            g.cols(),
            s.rows,
            s.cols
        ))
        .into());
    }
    if !g.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }
    s.t += 1;
    Ok(())
}

/// `acc ← β·acc + (1−β)·x`, starting from zero.
fn ema(acc: &mut Option<Matrix>, beta: f64, x: &Matrix) -> Result<(), LinalgError> {
    match acc {
        Some(a) => a.axpby(beta, 1.0 - beta, x),
        None => {
            *acc = Some(x.scale(1.0 - beta));
            Ok(())
        }
    }
}

fn bias_correction(beta: f64, t: u64) -> f64 {
    1.0 - beta.powi(t as i32)
}

/// Elementwise `m̂ / (√v̂ + eps)`.
fn adam_direction(m_hat: &Matrix, v_hat: &Matrix, eps: f64) -> Result<Matrix, OptimError> {
    if eps == 0.0 && v_hat.as_slice().contains(&0.0) {
        return Err(OptimError::ZeroDenominator);
    }
    Ok(m_hat.zip_map(v_hat, |m, v| m / (v.sqrt() + eps))?)
}

/// Like [`adam_direction`] but entries whose `√v̂` is roundoff-level relative
/// to the block are zeroed, and `0/0` is defined as 0.
fn rotated_adam_direction(m_hat: &Matrix, v_hat: &Matrix, eps: f64) -> Result<Matrix, OptimError> {
    let top = v_hat
        .as_slice()
        .iter()
        .fold(0.0f64, |a, &v| a.max(v))
        .sqrt();
    let floor = ROTATED_FLUSH * top;
    Ok(m_hat.zip_map(v_hat, |m, v| {
        let r = v.sqrt();
        if r <= floor {
            0.0
        } else {
            m / (r + eps)
        }
    })?)
}

fn sgd(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    ema(&mut s.m, cfg.beta1, g)?;
    Ok(s.m.clone().expect("first moment allocated"))
}

fn adam(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    adam_moments(s, g, cfg)
}

fn adam_moments(
    s: &mut LayerState,
    g: &Matrix,
    cfg: &OptimizerConfig,
) -> Result<Matrix, OptimError> {
    ema(&mut s.m, cfg.beta1, g)?;
    ema(&mut s.v, cfg.beta2, &g.map(|x| x * x))?;
    let m_hat =
        s.m.as_ref()
            .expect("allocated")
            .scale(1.0 / bias_correction(cfg.beta1, s.t));
    let v_hat =
        s.v.as_ref()
            .expect("allocated")
            .scale(1.0 / bias_correction(cfg.beta2, s.t));
    adam_direction(&m_hat, &v_hat, cfg.eps)
}

fn muon(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    ema(&mut s.m, cfg.beta1, g)?;
    let ns = NsConfig {
        iters: cfg.ns_iters,
        polish_iters: cfg.ns_polish,
        eps: cfg.eps,
    };
    Ok(newton_schulz_with(s.m.as_ref().expect("allocated"), &ns)?)
}

fn adamuon(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    let ns = NsConfig {
        iters: cfg.ns_iters,
        polish_iters: cfg.ns_polish,
        eps: 0.0,
    };
    let o = newton_schulz_with(g, &ns)?;
    let mut u = adam_moments(s, &o, cfg)?;
    if cfg.rms_align {
        let f = u.frob_norm();
        if f > 0.0 {
            let target = 0.2 * ((s.rows * s.cols) as f64).sqrt();
            u.scale_in_place(target / f);
        }
    }
    Ok(u)
}

fn ensure_blocks(s: &mut LayerState, cfg: &OptimizerConfig) -> Result<(), OptimError> {
    if s.blocks.is_empty() {
        let b_out = cfg.block_out.unwrap_or(s.rows);
        let b_in = cfg.block_in.unwrap_or(s.cols);
        s.blocks = block_geometry(s.rows, s.cols, b_out, b_in)?
            .into_iter()
            .map(|(r0, c0, r, c)| BlockState::new(r0, c0, r, c))
            .collect();
    }
    Ok(())
}

fn checked_eig(a: &Matrix, side: &str) -> Result<EigDecomp, OptimError> {
    let dec = sym_eig(a)?;
    let top = dec.eigenvalues[0].max(0.0);
    let low = *dec.eigenvalues.last().expect("nonempty");
    if low < -PSD_TOL * top.max(f64::MIN_POSITIVE) && low < -f64::MIN_POSITIVE {
        return Err(OptimError::StateCorrupt(format!(
            "{side} factor has eigenvalue {low:.3e} (largest {top:.3e})"
        )));
    }
    Ok(dec)
}

fn accumulate_factors(
    b: &mut BlockState,
    gb: &Matrix,
    beta2: f64,
    left: bool,
    right: bool,
) -> Result<(), OptimError> {
    if left {
        let mut ggt = gb.matmul_t(gb)?;
        ggt.symmetrize();
        ema(&mut b.l, beta2, &ggt)?;
    }
    if right {
        let mut gtg = gb.t_matmul(gb)?;
        gtg.symmetrize();
        ema(&mut b.r, beta2, &gtg)?;
    }
    Ok(())
}

/// `(F̂ + εI)^(-e)` for one Shampoo side; `None` means the block update is zero.
fn shampoo_root(
    f: &Matrix,
    bc: f64,
    e: f64,
    cfg: &OptimizerConfig,
    side: &str,
) -> Result<Option<Matrix>, OptimError> {
    let dec = checked_eig(&f.scale(1.0 / bc), side)?;
    let eps = match cfg.eps_mode {
        EpsMode::Absolute => cfg.eps,
        EpsMode::Relative => {
            let top = dec.eigenvalues[0].max(0.0);
            if top == 0.0 {
                return Ok(None);
            }
            cfg.eps * top
        }
    };
    Ok(Some(inv_power_from_eig(&dec, e, eps)?))
}

fn shampoo(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    ensure_blocks(s, cfg)?;
    ema(&mut s.m, cfg.beta1, g)?;
    let (left, right) = (cfg.e_l != 0.0, cfg.e_r != 0.0);
    let bc = bias_correction(cfg.beta2, s.t);
    let refresh = (s.t - 1).is_multiple_of(cfg.precond_freq as u64);
    let m = s.m.as_ref().expect("allocated");
    let mut out = Matrix::zeros(s.rows, s.cols);
    for b in &mut s.blocks {
        let gb = g.submatrix(b.r0, b.c0, b.rows, b.cols);
        accumulate_factors(b, &gb, cfg.beta2, left, right)?;
        let mut zero = false;
        if refresh {
            b.refreshed_at = s.t;
            b.p_l = None;
            b.p_r = None;
            if left {
                b.p_l = shampoo_root(b.l.as_ref().expect("allocated"), bc, cfg.e_l, cfg, "left")?;
                zero |= b.p_l.is_none();
            }
            if right {
                b.p_r = shampoo_root(b.r.as_ref().expect("allocated"), bc, cfg.e_r, cfg, "right")?;
                zero |= b.p_r.is_none();
            }
        } else {
            zero = (left && b.p_l.is_none()) || (right && b.p_r.is_none());
        }
        if zero {
            continue;
        }
        let mut u = m.submatrix(b.r0, b.c0, b.rows, b.cols);
        if let Some(pl) = &b.p_l {
            u = pl.matmul(&u)?;
        }
        if let Some(pr) = &b.p_r {
            u = u.matmul(pr)?;
        }
        out.set_submatrix(b.r0, b.c0, &u);
    }
    Ok(out)
}

/// `Q_Lᵀ X Q_R`, identity on untracked sides.
fn rotate_in(x: &Matrix, ql: Option<&Matrix>, qr: Option<&Matrix>) -> Result<Matrix, LinalgError> {
    let mut y = match ql {
        Some(q) => q.t_matmul(x)?,
        None => x.clone(),
    };
    if let Some(q) = qr {
        y = y.matmul(q)?;
    }
    Ok(y)
}

/// `Q_L X Q_Rᵀ`
fn rotate_out(x: &Matrix, ql: Option<&Matrix>, qr: Option<&Matrix>) -> Result<Matrix, LinalgError> {
    let mut y = match ql {
        Some(q) => q.matmul(x)?,
        None => x.clone(),
    };
    if let Some(q) = qr {
        y = y.matmul_t(q)?;
    }
    Ok(y)
}

fn soap(s: &mut LayerState, g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, OptimError> {
    begin(s, g)?;
    ensure_blocks(s, cfg)?;
    ema(&mut s.m, cfg.beta1, g)?;
    let (left, right) = (cfg.e_l != 0.0, cfg.e_r != 0.0);
    let refresh = (s.t - 1).is_multiple_of(cfg.precond_freq as u64);
    let bc1 = bias_correction(cfg.beta1, s.t);
    let bc2 = bias_correction(cfg.beta2, s.t);
    let m = s.m.as_ref().expect("allocated");
    let mut out = Matrix::zeros(s.rows, s.cols);
    for b in &mut s.blocks {
        let gb = g.submatrix(b.r0, b.c0, b.rows, b.cols);
        accumulate_factors(b, &gb, cfg.beta2, left, right)?;
        if refresh {
            b.refreshed_at = s.t;
            if left {
                b.p_l = Some(checked_eig(b.l.as_ref().expect("allocated"), "left")?.eigenvectors);
            }
            if right {
                b.p_r = Some(checked_eig(b.r.as_ref().expect("allocated"), "right")?.eigenvectors);
            }
        }
        let (ql, qr) = (b.p_l.as_ref(), b.p_r.as_ref());
        let g_rot = rotate_in(&gb, ql, qr)?;
        ema(&mut b.v, cfg.beta2, &g_rot.map(|x| x * x))?;
        let m_hat = rotate_in(&m.submatrix(b.r0, b.c0, b.rows, b.cols), ql, qr)?.scale(1.0 / bc1);
        let v_hat = b.v.as_ref().expect("allocated").scale(1.0 / bc2);
        let u_rot = if left || right {
            rotated_adam_direction(&m_hat, &v_hat, cfg.eps)?
        } else {
            adam_direction(&m_hat, &v_hat, cfg.eps)?
        };
        out.set_submatrix(b.r0, b.c0, &rotate_out(&u_rot, ql, qr)?);
    }
    Ok(out)
}
