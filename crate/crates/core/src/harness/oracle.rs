//! Closed-form update-through-probe oracles for rank-1 gradients and the
//! batch Gram-matrix form of Shampoo.

use crate::linalg::{dot, norm2, sym_eig, Matrix};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};

use crate::optim::{block_geometry, step, EpsMode, LayerState, Normalize, OptimizerConfig, Rule};

use super::HarnessError;

/// Eigenvalues of a Gram matrix at or below this fraction of the largest are
/// treated as exact zeros by the pseudo-inverse square root.
const PINV_TOL: f64 = 1e-10;

/// `Q(G)x'` and `‖Q(G)‖_F` for a rank-1 gradient, built from scalars only.
#[derive(Debug, Clone)]
struct Rank1Terms {
    probe: Vec<f64>,
    frob: f64,
}

impl Rank1Terms {
    fn zeros(d: usize) -> Self {
        Self {
            probe: vec![0.0; d],
            frob: 0.0,
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        for v in &mut self.probe {
            *v *= s;
        }
        self.frob *= s.abs();
        self
    }
}

/// `η·Q(δxᵀ)·x'` at the first step, computed from inner products and
/// scalar functions of the entries of `δ` and `x`.
///
/// Grafting uses the reference rule's closed form for the norm; the ε values
/// are taken from `opt` exactly as [`step`] would use them. Normalised
/// updates are not covered.
pub fn rank1_oracle(
    opt: &OptimizerConfig,
    delta: &[f64],
    x: &[f64],
    x_probe: &[f64],
    eta: f64,
) -> Result<Vec<f64>, HarnessError> {
    opt.validate()?;
    if x.len() != x_probe.len() {
        return Err(HarnessError::Invalid(format!(
            "x has {} entries, probe has {}",
            x.len(),
            x_probe.len()
        )));
    }
    if norm2(delta) == 0.0 || norm2(x) == 0.0 {
        return Err(HarnessError::Invalid(
            "rank-1 oracle needs nonzero delta and x".into(),
        ));
    }
    if opt.normalize != Normalize::None {
        return Err(HarnessError::Invalid(
            "rank-1 oracle does not cover normalised updates".into(),
        ));
    }
    let q2 = rank1_terms(opt, delta, x, x_probe)?;
    let q = match opt.reference() {
        Some(ref_cfg) => {
            let q1 = rank1_terms(&ref_cfg, delta, x, x_probe)?;
            let s = q1.frob / (q2.frob + opt.graft_eps);
            q2.scaled(s)
        }
        None => q2,
    };
    Ok(q.probe.into_iter().map(|v| eta * v).collect())
}

fn rank1_terms(
    opt: &OptimizerConfig,
    delta: &[f64],
    x: &[f64],
    xp: &[f64],
) -> Result<Rank1Terms, HarnessError> {
    let (d_out, d_in) = (delta.len(), x.len());
    let terms = match opt.rule {
        Rule::Sgd => {
            let c = (1.0 - opt.beta1) * dot(x, xp);
            Rank1Terms {
                probe: delta.iter().map(|d| c * d).collect(),
                frob: (1.0 - opt.beta1) * norm2(delta) * norm2(x),
            }
        }
        Rule::Adam => elementwise_sign(delta, x, xp, opt.eps),
        Rule::Shampoo | Rule::Soap => {
            let b_out = opt.block_out.unwrap_or(d_out);
            let b_in = opt.block_in.unwrap_or(d_in);
            let mut out = Rank1Terms::zeros(d_out);
            let mut frob2 = 0.0;
            for (r0, c0, rows, cols) in block_geometry(d_out, d_in, b_out, b_in)? {
                let (di, xj, xpj) = (&delta[r0..r0 + rows], &x[c0..c0 + cols], &xp[c0..c0 + cols]);
                let block = if opt.rule == Rule::Shampoo {
                    shampoo_block(opt, di, xj, xpj)
                } else {
                    soap_block(opt, di, xj, xpj)
                };
                for (o, v) in out.probe[r0..r0 + rows].iter_mut().zip(&block.probe) {
                    *o += v;
                }
                frob2 += block.frob * block.frob;
            }
            out.frob = frob2.sqrt();
            out
        }
        Rule::Muon => {
            let s = dot(x, xp) / (norm2(delta) * norm2(x));
            Rank1Terms {
                probe: delta.iter().map(|d| s * d).collect(),
                frob: 1.0,
            }
        }
        Rule::AdaMuon => {
            let (nd, nx) = (norm2(delta), norm2(x));
            let u: Vec<f64> = delta.iter().map(|d| d / nd).collect();
            let v: Vec<f64> = x.iter().map(|c| c / nx).collect();
            let t = elementwise_sign(&u, &v, xp, opt.eps);
            if opt.rms_align && t.frob > 0.0 {
                let target = 0.2 * ((d_out * d_in) as f64).sqrt();
                t.clone().scaled(target / t.frob)
            } else {
                t
            }
        }
    };
    Ok(terms)
}

/// Adam's first step on `a bᵀ`: entries `a_i b_j / (|a_i b_j| + ε)` applied to `x'`.
fn elementwise_sign(a: &[f64], b: &[f64], xp: &[f64], eps: f64) -> Rank1Terms {
    let mut probe = vec![0.0; a.len()];
    let mut frob2 = 0.0;
    for (p, &ai) in probe.iter_mut().zip(a) {
        for (&bj, &xj) in b.iter().zip(xp) {
            let g = ai * bj;
            let q = if g == 0.0 { 0.0 } else { g / (g.abs() + eps) };
            *p += q * xj;
            frob2 += q * q;
        }
    }
    Rank1Terms {
        probe,
        frob: frob2.sqrt(),
    }
}

/// One Shampoo block: `δ xᵀ` has the single nonzero factor eigenvalue
/// `λ = ‖x‖²‖δ‖²` on both sides.
fn shampoo_block(opt: &OptimizerConfig, delta: &[f64], x: &[f64], xp: &[f64]) -> Rank1Terms {
    let (nd, nx) = (norm2(delta), norm2(x));
    let lambda = nd * nd * nx * nx;
    if lambda == 0.0 {
        return Rank1Terms::zeros(delta.len());
    }
    let eps = match opt.eps_mode {
        EpsMode::Absolute => opt.eps,
        EpsMode::Relative => opt.eps * lambda,
    };
    let c = (1.0 - opt.beta1) * (lambda + eps).powf(-opt.e_l) * (lambda + eps).powf(-opt.e_r);
    let s = c * dot(x, xp);
    Rank1Terms {
        probe: delta.iter().map(|d| s * d).collect(),
        frob: c * nd * nx,
    }
}

/// One SOAP block, by which sides are rotated into the factor eigenbasis.
fn soap_block(opt: &OptimizerConfig, delta: &[f64], x: &[f64], xp: &[f64]) -> Rank1Terms {
    let (nd, nx) = (norm2(delta), norm2(x));
    if nd == 0.0 || nx == 0.0 {
        return Rank1Terms::zeros(delta.len());
    }
    let eps = opt.eps;
    let ratio = |a: f64| if a == 0.0 { 0.0 } else { a / (a.abs() + eps) };
    match (opt.e_l != 0.0, opt.e_r != 0.0) {
        (true, true) => {
            let g = nd * nx;
            let s = g / (g + eps) * dot(x, xp) / g;
            Rank1Terms {
                probe: delta.iter().map(|d| s * d).collect(),
                frob: g / (g + eps),
            }
        }
        (false, true) => {
            let h: Vec<f64> = delta.iter().map(|&d| ratio(d * nx)).collect();
            let s = dot(x, xp) / nx;
            Rank1Terms {
                probe: h.iter().map(|v| s * v).collect(),
                frob: norm2(&h),
            }
        }
        (true, false) => {
            let h: Vec<f64> = x.iter().map(|&c| ratio(c * nd)).collect();
            let s = dot(&h, xp) / nd;
            Rank1Terms {
                probe: delta.iter().map(|d| s * d).collect(),
                frob: norm2(&h),
            }
        }
        (false, false) => elementwise_sign(delta, x, xp, eps),
    }
}

/// The same quantity as [`rank1_oracle`] through the full optimizer step on
/// a fresh state: `η·step(δxᵀ)·x'`.
pub fn dense_rank1_update(
    opt: &OptimizerConfig,
    delta: &[f64],
    x: &[f64],
    x_probe: &[f64],
    eta: f64,
) -> Result<Vec<f64>, HarnessError> {
    Ok(dense_with_scale(opt, delta, x, x_probe, eta)?.0)
}

/// The dense probe output and its natural size `η‖Q(G)‖_F‖x'‖`.
fn dense_with_scale(
    opt: &OptimizerConfig,
    delta: &[f64],
    x: &[f64],
    x_probe: &[f64],
    eta: f64,
) -> Result<(Vec<f64>, f64), HarnessError> {
    let g = Matrix::outer(delta, x);
    let mut state = LayerState::new(delta.len(), x.len(), 0);
    let q = step(&mut state, &g, opt, false)?.update;
    let probe = q.matvec(x_probe)?.into_iter().map(|v| eta * v).collect();
    Ok((probe, eta * q.frob_norm() * norm2(x_probe)))
}

/// Shampoo's first-step update `(L+εI)^(-e_L) G (R+εI)^(-e_R)` for the batch
/// gradient `G = ΔXᵀ/B`, using only `B×B` Gram-matrix algebra followed by
/// one rank-`B` expansion `Δ M Xᵀ / B`.
pub fn gram_oracle_shampoo(
    delta: &Matrix,
    x: &Matrix,
    eps: f64,
    e_l: f64,
    e_r: f64,
) -> Result<Matrix, HarnessError> {
    let b = delta.cols();
    if x.cols() != b || b == 0 {
        return Err(HarnessError::Invalid(format!(
            "delta has {} columns, x has {}",
            delta.cols(),
            x.cols()
        )));
    }
    if !(eps > 0.0) || e_l < 0.0 || e_r < 0.0 {
        return Err(HarnessError::Invalid(
            "gram oracle needs eps > 0 and nonnegative exponents".into(),
        ));
    }
    let bb = (b * b) as f64;
    let k_x = x.t_matmul(x)?;
    let k_d = delta.t_matmul(delta)?;
    let (kd_half, kd_pinv_half) = sqrt_and_pinv_sqrt(&k_d)?;
    let (kx_half, kx_pinv_half) = sqrt_and_pinv_sqrt(&k_x)?;
    let s_l = kd_half.matmul(&k_x)?.matmul(&kd_half)?.scale(1.0 / bb);
    let s_r = kx_half.matmul(&k_d)?.matmul(&kx_half)?.scale(1.0 / bb);
    let a_l = correction(&s_l, &kd_pinv_half, eps, e_l)?;
    let a_r = correction(&s_r, &kx_pinv_half, eps, e_r)?;
    let mut left = a_l.matmul(&k_d)?;
    left.add_diag(eps.powf(-e_l));
    let mut right = k_x.matmul(&a_r)?;
    right.add_diag(eps.powf(-e_r));
    let m = left.matmul(&right)?;
    Ok(delta.matmul(&m)?.matmul_t(x)?.scale(1.0 / b as f64))
}

/// `K^(-1/2) ((S+εI)^(-e) − ε^(-e) I) K^(-1/2)` with the pseudo-inverse root.
fn correction(s: &Matrix, k_pinv_half: &Matrix, eps: f64, e: f64) -> Result<Matrix, HarnessError> {
    let mut s = s.clone();
    s.symmetrize();
    let dec = sym_eig(&s)?;
    let floor = eps.powf(-e);
    let f = dec.reconstruct_with(|l| (l.max(0.0) + eps).powf(-e) - floor);
    Ok(k_pinv_half.matmul(&f)?.matmul(k_pinv_half)?)
}

/// `K^(1/2)` and the Moore-Penrose `K^(+1/2)` of a PSD Gram matrix.
fn sqrt_and_pinv_sqrt(k: &Matrix) -> Result<(Matrix, Matrix), HarnessError> {
    let mut k = k.clone();
    k.symmetrize();
    let dec = sym_eig(&k)?;
    let cut = PINV_TOL * dec.eigenvalues[0].max(0.0);
    let half = dec.reconstruct_with(|l| l.max(0.0).sqrt());
    let pinv_half = dec.reconstruct_with(|l| if l > cut { 1.0 / l.sqrt() } else { 0.0 });
    Ok((half, pinv_half))
}

/// Dense reference for [`gram_oracle_shampoo`]: the optimizer's own first
/// Shampoo step on `ΔXᵀ/B` with no momentum.
pub fn dense_shampoo_update(
    delta: &Matrix,
    x: &Matrix,
    eps: f64,
    e_l: f64,
    e_r: f64,
) -> Result<Matrix, HarnessError> {
    let g = delta.matmul_t(x)?.scale(1.0 / delta.cols() as f64);
    let cfg = OptimizerConfig::new(Rule::Shampoo)
        .with_betas(0.0, 0.0)
        .with_exponents(e_l, e_r)
        .with_eps(eps, EpsMode::Absolute);
    let mut state = LayerState::new(g.rows(), g.cols(), 0);
    Ok(step(&mut state, &g, &cfg, false)?.update)
}

/// `‖a − b‖ / ‖b‖`, or `‖a‖` when `b` is zero.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let nb = norm2(b);
    if nb == 0.0 {
        diff
    } else {
        diff / nb
    }
}

/// Worst disagreement of one oracle family against the dense path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub draws: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: &str, draws: usize, max_rel_err: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            draws,
            max_rel_err,
            tolerance,
            pass: max_rel_err <= tolerance,
        }
    }
}

/// Tolerances for the oracle suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleTolerances {
    pub exact: f64,
    /// Newton-Schulz based rules against the exact polar factor.
    pub orthogonalized: f64,
    pub gram: f64,
    pub gram_pinv: f64,
}

impl Default for OracleTolerances {
    fn default() -> Self {
        Self {
            exact: 1e-8,
            orthogonalized: 0.05,
            gram: 1e-8,
            gram_pinv: 1e-6,
        }
    }
}

fn rank1_cases() -> Vec<(String, OptimizerConfig, bool)> {
    let mut cases = Vec::new();
    let shampoo = |e_l: f64, e_r: f64| OptimizerConfig::new(Rule::Shampoo).with_exponents(e_l, e_r);
    for (e_l, e_r) in [(0.25, 0.25), (0.5, 0.5), (0.25, 0.5), (0.5, 0.25)] {
        cases.push((
            format!("shampoo e=({e_l},{e_r}) abs"),
            shampoo(e_l, e_r).with_eps(1.0, EpsMode::Absolute),
            false,
        ));
        cases.push((
            format!("shampoo e=({e_l},{e_r}) rel"),
            shampoo(e_l, e_r),
            false,
        ));
    }
    cases.push((
        "shampoo e=(0.25,0.25) blocked 3x4".into(),
        shampoo(0.25, 0.25).with_blocks(3, 4),
        false,
    ));
    cases.push((
        "shampoo e=(0.5,0) blocked 4x3".into(),
        shampoo(0.5, 0.0).with_blocks(4, 3),
        false,
    ));
    for (e_l, e_r, side) in [
        (1.0, 1.0, "both"),
        (0.0, 1.0, "right"),
        (1.0, 0.0, "left"),
        (0.0, 0.0, "none"),
    ] {
        let soap = OptimizerConfig::new(Rule::Soap).with_exponents(e_l, e_r);
        cases.push((
            format!("soap {side}"),
            soap.clone().with_eps(1.0, EpsMode::Absolute),
            false,
        ));
        cases.push((
            format!("soap {side} blocked 4x3"),
            soap.with_blocks(4, 3).with_eps(1.0, EpsMode::Absolute),
            false,
        ));
    }
    cases.push(("sgd".into(), OptimizerConfig::new(Rule::Sgd), false));
    cases.push((
        "adam".into(),
        OptimizerConfig::new(Rule::Adam).with_eps(1.0, EpsMode::Absolute),
        false,
    ));
    cases.push(("shampoo e=(0,0)".into(), shampoo(0.0, 0.0), false));
    let mut graft = shampoo(0.25, 0.25).with_graft(Rule::Adam);
    graft.graft_ref_eps = 1.0;
    graft.graft_eps = 1.0;
    cases.push(("adam#shampoo".into(), graft, false));
    cases.push(("muon".into(), OptimizerConfig::new(Rule::Muon), true));
    cases.push((
        "adamuon".into(),
        OptimizerConfig::new(Rule::AdaMuon).with_eps(1.0, EpsMode::Absolute),
        true,
    ));
    cases
}

/// [`rank1_oracle`] against [`dense_rank1_update`] over random vectors,
/// dimensions, learning rates, ε and β's. The ε values listed in the cases
/// are placeholders rescaled per draw.
///
/// Errors are relative to `η‖Q(G)‖_F‖x'‖` rather than `‖Q(G)x'‖`: the latter
/// vanishes when `x'` is nearly orthogonal to `x`, while the roundoff of
/// either path does not.
pub fn rank1_suite(
    draws: usize,
    seed: u64,
    tol: &OracleTolerances,
) -> Result<Vec<OracleCheck>, HarnessError> {
    let mut out = Vec::new();
    for (ci, (name, base, orthogonalized)) in rank1_cases().into_iter().enumerate() {
        let mut rng = SeededRng::derived(seed, ci as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let d_out = 2 + (rng.uniform() * 11.0) as usize;
            let d_in = 2 + (rng.uniform() * 11.0) as usize;
            let delta = rng.normal_vec(d_out);
            let x = rng.normal_vec(d_in);
            let xp = rng.normal_vec(d_in);
            let eta = 0.1 + 2.0 * rng.uniform();
            let mut cfg = base.clone();
            cfg.beta1 = 0.95 * rng.uniform();
            cfg.beta2 = 0.99 * rng.uniform();
            let eps = 10f64.powf(-4.0 + 3.0 * rng.uniform());
            if cfg.eps_mode == EpsMode::Absolute && cfg.eps > 0.0 {
                cfg.eps = eps;
            }
            if cfg.graft.is_some() {
                cfg.graft_ref_eps = eps;
                cfg.graft_eps = 10f64.powf(-8.0 + 4.0 * rng.uniform());
            }
            let closed = rank1_oracle(&cfg, &delta, &x, &xp, eta)?;
            let (dense, scale) = dense_with_scale(&cfg, &delta, &x, &xp, eta)?;
            let diff: Vec<f64> = closed.iter().zip(&dense).map(|(a, b)| a - b).collect();
            worst = worst.max(if scale > 0.0 {
                norm2(&diff) / scale
            } else {
                norm2(&diff)
            });
        }
        let t = if orthogonalized {
            tol.orthogonalized
        } else {
            tol.exact
        };
        out.push(OracleCheck::new(&name, draws, worst, t));
    }
    Ok(out)
}

/// [`gram_oracle_shampoo`] against [`dense_shampoo_update`] for
/// `B ∈ {1, 2, 4}`, `d ∈ {8, 32}`, a duplicated-column batch, and the
/// `B = 1` reduction to [`rank1_oracle`].
pub fn gram_suite(seed: u64, tol: &OracleTolerances) -> Result<Vec<OracleCheck>, HarnessError> {
    let mut out = Vec::new();
    let mut rng = SeededRng::derived(seed, 0x96a);
    let exps = [(0.25, 0.25), (0.5, 0.5), (0.25, 0.5)];
    let frob_err = |a: &Matrix, b: &Matrix| -> Result<f64, HarnessError> {
        Ok(a.sub(b)?.frob_norm() / b.frob_norm())
    };
    for b in [1, 2, 4] {
        for d in [8, 32] {
            let mut worst: f64 = 0.0;
            for &(e_l, e_r) in &exps {
                let delta = Matrix::from_fn(d, b, |_, _| rng.normal());
                let x = Matrix::from_fn(d + 3, b, |_, _| rng.normal());
                let q = gram_oracle_shampoo(&delta, &x, 1.0, e_l, e_r)?;
                worst = worst.max(frob_err(
                    &q,
                    &dense_shampoo_update(&delta, &x, 1.0, e_l, e_r)?,
                )?);
            }
            out.push(OracleCheck::new(
                &format!("gram B={b} d={d}"),
                exps.len(),
                worst,
                tol.gram,
            ));
        }
    }
    for d in [8, 32] {
        let mut worst: f64 = 0.0;
        for &(e_l, e_r) in &exps {
            let base_d = Matrix::from_fn(d, 2, |_, _| rng.normal());
            let base_x = Matrix::from_fn(d + 3, 2, |_, _| rng.normal());
            let dup = |m: &Matrix| Matrix::from_fn(m.rows(), 4, |r, c| m[(r, c % 2)]);
            let (delta, x) = (dup(&base_d), dup(&base_x));
            let q = gram_oracle_shampoo(&delta, &x, 1.0, e_l, e_r)?;
            if !q.is_finite() {
                return Err(HarnessError::Invalid(
                    "gram oracle produced non-finite output".into(),
                ));
            }
            worst = worst.max(frob_err(
                &q,
                &dense_shampoo_update(&delta, &x, 1.0, e_l, e_r)?,
            )?);
        }
        out.push(OracleCheck::new(
            &format!("gram duplicated columns d={d}"),
            exps.len(),
            worst,
            tol.gram_pinv,
        ));
    }
    let mut worst: f64 = 0.0;
    for &(e_l, e_r) in &exps {
        let (delta, x, xp) = (rng.normal_vec(8), rng.normal_vec(11), rng.normal_vec(11));
        let q = gram_oracle_shampoo(&Matrix::column(&delta), &Matrix::column(&x), 1.0, e_l, e_r)?;
        let cfg = OptimizerConfig::new(Rule::Shampoo)
            .with_betas(0.0, 0.0)
            .with_exponents(e_l, e_r)
            .with_eps(1.0, EpsMode::Absolute);
        let closed = rank1_oracle(&cfg, &delta, &x, &xp, 1.0)?;
        worst = worst.max(rel_error(&q.matvec(&xp)?, &closed));
    }
    out.push(OracleCheck::new(
        "gram B=1 vs rank-1 closed form",
        exps.len(),
        worst,
        tol.exact,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shampoo_quarter_example() {
        let opt = OptimizerConfig::new(Rule::Shampoo)
            .with_betas(0.0, 0.0)
            .with_exponents(0.25, 0.25)
            .with_eps(1.0, EpsMode::Absolute);
        let q = rank1_oracle(&opt, &[1.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((q[0] - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(q[1], 0.0);
    }

    #[test]
    fn soap_both_sided_without_eps() {
        let opt = OptimizerConfig::new(Rule::Soap).with_eps(0.0, EpsMode::Absolute);
        let (d, x, xp) = ([3.0, 4.0], [1.0, 2.0, 2.0], [1.0, 0.0, 1.0]);
        let q = rank1_oracle(&opt, &d, &x, &xp, 1.0).unwrap();
        let s = 3.0 / (5.0 * 3.0);
        assert!((q[0] - 3.0 * s).abs() < 1e-14 && (q[1] - 4.0 * s).abs() < 1e-14);
    }

    #[test]
    fn zero_exponents_is_sgd() {
        let opt = OptimizerConfig::new(Rule::Shampoo)
            .with_betas(0.0, 0.0)
            .with_exponents(0.0, 0.0);
        let q = rank1_oracle(&opt, &[1.0, -2.0], &[0.5, 0.5], &[2.0, 4.0], 1.0).unwrap();
        assert_eq!(q, vec![3.0, -6.0]);
    }

    #[test]
    fn zero_inputs_rejected() {
        let opt = OptimizerConfig::new(Rule::Sgd);
        assert!(rank1_oracle(&opt, &[0.0, 0.0], &[1.0], &[1.0], 1.0).is_err());
        assert!(rank1_oracle(&opt, &[1.0], &[0.0], &[1.0], 1.0).is_err());
    }
}
