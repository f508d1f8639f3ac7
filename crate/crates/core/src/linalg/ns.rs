//! Newton-Schulz approximation of the matrix sign (polar factor) `U Vᵀ`.
//!
//! The quintic stage inflates small singular values quickly but leaves them
//! oscillating in roughly `[0.7, 1.12]`. A few cubic iterations
//! `X ← 1.5 X − 0.5 X XᵀX` afterwards pull that band onto 1.

use super::{LinalgError, Matrix};

/// `(a, b, c)` in `X ← aX + bX(XᵀX) + cX(XᵀX)²`.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsConfig {
    pub iters: usize,
    pub polish_iters: usize,
    /// Added to the Frobenius norm in the pre-normalisation divisor.
    pub eps: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            iters: 5,
            polish_iters: 3,
            eps: 1e-7,
        }
    }
}

/// Quintic iteration count `iters` with the default polish and epsilon.
pub fn newton_schulz(m: &Matrix, iters: usize) -> Result<Matrix, LinalgError> {
    newton_schulz_with(
        m,
        &NsConfig {
            iters,
            ..NsConfig::default()
        },
    )
}

pub fn newton_schulz_with(m: &Matrix, cfg: &NsConfig) -> Result<Matrix, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let norm = m.frob_norm();
    if norm == 0.0 {
        return Ok(Matrix::zeros(m.rows(), m.cols()));
    }
    let wide = m.rows() < m.cols();
    let mut x = if wide { m.transpose() } else { m.clone() };
    x.scale_in_place(1.0 / (norm + cfg.eps));

    let (a, b, c) = NS_COEFFS;
    for _ in 0..cfg.iters {
        let gram = x.t_matmul(&x)?;
        let mut poly = gram.matmul(&gram)?;
        poly.axpby(c, b, &gram)?;
        let mut next = x.matmul(&poly)?;
        next.axpby(1.0, a, &x)?;
        x = next;
    }
    for _ in 0..cfg.polish_iters {
        let gram = x.t_matmul(&x)?;
        let mut next = x.matmul(&gram)?;
        next.axpby(-0.5, 1.5, &x)?;
        x = next;
    }
    Ok(if wide { x.transpose() } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spectral_norm_exact, sym_eig};
    use crate::rng::SeededRng;

    /// `U Vᵀ` from the eigendecompositions of `GGᵀ` and `GᵀG` for full-rank `g`.
    fn polar_oracle(g: &Matrix) -> Matrix {
        let k = g.rows().min(g.cols());
        let right = sym_eig(&g.t_matmul(g).unwrap()).unwrap();
        // u_i = G v_i / σ_i pairs each left vector with its right partner and sign.
        let mut out = Matrix::zeros(g.rows(), g.cols());
        for i in 0..k {
            let v = right.eigenvectors.col(i);
            let sigma = right.eigenvalues[i].sqrt();
            let u: Vec<f64> = g.matvec(&v).unwrap().iter().map(|x| x / sigma).collect();
            out = out.add(&Matrix::outer(&u, &v)).unwrap();
        }
        // cross-check the left singular values through GGᵀ
        let left = sym_eig(&g.matmul_t(g).unwrap()).unwrap();
        for i in 0..k {
            assert!(
                (left.eigenvalues[i] - right.eigenvalues[i]).abs() < 1e-9 * left.eigenvalues[0]
            );
        }
        out
    }

    #[test]
    fn orthogonal_inputs_are_fixed_points() {
        let y = newton_schulz(&Matrix::identity(3), 5).unwrap();
        assert!(y.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-3);
        let y = newton_schulz(&Matrix::from_diag(&[2.0, 0.5]), 5).unwrap();
        assert!(y.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-2);
    }

    #[test]
    fn matches_polar_factor_of_random_wide_matrix() {
        let mut rng = SeededRng::new(42);
        let g = Matrix::from_fn(4, 6, |_, _| rng.normal());
        let y = newton_schulz(&g, 5).unwrap();
        let err = spectral_norm_exact(&y.sub(&polar_oracle(&g)).unwrap()).unwrap();
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn zero_maps_to_zero() {
        let y = newton_schulz(&Matrix::zeros(3, 2), 5).unwrap();
        assert!(y.is_zero() && y.shape() == (3, 2));
    }

    #[test]
    fn singular_values_in_band() {
        let mut rng = SeededRng::new(9);
        for (r, c) in [(16, 16), (32, 8), (8, 40)] {
            let g = Matrix::from_fn(r, c, |_, _| rng.normal());
            let y = newton_schulz(&g, 5).unwrap();
            let gram = if r >= c {
                y.t_matmul(&y)
            } else {
                y.matmul_t(&y)
            }
            .unwrap();
            for l in sym_eig(&gram).unwrap().eigenvalues {
                let s = l.sqrt();
                assert!((0.5..=1.5).contains(&s), "{s}");
            }
            let k = r.min(c);
            let dev = gram.sub(&Matrix::identity(k)).unwrap();
            assert!(spectral_norm_exact(&dev).unwrap() < 0.5);
        }
    }
}
