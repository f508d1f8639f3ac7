//! Dense linear algebra on row-major `f64` matrices.

mod eig;
mod matrix;
mod ns;
mod power;

use thiserror::Error;

pub use eig::{
    sym_eig, sym_eig_jacobi, sym_eig_tridiagonal, EigDecomp, JACOBI_MAX_SWEEPS, JACOBI_TOL,
    SYMMETRY_TOL,
};
pub use matrix::{dot, norm2, Matrix};
pub use ns::{newton_schulz, newton_schulz_with, NsConfig, NS_COEFFS};
pub use power::{power_iter_step, PowerIterState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("non-finite entry")]
    NonFinite,
    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("singular matrix: eigenvalue {0:.3e} raised to a negative power with eps = 0")]
    Singular(f64),
    #[error("operation undefined for the zero matrix")]
    ZeroMatrix,
}

/// `V · diag((max(λ,0) + eps)^(-e)) · Vᵀ` for symmetric PSD `a`.
pub fn mat_inv_power(a: &Matrix, e: f64, eps: f64) -> Result<Matrix, LinalgError> {
    if e == 0.0 {
        if !a.is_square() {
            return Err(LinalgError::NotSquare(a.rows(), a.cols()));
        }
        return Ok(Matrix::identity(a.rows()));
    }
    let dec = sym_eig(a)?;
    inv_power_from_eig(&dec, e, eps)
}

/// Same as [`mat_inv_power`] but reusing an existing decomposition.
pub fn inv_power_from_eig(dec: &EigDecomp, e: f64, eps: f64) -> Result<Matrix, LinalgError> {
    if e == 0.0 {
        return Ok(Matrix::identity(dec.eigenvalues.len()));
    }
    for &l in &dec.eigenvalues {
        if l.max(0.0) + eps <= 0.0 {
            return Err(LinalgError::Singular(l));
        }
    }
    Ok(dec.reconstruct_with(|l| (l.max(0.0) + eps).powf(-e)))
}

pub fn frob_norm(a: &Matrix) -> f64 {
    a.frob_norm()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    a.matmul(b)
}

/// Largest singular value through the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm_exact(a: &Matrix) -> Result<f64, LinalgError> {
    if a.is_zero() {
        return Ok(0.0);
    }
    let gram = if a.rows() <= a.cols() {
        a.matmul_t(a)?
    } else {
        a.t_matmul(a)?
    };
    let top = sym_eig(&gram)?.eigenvalues[0];
    Ok(top.max(0.0).sqrt())
}

/// `‖A‖_F² / ‖A‖₂²`
pub fn stable_rank(a: &Matrix) -> Result<f64, LinalgError> {
    if a.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    // Rescale first so tiny updates do not underflow in the Gram product.
    let scaled = a.scale(1.0 / a.max_abs());
    let s = spectral_norm_exact(&scaled)?;
    let f = scaled.frob_norm();
    Ok((f * f) / (s * s))
}
