use serde::{Deserialize, Serialize};

use super::{norm2, LinalgError, Matrix};

/// Guard added to `‖Aᵀy‖` in the candidate normalisation, as in the skip rule.
const SKIP_EPS: f64 = 1e-30;

/// Online estimate of the top right singular vector and singular value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerIterState {
    pub v: Vec<f64>,
    pub sigma_hat: f64,
}

impl PowerIterState {
    /// Starts from `v`, normalised. `v` must be nonzero.
    pub fn new(v: Vec<f64>) -> Self {
        let n = norm2(&v);
        assert!(n > 0.0, "power iteration start vector must be nonzero");
        Self {
            v: v.into_iter().map(|x| x / n).collect(),
            sigma_hat: 0.0,
        }
    }

    pub fn random(n: usize, rng: &mut crate::rng::SeededRng) -> Self {
        Self::new(rng.unit_vec(n))
    }
}

/// One step: `y = Av`, `σ̂ = ‖y‖`, `v ← Aᵀy/‖Aᵀy‖`. The vector update is
/// skipped when the guarded candidate `Aᵀy/(‖Aᵀy‖+ε)` would have norm below 0.5,
/// which happens when `A` is (numerically) zero.
pub fn power_iter_step(a: &Matrix, state: &PowerIterState) -> Result<PowerIterState, LinalgError> {
    if state.v.len() != a.cols() {
        return Err(LinalgError::Shape(format!(
            "power iteration vector has length {}, matrix has {} columns",
            state.v.len(),
            a.cols()
        )));
    }
    let y = a.matvec(&state.v)?;
    let sigma_hat = norm2(&y);
    let z = a.t_matvec(&y)?;
    let zn = norm2(&z);
    let v = if zn / (zn + SKIP_EPS) < 0.5 || !zn.is_finite() {
        state.v.clone()
    } else {
        z.into_iter().map(|x| x / zn).collect()
    };
    Ok(PowerIterState { v, sigma_hat })
}
