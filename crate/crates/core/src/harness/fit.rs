use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn exponent_fit(xs: &[f64], values: &[f64]) -> Result<ExponentFit, HarnessError> {
    if xs.len() != values.len() {
        return Err(HarnessError::Invalid(format!(
            "{} abscissae for {} values",
            xs.len(),
            values.len()
        )));
    }
    if xs.len() < 2 {
        return Err(HarnessError::Invalid(
            "exponent fit needs at least two points".into(),
        ));
    }
    if xs
        .iter()
        .chain(values)
        .any(|v| !(*v > 0.0 && v.is_finite()))
    {
        return Err(HarnessError::Invalid(
            "exponent fit needs positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Invalid(
            "exponent fit needs distinct abscissae".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a constant series is fitted exactly by the zero-slope line
    let r2 = if ss_tot <= 1e-30 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(ExponentFit {
        slope,
        intercept,
        r2,
    })
}

/// Baseline compute needed to reach the candidate's loss, relative to the
/// candidate's compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierEstimate {
    pub multiplier: f64,
    pub baseline_compute: f64,
    /// The candidate loss fell outside the baseline's loss range.
    pub extrapolated: bool,
    /// Points were dropped because baseline loss did not decrease with compute.
    pub non_monotone: bool,
}

/// `C_baseline(loss) / C`, interpolating the baseline linearly in log-log
/// space over its monotone envelope.
pub fn compute_multiplier(
    baseline: &[(f64, f64)],
    candidate: (f64, f64),
) -> Result<MultiplierEstimate, HarnessError> {
    if baseline.len() < 2 {
        return Err(HarnessError::Invalid(
            "baseline series needs at least two points".into(),
        ));
    }
    let (c, loss) = candidate;
    if baseline
        .iter()
        .chain(std::iter::once(&candidate))
        .any(|&(a, b)| !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()))
    {
        return Err(HarnessError::Invalid(
            "compute and loss must be positive and finite".into(),
        ));
    }
    let mut pts = baseline.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut env: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        if env.last().is_none_or(|last| p.1 < last.1 && p.0 > last.0) {
            env.push(p);
        }
    }
    let non_monotone = env.len() < baseline.len();
    if env.len() < 2 {
        return Err(HarnessError::Invalid(
            "monotone envelope of the baseline has fewer than two points".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = env.iter().map(|&(a, b)| (a.ln(), b.ln())).collect();
    let target = loss.ln();
    // losses decrease along `logs`
    let seg = logs
        .windows(2)
        .position(|w| target <= w[0].1 && target >= w[1].1);
    let (i, extrapolated) = match seg {
        Some(i) => (i, false),
        None if target > logs[0].1 => (0, true),
        None => (logs.len() - 2, true),
    };
    let ((x0, y0), (x1, y1)) = (logs[i], logs[i + 1]);
    let log_c = x0 + (target - y0) * (x1 - x0) / (y1 - y0);
    let baseline_compute = log_c.exp();
    Ok(MultiplierEstimate {
        multiplier: baseline_compute / c,
        baseline_compute,
        extrapolated,
        non_monotone,
    })
}
