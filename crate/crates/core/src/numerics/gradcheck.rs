use crate::error::{Error, Result};

use super::Scalar;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The per-coordinate error is `|a − n| / max(|a|, |n|, 1e-8)`. `coords`
/// restricts the comparison to a subset; `None` checks every coordinate.
/// The denominator uses the step actually representable in `T`.
pub fn finite_diff_check<T, F>(
    mut loss: F,
    params: &[T],
    analytic: &[T],
    h: T,
    coords: Option<&[usize]>,
) -> Result<GradCheck>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check", params.len(), analytic.len()));
    }
    if h.is_nan() || h <= T::zero() {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut x = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        let plus = orig + h;
        let minus = orig - h;
        x[i] = plus;
        let lp = loss(&x)?;
        x[i] = minus;
        let lm = loss(&x)?;
        x[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        let numeric = (lp - lm) / (plus - minus).f64();
        let a = analytic[i].f64();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
