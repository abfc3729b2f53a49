use super::NumError;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Largest relative error over all coordinates.
    pub max_rel_err: f64,
    /// Coordinate where the largest error occurred.
    pub worst_coord: usize,
    /// Tolerance the check ran at.
    pub tol: f64,
    pub pass: bool,
}

/// Checks an analytic gradient against central finite differences of `f`.
///
/// The relative error per coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. `step` must lie in `(0, 1e-2]` and `f`
/// must be deterministic.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    params: &[f64],
    step: f64,
    tol: f64,
) -> Result<FdReport, NumError> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(NumError::InvalidArgument(format!(
            "finite-difference step must lie in (0, 1e-2], got {step}"
        )));
    }
    if analytic.len() != params.len() {
        return Err(NumError::InvalidArgument(format!(
            "gradient length {} does not match parameter length {}",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for i in 0..params.len() {
        work[i] = params[i] + step;
        let up = f(&work);
        work[i] = params[i] - step;
        let down = f(&work);
        work[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(NumError::NonFiniteEval { coord: i });
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    Ok(FdReport {
        max_rel_err,
        worst_coord,
        tol,
        pass: max_rel_err <= tol,
    })
}
