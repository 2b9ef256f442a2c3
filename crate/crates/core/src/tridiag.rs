/// Solves a tridiagonal system in place with the Thomas algorithm.
///
/// `sub[i]` multiplies `x[i-1]` in row `i` (`sub[0]` unused), `sup[i]`
/// multiplies `x[i+1]` (`sup[n-1]` unused). On success `rhs` holds the
/// solution. `scratch` must have the same length as `rhs`.
///
/// Returns the failing row when a pivot is zero or not finite.
pub fn solve_in_place(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<(), (usize, f64)> {
    let n = rhs.len();
    debug_assert!(sub.len() == n && diag.len() == n && sup.len() == n && scratch.len() == n);
    if n == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    if !(pivot.is_finite() && pivot != 0.0) {
        return Err((0, pivot));
    }
    scratch[0] = sup[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * scratch[i - 1];
        if !(pivot.is_finite() && pivot != 0.0) {
            return Err((i, pivot));
        }
        scratch[i] = if i + 1 < n { sup[i] / pivot } else { 0.0 };
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}
