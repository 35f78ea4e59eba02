use nalgebra::{Matrix4, Vector4};

/// Condition number above which a 4x4 system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// LU solve of `a x = b` that also reports the 1-norm condition number.
/// Returns `Err(cond)` when the matrix is singular or the condition number
/// exceeds [`MAX_CONDITION`].
pub(crate) fn solve4(a: &Matrix4<f64>, b: &Vector4<f64>) -> Result<Vector4<f64>, f64> {
    let lu = a.lu();
    let inv = lu.try_inverse().ok_or(f64::INFINITY)?;
    let cond = one_norm(a) * one_norm(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(cond);
    }
    lu.solve(b).ok_or(f64::INFINITY)
}

fn one_norm(a: &Matrix4<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
