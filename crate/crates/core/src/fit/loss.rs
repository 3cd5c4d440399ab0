use crate::error::{Error, Result};
use crate::geom::Quaternion;
use crate::render::Projection;

/// Sum of squared differences and its gradient `2 (pred - target)`.
pub fn mse_loss(pred: &Projection, target: &Projection) -> Result<(f64, Projection)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?}x{} vs target {:?}x{}",
            pred.dims, pred.channels, target.dims, target.channels
        )));
    }
    let mut cot = pred.clone();
    let mut loss = 0.0;
    for (c, t) in cot.data.iter_mut().zip(&target.data) {
        let d = *c - t;
        loss += d * d;
        *c = 2.0 * d;
    }
    Ok((loss, cot))
}

/// Index and value of the smallest loss; ties go to the lowest index.
pub fn hindsight_select(losses: &[f64]) -> Result<(usize, f64)> {
    if losses.is_empty() {
        return Err(Error::InvalidInput("no candidate losses".into()));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFiniteCandidateLoss);
    }
    let mut best = (0, losses[0]);
    for (i, &l) in losses.iter().enumerate().skip(1) {
        if l < best.1 {
            best = (i, l);
        }
    }
    Ok(best)
}

/// `1 - Re(s t⁻¹ / |s t⁻¹|)` and its gradient with respect to the student;
/// the teacher is a constant.
///
/// This is `1 - cos(θ/2)` for the relative rotation angle `θ`, taken
/// literally: `t` and `-t` give different losses.
pub fn quat_distill_loss(student: &Quaternion, teacher: &Quaternion) -> Result<(f64, [f64; 4])> {
    let (ns, nt) = (student.norm(), teacher.norm());
    if ns == 0.0 || nt == 0.0 || !ns.is_finite() || !nt.is_finite() {
        return Err(Error::InvalidInput("distillation needs nonzero quaternions".into()));
    }
    let dot = student.dot(teacher);
    let c = dot / (ns * nt);
    let s = student.to_array();
    let t = teacher.to_array();
    let grad = [0, 1, 2, 3].map(|i| -(t[i] / (ns * nt) - dot * s[i] / (ns * ns * ns * nt)));
    Ok((1.0 - c, grad))
}
