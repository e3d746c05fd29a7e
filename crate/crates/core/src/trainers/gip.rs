use crate::model::GradVector;

use super::TrainError;

fn check_lengths(grads: &[GradVector]) -> Result<(), TrainError> {
    if let Some(first) = grads.first() {
        if let Some(g) = grads.iter().find(|g| g.len() != first.len()) {
            return Err(TrainError::LengthMismatch(first.len(), g.len()));
        }
    }
    Ok(())
}

/// Mean pairwise inner product (2/(S(S−1)))·Σ_{i<j} Gᵢ·Gⱼ, by explicit pairs.
pub fn gip(grads: &[GradVector]) -> Result<f64, TrainError> {
    if grads.len() < 2 {
        return Err(TrainError::TooFewGradients {
            needed: 2,
            got: grads.len(),
        });
    }
    check_lengths(grads)?;
    let mut sum = 0.0;
    for (i, a) in grads.iter().enumerate() {
        for b in &grads[i + 1..] {
            sum += a.dot(b);
        }
    }
    let s = grads.len() as f64;
    Ok(2.0 * sum / (s * (s - 1.0)))
}

/// Ĝ = ‖ΣGᵢ‖² − Σ‖Gᵢ‖² in one pass; equals 2·Σ_{i<j} Gᵢ·Gⱼ.
/// An empty slice gives 0.
pub fn gip_linear(grads: &[GradVector]) -> Result<f64, TrainError> {
    check_lengths(grads)?;
    let Some(first) = grads.first() else {
        return Ok(0.0);
    };
    let mut total = GradVector::zeros(first.len());
    let mut self_sq = 0.0;
    for g in grads {
        total.add_scaled(g, 1.0);
        self_sq += g.norm_sq();
    }
    Ok(total.norm_sq() - self_sq)
}
