use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};

/// `a · b / (‖a‖ ‖b‖)`.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity operands", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
