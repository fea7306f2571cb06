//! Central finite-difference probes for gradient verification.
//!
//! This is a test oracle: it evaluates the loss twice per probe through
//! whatever closure the caller provides and never touches the reverse
//! pass it is used to check.

use crate::error::Result;
use crate::nn::ParamSet;

/// d(loss)/d(set[param][entry]) by central differences with step `h`.
pub fn central_difference(
    set: &mut ParamSet,
    param: usize,
    entry: usize,
    h: f64,
    loss: &mut dyn FnMut(&ParamSet) -> Result<f64>,
) -> Result<f64> {
    let original = set.at(param).data()[entry];
    set.at_mut(param).data_mut()[entry] = original + h;
    let plus = loss(set)?;
    set.at_mut(param).data_mut()[entry] = original - h;
    let minus = loss(set)?;
    set.at_mut(param).data_mut()[entry] = original;
    Ok((plus - minus) / (2.0 * h))
}

/// Relative error with a floor that keeps near-zero pairs comparable.
/// Gradients that are structurally zero (an attention key bias, say)
/// read as central-difference noise around 1e-10; the floor keeps such
/// pairs from registering as mismatches.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}
