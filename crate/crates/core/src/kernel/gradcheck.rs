//! Central finite-difference gradient checking.
//!
//! Runs in double precision regardless of the caller's mode so the
//! comparison against analytic gradients stays tight.

use super::params::ParamSet;
use super::tape::{Tape, ValueId};
use super::tensor::{with_precision, KernelError, Precision, Tensor};

/// Relative error floor: gradients this small on both routes count as equal.
const DENOM_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of a scalar function against central finite
/// differences over every element of every parameter in `params`.
///
/// `f` must rebuild the same forward pass on each call (any internal
/// randomness must be re-seeded inside the closure). Returns the maximum
/// relative error across all parameter elements.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    mut f: F,
    eps: f64,
) -> Result<f64, KernelError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<ValueId, KernelError>,
{
    with_precision(Precision::Double, || {
        params.zero_grads();
        let mut tape = Tape::new();
        let loss = f(&mut tape, params)?;
        if !tape.value(loss).is_scalar() {
            return Err(KernelError::Contract(format!(
                "finite_diff_check requires a scalar loss, got {:?}",
                tape.value(loss).shape()
            )));
        }
        tape.backward(loss, params)?;
        let analytic: Vec<Tensor> = params.iter().map(|p| p.grad.clone()).collect();

        let mut max_rel: f64 = 0.0;
        for pid in params.ids().collect::<Vec<_>>() {
            for i in 0..params.get(pid).value.numel() {
                let orig = params.get(pid).value.data()[i];

                params.get_mut(pid).value.data_mut()[i] = orig + eps;
                let plus = eval(&mut f, params)?;
                params.get_mut(pid).value.data_mut()[i] = orig - eps;
                let minus = eval(&mut f, params)?;
                params.get_mut(pid).value.data_mut()[i] = orig;

                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[pid.index()].data()[i];
                let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
                let rel = (a - numeric).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
        Ok(max_rel)
    })
}

fn eval<F>(f: &mut F, params: &ParamSet) -> Result<f64, KernelError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<ValueId, KernelError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    Ok(tape.value(loss).item())
}
