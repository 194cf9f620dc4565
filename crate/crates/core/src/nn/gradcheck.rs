//! Central-finite-difference validation of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, ValueId};
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

/// Compares the reverse-mode gradient of the scalar `f(inputs)` against
/// central finite differences, elementwise. Returns the maximum relative
/// error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[ValueId]) -> Result<ValueId>,
{
    let eval = |tensors: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).scalar_value())
    };
    // Analytic gradients once.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::shape("grad_check: f must return a scalar"));
    }
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let floor = T::c(1e-8);
    let two = T::c(2.0);
    let mut max_rel = T::zero();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[ti].data_mut()[j] = orig + step;
            let hi = eval(&work)?;
            work[ti].data_mut()[j] = orig - step;
            let lo = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (hi - lo) / (two * step);
            let a = analytic[ti].data()[j];
            let rel = (numeric - a).abs() / numeric.abs().max(a.abs()).max(floor);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
