use crate::error::{Error, Result};
use crate::nets::{NetworkParams, ParamSet};

/// SGD with momentum and coupled weight decay:
/// `v ← μ·v + (g + wd·θ)`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &ParamSet,
    velocity: &mut ParamSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.params().len();
    if grads.len() != n || velocity.len() != n {
        return Err(Error::Shape { expected: vec![n], got: vec![grads.len(), velocity.len()] });
    }
    let theta = params.params().flatten();
    for ((v, g), t) in velocity.zip_mut(grads).zip(&theta) {
        *v = momentum * *v + (g + weight_decay * t);
    }
    for (t, v) in params.params_mut().zip_mut(velocity) {
        *t -= lr * v;
    }
    Ok(())
}
