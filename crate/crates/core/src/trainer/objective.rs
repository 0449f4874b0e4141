//! Gradients of the per-batch training objectives.

use crate::distill::{kd_loss_and_grad, kd_teacher_grad};
use crate::entropy_balance::TemperatureState;
use crate::error::{Error, Result};
use crate::nets::{backward, forward, forward_traced, input_gradient, NetworkParams, ParamSet};
use crate::numeric::{cross_entropy, cross_entropy_grad};
use crate::tensor::Tensor;

fn scale_tensor(t: &Tensor, s: f64) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v *= s;
    }
    out
}

fn scale_set(p: &ParamSet, s: f64) -> ParamSet {
    let mut out = p.clone();
    for v in out.values_mut() {
        *v *= s;
    }
    out
}

/// Mean cross-entropy and its parameter gradient.
pub fn cross_entropy_objective(params: &NetworkParams, x: &Tensor, labels: &[usize]) -> Result<(f64, ParamSet)> {
    let trace = forward_traced(params, x)?;
    let n = labels.len();
    if n == 0 || n != trace.rows() {
        return Err(Error::Shape { expected: vec![trace.rows()], got: vec![n] });
    }
    let logits = trace.logits();
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(logits.len());
    for (i, &y) in labels.iter().enumerate() {
        loss += cross_entropy(logits.row(i), y)?;
        up.extend(cross_entropy_grad(logits.row(i), y)?.into_iter().map(|g| g / n as f64));
    }
    let up = Tensor::new(logits.shape().to_vec(), up)?;
    let (grads, _) = backward(params, &trace, &up)?;
    Ok((loss / n as f64, grads))
}

/// One distillation branch `KL(T(x; τ_t) || S(x; τ_s))` (times `τ_t²` if asked).
pub struct Branch {
    pub loss: f64,
    pub teacher_logits: Tensor,
    pub param_grads: ParamSet,
    /// `∂loss/∂x` through both student and teacher, when requested.
    pub input_grads: Option<Tensor>,
}

pub fn distill_branch(
    student: &NetworkParams,
    teacher: &NetworkParams,
    x: &Tensor,
    tau_s: f64,
    tau_t: f64,
    tau_squared: bool,
    with_input_grads: bool,
) -> Result<Branch> {
    let trace = forward_traced(student, x)?;
    let teacher_logits = forward(teacher, x)?;
    let (loss, g) = kd_loss_and_grad(trace.logits(), &teacher_logits, tau_s, tau_t)?;
    let k = if tau_squared { tau_t * tau_t } else { 1.0 };
    let g = if k == 1.0 { g } else { scale_tensor(&g, k) };
    let (param_grads, gx_student) = backward(student, &trace, &g)?;
    let input_grads = if with_input_grads {
        let tt = forward_traced(teacher, x)?;
        let gt = scale_tensor(&kd_teacher_grad(trace.logits(), &teacher_logits, tau_s, tau_t)?, k);
        let gx_teacher = input_gradient(teacher, &tt, &gt)?;
        let mut gx = gx_student;
        for (a, b) in gx.data_mut().iter_mut().zip(gx_teacher.data()) {
            *a += b;
        }
        Some(gx)
    } else {
        None
    };
    Ok(Branch { loss: k * loss, teacher_logits, param_grads, input_grads })
}

/// `w_nat · L_nat + w_adv · L_adv` evaluated at fixed `x_nat`, `x_adv`.
pub struct Composite {
    pub loss: f64,
    pub nat: Branch,
    pub adv: Branch,
    pub param_grads: ParamSet,
}

#[allow(clippy::too_many_arguments)]
pub fn mtard_objective(
    student: &NetworkParams,
    clean_teacher: &NetworkParams,
    robust_teacher: &NetworkParams,
    x_nat: &Tensor,
    x_adv: &Tensor,
    temps: &TemperatureState,
    w_nat: f64,
    w_adv: f64,
    tau_squared: bool,
    with_input_grads: bool,
) -> Result<Composite> {
    let nat = distill_branch(student, clean_teacher, x_nat, temps.tau_s, temps.tau_nat, tau_squared, with_input_grads)?;
    let adv = distill_branch(student, robust_teacher, x_adv, temps.tau_s, temps.tau_adv, tau_squared, with_input_grads)?;
    let param_grads = combine(&nat.param_grads, &adv.param_grads, w_nat, w_adv);
    Ok(Composite { loss: w_nat * nat.loss + w_adv * adv.loss, nat, adv, param_grads })
}

/// `w_nat · a + w_adv · b`.
pub fn combine(a: &ParamSet, b: &ParamSet, w_nat: f64, w_adv: f64) -> ParamSet {
    let mut out = scale_set(a, w_nat);
    out.add_assign(&scale_set(b, w_adv));
    out
}
