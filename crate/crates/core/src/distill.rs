//! Temperature-scaled distillation losses and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{kl_divergence, tempered_softmax, PROB_FLOOR};
use crate::tensor::Tensor;

fn check_pair(student: &Tensor, teacher: &Tensor) -> Result<()> {
    if student.shape().len() != 2 || student.rows() == 0 {
        return Err(Error::InvalidInput(format!("expected [N, C] logits, got {:?}", student.shape())));
    }
    teacher.ensure_shape(student.shape())
}

/// Batch-mean `KL(softmax(teacher/τ_t) || softmax(student/τ_s))`.
///
/// The teacher's tempered distribution is the target.
pub fn kd_loss(student_logits: &Tensor, teacher_logits: &Tensor, tau_s: f64, tau_t: f64) -> Result<f64> {
    kd_loss_and_grad(student_logits, teacher_logits, tau_s, tau_t).map(|(l, _)| l)
}

/// [`kd_loss`] and its gradient with respect to the student logits,
/// `(softmax(z_s/τ_s) - softmax(z_t/τ_t)) / (τ_s · N)` per row.
pub fn kd_loss_and_grad(
    student_logits: &Tensor,
    teacher_logits: &Tensor,
    tau_s: f64,
    tau_t: f64,
) -> Result<(f64, Tensor)> {
    check_pair(student_logits, teacher_logits)?;
    let n = student_logits.rows();
    let scale = 1.0 / (tau_s * n as f64);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(student_logits.len());
    for i in 0..n {
        let s = tempered_softmax(student_logits.row(i), tau_s)?;
        let t = tempered_softmax(teacher_logits.row(i), tau_t)?;
        total += kl_divergence(&t, &s)?;
        grad.extend(s.probs().iter().zip(t.probs()).map(|(sp, tp)| (sp - tp) * scale));
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("distillation loss is not finite".into()));
    }
    Ok((loss, Tensor::new(student_logits.shape().to_vec(), grad)?))
}

/// Gradient of [`kd_loss`] with respect to the teacher logits:
/// `t_j (a_j - Σ_k t_k a_k) / (τ_t · N)` with `a = log t - log s`.
pub fn kd_teacher_grad(student_logits: &Tensor, teacher_logits: &Tensor, tau_s: f64, tau_t: f64) -> Result<Tensor> {
    check_pair(student_logits, teacher_logits)?;
    let n = student_logits.rows();
    let scale = 1.0 / (tau_t * n as f64);
    let mut grad = Vec::with_capacity(teacher_logits.len());
    for i in 0..n {
        let s = tempered_softmax(student_logits.row(i), tau_s)?;
        let t = tempered_softmax(teacher_logits.row(i), tau_t)?;
        let a: Vec<f64> = t
            .probs()
            .iter()
            .zip(s.probs())
            .map(|(&tp, &sp)| tp.max(PROB_FLOOR).ln() - sp.max(PROB_FLOOR).ln())
            .collect();
        let mean: f64 = t.probs().iter().zip(&a).map(|(tp, ak)| tp * ak).sum();
        grad.extend(t.probs().iter().zip(&a).map(|(tp, ak)| tp * (ak - mean) * scale));
    }
    Tensor::new(teacher_logits.shape().to_vec(), grad)
}

/// The clean-branch and adversarial-branch distillation losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillLossParts {
    pub l_nat: f64,
    pub l_adv: f64,
}

impl DistillLossParts {
    pub fn new(l_nat: f64, l_adv: f64) -> Result<Self> {
        for (name, v) in [("l_nat", l_nat), ("l_adv", l_adv)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(DistillLossParts { l_nat, l_adv })
    }
}

/// `w_nat · l_nat + w_adv · l_adv`.
pub fn mtard_total(parts: DistillLossParts, w_nat: f64, w_adv: f64) -> Result<f64> {
    if !w_nat.is_finite() || !w_adv.is_finite() {
        return Err(Error::InvalidInput("loss weights must be finite".into()));
    }
    Ok(w_nat * parts.l_nat + w_adv * parts.l_adv)
}
