//! White-box L∞ attacks: FGSM, PGD on cross-entropy, and PGD on the CW margin.
//!
//! All attacks read the model through an immutable snapshot and return a new
//! batch; the clean batch and the parameters are never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{forward_traced, input_gradient, NetworkParams};
use crate::numeric::{cross_entropy, cross_entropy_grad, margin, sign};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    CwMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start_scale: f64,
    pub loss_kind: LossKind,
}

impl AttackConfig {
    /// Inner maximization used during training: 10 steps of 2/255 inside
    /// ε = 8/255 with a 0.001 random start.
    pub fn training_pgd() -> Self {
        AttackConfig {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_start_scale: 0.001,
            loss_kind: LossKind::CrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("epsilon", self.epsilon),
            ("step_size", self.step_size),
            ("random_start_scale", self.random_start_scale),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("attack {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Named evaluation attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    PgdSat,
    PgdTrades,
    CwInf,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] =
        [AttackKind::Fgsm, AttackKind::PgdSat, AttackKind::PgdTrades, AttackKind::CwInf];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::PgdSat => "pgd-sat",
            AttackKind::PgdTrades => "pgd-trades",
            AttackKind::CwInf => "cw-inf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s || k.name().replace('-', "_") == s)
    }

    /// Evaluation settings at radius `epsilon`. FGSM is a single step of size
    /// `epsilon` with no random start.
    pub fn config(self, epsilon: f64) -> AttackConfig {
        let (step_size, steps, random_start_scale, loss_kind) = match self {
            AttackKind::Fgsm => (epsilon, 1, 0.0, LossKind::CrossEntropy),
            AttackKind::PgdSat => (2.0 / 255.0, 20, 0.001, LossKind::CrossEntropy),
            AttackKind::PgdTrades => (0.003, 20, 0.001, LossKind::CrossEntropy),
            AttackKind::CwInf => (2.0 / 255.0, 30, 0.001, LossKind::CwMargin),
        };
        AttackConfig { epsilon, step_size, steps, random_start_scale, loss_kind }
    }
}

fn check_inputs(params: &NetworkParams, x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::Shape { expected: vec![x.rows()], got: vec![labels.len()] });
    }
    let classes = params.spec().classes;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("attack inputs must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Per-example attack loss and its gradient with respect to the input.
pub fn loss_and_input_gradient(
    params: &NetworkParams,
    x: &Tensor,
    labels: &[usize],
    kind: LossKind,
) -> Result<(Vec<f64>, Tensor)> {
    let trace = forward_traced(params, x)?;
    let logits = trace.logits();
    let classes = params.spec().classes;
    let mut losses = Vec::with_capacity(labels.len());
    let mut upstream = Vec::with_capacity(labels.len() * classes);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        match kind {
            LossKind::CrossEntropy => {
                losses.push(cross_entropy(z, y)?);
                upstream.extend(cross_entropy_grad(z, y)?);
            }
            LossKind::CwMargin => {
                let (m, runner_up) = margin(z, y)?;
                losses.push(m);
                let mut g = vec![0.0; classes];
                g[runner_up] = 1.0;
                g[y] = -1.0;
                upstream.extend(g);
            }
        }
    }
    let upstream = Tensor::new(vec![labels.len(), classes], upstream)?;
    Ok((losses, input_gradient(params, &trace, &upstream)?))
}

/// Mean attack loss over the batch.
pub fn mean_loss(params: &NetworkParams, x: &Tensor, labels: &[usize], kind: LossKind) -> Result<f64> {
    let (losses, _) = loss_and_input_gradient(params, x, labels, kind)?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn project(adv: f64, clean: f64, epsilon: f64) -> f64 {
    adv.clamp(clean - epsilon, clean + epsilon).clamp(0.0, 1.0)
}

/// `clip_[0,1](x + ε · sign(∇_x CE(S(x), y)))`.
pub fn fgsm(params: &NetworkParams, x: &Tensor, labels: &[usize], epsilon: f64) -> Result<Tensor> {
    let cfg = AttackKind::Fgsm.config(epsilon);
    cfg.validate()?;
    check_inputs(params, x, labels)?;
    let (_, grad) = loss_and_input_gradient(params, x, labels, LossKind::CrossEntropy)?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xv, &g)| project(xv + epsilon * sign(g), xv, epsilon))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn iterate(params: &NetworkParams, x: &Tensor, labels: &[usize], cfg: &AttackConfig, seed: u64) -> Result<Tensor> {
    cfg.validate()?;
    check_inputs(params, x, labels)?;
    let mut adv = x.clone();
    if cfg.random_start_scale > 0.0 {
        let mut rng = seeds::rng(seed, &[seeds::stream::ATTACK]);
        let r = cfg.random_start_scale;
        for (a, &xv) in adv.data_mut().iter_mut().zip(x.data()) {
            let delta: f64 = rng.random_range(-r..=r);
            *a = project(xv + delta.clamp(-cfg.epsilon, cfg.epsilon), xv, cfg.epsilon);
        }
    }
    for _ in 0..cfg.steps {
        let (_, grad) = loss_and_input_gradient(params, &adv, labels, cfg.loss_kind)?;
        for ((a, &xv), &g) in adv.data_mut().iter_mut().zip(x.data()).zip(grad.data()) {
            *a = project(*a + cfg.step_size * sign(g), xv, cfg.epsilon);
        }
    }
    Ok(adv)
}

/// Projected gradient ascent on cross-entropy inside the ε-ball around `x`.
///
/// Starts from `x + U(-rss, rss)`, then repeats
/// `x_adv ← Π(x_adv + step · sign(∇ CE))` where `Π` projects onto the
/// ε-ball and then onto `[0, 1]`. The random start is drawn from `seed`.
pub fn pgd(params: &NetworkParams, x: &Tensor, labels: &[usize], cfg: &AttackConfig, seed: u64) -> Result<Tensor> {
    if cfg.loss_kind != LossKind::CrossEntropy {
        return Err(Error::InvalidInput("pgd expects the cross-entropy loss".into()));
    }
    iterate(params, x, labels, cfg, seed)
}

/// PGD maximizing the margin `max_{k≠y} z_k - z_y` (CW∞).
pub fn cw_margin_pgd(
    params: &NetworkParams,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if cfg.loss_kind != LossKind::CwMargin {
        return Err(Error::InvalidInput("cw_margin_pgd expects the margin loss".into()));
    }
    iterate(params, x, labels, cfg, seed)
}

/// Run whichever attack `cfg` describes.
pub fn run(params: &NetworkParams, x: &Tensor, labels: &[usize], cfg: &AttackConfig, seed: u64) -> Result<Tensor> {
    iterate(params, x, labels, cfg, seed)
}
