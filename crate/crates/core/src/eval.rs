//! Clean and adversarial accuracy, weighted robust accuracy and checkpoint
//! selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig, AttackKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{forward, NetworkParams};
use crate::seeds;
use crate::tensor::Tensor;

/// Rows per attack batch during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict(params: &NetworkParams, x: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(params, x)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

fn check(params: &NetworkParams, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty dataset".into()));
    }
    if params.spec().classes != data.classes() {
        return Err(Error::InvalidInput(format!(
            "model has {} classes, dataset has {}",
            params.spec().classes,
            data.classes()
        )));
    }
    Ok(())
}

fn correct(params: &NetworkParams, x: &Tensor, y: &[usize]) -> Result<usize> {
    Ok(predict(params, x)?.iter().zip(y).filter(|(p, l)| p == l).count())
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    check(params, data)?;
    Ok(correct(params, data.features(), data.labels())? as f64 / data.len() as f64)
}

/// Accuracy on white-box adversarial inputs crafted against `params`.
/// Batch `b` uses random-start stream `derive(seed, [b])`.
pub fn robust_accuracy(params: &NetworkParams, data: &Dataset, cfg: &AttackConfig, seed: u64) -> Result<f64> {
    check(params, data)?;
    cfg.validate()?;
    let mut hits = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for (b, chunk) in idx.chunks(EVAL_BATCH).enumerate() {
        let (x, y) = data.batch(chunk);
        let adv = attacks::run(params, &x, &y, cfg, seeds::derive(seed, &[b as u64]))?;
        hits += correct(params, &adv, &y)?;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// `π_nat · clean + π_adv · robust`.
pub fn w_robust(clean: f64, robust: f64, pi_nat: f64, pi_adv: f64) -> Result<f64> {
    if !(pi_nat >= 0.0 && pi_adv >= 0.0) || (pi_nat + pi_adv - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "accuracy weights must be >= 0 and sum to 1, got ({pi_nat}, {pi_adv})"
        )));
    }
    Ok(pi_nat * clean + pi_adv * robust)
}

/// Controller values at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub tau_nat: f64,
    pub tau_adv: f64,
    pub w_nat: f64,
    pub w_adv: f64,
    /// Epoch-mean teacher entropies.
    pub h_nat: f64,
    pub h_adv: f64,
    /// Epoch-mean distillation losses.
    pub l_nat: f64,
    pub l_adv: f64,
    /// Epoch-mean relative losses, absent when initial losses were not recorded.
    pub rel_nat: Option<f64>,
    pub rel_adv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub train_loss: f64,
    pub clean_acc: f64,
    /// Robust accuracy per attack name.
    pub robust_acc: BTreeMap<String, f64>,
    /// Attack whose robust accuracy enters `w_robust`.
    pub designated: String,
    pub pi_nat: f64,
    pub pi_adv: f64,
    pub w_robust: f64,
    pub controller: Option<ControllerSnapshot>,
}

impl MetricRecord {
    /// Recompute `w_robust` from the stored accuracies.
    pub fn recompute_w_robust(&self) -> Result<f64> {
        let r = self
            .robust_acc
            .get(&self.designated)
            .ok_or_else(|| Error::InvalidInput(format!("no robust accuracy for '{}'", self.designated)))?;
        w_robust(self.clean_acc, *r, self.pi_nat, self.pi_adv)
    }
}

/// Evaluation settings shared by training and the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub epsilon: f64,
    pub attacks: Vec<AttackKind>,
    pub designated: AttackKind,
    pub pi_nat: f64,
    pub pi_adv: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epsilon: 8.0 / 255.0,
            attacks: vec![AttackKind::PgdSat],
            designated: AttackKind::PgdSat,
            pi_nat: 0.5,
            pi_adv: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        w_robust(0.0, 0.0, self.pi_nat, self.pi_adv).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("eval epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !self.attacks.contains(&self.designated) {
            return Err(Error::Config(format!(
                "designated attack '{}' is not in the attack list",
                self.designated.name()
            )));
        }
        Ok(())
    }
}

/// Clean accuracy, every configured attack and the weighted score.
/// Attack `k` in the list uses seed `derive(seed, [k])`.
pub fn evaluate(
    params: &NetworkParams,
    data: &Dataset,
    cfg: &EvalConfig,
    epoch: usize,
    seed: u64,
) -> Result<MetricRecord> {
    cfg.validate()?;
    let clean_acc = accuracy(params, data)?;
    let mut robust_acc = BTreeMap::new();
    for (k, kind) in cfg.attacks.iter().enumerate() {
        let r = robust_accuracy(params, data, &kind.config(cfg.epsilon), seeds::derive(seed, &[k as u64]))?;
        robust_acc.insert(kind.name().to_string(), r);
    }
    let w = w_robust(clean_acc, robust_acc[cfg.designated.name()], cfg.pi_nat, cfg.pi_adv)?;
    Ok(MetricRecord {
        epoch,
        train_loss: 0.0,
        clean_acc,
        robust_acc,
        designated: cfg.designated.name().to_string(),
        pi_nat: cfg.pi_nat,
        pi_adv: cfg.pi_adv,
        w_robust: w,
        controller: None,
    })
}

/// Epoch of the record with the largest `w_robust`, earliest on ties.
pub fn select_best_checkpoint(history: &[MetricRecord]) -> Result<usize> {
    let mut best = history
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot select from an empty history".into()))?;
    for r in &history[1..] {
        if r.w_robust > best.w_robust {
            best = r;
        }
    }
    Ok(best.epoch)
}
