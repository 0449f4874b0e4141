//! Relative-loss weight balancing.
//!
//! Both distillation losses are divided by their first-batch values. The
//! objective that has made less relative progress receives a larger target
//! share `r = L̃^β / (L̃_nat^β + L̃_adv^β)`, and the weights move towards that
//! share with smoothing rate `r_w`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest initial loss accepted as a relative-loss denominator.
pub const LOSS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBalanceState {
    /// `(L_nat(0), L_adv(0))`, set once by [`LossBalanceState::record_initial`].
    pub initial: Option<(f64, f64)>,
    pub w_nat: f64,
    pub w_adv: f64,
    pub beta: f64,
    pub r_w: f64,
}

impl LossBalanceState {
    /// Unrecorded state with weights (0.5, 0.5).
    pub fn new(beta: f64, r_w: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !(0.0..=1.0).contains(&r_w) {
            return Err(Error::Config(format!("r_w must lie in [0, 1], got {r_w}")));
        }
        Ok(LossBalanceState { initial: None, w_nat: 0.5, w_adv: 0.5, beta, r_w })
    }

    /// Store the first-batch losses. Only valid once per run.
    pub fn record_initial(&mut self, l_nat: f64, l_adv: f64) -> Result<()> {
        if self.initial.is_some() {
            return Err(Error::Config("initial losses were already recorded for this run".into()));
        }
        for (name, v) in [("L_nat(0)", l_nat), ("L_adv(0)", l_adv)] {
            if !(v > LOSS_FLOOR) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} = {v} is below the floor {LOSS_FLOOR}; student and teachers are degenerate"
                )));
            }
        }
        self.initial = Some((l_nat, l_adv));
        self.w_nat = 0.5;
        self.w_adv = 0.5;
        Ok(())
    }

    pub fn is_recorded(&self) -> bool {
        self.initial.is_some()
    }

    /// `(l_nat / L_nat(0), l_adv / L_adv(0))`.
    pub fn relative_losses(&self, l_nat: f64, l_adv: f64) -> Result<(f64, f64)> {
        let (n0, a0) = self
            .initial
            .ok_or_else(|| Error::Config("relative losses requested before initial losses were recorded".into()))?;
        Ok((l_nat / n0, l_adv / a0))
    }

    /// `w ← r_w · r + (1 − r_w) · w` for both components.
    pub fn update_weights(&self, r_nat: f64, r_adv: f64) -> Self {
        LossBalanceState {
            w_nat: self.r_w * r_nat + (1.0 - self.r_w) * self.w_nat,
            w_adv: self.r_w * r_adv + (1.0 - self.r_w) * self.w_adv,
            ..*self
        }
    }
}

/// `r_nat = L̃_nat^β / (L̃_nat^β + L̃_adv^β)` and `r_adv = 1 − r_nat`.
///
/// Both relative losses zero gives `(0.5, 0.5)`.
pub fn relative_weights(l_rel_nat: f64, l_rel_adv: f64, beta: f64) -> Result<(f64, f64)> {
    if !(l_rel_nat >= 0.0 && l_rel_adv >= 0.0) || !l_rel_nat.is_finite() || !l_rel_adv.is_finite() {
        return Err(Error::InvalidInput(format!(
            "relative losses must be finite and >= 0, got ({l_rel_nat}, {l_rel_adv})"
        )));
    }
    let a = l_rel_nat.powf(beta);
    let b = l_rel_adv.powf(beta);
    let denom = a + b;
    if denom == 0.0 {
        return Ok((0.5, 0.5));
    }
    if !denom.is_finite() {
        // β large enough to overflow: compare in log space.
        let la = beta * l_rel_nat.ln();
        let lb = beta * l_rel_adv.ln();
        let r_nat = 1.0 / (1.0 + (lb - la).exp());
        return Ok((r_nat, 1.0 - r_nat));
    }
    let r_nat = a / denom;
    Ok((r_nat, 1.0 - r_nat))
}
