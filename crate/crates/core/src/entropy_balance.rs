//! Entropy-based temperature balancing between the clean and robust teachers.
//!
//! Each batch the mean prediction entropy of both teachers is measured and
//! both temperatures move one step of `r_tau` in the direction that closes
//! the gap: the teacher with higher entropy cools, the other warms. The
//! entropy slope is approximated by 1, which leaves a pure sign rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sign, tempered_entropy};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub tau_nat: f64,
    pub tau_adv: f64,
    pub r_tau: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Student temperature. Held constant for the whole run.
    pub tau_s: f64,
}

impl Default for TemperatureState {
    fn default() -> Self {
        TemperatureState { tau_nat: 1.0, tau_adv: 1.0, r_tau: 0.001, tau_min: 1.0, tau_max: 10.0, tau_s: 1.0 }
    }
}

impl TemperatureState {
    pub fn validate(&self) -> Result<()> {
        let all = [self.tau_nat, self.tau_adv, self.r_tau, self.tau_min, self.tau_max, self.tau_s];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("temperature settings must be finite".into()));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return Err(Error::Config(format!(
                "temperature bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if !(self.r_tau > 0.0) || !(self.tau_s > 0.0) {
            return Err(Error::Config("r_tau and tau_s must be positive".into()));
        }
        for (name, t) in [("tau_nat", self.tau_nat), ("tau_adv", self.tau_adv)] {
            if t < self.tau_min || t > self.tau_max {
                return Err(Error::Config(format!(
                    "{name} = {t} outside [{}, {}]",
                    self.tau_min, self.tau_max
                )));
            }
        }
        Ok(())
    }

    fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.tau_min, self.tau_max)
    }
}

/// Mean over rows of the entropy of `softmax(row / tau)`.
pub fn batch_mean_entropy(teacher_logits: &Tensor, tau: f64) -> Result<f64> {
    let n = teacher_logits.rows();
    if n == 0 || teacher_logits.shape().len() != 2 {
        return Err(Error::InvalidInput("entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += tempered_entropy(teacher_logits.row(i), tau)?;
    }
    Ok(total / n as f64)
}

/// One sign-rule step:
/// `τ_nat ← clamp(τ_nat − r_τ·sign(h_nat − h_adv))`,
/// `τ_adv ← clamp(τ_adv − r_τ·sign(h_adv − h_nat))`.
pub fn update_temperatures(state: &TemperatureState, h_nat: f64, h_adv: f64) -> TemperatureState {
    let s = sign(h_nat - h_adv);
    TemperatureState {
        tau_nat: state.clamp(state.tau_nat - state.r_tau * s),
        tau_adv: state.clamp(state.tau_adv + state.r_tau * s),
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_rows_have_max_entropy() {
        let t = Tensor::new(vec![3, 4], vec![0.7; 12]).unwrap();
        for tau in [1.0, 4.0] {
            assert!((batch_mean_entropy(&t, tau).unwrap() - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_is_single_entropy() {
        let t = Tensor::new(vec![1, 3], vec![0.1, 2.0, -1.0]).unwrap();
        let direct = tempered_entropy(t.row(0), 2.0).unwrap();
        assert_eq!(batch_mean_entropy(&t, 2.0).unwrap(), direct);
    }

    #[test]
    fn empty_batch_is_error() {
        assert!(batch_mean_entropy(&Tensor::zeros(vec![0, 3]), 1.0).is_err());
    }

    #[test]
    fn equal_entropies_leave_state_unchanged() {
        let s = TemperatureState { tau_nat: 3.0, tau_adv: 4.0, ..Default::default() };
        assert_eq!(update_temperatures(&s, 1.2, 1.2), s);
    }

    #[test]
    fn hand_evaluated_steps() {
        let s = TemperatureState::default();
        let next = update_temperatures(&s, 2.0, 1.5);
        assert_eq!(next.tau_nat, 1.0);
        assert_eq!(next.tau_adv, 1.001);

        let s = TemperatureState { tau_nat: 5.0, ..Default::default() };
        let next = update_temperatures(&s, 0.5, 1.0);
        assert_eq!(next.tau_nat, 5.001);
        assert_eq!(next.tau_s, 1.0);
    }

    #[test]
    fn validation_catches_bad_bounds() {
        let bad = TemperatureState { tau_nat: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let inverted = TemperatureState { tau_min: 10.0, tau_max: 1.0, ..Default::default() };
        assert!(inverted.validate().is_err());
        assert!(TemperatureState::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn temperatures_stay_in_bounds(
            start_nat in 1.0f64..10.0,
            start_adv in 1.0f64..10.0,
            r in 0.0001f64..2.0,
            hs in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..200),
        ) {
            let mut s = TemperatureState { tau_nat: start_nat, tau_adv: start_adv, r_tau: r, ..Default::default() };
            for (a, b) in hs {
                let prev = s;
                s = update_temperatures(&s, a, b);
                prop_assert!((1.0..=10.0).contains(&s.tau_nat));
                prop_assert!((1.0..=10.0).contains(&s.tau_adv));
                prop_assert_eq!(s.tau_s, 1.0);
                let unclamped_nat = prev.tau_nat - r * sign(a - b);
                let unclamped_adv = prev.tau_adv + r * sign(a - b);
                if (1.0..=10.0).contains(&unclamped_nat) && (1.0..=10.0).contains(&unclamped_adv) {
                    prop_assert_eq!(s.tau_nat, unclamped_nat);
                    prop_assert_eq!(s.tau_adv, unclamped_adv);
                }
            }
        }
    }
}
