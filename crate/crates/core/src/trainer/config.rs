use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::entropy_balance::TemperatureState;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss_balance::LossBalanceState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cross-entropy on clean inputs.
    Natural,
    /// Cross-entropy on PGD inputs.
    Sat,
    /// Both controllers.
    Mtard,
    /// Loss balance only, temperatures fixed.
    MtardNoEbb,
    /// Temperature balance only, weights fixed.
    MtardNoNlb,
    /// Fixed weights and temperatures.
    BaselineFixed,
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::Natural, Mode::Sat, Mode::Mtard, Mode::MtardNoEbb, Mode::MtardNoNlb, Mode::BaselineFixed];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Natural => "natural",
            Mode::Sat => "sat",
            Mode::Mtard => "mtard",
            Mode::MtardNoEbb => "mtard-no-ebb",
            Mode::MtardNoNlb => "mtard-no-nlb",
            Mode::BaselineFixed => "baseline-fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_pretrain(self) -> bool {
        matches!(self, Mode::Natural | Mode::Sat)
    }

    pub fn uses_ebb(self) -> bool {
        matches!(self, Mode::Mtard | Mode::MtardNoNlb)
    }

    pub fn uses_nlb(self) -> bool {
        matches!(self, Mode::Mtard | Mode::MtardNoEbb)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 0.1, momentum: 0.9, weight_decay: 2e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    /// Initial teacher temperature, shared by both teachers.
    pub tau_init: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_s: f64,
    pub r_tau: f64,
    pub beta: f64,
    pub r_w: f64,
    /// Adversarial weight when loss balancing is off: `w = (1 - α, α)`.
    pub alpha: f64,
    /// Multiply each distillation term by its teacher temperature squared.
    pub tau_squared: bool,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            tau_init: 1.0,
            tau_min: 1.0,
            tau_max: 10.0,
            tau_s: 1.0,
            r_tau: 0.001,
            beta: 1.0,
            r_w: 0.025,
            alpha: 0.5,
            tau_squared: false,
        }
    }
}

impl BalanceConfig {
    pub fn temperatures(&self) -> TemperatureState {
        TemperatureState {
            tau_nat: self.tau_init,
            tau_adv: self.tau_init,
            r_tau: self.r_tau,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            tau_s: self.tau_s,
        }
    }

    /// Weights start at (0.5, 0.5) under loss balancing, `(1 - α, α)` otherwise.
    pub fn loss_balance(&self, mode: Mode) -> Result<LossBalanceState> {
        let mut s = LossBalanceState::new(self.beta, self.r_w)?;
        if !mode.uses_nlb() {
            s.w_nat = 1.0 - self.alpha;
            s.w_adv = self.alpha;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Epoch indices (0-based) from which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Inner maximization.
    pub attack: AttackConfig,
    pub balance: BalanceConfig,
    pub eval: EvalConfig,
}

impl TrainConfig {
    /// Desk-scale defaults: 60 epochs, decay ×0.1 at 40 and 50, batch 128.
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            mode,
            epochs: 60,
            batch_size: 128,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            lr_decay_epochs: vec![40, 50],
            lr_decay_factor: 0.1,
            attack: AttackConfig::training_pgd(),
            balance: BalanceConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !o.lr.is_finite() {
            return Err(Error::Config(format!("optimizer.lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("optimizer.momentum must lie in [0, 1), got {}", o.momentum)));
        }
        if !(o.weight_decay >= 0.0) || !o.weight_decay.is_finite() {
            return Err(Error::Config(format!("optimizer.weight_decay must be >= 0, got {}", o.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0) || !self.lr_decay_factor.is_finite() {
            return Err(Error::Config(format!("lr_decay_factor must be positive, got {}", self.lr_decay_factor)));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lr_decay_epochs must be strictly increasing".into()));
        }
        if let Some(&last) = self.lr_decay_epochs.last() {
            if last >= self.epochs {
                return Err(Error::Config(format!(
                    "lr_decay_epochs entry {last} is not below epochs = {}",
                    self.epochs
                )));
            }
        }
        self.attack.validate()?;
        let b = &self.balance;
        if !(0.0..=1.0).contains(&b.alpha) {
            return Err(Error::Config(format!("balance.alpha must lie in [0, 1], got {}", b.alpha)));
        }
        b.temperatures().validate()?;
        LossBalanceState::new(b.beta, b.r_w)?;
        if !(b.r_w > 0.0) {
            return Err(Error::Config("balance.r_w must be positive".into()));
        }
        self.eval.validate()
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.optimizer.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for m in Mode::ALL {
            TrainConfig::new(m).validate().unwrap();
            assert_eq!(Mode::parse(m.name()), Some(m));
        }
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::new(Mode::Mtard);
        assert_eq!(c.lr_at(0), 0.1);
        assert_eq!(c.lr_at(39), 0.1);
        assert!((c.lr_at(40) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(59) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::new(Mode::Natural);
        let mut c = base.clone();
        c.lr_decay_epochs = vec![50, 40];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.lr_decay_epochs = vec![60];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.optimizer.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.balance.tau_init = 11.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fixed_weight_modes_use_alpha() {
        let b = BalanceConfig { alpha: 0.3, ..BalanceConfig::default() };
        let s = b.loss_balance(Mode::BaselineFixed).unwrap();
        assert_eq!((s.w_nat, s.w_adv), (0.7, 0.3));
        let s = b.loss_balance(Mode::Mtard).unwrap();
        assert_eq!((s.w_nat, s.w_adv), (0.5, 0.5));
    }
}
