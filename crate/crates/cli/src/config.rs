//! Run configuration file (TOML).
//!
//! Every numeric field also accepts a fraction string such as `"8/255"`.

use std::fmt;
use std::path::{Path, PathBuf};

use mtard_core::attacks::{AttackConfig, AttackKind, LossKind};
use mtard_core::eval::EvalConfig;
use mtard_core::nets::NetworkSpec;
use mtard_core::trainer::{BalanceConfig, Mode, OptimizerConfig, TrainConfig};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// A number written as a float, an integer or `"a/b"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Num {
    pub fn parse(s: &str) -> Result<Num, String> {
        let s = s.trim();
        let v = match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in '{s}'"))?;
                let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in '{s}'"))?;
                if b == 0.0 {
                    return Err(format!("zero denominator in '{s}'"));
                }
                a / b
            }
            None => s.parse().map_err(|_| format!("'{s}' is not a number or fraction"))?,
        };
        if !v.is_finite() {
            return Err(format!("'{s}' is not finite"));
        }
        Ok(Num(v))
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Num, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a fraction string like \"8/255\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                Num::parse(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataKind {
    TwoMoons,
    Blobs,
    Idx,
    Cifar10,
    Cifar100,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    /// Noise for two-moons, spread for blobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Seed for synthetic data; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// IDX image files, CIFAR batch files or dataset cache files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub channels: Vec<usize>,
}

impl ModelSection {
    /// Network for examples of shape `input` with `classes` outputs. Dense
    /// networks take flattened input.
    pub fn spec(&self, input: &[usize], classes: usize) -> mtard_core::Result<NetworkSpec> {
        match self.kind {
            ModelKind::Mlp => NetworkSpec::mlp(input.iter().product(), &self.hidden, classes),
            ModelKind::Conv => match *input {
                [c, h, w] => NetworkSpec::conv([c, h, w], &self.channels, classes),
                _ => Err(mtard_core::Error::Config(format!("conv model needs [C, H, W] input, data is {input:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeachersSection {
    pub clean: PathBuf,
    pub robust: PathBuf,
    pub model: ModelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Num,
    pub momentum: Num,
    pub weight_decay: Num,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: Num,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        TrainSection {
            epochs: 60,
            batch_size: 128,
            lr: Num(o.lr),
            momentum: Num(o.momentum),
            weight_decay: Num(o.weight_decay),
            lr_decay_epochs: vec![40, 50],
            lr_decay_factor: Num(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub epsilon: Num,
    pub step_size: Num,
    pub steps: usize,
    pub random_start: Num,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::training_pgd();
        AttackSection {
            epsilon: Num(a.epsilon),
            step_size: Num(a.step_size),
            steps: a.steps,
            random_start: Num(a.random_start_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceSection {
    pub tau_init: Num,
    pub tau_min: Num,
    pub tau_max: Num,
    pub tau_s: Num,
    pub r_tau: Num,
    pub beta: Num,
    pub r_w: Num,
    pub alpha: Num,
    pub tau_squared: bool,
}

impl Default for BalanceSection {
    fn default() -> Self {
        let b = BalanceConfig::default();
        BalanceSection {
            tau_init: Num(b.tau_init),
            tau_min: Num(b.tau_min),
            tau_max: Num(b.tau_max),
            tau_s: Num(b.tau_s),
            r_tau: Num(b.r_tau),
            beta: Num(b.beta),
            r_w: Num(b.r_w),
            alpha: Num(b.alpha),
            tau_squared: b.tau_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub epsilon: Num,
    pub attacks: Vec<AttackKind>,
    pub designated: AttackKind,
    pub pi_nat: Num,
    pub pi_adv: Num,
    /// Evaluate on the first `subset` test examples only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            epsilon: Num(e.epsilon),
            attacks: e.attacks,
            designated: e.designated,
            pi_nat: Num(e.pi_nat),
            pi_adv: Num(e.pi_adv),
            subset: None,
        }
    }
}

impl EvalSection {
    pub fn to_core(&self) -> EvalConfig {
        EvalConfig {
            epsilon: self.epsilon.0,
            attacks: self.attacks.clone(),
            designated: self.designated,
            pi_nat: self.pi_nat.0,
            pi_adv: self.pi_adv.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teachers: Option<TeachersSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub balance: BalanceSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, UsageError> {
        let de = toml::Deserializer::parse(text).map_err(|e| UsageError(format!("config: {e}")))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            UsageError(format!("config field '{path}': {}", e.into_inner().message().trim()))
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `sha256("blob <len>\0" + canonical JSON)`, hex encoded.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let a = &self.attack;
        let b = &self.balance;
        TrainConfig {
            mode: self.mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            optimizer: OptimizerConfig { lr: t.lr.0, momentum: t.momentum.0, weight_decay: t.weight_decay.0 },
            lr_decay_epochs: t.lr_decay_epochs.clone(),
            lr_decay_factor: t.lr_decay_factor.0,
            attack: AttackConfig {
                epsilon: a.epsilon.0,
                step_size: a.step_size.0,
                steps: a.steps,
                random_start_scale: a.random_start.0,
                loss_kind: LossKind::CrossEntropy,
            },
            balance: BalanceConfig {
                tau_init: b.tau_init.0,
                tau_min: b.tau_min.0,
                tau_max: b.tau_max.0,
                tau_s: b.tau_s.0,
                r_tau: b.r_tau.0,
                beta: b.beta.0,
                r_w: b.r_w.0,
                alpha: b.alpha.0,
                tau_squared: b.tau_squared,
            },
            eval: self.eval.to_core(),
        }
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<(), UsageError> {
        self.train_config().validate().map_err(|e| UsageError(format!("config: {e}")))?;
        let d = &self.data;
        let need = |field: &str, v: bool| {
            if v {
                Ok(())
            } else {
                Err(UsageError(format!("config field 'data.{field}' is required for data kind {:?}", d.kind)))
            }
        };
        match d.kind {
            DataKind::TwoMoons | DataKind::Blobs => {
                need("n_train", d.n_train.is_some())?;
                need("n_test", d.n_test.is_some())?;
                if d.kind == DataKind::Blobs {
                    need("classes", d.classes.is_some())?;
                }
            }
            DataKind::Idx => {
                for (f, v) in [
                    ("train", &d.train),
                    ("train_labels", &d.train_labels),
                    ("test", &d.test),
                    ("test_labels", &d.test_labels),
                ] {
                    need(f, v.is_some())?;
                }
            }
            DataKind::Cifar10 | DataKind::Cifar100 | DataKind::Cache => {
                need("train", d.train.is_some())?;
                need("test", d.test.is_some())?;
            }
        }
        if self.mode.is_pretrain() != self.teachers.is_none() {
            return Err(UsageError(if self.mode.is_pretrain() {
                "config section 'teachers' is only valid for distillation modes".into()
            } else {
                format!("config section 'teachers' is required for mode {}", self.mode)
            }));
        }
        Ok(())
    }
}
