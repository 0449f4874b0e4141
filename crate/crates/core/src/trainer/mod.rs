//! Teacher pretraining and the multi-teacher distillation loop.
//!
//! Per distillation batch, in order: PGD on the student, clean-branch loss,
//! adversarial-branch loss, first-batch loss recording, weight update, SGD
//! step on the weighted objective, temperature update.

mod config;
mod objective;
mod sgd;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{BalanceConfig, Mode, OptimizerConfig, TrainConfig};
pub use objective::{combine, cross_entropy_objective, distill_branch, mtard_objective, Branch, Composite};
pub use sgd::sgd_step;

use crate::attacks;
use crate::data::Dataset;
use crate::entropy_balance::{batch_mean_entropy, update_temperatures, TemperatureState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, select_best_checkpoint, ControllerSnapshot, MetricRecord};
use crate::loss_balance::{relative_weights, LossBalanceState};
use crate::nets::{NetworkParams, NetworkSpec, ParamSet, Role};
use crate::seeds::{self, stream};

/// Steps of one distillation batch, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Attack,
    LossNat,
    LossAdv,
    RecordInitial,
    UpdateWeights,
    SgdStep,
    UpdateTemperatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Global batch counter.
    pub t: u64,
    pub phase: Phase,
}

/// Everything besides the network parameters needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub mode: Mode,
    pub epochs_done: usize,
    /// Batches completed so far.
    pub t: u64,
    pub temperatures: TemperatureState,
    pub balance: LossBalanceState,
    pub history: Vec<MetricRecord>,
    /// Optimizer velocity in [`ParamSet::flatten`] order.
    pub velocity: Vec<f64>,
}

impl RunState {
    fn fresh(cfg: &TrainConfig, params: &NetworkParams) -> Result<Self> {
        Ok(RunState {
            mode: cfg.mode,
            epochs_done: 0,
            t: 0,
            temperatures: cfg.balance.temperatures(),
            balance: cfg.balance.loss_balance(cfg.mode)?,
            history: Vec::new(),
            velocity: vec![0.0; params.params().len()],
        })
    }
}

/// Passed to the epoch callback after each epoch.
pub struct EpochEnd<'a> {
    pub params: &'a NetworkParams,
    pub state: &'a RunState,
    pub record: &'a MetricRecord,
    /// This epoch is the best so far by `w_robust`.
    pub is_best: bool,
}

pub type EpochHook<'a> = dyn FnMut(&EpochEnd<'_>) -> Result<()> + 'a;

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Scored after every epoch; the training set when absent.
    pub eval_data: Option<&'a Dataset>,
    /// Continue from saved parameters and state.
    pub resume: Option<(NetworkParams, RunState)>,
    /// Stop once this many epochs are complete.
    pub halt_after: Option<usize>,
    pub record_events: bool,
    pub on_epoch: Option<&'a mut EpochHook<'a>>,
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub state: RunState,
    pub events: Vec<Event>,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> Option<usize> {
        select_best_checkpoint(&self.state.history).ok()
    }
}

/// Network initialised from `derive(seed, [INIT])`.
pub fn init_params(spec: &NetworkSpec, role: Role, seed: u64) -> Result<NetworkParams> {
    NetworkParams::init(spec, role, seeds::derive(seed, &[stream::INIT]))
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.input_shape() != spec.input_shape.as_slice() {
        return Err(Error::Shape { expected: spec.input_shape.clone(), got: data.input_shape().to_vec() });
    }
    if data.classes() != spec.classes {
        return Err(Error::InvalidInput(format!(
            "network has {} classes, dataset has {}",
            spec.classes,
            data.classes()
        )));
    }
    Ok(())
}

/// Running sums for the epoch record.
#[derive(Default)]
struct EpochStats {
    batches: usize,
    loss: f64,
    h_nat: f64,
    h_adv: f64,
    l_nat: f64,
    l_adv: f64,
    rel_nat: f64,
    rel_adv: f64,
    rel_count: usize,
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    params: NetworkParams,
    velocity: ParamSet,
    state: RunState,
    events: Vec<Event>,
    record_events: bool,
}

impl Loop<'_> {
    fn event(&mut self, phase: Phase) {
        if self.record_events {
            self.events.push(Event { t: self.state.t, phase });
        }
    }

    fn diverged(&self, batch: usize, what: impl Into<String>) -> Error {
        Error::Diverged { epoch: self.state.epochs_done, batch, what: what.into() }
    }

    fn step(&mut self, grads: &ParamSet, lr: f64, batch: usize) -> Result<()> {
        if !grads.all_finite() {
            return Err(self.diverged(batch, "non-finite gradient"));
        }
        let o = self.cfg.optimizer;
        sgd_step(&mut self.params, grads, &mut self.velocity, lr, o.momentum, o.weight_decay)?;
        if !self.params.params().all_finite() {
            return Err(self.diverged(batch, "non-finite parameters"));
        }
        Ok(())
    }
}

/// Batch `b` of an epoch's shuffled order; the last partial batch is kept.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, &[stream::SHUFFLE, epoch as u64]));
    order
}

fn attack_seed(seed: u64, t: u64) -> u64 {
    seeds::derive(seed, &[stream::ATTACK, t])
}

type BatchFn<'f> = dyn FnMut(&mut Loop<'_>, &[usize], usize, f64, &mut EpochStats) -> Result<()> + 'f;

fn run(
    cfg: &TrainConfig,
    initial: NetworkParams,
    data: &Dataset,
    opts: RunOptions<'_>,
    batch_fn: &mut BatchFn<'_>,
    controller: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(initial.spec(), data)?;
    let RunOptions { eval_data, resume, halt_after, record_events, mut on_epoch } = opts;
    let (params, state) = match resume {
        Some((p, s)) => {
            if p.spec() != initial.spec() || p.role() != initial.role() {
                return Err(Error::InvalidInput("resume checkpoint does not match the configured network".into()));
            }
            if s.mode != cfg.mode {
                return Err(Error::InvalidInput(format!("resume state is for mode {}, not {}", s.mode, cfg.mode)));
            }
            if s.velocity.len() != p.params().len() {
                return Err(Error::Shape { expected: vec![p.params().len()], got: vec![s.velocity.len()] });
            }
            (p, s)
        }
        None => {
            let s = RunState::fresh(cfg, &initial)?;
            (initial, s)
        }
    };
    let mut velocity = ParamSet::zeros_like(params.spec());
    velocity.assign_flat(&state.velocity)?;
    let eval_data = eval_data.unwrap_or(data);
    check_data(params.spec(), eval_data)?;
    let mut lp = Loop { cfg, params, velocity, state, events: Vec::new(), record_events };
    let stop = halt_after.map_or(cfg.epochs, |h| h.min(cfg.epochs));

    while lp.state.epochs_done < stop {
        let epoch = lp.state.epochs_done;
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut stats = EpochStats::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_fn(&mut lp, idx, b, lr, &mut stats)?;
            stats.batches += 1;
            lp.state.t += 1;
        }
        lp.state.velocity = lp.velocity.flatten();
        let n = stats.batches.max(1) as f64;
        let mut record = evaluate(
            &lp.params,
            eval_data,
            &cfg.eval,
            epoch,
            seeds::derive(cfg.seed, &[stream::EVAL, epoch as u64]),
        )?;
        record.train_loss = stats.loss / n;
        if controller {
            let (t, w) = (&lp.state.temperatures, &lp.state.balance);
            let rel = |v: f64| (stats.rel_count > 0).then(|| v / stats.rel_count as f64);
            record.controller = Some(ControllerSnapshot {
                tau_nat: t.tau_nat,
                tau_adv: t.tau_adv,
                w_nat: w.w_nat,
                w_adv: w.w_adv,
                h_nat: stats.h_nat / n,
                h_adv: stats.h_adv / n,
                l_nat: stats.l_nat / n,
                l_adv: stats.l_adv / n,
                rel_nat: rel(stats.rel_nat),
                rel_adv: rel(stats.rel_adv),
            });
        }
        lp.state.history.push(record);
        lp.state.epochs_done += 1;
        let is_best = select_best_checkpoint(&lp.state.history)? == epoch;
        if let Some(hook) = on_epoch.as_mut() {
            let record = lp.state.history.last().expect("just pushed");
            hook(&EpochEnd { params: &lp.params, state: &lp.state, record, is_best })?;
        }
    }
    Ok(TrainOutcome { params: lp.params, state: lp.state, events: lp.events })
}

fn pretrain(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig, opts: RunOptions<'_>, adversarial: bool) -> Result<TrainOutcome> {
    let role = if adversarial { Role::RobustTeacher } else { Role::CleanTeacher };
    let initial = init_params(spec, role, cfg.seed)?;
    let mut batch = |lp: &mut Loop<'_>, idx: &[usize], b: usize, lr: f64, stats: &mut EpochStats| -> Result<()> {
        let (mut x, y) = data.batch(idx);
        if adversarial {
            x = attacks::pgd(&lp.params, &x, &y, &lp.cfg.attack, attack_seed(lp.cfg.seed, lp.state.t))?;
        }
        let (loss, grads) = cross_entropy_objective(&lp.params, &x, &y)?;
        if !loss.is_finite() {
            return Err(lp.diverged(b, "cross-entropy is not finite"));
        }
        stats.loss += loss;
        lp.step(&grads, lr, b)
    };
    run(cfg, initial, data, opts, &mut batch, false)
}

/// Clean-teacher pretraining: SGD on mean cross-entropy.
pub fn train_natural(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    if cfg.mode != Mode::Natural {
        return Err(Error::Config(format!("train_natural needs mode natural, got {}", cfg.mode)));
    }
    pretrain(spec, data, cfg, opts, false)
}

/// Robust-teacher pretraining: each batch is replaced by its PGD batch.
pub fn train_sat(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    if cfg.mode != Mode::Sat {
        return Err(Error::Config(format!("train_sat needs mode sat, got {}", cfg.mode)));
    }
    pretrain(spec, data, cfg, opts, true)
}

/// Distil a student from a frozen clean teacher and a frozen robust teacher.
pub fn distill_mtard(
    student_spec: &NetworkSpec,
    clean_teacher: &NetworkParams,
    robust_teacher: &NetworkParams,
    data: &Dataset,
    cfg: &TrainConfig,
    opts: RunOptions<'_>,
) -> Result<TrainOutcome> {
    if cfg.mode.is_pretrain() {
        return Err(Error::Config(format!("distillation needs a distillation mode, got {}", cfg.mode)));
    }
    clean_teacher.expect_role(Role::CleanTeacher)?;
    robust_teacher.expect_role(Role::RobustTeacher)?;
    for t in [clean_teacher, robust_teacher] {
        if t.spec().classes != student_spec.classes || t.spec().input_shape != student_spec.input_shape {
            return Err(Error::InvalidInput(format!(
                "{} teacher has input {:?} and {} classes, student has {:?} and {}",
                t.role(),
                t.spec().input_shape,
                t.spec().classes,
                student_spec.input_shape,
                student_spec.classes
            )));
        }
    }
    let mode = cfg.mode;
    let initial = init_params(student_spec, Role::Student, cfg.seed)?;
    let mut batch = |lp: &mut Loop<'_>, idx: &[usize], b: usize, lr: f64, stats: &mut EpochStats| -> Result<()> {
        let (x, y) = data.batch(idx);
        let seed = attack_seed(lp.cfg.seed, lp.state.t);
        let x_adv = attacks::pgd(&lp.params, &x, &y, &lp.cfg.attack, seed)?;
        lp.event(Phase::Attack);

        let temps = lp.state.temperatures;
        let sq = lp.cfg.balance.tau_squared;
        let epoch = lp.state.epochs_done;
        let numeric = move |e: Error| match e {
            Error::Numeric(m) => Error::Diverged { epoch, batch: b, what: m },
            other => other,
        };
        let nat = distill_branch(&lp.params, clean_teacher, &x, temps.tau_s, temps.tau_nat, sq, false).map_err(numeric)?;
        lp.event(Phase::LossNat);
        let adv = distill_branch(&lp.params, robust_teacher, &x_adv, temps.tau_s, temps.tau_adv, sq, false)
            .map_err(numeric)?;
        lp.event(Phase::LossAdv);

        if lp.state.t == 0 {
            let recorded = lp.state.balance.record_initial(nat.loss, adv.loss);
            match recorded {
                Ok(()) => {
                    if !mode.uses_nlb() {
                        let fixed = lp.cfg.balance.loss_balance(mode)?;
                        lp.state.balance.w_nat = fixed.w_nat;
                        lp.state.balance.w_adv = fixed.w_adv;
                    }
                }
                Err(e) if mode.uses_nlb() => return Err(e),
                Err(_) => {}
            }
            lp.event(Phase::RecordInitial);
        }

        if lp.state.balance.is_recorded() {
            let (rn, ra) = lp.state.balance.relative_losses(nat.loss, adv.loss)?;
            stats.rel_nat += rn;
            stats.rel_adv += ra;
            stats.rel_count += 1;
            if mode.uses_nlb() {
                let (r_nat, r_adv) = relative_weights(rn, ra, lp.state.balance.beta)?;
                lp.state.balance = lp.state.balance.update_weights(r_nat, r_adv);
                lp.event(Phase::UpdateWeights);
            }
        }

        let (w_nat, w_adv) = (lp.state.balance.w_nat, lp.state.balance.w_adv);
        let grads = combine(&nat.param_grads, &adv.param_grads, w_nat, w_adv);
        let total = w_nat * nat.loss + w_adv * adv.loss;
        if !total.is_finite() {
            return Err(lp.diverged(b, "distillation loss is not finite"));
        }
        lp.step(&grads, lr, b)?;
        lp.event(Phase::SgdStep);

        let h_nat = batch_mean_entropy(&nat.teacher_logits, temps.tau_nat)?;
        let h_adv = batch_mean_entropy(&adv.teacher_logits, temps.tau_adv)?;
        if mode.uses_ebb() {
            lp.state.temperatures = update_temperatures(&temps, h_nat, h_adv);
            lp.event(Phase::UpdateTemperatures);
        }
        stats.loss += total;
        stats.l_nat += nat.loss;
        stats.l_adv += adv.loss;
        stats.h_nat += h_nat;
        stats.h_adv += h_adv;
        Ok(())
    };
    run(cfg, initial, data, opts, &mut batch, true)
}
