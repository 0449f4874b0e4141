use mtard_core::attacks::{AttackConfig, AttackKind, LossKind};
use mtard_core::data::{blobs_split, two_moons_split, Dataset, Split};
use mtard_core::eval::{accuracy, robust_accuracy};
use mtard_core::nets::{NetworkParams, NetworkSpec, ParamSet, Role};
use mtard_core::trainer::{
    distill_mtard, init_params, train_natural, train_sat, Event, Mode, Phase, RunOptions, TrainConfig,
};
use mtard_core::{Error, Tensor};

fn quick(mode: Mode, epochs: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(mode);
    c.epochs = epochs;
    c.batch_size = 32;
    c.seed = seed;
    c.lr_decay_epochs = vec![];
    c.attack = AttackConfig { epsilon: 0.08, step_size: 0.02, steps: 5, ..AttackConfig::training_pgd() };
    c.eval.epsilon = 0.08;
    c
}

fn linear(values: &[f64], inputs: usize, role: Role) -> NetworkParams {
    let spec = NetworkSpec::mlp(inputs, &[], 2).unwrap();
    let mut p = ParamSet::zeros_like(&spec);
    p.assign_flat(values).unwrap();
    NetworkParams::from_parts(spec, role, p).unwrap()
}

fn bits(p: &NetworkParams) -> Vec<u64> {
    p.params().flatten().iter().map(|v| v.to_bits()).collect()
}

fn moons() -> (Dataset, Dataset) {
    two_moons_split(160, 80, 0.1, 11).unwrap()
}

fn teachers(train: &Dataset, seed: u64) -> (NetworkParams, NetworkParams) {
    let spec = NetworkSpec::mlp(2, &[16], 2).unwrap();
    let nat = train_natural(&spec, train, &quick(Mode::Natural, 4, seed), RunOptions::default()).unwrap();
    let sat = train_sat(&spec, train, &quick(Mode::Sat, 4, seed), RunOptions::default()).unwrap();
    (nat.params, sat.params)
}

#[test]
fn zero_epochs_returns_initial_params() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::Natural, 0, 5);
    let out = train_natural(&spec, &train, &cfg, RunOptions::default()).unwrap();
    assert_eq!(bits(&out.params), bits(&init_params(&spec, Role::CleanTeacher, 5).unwrap()));
    assert!(out.state.history.is_empty());
}

#[test]
fn separable_blobs_reach_full_train_accuracy() {
    let (train, _) = blobs_split(200, 20, 2, 0.05, 3).unwrap();
    let spec = NetworkSpec::mlp(2, &[16], 2).unwrap();
    let mut cfg = quick(Mode::Natural, 50, 3);
    cfg.eval.epsilon = 0.0;
    let out = train_natural(&spec, &train, &cfg, RunOptions::default()).unwrap();
    assert!(accuracy(&out.params, &train).unwrap() >= 0.99);
}

#[test]
fn pretraining_is_bit_deterministic() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::Sat, 3, 9);
    let a = train_sat(&spec, &train, &cfg, RunOptions::default()).unwrap();
    let b = train_sat(&spec, &train, &cfg, RunOptions::default()).unwrap();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.state, b.state);
}

#[test]
fn sat_with_zero_budget_follows_natural_trajectory() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let mut n = quick(Mode::Natural, 3, 4);
    n.attack.epsilon = 0.0;
    let s = TrainConfig { mode: Mode::Sat, ..n.clone() };
    let a = train_natural(&spec, &train, &n, RunOptions::default()).unwrap();
    let b = train_sat(&spec, &train, &s, RunOptions::default()).unwrap();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(b.params.role(), Role::RobustTeacher);
}

#[test]
fn wrong_mode_is_rejected() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    assert!(train_natural(&spec, &train, &quick(Mode::Sat, 1, 0), RunOptions::default()).is_err());
    assert!(train_sat(&spec, &train, &quick(Mode::Mtard, 1, 0), RunOptions::default()).is_err());
}

#[test]
fn baseline_fixed_keeps_controllers_constant() {
    let (train, test) = moons();
    let (nat, sat) = teachers(&train, 1);
    let student = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::BaselineFixed, 3, 2);
    let opts = RunOptions { eval_data: Some(&test), ..Default::default() };
    let out = distill_mtard(&student, &nat, &sat, &train, &cfg, opts).unwrap();
    for r in &out.state.history {
        let c = r.controller.unwrap();
        assert_eq!((c.w_nat, c.w_adv, c.tau_nat, c.tau_adv), (0.5, 0.5, 1.0, 1.0));
    }
}

#[test]
fn ablation_modes_freeze_their_controller() {
    let (train, _) = moons();
    let (nat, sat) = teachers(&train, 2);
    let student = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let run = |mode| {
        let mut cfg = quick(mode, 2, 3);
        cfg.balance.r_tau = 0.05;
        distill_mtard(&student, &nat, &sat, &train, &cfg, RunOptions::default()).unwrap()
    };
    let no_ebb = run(Mode::MtardNoEbb);
    let no_nlb = run(Mode::MtardNoNlb);
    let full = run(Mode::Mtard);
    let c = |o: &mtard_core::trainer::TrainOutcome| o.state.history.last().unwrap().controller.unwrap();
    assert_eq!((c(&no_ebb).tau_nat, c(&no_ebb).tau_adv), (1.0, 1.0));
    assert_ne!(c(&no_ebb).w_nat, 0.5);
    assert_eq!((c(&no_nlb).w_nat, c(&no_nlb).w_adv), (0.5, 0.5));
    assert_ne!((c(&no_nlb).tau_nat, c(&no_nlb).tau_adv), (1.0, 1.0));
    assert_ne!(c(&full).w_nat, 0.5);
    assert_ne!((c(&full).tau_nat, c(&full).tau_adv), (1.0, 1.0));
    for o in [&no_ebb, &no_nlb, &full] {
        for r in &o.state.history {
            let k = r.controller.unwrap();
            assert!((1.0..=10.0).contains(&k.tau_nat) && (1.0..=10.0).contains(&k.tau_adv));
            assert!((k.w_nat + k.w_adv - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn event_trace_follows_batch_order() {
    let (train, _) = moons();
    let (nat, sat) = teachers(&train, 3);
    let student = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::Mtard, 1, 4);
    let opts = RunOptions { record_events: true, ..Default::default() };
    let out = distill_mtard(&student, &nat, &sat, &train, &cfg, opts).unwrap();
    let batches = train.len().div_ceil(cfg.batch_size) as u64;
    let mut expected = Vec::new();
    for t in 0..batches {
        let mut phases = vec![Phase::Attack, Phase::LossNat, Phase::LossAdv];
        if t == 0 {
            phases.push(Phase::RecordInitial);
        }
        phases.extend([Phase::UpdateWeights, Phase::SgdStep, Phase::UpdateTemperatures]);
        expected.extend(phases.into_iter().map(|phase| Event { t, phase }));
    }
    assert_eq!(out.events, expected);
}

#[test]
fn teachers_are_untouched_and_roles_checked() {
    let (train, _) = moons();
    let (nat, sat) = teachers(&train, 4);
    let (fn_, fs) = (nat.content_fingerprint(), sat.content_fingerprint());
    let student = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::Mtard, 1, 5);
    distill_mtard(&student, &nat, &sat, &train, &cfg, RunOptions::default()).unwrap();
    assert_eq!((nat.content_fingerprint(), sat.content_fingerprint()), (fn_, fs));

    let swapped = distill_mtard(&student, &sat, &nat, &train, &cfg, RunOptions::default());
    assert!(matches!(swapped, Err(Error::Role { .. })));
    let three = NetworkSpec::mlp(2, &[8], 3).unwrap();
    assert!(distill_mtard(&three, &nat, &sat, &train, &cfg, RunOptions::default()).is_err());
    let pre = TrainConfig { mode: Mode::Natural, ..cfg };
    assert!(distill_mtard(&student, &nat, &sat, &train, &pre, RunOptions::default()).is_err());
}

#[test]
fn identical_networks_are_a_fixed_point() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let mut cfg = quick(Mode::BaselineFixed, 1, 6);
    cfg.optimizer.weight_decay = 0.0;
    // a single step: temperatures may move afterwards
    cfg.batch_size = train.len();
    let student = init_params(&spec, Role::Student, cfg.seed).unwrap();
    let nat = student.clone().with_role(Role::CleanTeacher);
    let sat = student.clone().with_role(Role::RobustTeacher);
    for mode in [Mode::BaselineFixed, Mode::MtardNoNlb] {
        let cfg = TrainConfig { mode, ..cfg.clone() };
        let out = distill_mtard(&spec, &nat, &sat, &train, &cfg, RunOptions::default()).unwrap();
        assert_eq!(bits(&out.params), bits(&student));
        let c = out.state.history[0].controller.unwrap();
        assert_eq!((c.l_nat, c.l_adv), (0.0, 0.0));
    }
    // loss balancing cannot normalise by a zero initial loss
    let cfg = TrainConfig { mode: Mode::Mtard, ..cfg };
    assert!(distill_mtard(&spec, &nat, &sat, &train, &cfg, RunOptions::default()).is_err());
}

#[test]
fn single_step_matches_hand_computation() {
    // one example, one batch, one step, no momentum or decay, ε = 0
    let x = 0.5;
    let features = Tensor::new(vec![1, 1], vec![x]).unwrap();
    let data = Dataset::new(features, vec![0], 2, Split::Train).unwrap();
    let clean = linear(&[1.0, -1.0, 0.2, 0.0], 1, Role::CleanTeacher);
    let robust = linear(&[0.3, 0.6, 0.0, -0.1], 1, Role::RobustTeacher);
    let mut cfg = quick(Mode::BaselineFixed, 1, 8);
    cfg.batch_size = 1;
    cfg.optimizer.momentum = 0.0;
    cfg.optimizer.weight_decay = 0.0;
    cfg.optimizer.lr = 0.1;
    cfg.attack.epsilon = 0.0;
    cfg.eval.epsilon = 0.0;
    cfg.balance.tau_init = 2.0;
    cfg.balance.alpha = 0.3;
    let spec = NetworkSpec::mlp(1, &[], 2).unwrap();
    let out = distill_mtard(&spec, &clean, &robust, &data, &cfg, RunOptions::default()).unwrap();

    let th = init_params(&spec, Role::Student, cfg.seed).unwrap().params().flatten();
    let p1 = |z0: f64, z1: f64, tau: f64| 1.0 / (1.0 + ((z0 - z1) / tau).exp());
    let s1 = p1(th[0] * x + th[2], th[1] * x + th[3], 1.0);
    let n1 = p1(1.0 * x + 0.2, -1.0 * x, 2.0);
    let a1 = p1(0.3 * x, 0.6 * x - 0.1, 2.0);
    // ∂/∂z_1 of 0.7·KL(n || s) + 0.3·KL(a || s); ∂/∂z_0 is its negative
    let g1 = 0.7 * (s1 - n1) + 0.3 * (s1 - a1);
    let expected = [th[0] + 0.1 * g1 * x, th[1] - 0.1 * g1 * x, th[2] + 0.1 * g1, th[3] - 0.1 * g1];
    for (got, want) in out.params.params().flatten().iter().zip(expected) {
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (train, test) = moons();
    let (nat, sat) = teachers(&train, 5);
    let student = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let mut cfg = quick(Mode::Mtard, 4, 6);
    cfg.lr_decay_epochs = vec![2];
    let full = distill_mtard(
        &student,
        &nat,
        &sat,
        &train,
        &cfg,
        RunOptions { eval_data: Some(&test), ..Default::default() },
    )
    .unwrap();
    let half = distill_mtard(
        &student,
        &nat,
        &sat,
        &train,
        &cfg,
        RunOptions { eval_data: Some(&test), halt_after: Some(2), ..Default::default() },
    )
    .unwrap();
    assert_eq!(half.state.epochs_done, 2);
    // round-trip the state through JSON as the CLI does
    let state = serde_json::from_str(&serde_json::to_string(&half.state).unwrap()).unwrap();
    let resumed = distill_mtard(
        &student,
        &nat,
        &sat,
        &train,
        &cfg,
        RunOptions { eval_data: Some(&test), resume: Some((half.params, state)), ..Default::default() },
    )
    .unwrap();
    assert_eq!(bits(&resumed.params), bits(&full.params));
    assert_eq!(resumed.state, full.state);
}

#[test]
fn epoch_hook_sees_every_epoch() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let cfg = quick(Mode::Natural, 3, 1);
    let mut seen = Vec::new();
    let mut hook = |e: &mtard_core::trainer::EpochEnd<'_>| {
        seen.push((e.record.epoch, e.is_best, e.state.epochs_done));
        Ok(())
    };
    let opts = RunOptions { on_epoch: Some(&mut hook), ..Default::default() };
    train_natural(&spec, &train, &cfg, opts).unwrap();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(seen[0].1);
    assert_eq!(seen[2].2, 3);
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let (train, _) = moons();
    let spec = NetworkSpec::mlp(2, &[8], 2).unwrap();
    let mut cfg = quick(Mode::Natural, 5, 1);
    cfg.optimizer.lr = 1e300;
    cfg.optimizer.momentum = 0.0;
    let err = train_natural(&spec, &train, &cfg, RunOptions::default()).err().unwrap();
    assert!(matches!(err, Error::Diverged { .. } | Error::Numeric(_) | Error::InvalidInput(_)), "{err}");
}

/// Paired pretraining runs: SAT buys robustness with clean accuracy.
#[test]
fn robust_teacher_trades_clean_for_robust_accuracy() {
    let eps = 0.1;
    let spec = NetworkSpec::mlp(2, &[32, 32], 2).unwrap();
    let eval = AttackConfig {
        epsilon: eps,
        step_size: eps / 4.0,
        steps: 20,
        random_start_scale: 0.001,
        loss_kind: LossKind::CrossEntropy,
    };
    let mut wins = (0, 0);
    for seed in 0..3 {
        let (train, test) = two_moons_split(400, 300, 0.1, seed).unwrap();
        let mut cfg = quick(Mode::Natural, 40, seed);
        cfg.attack = AttackConfig { epsilon: eps, step_size: eps / 4.0, steps: 10, ..AttackConfig::training_pgd() };
        cfg.eval.attacks = vec![AttackKind::Fgsm];
        cfg.eval.designated = AttackKind::Fgsm;
        let nat = train_natural(&spec, &train, &cfg, RunOptions::default()).unwrap().params;
        let sat = train_sat(&spec, &train, &TrainConfig { mode: Mode::Sat, ..cfg }, RunOptions::default())
            .unwrap()
            .params;
        let rob = |p| robust_accuracy(p, &test, &eval, 1).unwrap();
        wins.0 += usize::from(rob(&sat) > rob(&nat));
        wins.1 += usize::from(accuracy(&sat, &test).unwrap() < accuracy(&nat, &test).unwrap());
    }
    assert_eq!(wins, (3, 3));
}
