//! Trainer tests: config defaults and hashing, the learning-rate schedule,
//! validation-error oracles, deterministic histories, bitwise checkpoint
//! resume, and the rescue path on numeric failure.

use std::fs;

use hjbac::losses::TdKind;
use hjbac::rollout::Scheme;
use hjbac::trainer::{validate, MetricsRecord, TrainConfig, TrainError, Trainer};

/// Small, fast configuration for the 2d LQR used throughout.
fn small_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_problem("lqr", 2);
    cfg.t_horizon = 0.1;
    cfg.n_intervals = 10;
    cfg.batch = 32;
    cfg.width = 8;
    cfg.depth = 1;
    cfg.stage_iters = [4, 3, 3];
    cfg.eval_every = 2;
    cfg.seed = seed;
    cfg
}

fn params_of(t: &Trainer) -> Vec<Vec<f64>> {
    let mut all = vec![t.nets.value.params().values().to_vec()];
    if let Some(g) = &t.nets.grad {
        all.push(g.params().values().to_vec());
    }
    all.push(t.nets.control.params().values().to_vec());
    all
}

fn assert_same_history(a: &[MetricsRecord], b: &[MetricsRecord]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.iter, y.iter);
        assert_eq!(x.err_v.to_bits(), y.err_v.to_bits());
        assert_eq!(x.err_u.to_bits(), y.err_u.to_bits());
        assert_eq!(x.critic_loss.to_bits(), y.critic_loss.to_bits());
        assert_eq!(x.actor_loss.to_bits(), y.actor_loss.to_bits());
    }
}

// --- configuration ----------------------------------------------------------

#[test]
fn defaults_follow_the_dimension_rules() {
    let low = TrainConfig::for_problem("lqr", 4);
    assert_eq!(low.t_horizon, 0.2);
    assert_eq!(low.n_intervals, 50);
    assert_eq!(low.batch, 1024);
    assert_eq!(low.depth, 2);
    assert_eq!(low.eta, 1.0);
    assert_eq!(low.stage_iters, [20_000, 10_000, 10_000]);
    assert_eq!(low.stage_lrs, [1e-3, 1e-4, 1e-5]);
    assert_eq!(low.eval_every, 100);
    assert!(low.grad_through_h);
    assert_eq!(low.scheme, Scheme::Adaptive);
    assert_eq!(low.td, TdKind::VrLstd);

    let high = TrainConfig::for_problem("eikonal", 20);
    assert_eq!(high.n_intervals, 100);
    assert_eq!(high.batch, 2048);
    assert_eq!(high.depth, 3);
    assert_eq!(high.stage_iters[0], 30_000);
}

#[test]
fn lr_schedule_switches_at_stage_boundaries() {
    let mut cfg = small_cfg(1);
    cfg.stage_iters = [5, 3, 2];
    cfg.stage_lrs = [0.1, 0.01, 0.001];
    assert_eq!(cfg.total_iters(), 10);
    assert_eq!(cfg.lr_at(0), 0.1);
    assert_eq!(cfg.lr_at(4), 0.1);
    assert_eq!(cfg.lr_at(5), 0.01);
    assert_eq!(cfg.lr_at(7), 0.01);
    assert_eq!(cfg.lr_at(8), 0.001);
    assert_eq!(cfg.lr_at(999), 0.001);
}

#[test]
fn config_hash_tracks_every_semantic_field() {
    let base = small_cfg(3);
    assert_eq!(base.hash(), small_cfg(3).hash(), "hash must be a pure function");

    let mut variants: Vec<TrainConfig> = Vec::new();
    let mut v = small_cfg(3);
    v.problem = "vdp".into();
    variants.push(v);
    let mut v = small_cfg(3);
    v.dim = 3;
    variants.push(v);
    let mut v = small_cfg(3);
    v.scheme = Scheme::Naive;
    variants.push(v);
    let mut v = small_cfg(3);
    v.td = TdKind::Lstd;
    variants.push(v);
    let mut v = small_cfg(3);
    v.t_horizon = 0.2;
    variants.push(v);
    let mut v = small_cfg(3);
    v.n_intervals = 11;
    variants.push(v);
    let mut v = small_cfg(3);
    v.batch = 33;
    variants.push(v);
    let mut v = small_cfg(3);
    v.eta = 0.5;
    variants.push(v);
    let mut v = small_cfg(3);
    v.width = 9;
    variants.push(v);
    let mut v = small_cfg(3);
    v.depth = 2;
    variants.push(v);
    let mut v = small_cfg(3);
    v.stage_iters = [5, 3, 3];
    variants.push(v);
    let mut v = small_cfg(3);
    v.stage_lrs = [1e-3, 1e-4, 2e-5];
    variants.push(v);
    let mut v = small_cfg(3);
    v.seed = 4;
    variants.push(v);
    let mut v = small_cfg(3);
    v.eval_every = 7;
    variants.push(v);
    let mut v = small_cfg(3);
    v.grad_through_h = false;
    variants.push(v);
    let mut v = small_cfg(3);
    v.params.p = 1.5;
    variants.push(v);
    let mut v = small_cfg(3);
    v.params.u_max = 9.0;
    variants.push(v);

    for (i, v) in variants.iter().enumerate() {
        assert_ne!(v.hash(), base.hash(), "variant {i} did not change the hash");
    }

    let echo = base.canonical_string();
    for key in [
        "problem = lqr",
        "dim = 2",
        "seed = 3",
        "td = vr-lstd",
        "scheme = adaptive",
    ] {
        assert!(echo.contains(key), "canonical string misses `{key}`:\n{echo}");
    }
}

#[test]
fn build_rejects_inconsistent_problems() {
    let mut cfg = small_cfg(1);
    cfg.problem = "vdp".into();
    cfg.dim = 3; // state must be even pairs (y, z)
    assert!(matches!(Trainer::new(cfg), Err(TrainError::Config(_))));

    let mut cfg = small_cfg(1);
    cfg.problem = "nosuch".into();
    assert!(matches!(Trainer::new(cfg), Err(TrainError::Config(_))));

    let mut cfg = small_cfg(1);
    cfg.stage_iters = [0, 0, 0];
    cfg.batch = 0;
    assert!(matches!(Trainer::new(cfg), Err(TrainError::Config(_))));
}

// --- training loop ----------------------------------------------------------

#[test]
fn zero_iterations_yield_initialized_nets_and_empty_history() {
    let mut t = Trainer::new(small_cfg(5)).unwrap();
    t.run(0, None).unwrap();
    assert_eq!(t.iteration(), 0);
    assert!(t.history.is_empty());
    assert!(t.nets.value.param_len() > 0);
    assert!(t.nets.grad.is_some(), "vr-lstd trains a gradient network");
    let (ev, eu) = t.validate_now().expect("lqr has exact solutions");
    assert!(ev.is_finite() && eu.is_finite());
}

#[test]
fn identical_configs_train_identically() {
    let mut a = Trainer::new(small_cfg(6)).unwrap();
    let mut b = Trainer::new(small_cfg(6)).unwrap();
    a.run(6, None).unwrap();
    b.run(6, None).unwrap();
    assert_eq!(params_of(&a), params_of(&b));
    assert_same_history(&a.history, &b.history);

    let mut c = Trainer::new(small_cfg(7)).unwrap();
    c.run(6, None).unwrap();
    assert_ne!(params_of(&a), params_of(&c), "seeds must matter");
}

#[test]
fn validation_matches_an_independent_recomputation() {
    let mut t = Trainer::new(small_cfg(8)).unwrap();
    t.run(2, None).unwrap();

    let (ev, eu) = t.validate_now().unwrap();
    let d = t.problem.dim();
    let du = t.problem.control_dim();
    let pts = t.validation_points().to_vec();
    assert_eq!(pts.len(), t.cfg.batch * d, "validation set size equals the batch");

    let mut num_v = 0.0;
    let mut den_v = 0.0;
    let mut num_u = 0.0;
    let mut den_u = 0.0;
    let mut scratch = hjbac::networks::MlpScratch::default();
    let mut raw = Vec::new();
    let mut u = vec![0.0; du];
    let mut us = vec![0.0; du];
    for j in 0..t.cfg.batch {
        let x = &pts[j * d..(j + 1) * d];
        let vs = t.problem.exact_value(x).unwrap();
        let v = t.nets.eval_value(x, &mut scratch);
        num_v += (vs - v) * (vs - v);
        den_v += vs * vs;
        assert!(t.problem.exact_control(x, &mut us));
        t.nets.eval_control(x, &mut u, &mut scratch, &mut raw);
        for i in 0..du {
            let e = us[i] - u[i];
            num_u += e * e;
            den_u += us[i] * us[i];
        }
    }
    assert_eq!(ev, (num_v / den_v).sqrt());
    assert_eq!(eu, (num_u / den_u).sqrt());
}

#[test]
fn zeroed_networks_give_unit_relative_error() {
    // V = 0 and u = 0 make the numerators equal the denominators term by
    // term, so both relative errors are exactly 1.
    let mut t = Trainer::new(small_cfg(9)).unwrap();
    for p in t.nets.value.params_mut().values_mut() {
        *p = 0.0;
    }
    for p in t.nets.control.params_mut().values_mut() {
        *p = 0.0;
    }
    let (ev, eu) = validate(&t.nets, &*t.problem, t.validation_points()).unwrap();
    assert_eq!(ev, 1.0);
    assert_eq!(eu, 1.0);
}

#[test]
fn history_cadence_covers_schedule_switches() {
    let mut cfg = small_cfg(10);
    cfg.stage_iters = [6, 4, 2];
    cfg.eval_every = 5;
    let mut t = Trainer::new(cfg).unwrap();
    t.run(12, None).unwrap();

    let iters: Vec<u64> = t.history.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![5, 10, 12]);
    for switch in [6u64, 10] {
        assert!(
            iters.iter().any(|&i| i.abs_diff(switch) <= 5),
            "no evaluation within eval_every of the switch at {switch}"
        );
    }
    for r in &t.history {
        assert!(r.err_v.is_finite() && r.critic_loss.is_finite());
    }
}

#[test]
fn training_makes_progress_at_desk_scale() {
    // Statistical counterpart of the large-budget trend check: the median
    // validation error over the second half of a short run must fall below
    // the first half's.
    let mut cfg = small_cfg(11);
    cfg.width = 12;
    cfg.n_intervals = 20;
    cfg.t_horizon = 0.2;
    cfg.stage_iters = [400, 100, 100];
    cfg.eval_every = 10;
    let mut t = Trainer::new(cfg).unwrap();
    t.run(600, None).unwrap();

    let errs: Vec<f64> = t.history.iter().map(|r| r.err_v).collect();
    let half = errs.len() / 2;
    let median = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let first = median(&errs[..half]);
    let second = median(&errs[half..]);
    assert!(
        second < first,
        "no training progress: median err_v {first:.3e} -> {second:.3e}"
    );
}

// --- checkpointing ----------------------------------------------------------

#[test]
fn checkpoint_resume_continues_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.hjbb");

    let mut straight = Trainer::new(small_cfg(12)).unwrap();
    straight.run(10, None).unwrap();

    let mut first = Trainer::new(small_cfg(12)).unwrap();
    first.run(4, None).unwrap();
    first.save_checkpoint(&path).unwrap();

    let mut resumed = Trainer::resume(small_cfg(12), &path).unwrap();
    assert_eq!(resumed.iteration(), 4);
    assert_eq!(params_of(&resumed), params_of(&first));
    resumed.run(6, None).unwrap();

    assert_eq!(params_of(&resumed), params_of(&straight));
    assert_eq!(resumed.iteration(), straight.iteration());

    // The Adam moments were restored too: one more step stays in lockstep.
    let ra = resumed.step().unwrap();
    let sa = straight.step().unwrap();
    assert_eq!(ra.critic_loss.to_bits(), sa.critic_loss.to_bits());
    assert_eq!(ra.actor_loss.to_bits(), sa.actor_loss.to_bits());
    assert_eq!(params_of(&resumed), params_of(&straight));
}

#[test]
fn resume_rejects_foreign_or_mismatched_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.hjbb");

    let mut t = Trainer::new(small_cfg(13)).unwrap();
    t.run(2, None).unwrap();
    t.save_checkpoint(&path).unwrap();

    // Different hyperparameters: hash mismatch.
    let mut other = small_cfg(13);
    other.eta = 0.25;
    match Trainer::resume(other, &path) {
        Err(TrainError::Config(msg)) => {
            assert!(msg.contains("configuration"), "got: {msg}")
        }
        Err(other) => panic!("expected a config-hash rejection, got {other:?}"),
        Ok(_) => panic!("expected a config-hash rejection, got a trainer"),
    }

    // Different seed: stream continuation would silently diverge.
    match Trainer::resume(small_cfg(14), &path) {
        Err(TrainError::Config(msg)) => assert!(msg.contains("seed"), "got: {msg}"),
        Err(other) => panic!("expected a seed rejection, got {other:?}"),
        Ok(_) => panic!("expected a seed rejection, got a trainer"),
    }

    // Garbage file: checkpoint-format error.
    let junk = dir.path().join("junk.hjbb");
    fs::write(&junk, b"not a bundle at all").unwrap();
    assert!(matches!(
        Trainer::resume(small_cfg(13), &junk),
        Err(TrainError::Checkpoint(_))
    ));
}

#[test]
fn numeric_failure_rescues_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let rescue = dir.path().join("rescue.hjbb");

    // Two sane iterations, then a learning rate that sends the value
    // parameters far enough that the next forward pass overflows (the
    // product of two ~1e155 layers exceeds f64 range).
    let mut cfg = small_cfg(15);
    cfg.stage_iters = [2, 48, 0];
    cfg.stage_lrs = [1e-3, 1e155, 1e155];
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let err = t.run(50, Some(&rescue)).unwrap_err();
    assert!(matches!(err, TrainError::Numeric { .. }), "got {err:?}");
    assert!(rescue.exists(), "rescue checkpoint must be written");

    // The rescue bundle holds the last state that survived an update.
    let resumed = Trainer::resume(cfg, &rescue).unwrap();
    assert!(resumed.iteration() > 0);
    assert!(resumed
        .nets
        .value
        .params()
        .values()
        .iter()
        .all(|v| v.is_finite()));
}
