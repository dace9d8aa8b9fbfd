//! Simulation tests: step-rule semantics for both schemes, containment of
//! stored states, exit/truncation flags, and hand-checked values for the
//! discounted running-cost and stochastic-integral sums.

use rand::rngs::StdRng;
use rand::SeedableRng;

use hjbac::autodiff::{NodeId, Tape};
use hjbac::networks::ControlHead;
use hjbac::problems::{standard_problem, BallDomain, Problem};
use hjbac::rollout::{
    discounted_running_cost, discounted_stochastic_integral, near_boundary_fraction, rollout,
    Scheme, SchemeConfig, StepKind, Trajectory, MIN_STEP_FACTOR, STEP_CAP_FACTOR,
};

/// Configurable test diffusion: radial drift `speed * x / |x|`, constant
/// diagonal diffusion, constant running cost. The tape methods are never
/// exercised by the simulator.
struct RadialDiffusion {
    dim: usize,
    radius: f64,
    gamma: f64,
    sigma: f64,
    sigma_bound: f64,
    speed: f64,
    running: f64,
}

impl RadialDiffusion {
    fn calm(dim: usize) -> Self {
        RadialDiffusion {
            dim,
            radius: 1.0,
            gamma: 0.0,
            sigma: 1e-8,
            sigma_bound: 1.0,
            speed: 0.0,
            running: 1.0,
        }
    }
}

impl Problem for RadialDiffusion {
    fn name(&self) -> &'static str {
        "radial-test"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn domain(&self) -> BallDomain {
        BallDomain::new(self.radius)
    }
    fn sigma_bound(&self) -> f64 {
        self.sigma_bound
    }
    fn control_head(&self) -> ControlHead {
        ControlHead::Unconstrained
    }

    fn drift(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > 0.0 {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = self.speed * xi / r;
            }
        } else {
            out.fill(0.0);
        }
    }
    fn sigma_diag(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(self.sigma);
    }
    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        self.running
    }
    fn boundary_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn drift_tape(&self, _t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        unimplemented!("tape coefficients are not used by the simulator")
    }
    fn sigma_diag_tape(&self, _t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        unimplemented!("tape coefficients are not used by the simulator")
    }
    fn running_cost_tape(&self, _t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        unimplemented!("tape coefficients are not used by the simulator")
    }
    fn boundary_cost_tape(&self, _t: &mut Tape, _x: NodeId) -> NodeId {
        unimplemented!("tape coefficients are not used by the simulator")
    }
}

fn zero_policy(_x: &[f64], u: &mut [f64]) {
    u.fill(0.0);
}

/// Structural invariants every trajectory must satisfy.
fn check_shape(traj: &Trajectory) {
    let n = traj.n_steps();
    assert_eq!(traj.states.len(), (n + 1) * traj.dim, "states length");
    assert_eq!(traj.times.len(), n + 1, "times length");
    assert_eq!(traj.step_kinds.len(), n, "step_kinds length");
    assert_eq!(traj.noises.len(), n * traj.dim, "noises length");
    assert_eq!(traj.controls.len(), n * traj.control_dim, "controls length");
    assert_eq!(traj.times[0], 0.0, "trajectories start at time zero");
    for w in traj.times.windows(2) {
        assert!(w[1] > w[0], "times must increase strictly");
    }
    for (h, t) in traj.steps.iter().zip(traj.times.windows(2)) {
        assert!(*h > 0.0, "steps must be positive");
        assert_eq!(t[0] + h, t[1], "times accumulate the steps");
    }
}

// --- naive scheme ---------------------------------------------------------

#[test]
fn naive_scheme_takes_exactly_n_steps_to_the_horizon() {
    let problem = RadialDiffusion::calm(3);
    // T/N is not representable in binary, so the final clamped step has to
    // repair the accumulated rounding.
    let (t_horizon, n_intervals) = (0.3, 7);
    let cfg = SchemeConfig::new(Scheme::Naive, t_horizon, n_intervals, &problem);
    let mut rng = StdRng::seed_from_u64(1);
    let traj = rollout(&problem, &mut zero_policy, &[0.0; 3], &cfg, &mut rng);

    check_shape(&traj);
    assert!(!traj.exit && !traj.truncated);
    assert_eq!(traj.n_steps(), n_intervals);
    assert_eq!(traj.terminal_time(), t_horizon, "lands on T exactly");
    for n in 0..n_intervals - 1 {
        assert_eq!(traj.steps[n], cfg.dt, "interior steps equal dt bitwise");
        assert_eq!(traj.step_kinds[n], StepKind::Plain);
    }
    assert_eq!(traj.step_kinds[n_intervals - 1], StepKind::ClampedT);
}

// --- containment and flags ------------------------------------------------

#[test]
fn stored_states_never_leave_the_ball() {
    let problem = standard_problem("lqr", 4).unwrap();
    let mut policy = |x: &[f64], u: &mut [f64]| {
        problem.exact_control(x, u);
    };
    let mut exits = 0usize;
    for scheme in [Scheme::Naive, Scheme::Adaptive] {
        let cfg = SchemeConfig::new(scheme, 0.2, 50, problem.as_ref());
        for seed in 0..200u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let x0 = problem.domain().sample_interior(4, &mut rng);
            let traj = rollout(problem.as_ref(), &mut policy, &x0, &cfg, &mut rng);
            check_shape(&traj);
            for n in 0..=traj.n_steps() {
                assert!(
                    problem.domain().signed_dist(traj.state(n)) > 0.0,
                    "stored state must stay strictly inside the ball"
                );
            }
            if traj.exit {
                exits += 1;
                assert!(!traj.truncated);
                assert!(traj.terminal_time() < cfg.t_horizon);
            } else if !traj.truncated {
                assert_eq!(traj.terminal_time(), cfg.t_horizon);
                if scheme == Scheme::Naive {
                    assert_eq!(traj.n_steps(), cfg.n_intervals);
                }
            }
        }
    }
    // With sigma = sqrt(2) I and T = 0.2 a healthy share of paths exits.
    assert!(exits > 50, "expected many exits, saw {exits}");
}

// --- adaptive scheme ------------------------------------------------------

#[test]
fn adaptive_step_rule_obeys_band_floor_and_clamp() {
    // Outward drift pushes the state through the band; moderate noise makes
    // some paths exit while others stall on floor steps.
    let problem = RadialDiffusion {
        dim: 3,
        radius: 1.0,
        gamma: 0.0,
        sigma: 0.3,
        sigma_bound: 0.5,
        speed: 2.0,
        running: 1.0,
    };
    let cfg = SchemeConfig::new(Scheme::Adaptive, 0.2, 20, &problem);
    assert_eq!(cfg.min_step, MIN_STEP_FACTOR * cfg.dt);
    assert_eq!(cfg.step_cap, STEP_CAP_FACTOR * 20);

    let (mut plain, mut band, mut floor) = (0usize, 0usize, 0usize);
    let mut endings = 0usize;
    for seed in 0..40u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let x0 = [0.8, 0.0, 0.0];
        let traj = rollout(&problem, &mut zero_policy, &x0, &cfg, &mut rng);
        check_shape(&traj);
        if traj.exit || traj.truncated {
            endings += 1;
        }
        for n in 0..traj.n_steps() {
            let dist = problem.domain().signed_dist(traj.state(n));
            let h = traj.steps[n];
            match traj.step_kinds[n] {
                StepKind::Plain => {
                    plain += 1;
                    assert_eq!(h, cfg.dt);
                    assert!(dist > cfg.band_width, "plain steps only outside the band");
                }
                StepKind::Band => {
                    band += 1;
                    assert!(dist <= cfg.band_width, "band steps only inside the band");
                    assert_eq!(h, (dist * dist) / cfg.band_denom, "band formula");
                    assert!(h > cfg.min_step && h <= cfg.dt);
                }
                StepKind::Floor => {
                    floor += 1;
                    assert!(dist <= cfg.band_width);
                    assert!((dist * dist) / cfg.band_denom <= cfg.min_step);
                    assert_eq!(h, cfg.min_step);
                }
                StepKind::ClampedT => {
                    assert_eq!(n, traj.n_steps() - 1, "clamp can only end a path");
                    assert_eq!(traj.times[n] + h, cfg.t_horizon);
                }
            }
        }
    }
    assert!(plain > 0, "no plain steps observed");
    assert!(band > 0, "no band steps observed");
    assert!(floor > 0, "no floor steps observed");
    assert!(endings > 0, "no path exited or hit the cap");
}

#[test]
fn adaptive_band_steps_from_a_frozen_state() {
    // Negligible noise and zero drift freeze the state inside the band, so
    // every step uses the band rule until the horizon clamp.
    let problem = RadialDiffusion {
        dim: 2,
        sigma: 1e-8,
        ..RadialDiffusion::calm(2)
    };
    let cfg = SchemeConfig::new(Scheme::Adaptive, 0.1, 10, &problem);
    let x0 = [0.9, 0.0];
    assert!(problem.domain().signed_dist(&x0) < cfg.band_width);

    let mut rng = StdRng::seed_from_u64(3);
    let traj = rollout(&problem, &mut zero_policy, &x0, &cfg, &mut rng);
    check_shape(&traj);
    assert!(!traj.exit && !traj.truncated);
    assert_eq!(traj.terminal_time(), cfg.t_horizon, "clamp lands on T exactly");

    let n = traj.n_steps();
    // dist ~ 0.1 gives h ~ dist^2 / (3 d) = 1/600, so about 60 band steps.
    assert!((55..=65).contains(&n), "unexpected step count {n}");
    for k in 0..n - 1 {
        assert_eq!(traj.step_kinds[k], StepKind::Band);
        let dist = problem.domain().signed_dist(traj.state(k));
        assert_eq!(traj.steps[k], (dist * dist) / cfg.band_denom);
    }
    assert_eq!(traj.step_kinds[n - 1], StepKind::ClampedT);
}

#[test]
fn step_cap_truncates_a_stuck_trajectory() {
    // So close to the wall that the band step falls below the floor: the
    // path burns `16 N` floor steps without covering any time.
    let problem = RadialDiffusion {
        dim: 2,
        sigma: 1e-8,
        ..RadialDiffusion::calm(2)
    };
    let cfg = SchemeConfig::new(Scheme::Adaptive, 0.1, 10, &problem);
    let x0 = [1.0 - 1e-3, 0.0];

    let mut rng = StdRng::seed_from_u64(4);
    let traj = rollout(&problem, &mut zero_policy, &x0, &cfg, &mut rng);
    check_shape(&traj);
    assert!(traj.truncated, "cap must fire");
    assert!(!traj.exit);
    assert_eq!(traj.n_steps(), cfg.step_cap);
    assert!(traj.step_kinds.iter().all(|k| *k == StepKind::Floor));
    assert!(traj.terminal_time() < 0.01 * cfg.t_horizon);
}

// --- discounted sums ------------------------------------------------------

#[test]
fn running_cost_telescopes_when_undiscounted() {
    // f = 1, gamma = 0: the Riemann sum collapses to sum(h_n) accumulated in
    // the same order as the time grid, hence equals the terminal time
    // bitwise. The frozen-band path gives genuinely non-constant steps.
    let problem = RadialDiffusion {
        dim: 2,
        sigma: 1e-8,
        ..RadialDiffusion::calm(2)
    };
    for (scheme, x0) in [(Scheme::Naive, [0.2, 0.1]), (Scheme::Adaptive, [0.9, 0.0])] {
        let cfg = SchemeConfig::new(scheme, 0.1, 10, &problem);
        let mut rng = StdRng::seed_from_u64(5);
        let traj = rollout(&problem, &mut zero_policy, &x0, &cfg, &mut rng);
        assert!(traj.n_steps() > 5);
        let cost = discounted_running_cost(&traj, &problem);
        assert_eq!(cost, traj.terminal_time());
    }

    let zero_f = RadialDiffusion {
        running: 0.0,
        ..RadialDiffusion::calm(2)
    };
    let cfg = SchemeConfig::new(Scheme::Naive, 0.1, 10, &zero_f);
    let mut rng = StdRng::seed_from_u64(6);
    let traj = rollout(&zero_f, &mut zero_policy, &[0.0; 2], &cfg, &mut rng);
    assert_eq!(discounted_running_cost(&traj, &zero_f), 0.0);
}

#[test]
fn running_cost_matches_the_geometric_sum() {
    // f = 1, gamma = 1, 50 naive steps of dt = 0.004:
    //   sum_{n=0}^{49} e^{-n dt} dt = dt (1 - e^{-T}) / (1 - e^{-dt})
    // which evaluates to 0.18163202710812696.
    let problem = RadialDiffusion {
        gamma: 1.0,
        ..RadialDiffusion::calm(4)
    };
    let cfg = SchemeConfig::new(Scheme::Naive, 0.2, 50, &problem);
    let mut rng = StdRng::seed_from_u64(7);
    let traj = rollout(&problem, &mut zero_policy, &[0.0; 4], &cfg, &mut rng);
    assert_eq!(traj.n_steps(), 50);

    let cost = discounted_running_cost(&traj, &problem);
    let expected = 0.18163202710812696;
    assert!(
        (cost - expected).abs() < 1e-13,
        "geometric sum: got {cost}, want {expected}"
    );
}

#[test]
fn two_step_integrals_match_hand_formulas() {
    // A hand-built two-step trajectory in d = 2 pins both discounted sums
    // to expressions recomputed here term by term.
    let problem = RadialDiffusion {
        gamma: 0.7,
        sigma: 0.4,
        running: 3.0,
        ..RadialDiffusion::calm(2)
    };
    let (h0, h1) = (0.01, 0.0025);
    let traj = Trajectory {
        dim: 2,
        control_dim: 1,
        states: vec![0.1, 0.2, 0.15, 0.18, 0.16, 0.21],
        times: vec![0.0, h0, h0 + h1],
        steps: vec![h0, h1],
        step_kinds: vec![StepKind::Plain, StepKind::Band],
        noises: vec![0.3, -1.1, 0.8, 0.45],
        controls: vec![0.0, 0.0],
        exit: true,
        truncated: false,
        sigma_violations: 0,
    };

    let run = discounted_running_cost(&traj, &problem);
    let want_run = (1.0f64 * 3.0) * h0 + ((-0.7f64 * h0).exp() * 3.0) * h1;
    assert_eq!(run, want_run, "running-cost sum");

    // grad field G(x) = x.
    let mut grad = |x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
    let stoch = discounted_stochastic_integral(&traj, &mut grad, &problem);
    let inner0 = 0.1 * (0.4 * 0.3) + 0.2 * (0.4 * -1.1);
    let inner1 = 0.15 * (0.4 * 0.8) + 0.18 * (0.4 * 0.45);
    let want = inner0 * ((-0.7f64 * 0.0).exp() * h0.sqrt())
        + inner1 * ((-0.7f64 * h0).exp() * h1.sqrt());
    assert_eq!(stoch, want, "stochastic-integral sum");

    let mut zero_grad = |_x: &[f64], out: &mut [f64]| out.fill(0.0);
    assert_eq!(discounted_stochastic_integral(&traj, &mut zero_grad, &problem), 0.0);
}

// --- determinism and diagnostics -------------------------------------------

#[test]
fn identical_seeds_give_identical_trajectories() {
    let problem = standard_problem("eikonal", 3).unwrap();
    let cfg = SchemeConfig::new(Scheme::Adaptive, 0.2, 50, problem.as_ref());
    let mut policy = |x: &[f64], u: &mut [f64]| {
        problem.exact_control(x, u);
    };
    let x0 = [0.3, -0.4, 0.5];

    let mut run = |seed: u64| {
        let mut rng = StdRng::seed_from_u64(seed);
        rollout(problem.as_ref(), &mut policy, &x0, &cfg, &mut rng)
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert_eq!(a.states, b.states);
    assert_eq!(a.times, b.times);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.noises, b.noises);
    assert_eq!(a.controls, b.controls);
    assert_eq!(a.exit, b.exit);
    assert_ne!(a.noises, c.noises, "different seeds must differ");
}

#[test]
fn near_boundary_fraction_counts_states_in_the_shell() {
    let point = |x: f64, y: f64| Trajectory {
        dim: 2,
        control_dim: 1,
        states: vec![x, y],
        times: vec![0.0],
        steps: vec![],
        step_kinds: vec![],
        noises: vec![],
        controls: vec![],
        exit: false,
        truncated: false,
        sigma_violations: 0,
    };
    let trajs = vec![point(0.5, 0.0), point(0.95, 0.0)];
    assert_eq!(near_boundary_fraction(&trajs, 1.0, 0.1), 0.5);
    assert_eq!(near_boundary_fraction(&trajs, 1.0, 0.6), 1.0);
}
