//! Euler-Maruyama simulation of the controlled, stopped diffusion.
//!
//! Two stepping schemes:
//! - naive: `N` constant steps of `dt = T/N`;
//! - adaptive: constant `dt` away from the boundary, but inside the band
//!   `Gamma = { dist(x) <= varsigma sqrt(3 d dt) }` the step shrinks to
//!   `max(dist^2 / (3 d varsigma^2), 1e-4 dt)` so one step cannot overshoot
//!   the boundary by much.
//!
//! A trajectory stores only states inside the closed ball: the first
//! proposal that lands outside ends the rollout with `exit = true` and is
//! discarded, so the last stored state is the last inside point and carries
//! the terminal cost in every loss. The final step is clamped so that a
//! trajectory that never exits ends at time `T` exactly (the clamped sum
//! `t + (T - t)` is exact in floating point once `t >= T/2`).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::problems::Problem;

/// Stepping scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Naive,
    Adaptive,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Naive => "naive",
            Scheme::Adaptive => "adaptive",
        }
    }
}

/// Which rule produced a step size; drives the step's treatment when
/// differentiating through `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Nominal `dt` (outside the band, or any naive step).
    Plain,
    /// Band rule `dist^2 / (3 d varsigma^2)`.
    Band,
    /// Minimum step `1e-4 dt`.
    Floor,
    /// Final step clamped to land exactly on the horizon.
    ClampedT,
}

impl StepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Plain => "plain",
            StepKind::Band => "band",
            StepKind::Floor => "floor",
            StepKind::ClampedT => "clamped",
        }
    }
}

/// All constants of one stepping configuration.
#[derive(Clone, Copy, Debug)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub t_horizon: f64,
    pub n_intervals: usize,
    pub dt: f64,
    pub min_step: f64,
    pub step_cap: usize,
    /// Width of the near-boundary band `varsigma sqrt(3 d dt)`.
    pub band_width: f64,
    /// Band-rule denominator `3 d varsigma^2`.
    pub band_denom: f64,
}

pub const MIN_STEP_FACTOR: f64 = 1e-4;
pub const STEP_CAP_FACTOR: usize = 16;

impl SchemeConfig {
    pub fn new(scheme: Scheme, t_horizon: f64, n_intervals: usize, problem: &dyn Problem) -> Self {
        assert!(t_horizon > 0.0, "horizon must be positive");
        assert!(n_intervals >= 2, "need at least two intervals");
        let dt = t_horizon / n_intervals as f64;
        let vs = problem.sigma_bound();
        let d = problem.dim() as f64;
        SchemeConfig {
            scheme,
            t_horizon,
            n_intervals,
            dt,
            min_step: MIN_STEP_FACTOR * dt,
            step_cap: STEP_CAP_FACTOR * n_intervals,
            band_width: vs * (3.0 * d * dt).sqrt(),
            band_denom: 3.0 * d * (vs * vs),
        }
    }

    /// Step size for a state at distance `dist` from the boundary, at time
    /// `t`, taking step number `step_index`. `dist` must be positive.
    pub fn step_size(&self, dist: f64, t: f64, step_index: usize) -> (f64, StepKind) {
        assert!(dist > 0.0, "step size queried outside the domain");
        match self.scheme {
            Scheme::Naive => {
                if step_index == self.n_intervals - 1 {
                    (self.t_horizon - t, StepKind::ClampedT)
                } else {
                    (self.dt, StepKind::Plain)
                }
            }
            Scheme::Adaptive => {
                let (h, kind) = if dist > self.band_width {
                    (self.dt, StepKind::Plain)
                } else {
                    let h0 = (dist * dist) / self.band_denom;
                    if h0 > self.min_step {
                        (h0, StepKind::Band)
                    } else {
                        (self.min_step, StepKind::Floor)
                    }
                };
                if t + h >= self.t_horizon {
                    (self.t_horizon - t, StepKind::ClampedT)
                } else {
                    (h, kind)
                }
            }
        }
    }
}

/// One simulated path, flat-stored. All states lie in the closed ball;
/// arrays `steps`, `noises`, `controls`, `step_kinds` describe the
/// `n_steps()` transitions between consecutive stored states.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dim: usize,
    pub control_dim: usize,
    pub states: Vec<f64>,
    pub times: Vec<f64>,
    pub steps: Vec<f64>,
    pub step_kinds: Vec<StepKind>,
    pub noises: Vec<f64>,
    pub controls: Vec<f64>,
    /// A proposal left the ball before the horizon.
    pub exit: bool,
    /// The step cap fired before exit or horizon.
    pub truncated: bool,
    /// Steps where the observed diffusion norm exceeded the problem's
    /// declared bound by more than 1e-9.
    pub sigma_violations: usize,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    pub fn noise(&self, n: usize) -> &[f64] {
        &self.noises[n * self.dim..(n + 1) * self.dim]
    }

    pub fn control(&self, n: usize) -> &[f64] {
        &self.controls[n * self.control_dim..(n + 1) * self.control_dim]
    }

    pub fn terminal_time(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Simulates one trajectory from `x0` under `policy` (which writes the
/// control for a given state). Identical `(problem, policy, x0, rng state)`
/// produce identical trajectories.
pub fn rollout(
    problem: &dyn Problem,
    policy: &mut dyn FnMut(&[f64], &mut [f64]),
    x0: &[f64],
    cfg: &SchemeConfig,
    rng: &mut impl Rng,
) -> Trajectory {
    let d = problem.dim();
    let du = problem.control_dim();
    let domain = problem.domain();
    assert_eq!(x0.len(), d, "initial state dimension mismatch");
    assert!(domain.contains(x0), "initial state outside the domain");

    let mut traj = Trajectory {
        dim: d,
        control_dim: du,
        states: x0.to_vec(),
        times: vec![0.0],
        steps: Vec::new(),
        step_kinds: Vec::new(),
        noises: Vec::new(),
        controls: Vec::new(),
        exit: false,
        truncated: false,
        sigma_violations: 0,
    };

    let sigma_tol = problem.sigma_bound() + 1e-9;
    let mut x = x0.to_vec();
    let mut u = vec![0.0; du];
    let mut b = vec![0.0; d];
    let mut sd = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut t = 0.0;
    let mut n = 0usize;

    while t < cfg.t_horizon {
        if n >= cfg.step_cap {
            traj.truncated = true;
            break;
        }
        let dist = domain.signed_dist(&x);
        let (h, kind) = cfg.step_size(dist, t, n);
        debug_assert!(h > 0.0, "degenerate step size");
        policy(&x, &mut u);
        problem.drift(&x, &u, &mut b);
        problem.sigma_diag(&x, &u, &mut sd);
        for v in &sd {
            if v.abs() > sigma_tol {
                traj.sigma_violations += 1;
                break;
            }
        }
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let sqrt_h = h.sqrt();
        let mut sq = 0.0;
        for i in 0..d {
            let xp = (x[i] + b[i] * h) + (sd[i] * xi[i]) * sqrt_h;
            sq += xp * xp;
            b[i] = xp; // reuse b as the proposal buffer
        }
        if sq.sqrt() >= domain.radius {
            traj.exit = true;
            break;
        }
        traj.steps.push(h);
        traj.step_kinds.push(kind);
        traj.noises.extend_from_slice(&xi);
        traj.controls.extend_from_slice(&u);
        x.copy_from_slice(&b);
        traj.states.extend_from_slice(&x);
        t += h;
        traj.times.push(t);
        n += 1;
    }

    traj
}

/// `sum_n exp(-gamma t_n) f(X_n, u_n) h_n` over the stored transitions.
pub fn discounted_running_cost(traj: &Trajectory, problem: &dyn Problem) -> f64 {
    let gamma = problem.gamma();
    let mut acc = 0.0;
    for n in 0..traj.n_steps() {
        let factor = (-gamma * traj.times[n]).exp();
        let f = problem.running_cost(traj.state(n), traj.control(n));
        acc += (factor * f) * traj.steps[n];
    }
    acc
}

/// `sum_n exp(-gamma t_n) G(X_n)^T sigma(X_n, u_n) xi_n sqrt(h_n)` using the
/// same noise realizations that generated the trajectory.
pub fn discounted_stochastic_integral(
    traj: &Trajectory,
    grad_field: &mut dyn FnMut(&[f64], &mut [f64]),
    problem: &dyn Problem,
) -> f64 {
    let d = traj.dim;
    let gamma = problem.gamma();
    let mut g = vec![0.0; d];
    let mut sd = vec![0.0; d];
    let mut acc = 0.0;
    for n in 0..traj.n_steps() {
        let x = traj.state(n);
        grad_field(x, &mut g);
        problem.sigma_diag(x, traj.control(n), &mut sd);
        let xi = traj.noise(n);
        let mut inner = 0.0;
        for i in 0..d {
            inner += g[i] * (sd[i] * xi[i]);
        }
        let w = (-gamma * traj.times[n]).exp() * traj.steps[n].sqrt();
        acc += inner * w;
    }
    acc
}

/// Fraction of stored states that lie within `width` of the boundary;
/// diagnostic for the adaptive scheme's near-boundary refinement.
pub fn near_boundary_fraction(trajs: &[Trajectory], radius: f64, width: f64) -> f64 {
    let mut near = 0usize;
    let mut total = 0usize;
    for traj in trajs {
        for n in 0..=traj.n_steps() {
            let x = traj.state(n);
            let mut sq = 0.0;
            for v in x {
                sq += v * v;
            }
            if radius - sq.sqrt() < width {
                near += 1;
            }
            total += 1;
        }
    }
    near as f64 / total as f64
}
