//! WebAssembly bindings for a single-page browser demo of the solver.
//!
//! The page drives three operations on a two-dimensional benchmark
//! problem, all running inside the browser:
//!
//! 1. [`Demo::simulate_paths`] — roll stopped Euler-Maruyama trajectories
//!    under the learned or the exact control, with naive or adaptive
//!    stepping, and return the polylines for drawing;
//! 2. [`Demo::train`] — advance the actor-critic loop a few iterations at
//!    a time and report losses and validation errors;
//! 3. [`Demo::value_heatmap`] — evaluate the learned or exact value
//!    function on a pixel grid over the ball.
//!
//! The exported methods are thin wrappers over plain methods of the same
//! struct, so the whole surface is also exercised by native tests.

use rand::rngs::StdRng;
use rand::SeedableRng;
use wasm_bindgen::prelude::*;

use hjbac::networks::MlpScratch;
use hjbac::rollout::{rollout, Scheme, SchemeConfig};
use hjbac::trainer::{TrainConfig, Trainer};

/// One demo session: a desk-scale trainer plus a simulation stream.
#[wasm_bindgen]
pub struct Demo {
    trainer: Trainer,
    t_horizon: f64,
    n_intervals: usize,
    sim_rng: StdRng,
}

impl Demo {
    /// Builds a session for one of `lqr`, `eikonal`, `nclqr` in dimension
    /// two (the Van der Pol benchmark needs four dimensions and has no
    /// planar rendering), sized so that a training iteration stays well
    /// under a frame budget.
    pub fn create(problem: &str, seed: u64) -> Result<Demo, String> {
        let mut cfg = TrainConfig::for_problem(problem, 2);
        cfg.width = 10;
        cfg.depth = 1;
        cfg.batch = 48;
        cfg.t_horizon = 0.15;
        cfg.n_intervals = 25;
        cfg.stage_iters = [1500, 1500, u64::MAX / 4];
        cfg.stage_lrs = [1e-2, 3e-3, 1e-3];
        cfg.seed = seed;
        let t_horizon = cfg.t_horizon;
        let n_intervals = cfg.n_intervals;
        let trainer = Trainer::new(cfg).map_err(|e| e.to_string())?;
        Ok(Demo {
            trainer,
            t_horizon,
            n_intervals,
            // Offset stream so simulation draws never mirror training draws.
            sim_rng: StdRng::seed_from_u64(seed ^ 0x5157_ab1e),
        })
    }

    /// Advances `iters` training steps. Returns the same row the training
    /// curve would record: `[iteration, err_v, err_u, critic_loss,
    /// boundary_loss, actor_loss, truncation_rate]`; the losses are NaN
    /// when `iters` is zero.
    pub fn run_steps(&mut self, iters: u32) -> Result<[f64; 7], String> {
        let mut last = None;
        for _ in 0..iters {
            last = Some(self.trainer.step().map_err(|e| e.to_string())?);
        }
        let (err_v, err_u) = self
            .trainer
            .validate_now()
            .unwrap_or((f64::NAN, f64::NAN));
        let nan = f64::NAN;
        let (critic, boundary, actor, trunc) = match &last {
            Some(r) => (
                r.critic_loss,
                r.boundary_loss,
                r.actor_loss,
                r.truncation_rate,
            ),
            None => (nan, nan, nan, nan),
        };
        Ok([
            self.trainer.iteration() as f64,
            err_v,
            err_u,
            critic,
            boundary,
            actor,
            trunc,
        ])
    }

    /// Rolls `count` trajectories from uniform interior starts and flattens
    /// them into one record stream: per trajectory
    /// `[n_points, exit, truncated, x0, y0, x1, y1, ...]` where `n_points`
    /// counts (x, y) pairs including the final state.
    pub fn paths(&mut self, scheme: Scheme, count: u32, exact_policy: bool) -> Vec<f64> {
        let problem = &*self.trainer.problem;
        let cfg = SchemeConfig::new(scheme, self.t_horizon, self.n_intervals, problem);
        let domain = problem.domain();
        let nets = &self.trainer.nets;
        let mut scratch = MlpScratch::default();
        let mut raw = Vec::new();
        let mut policy = |x: &[f64], u: &mut [f64]| {
            if exact_policy {
                problem.exact_control(x, u);
            } else {
                nets.eval_control(x, u, &mut scratch, &mut raw);
            }
        };

        let mut out = Vec::new();
        for _ in 0..count {
            let x0 = domain.sample_interior(2, &mut self.sim_rng);
            let traj = rollout(problem, &mut policy, &x0, &cfg, &mut self.sim_rng);
            let n_points = traj.n_steps() + 1;
            out.push(n_points as f64);
            out.push(traj.exit as u8 as f64);
            out.push(traj.truncated as u8 as f64);
            for n in 0..traj.n_steps() {
                out.extend_from_slice(traj.state(n));
            }
            out.extend_from_slice(traj.last_state());
        }
        out
    }

    /// Value function sampled on a `resolution x resolution` grid covering
    /// `[-R, R]^2`, row-major with y decreasing (screen order); NaN outside
    /// the ball. `exact` selects the closed-form solution.
    pub fn heatmap(&self, resolution: u32, exact: bool) -> Vec<f64> {
        let problem = &*self.trainer.problem;
        let radius = problem.domain().radius;
        let res = resolution as usize;
        let cell = 2.0 * radius / res as f64;
        let mut scratch = MlpScratch::default();
        let mut v = [0.0];
        let mut out = Vec::with_capacity(res * res);
        for i in 0..res {
            let y = radius - (i as f64 + 0.5) * cell;
            for j in 0..res {
                let x = (j as f64 + 0.5) * cell - radius;
                let p = [x, y];
                if x * x + y * y >= radius * radius {
                    out.push(f64::NAN);
                } else if exact {
                    out.push(problem.exact_value(&p).unwrap_or(f64::NAN));
                } else {
                    self.trainer.nets.value.eval_into(&p, &mut v, &mut scratch);
                    out.push(v[0]);
                }
            }
        }
        out
    }
}

fn parse_scheme(name: &str) -> Result<Scheme, String> {
    match name {
        "naive" => Ok(Scheme::Naive),
        "adaptive" => Ok(Scheme::Adaptive),
        other => Err(format!("unknown scheme '{other}' (naive | adaptive)")),
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(problem: &str, seed: u64) -> Result<Demo, JsError> {
        Demo::create(problem, seed).map_err(|e| JsError::new(&e))
    }

    pub fn radius(&self) -> f64 {
        self.trainer.problem.domain().radius
    }

    pub fn iteration(&self) -> f64 {
        self.trainer.iteration() as f64
    }

    /// True when the problem carries a closed-form solution to validate
    /// against (all four built-in benchmarks do).
    pub fn has_exact_solution(&self) -> bool {
        self.trainer.validate_now().is_some()
    }

    pub fn train(&mut self, iters: u32) -> Result<Box<[f64]>, JsError> {
        self.run_steps(iters)
            .map(|row| row.to_vec().into_boxed_slice())
            .map_err(|e| JsError::new(&e))
    }

    pub fn simulate_paths(
        &mut self,
        scheme: &str,
        count: u32,
        exact_policy: bool,
    ) -> Result<Box<[f64]>, JsError> {
        let scheme = parse_scheme(scheme).map_err(|e| JsError::new(&e))?;
        Ok(self.paths(scheme, count, exact_policy).into_boxed_slice())
    }

    pub fn value_heatmap(&self, resolution: u32, exact: bool) -> Box<[f64]> {
        self.heatmap(resolution, exact).into_boxed_slice()
    }
}
