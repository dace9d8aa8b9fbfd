//! Alternating actor-critic training loop.
//!
//! Each iteration: sample a batch of trajectories under the current
//! control plus a batch of boundary points, Adam-update the critic
//! (value network, and gradient network under the variance-reduced TD);
//! then sample fresh trajectories and Adam-update the actor. Learning
//! rates follow a three-stage piecewise-constant schedule. Every
//! `eval_every` iterations the relative L2 errors against the exact
//! solution are computed on a validation set fixed at startup.
//!
//! Training is a pure function of the seed: every random draw comes from a
//! counter-based stream keyed by purpose, iteration, and batch index, so a
//! checkpoint (parameters + Adam moments + iteration) resumes bitwise.
//!
//! # Bundle byte layout
//!
//! Little-endian; networks use the layout documented in [`crate::networks`]:
//!
//! ```text
//! magic "HJBB" | u32 version = 1 | u64 seed | u64 iteration
//! | u64 config_hash | u8 has_grad_net
//! | value net | [grad net] | control net
//! | adam(value) | [adam(grad)] | adam(control)
//! adam states serialize as: u64 step_count | len x f64 m | len x f64 v
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{adam_step, AdamState, AutodiffError};
use crate::losses::{actor_loss, critic_loss, l2_norm, LossReport, TdKind};
use crate::networks::{
    read_f64, read_mlp, read_u32, read_u64, write_f64, write_mlp, write_u32, write_u64,
    CheckpointError, MlpScratch, NetworkSet,
};
use crate::problems::{
    make_eikonal, make_lqr, make_nonconstant_lqr, make_van_der_pol, Problem,
};
use crate::rng::{RngStreams, StreamKind};
use crate::rollout::{rollout, Scheme, SchemeConfig, Trajectory};

/// Constants for the problem constructors; unset fields keep the
/// conventional defaults. Only the fields relevant to the selected problem
/// are read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemParams {
    pub p: f64,
    pub q: f64,
    pub beta: f64,
    pub gamma: f64,
    pub radius: f64,
    /// Van der Pol quadratic coefficient.
    pub a: f64,
    /// Van der Pol coupling / nonconstant-LQR diffusion slope.
    pub eps: f64,
    /// Eikonal cubic/quadratic coefficients.
    pub a2: f64,
    pub a3: f64,
    /// Control-magnitude bound entering the nonconstant-LQR sigma bound.
    pub u_max: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        ProblemParams {
            p: 1.0,
            q: 1.0,
            beta: 1.0,
            gamma: 1.0,
            radius: 1.0,
            a: 1.0,
            eps: 0.1,
            a2: 1.2,
            a3: 0.2,
            u_max: 3.0,
        }
    }
}

/// Full training configuration. [`TrainConfig::for_problem`] fills the
/// dimension-dependent defaults; every field can be overridden afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub problem: String,
    pub dim: usize,
    pub params: ProblemParams,
    pub scheme: Scheme,
    pub td: TdKind,
    pub t_horizon: f64,
    pub n_intervals: usize,
    pub batch: usize,
    pub eta: f64,
    pub width: usize,
    pub depth: usize,
    pub stage_iters: [u64; 3],
    pub stage_lrs: [f64; 3],
    pub seed: u64,
    pub eval_every: u64,
    pub grad_through_h: bool,
}

impl TrainConfig {
    /// Conventional defaults: `T = 0.2`, `eta = 1`, width 200, and
    /// dimension-dependent `N` (50 up to 5d, else 100), batch (1024 up to
    /// 5d, else 2048), depth (2 up to 5d, else 3), and first-stage length
    /// (20000 up to 10d, 30000 beyond).
    pub fn for_problem(problem: &str, dim: usize) -> Self {
        let small = dim <= 5;
        TrainConfig {
            problem: problem.to_string(),
            dim,
            params: ProblemParams::default(),
            scheme: Scheme::Adaptive,
            td: TdKind::VrLstd,
            t_horizon: 0.2,
            n_intervals: if small { 50 } else { 100 },
            batch: if small { 1024 } else { 2048 },
            eta: 1.0,
            width: 200,
            depth: if small { 2 } else { 3 },
            stage_iters: [if dim <= 10 { 20000 } else { 30000 }, 10000, 10000],
            stage_lrs: [1e-3, 1e-4, 1e-5],
            seed: 0,
            eval_every: 100,
            grad_through_h: true,
        }
    }

    pub fn total_iters(&self) -> u64 {
        self.stage_iters.iter().sum()
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        let mut bound = 0;
        for (len, lr) in self.stage_iters.iter().zip(&self.stage_lrs) {
            bound += len;
            if iteration < bound {
                return *lr;
            }
        }
        self.stage_lrs[2]
    }

    /// Canonical `key = value` rendering; also the config-hash preimage
    /// and the manifest echo.
    pub fn canonical_string(&self) -> String {
        let p = &self.params;
        format!(
            "problem = {}\ndim = {}\nscheme = {}\ntd = {}\nT = {}\nN = {}\nbatch = {}\n\
             eta = {}\nwidth = {}\ndepth = {}\niters-stage1 = {}\niters-stage2 = {}\n\
             iters-stage3 = {}\nlr-stage1 = {}\nlr-stage2 = {}\nlr-stage3 = {}\nseed = {}\n\
             eval-every = {}\ngrad-through-h = {}\np = {}\nq = {}\nbeta = {}\ngamma = {}\n\
             radius = {}\na = {}\neps = {}\na2 = {}\na3 = {}\nu-max = {}\n",
            self.problem,
            self.dim,
            self.scheme.as_str(),
            self.td.as_str(),
            self.t_horizon,
            self.n_intervals,
            self.batch,
            self.eta,
            self.width,
            self.depth,
            self.stage_iters[0],
            self.stage_iters[1],
            self.stage_iters[2],
            self.stage_lrs[0],
            self.stage_lrs[1],
            self.stage_lrs[2],
            self.seed,
            self.eval_every,
            if self.grad_through_h { "on" } else { "off" },
            p.p,
            p.q,
            p.beta,
            p.gamma,
            p.radius,
            p.a,
            p.eps,
            p.a2,
            p.a3,
            p.u_max,
        )
    }

    /// FNV-1a hash of the canonical string; stored in checkpoints so a
    /// resume under a different config is rejected.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.canonical_string().as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Instantiates the configured problem.
    pub fn build_problem(&self) -> Result<Box<dyn Problem>, TrainError> {
        let p = &self.params;
        match self.problem.as_str() {
            "lqr" => Ok(Box::new(make_lqr(
                self.dim, p.p, p.q, p.beta, p.gamma, p.radius,
            ))),
            "vdp" => {
                if self.dim % 2 != 0 || self.dim < 4 {
                    return Err(TrainError::Config(format!(
                        "vdp needs an even dimension >= 4, got {}",
                        self.dim
                    )));
                }
                Ok(Box::new(make_van_der_pol(
                    self.dim, p.a, p.eps, p.q, p.gamma, p.radius,
                )))
            }
            "eikonal" => {
                if 2.0 * p.a2 - 3.0 * p.a3 * p.radius <= 0.0 {
                    return Err(TrainError::Config(
                        "eikonal needs 2 a2 - 3 a3 R > 0".to_string(),
                    ));
                }
                Ok(Box::new(make_eikonal(self.dim, p.a2, p.a3, p.radius)))
            }
            "nclqr" => Ok(Box::new(
                make_nonconstant_lqr(self.dim, p.q, p.beta, p.gamma, p.radius, p.eps)
                    .with_control_bound(p.u_max),
            )),
            other => Err(TrainError::Config(format!("unknown problem '{other}'"))),
        }
    }

    fn check(&self) -> Result<(), TrainError> {
        if self.dim == 0 {
            return Err(TrainError::Config("dim must be positive".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be positive".into()));
        }
        if self.n_intervals < 2 {
            return Err(TrainError::Config("N must be at least 2".into()));
        }
        if !(self.t_horizon > 0.0) {
            return Err(TrainError::Config("T must be positive".into()));
        }
        if self.width == 0 && self.depth > 0 {
            return Err(TrainError::Config("width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("numeric failure at iteration {iteration}: {source}")]
    Numeric {
        iteration: u64,
        #[source]
        source: AutodiffError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug)]
pub struct MetricsRecord {
    pub iter: u64,
    pub err_v: f64,
    pub err_u: f64,
    pub critic_loss: f64,
    pub boundary_loss: f64,
    pub actor_loss: f64,
    pub truncation_rate: f64,
}

/// Relative L2 errors of the trained networks on a fixed point set:
/// `err_V^2 = sum (V* - V)^2 / sum V*^2`, `err_u^2` the same with vector
/// norms. `None` when the problem has no exact solution.
pub fn validate(nets: &NetworkSet, problem: &dyn Problem, points: &[f64]) -> Option<(f64, f64)> {
    let d = problem.dim();
    let du = problem.control_dim();
    let n = points.len() / d;
    assert!(n > 0, "empty validation set");
    let mut scratch = MlpScratch::default();
    let mut raw = Vec::new();
    let mut u = vec![0.0; du];
    let mut u_star = vec![0.0; du];

    let mut num_v = 0.0;
    let mut den_v = 0.0;
    let mut num_u = 0.0;
    let mut den_u = 0.0;
    for j in 0..n {
        let x = &points[j * d..(j + 1) * d];
        let vs = problem.exact_value(x)?;
        let v = nets.eval_value(x, &mut scratch);
        num_v += (vs - v) * (vs - v);
        den_v += vs * vs;
        if !problem.exact_control(x, &mut u_star) {
            return None;
        }
        nets.eval_control(x, &mut u, &mut scratch, &mut raw);
        for i in 0..du {
            let e = u_star[i] - u[i];
            num_u += e * e;
            den_u += u_star[i] * u_star[i];
        }
    }
    assert!(
        den_v > 0.0 && den_u > 0.0,
        "validation set has an all-zero exact field"
    );
    Some(((num_v / den_v).sqrt(), (num_u / den_u).sqrt()))
}

/// Training driver holding the networks, optimizer states, and streams.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub problem: Box<dyn Problem>,
    pub nets: NetworkSet,
    pub scheme_cfg: SchemeConfig,
    pub history: Vec<MetricsRecord>,
    adam_value: AdamState,
    adam_grad: Option<AdamState>,
    adam_control: AdamState,
    streams: RngStreams,
    iteration: u64,
    validation: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.check()?;
        let problem = cfg.build_problem()?;
        let streams = RngStreams::new(cfg.seed);
        let mut init_rng = streams.stream(StreamKind::NetInit, 0, 0);
        let nets = NetworkSet::create(
            problem.dim(),
            problem.control_dim(),
            problem.control_head(),
            cfg.width,
            cfg.depth,
            cfg.td.uses_grad_net(),
            &mut init_rng,
        );
        let scheme_cfg = SchemeConfig::new(cfg.scheme, cfg.t_horizon, cfg.n_intervals, &*problem);

        let mut val_rng = streams.stream(StreamKind::Validation, 0, 0);
        let d = problem.dim();
        let mut validation = Vec::with_capacity(cfg.batch * d);
        for _ in 0..cfg.batch {
            validation.extend_from_slice(&problem.domain().sample_interior(d, &mut val_rng));
        }

        let adam_value = AdamState::new(nets.value.param_len());
        let adam_grad = nets.grad.as_ref().map(|g| AdamState::new(g.param_len()));
        let adam_control = AdamState::new(nets.control.param_len());

        Ok(Trainer {
            cfg,
            problem,
            nets,
            scheme_cfg,
            history: Vec::new(),
            adam_value,
            adam_grad,
            adam_control,
            streams,
            iteration: 0,
            validation,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn validation_points(&self) -> &[f64] {
        &self.validation
    }

    /// Simulates the critic batch under the current control.
    fn sample_critic_batch(&self) -> Vec<Trajectory> {
        let d = self.problem.dim();
        let domain = self.problem.domain();
        let nets = &self.nets;
        let mut scratch = MlpScratch::default();
        let mut raw = Vec::new();
        let mut policy =
            |x: &[f64], u: &mut [f64]| nets.eval_control(x, u, &mut scratch, &mut raw);
        let mut trajs = Vec::with_capacity(self.cfg.batch);
        for k in 0..self.cfg.batch {
            let mut rng =
                self.streams
                    .stream(StreamKind::CriticTrajectory, self.iteration, k as u64);
            let x0 = domain.sample_interior(d, &mut rng);
            trajs.push(rollout(
                &*self.problem,
                &mut policy,
                &x0,
                &self.scheme_cfg,
                &mut rng,
            ));
        }
        trajs
    }

    fn sample_boundary_batch(&self) -> Vec<f64> {
        let d = self.problem.dim();
        let domain = self.problem.domain();
        let mut rng = self.streams.stream(StreamKind::Boundary, self.iteration, 0);
        let mut out = Vec::with_capacity(self.cfg.batch * d);
        for _ in 0..self.cfg.batch {
            out.extend_from_slice(&domain.sample_boundary(d, &mut rng));
        }
        out
    }

    /// One critic update followed by one actor update.
    pub fn step(&mut self) -> Result<LossReport, TrainError> {
        let lr = self.cfg.lr_at(self.iteration);
        let iteration = self.iteration;
        let numeric = |source: AutodiffError| TrainError::Numeric { iteration, source };

        let trajs = self.sample_critic_batch();
        let boundary = self.sample_boundary_batch();
        let critic = critic_loss(
            &*self.problem,
            &self.nets.value,
            self.nets.grad.as_ref(),
            self.cfg.td,
            &trajs,
            &boundary,
            self.cfg.eta,
        )
        .map_err(numeric)?;

        adam_step(
            self.nets.value.params_mut().values_mut(),
            &critic.value_grad,
            &mut self.adam_value,
            lr,
        )
        .map_err(numeric)?;
        let mut grad_norm_grad = 0.0;
        if let (Some(gnet), Some(gg), Some(state)) = (
            self.nets.grad.as_mut(),
            critic.grad_grad.as_ref(),
            self.adam_grad.as_mut(),
        ) {
            grad_norm_grad = l2_norm(gg);
            adam_step(gnet.params_mut().values_mut(), gg, state, lr).map_err(numeric)?;
        }

        let actor = actor_loss(
            &*self.problem,
            &self.nets,
            self.cfg.batch,
            &self.scheme_cfg,
            &self.streams,
            self.iteration,
            self.cfg.grad_through_h,
        )
        .map_err(numeric)?;
        adam_step(
            self.nets.control.params_mut().values_mut(),
            &actor.control_grad,
            &mut self.adam_control,
            lr,
        )
        .map_err(numeric)?;

        if actor.truncation_rate > 0.05 {
            log::warn!(
                "iteration {}: truncation rate {:.3} exceeds 5%",
                self.iteration,
                actor.truncation_rate
            );
        }
        if actor.sigma_violations > 0 {
            log::warn!(
                "iteration {}: {} steps exceeded the declared sigma bound",
                self.iteration,
                actor.sigma_violations
            );
        }

        self.iteration += 1;
        Ok(LossReport {
            critic_loss: critic.interior_loss,
            boundary_loss: critic.boundary_loss,
            actor_loss: actor.loss,
            grad_norm_value: l2_norm(&critic.value_grad),
            grad_norm_grad,
            grad_norm_control: l2_norm(&actor.control_grad),
            truncation_rate: actor.truncation_rate,
        })
    }

    pub fn validate_now(&self) -> Option<(f64, f64)> {
        validate(&self.nets, &*self.problem, &self.validation)
    }

    /// The critic batch the next [`Trainer::step`] call would train on;
    /// used by the trajectory-dump diagnostic.
    pub fn debug_trajectories(&self) -> Vec<Trajectory> {
        self.sample_critic_batch()
    }

    /// Runs `iters` iterations, recording metrics every `eval_every`.
    /// On numeric failure the last good state is checkpointed to
    /// `rescue_path` (when given) before the error is returned.
    pub fn run(&mut self, iters: u64, rescue_path: Option<&Path>) -> Result<(), TrainError> {
        if self.iteration == 0 {
            if let Some((ev, eu)) = self.validate_now() {
                log::info!("initial err_v = {ev:.6}, err_u = {eu:.6}");
            }
        }
        for i in 0..iters {
            let report = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let Some(path) = rescue_path {
                        if let Err(save_err) = self.save_checkpoint(path) {
                            log::error!("rescue checkpoint failed: {save_err}");
                        }
                    }
                    return Err(e);
                }
            };
            if self.iteration % self.cfg.eval_every == 0 || i + 1 == iters {
                let (err_v, err_u) = self.validate_now().unwrap_or((f64::NAN, f64::NAN));
                self.history.push(MetricsRecord {
                    iter: self.iteration,
                    err_v,
                    err_u,
                    critic_loss: report.critic_loss,
                    boundary_loss: report.boundary_loss,
                    actor_loss: report.actor_loss,
                    truncation_rate: report.truncation_rate,
                });
                log::info!(
                    "iter {:>6}  err_v {:.4e}  err_u {:.4e}  critic {:.4e}  actor {:.4e}",
                    self.iteration,
                    err_v,
                    err_u,
                    report.critic_loss,
                    report.actor_loss
                );
            }
        }
        Ok(())
    }

    /// Writes the full resumable state atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            f.write_all(BUNDLE_MAGIC)?;
            write_u32(&mut f, BUNDLE_VERSION)?;
            write_u64(&mut f, self.cfg.seed)?;
            write_u64(&mut f, self.iteration)?;
            write_u64(&mut f, self.cfg.hash())?;
            f.write_all(&[self.nets.grad.is_some() as u8])?;
            write_mlp(&mut f, "value", &self.nets.value)?;
            if let Some(g) = &self.nets.grad {
                write_mlp(&mut f, "grad", g)?;
            }
            write_mlp(&mut f, "control", &self.nets.control)?;
            write_adam(&mut f, &self.adam_value)?;
            if let Some(a) = &self.adam_grad {
                write_adam(&mut f, a)?;
            }
            write_adam(&mut f, &self.adam_control)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Restores a trainer that continues bitwise where the checkpoint
    /// left off. The config must hash-match the one that produced it.
    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Self, TrainError> {
        let mut f = io::BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(CheckpointError::Io)?;
        if &magic != BUNDLE_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = read_u32(&mut f).map_err(CheckpointError::Io)?;
        if version != BUNDLE_VERSION {
            return Err(CheckpointError::BadVersion(version).into());
        }
        let seed = read_u64(&mut f).map_err(CheckpointError::Io)?;
        let iteration = read_u64(&mut f).map_err(CheckpointError::Io)?;
        let hash = read_u64(&mut f).map_err(CheckpointError::Io)?;
        if seed != cfg.seed {
            return Err(TrainError::Config(format!(
                "checkpoint seed {seed} does not match config seed {}",
                cfg.seed
            )));
        }
        if hash != cfg.hash() {
            return Err(TrainError::Config(
                "checkpoint was produced by a different configuration".into(),
            ));
        }
        let mut flag = [0u8; 1];
        f.read_exact(&mut flag).map_err(CheckpointError::Io)?;
        let has_grad = flag[0] != 0;

        let mut trainer = Trainer::new(cfg)?;
        if has_grad != trainer.nets.grad.is_some() {
            return Err(TrainError::Config(
                "checkpoint TD kind does not match config".into(),
            ));
        }

        let (name, value) = read_mlp(&mut f)?;
        expect_net(&name, "value")?;
        trainer.nets.value = value;
        if has_grad {
            let (name, g) = read_mlp(&mut f)?;
            expect_net(&name, "grad")?;
            trainer.nets.grad = Some(g);
        }
        let (name, control) = read_mlp(&mut f)?;
        expect_net(&name, "control")?;
        trainer.nets.control = control;

        trainer.adam_value = read_adam(&mut f, trainer.nets.value.param_len())?;
        if has_grad {
            let len = trainer.nets.grad.as_ref().unwrap().param_len();
            trainer.adam_grad = Some(read_adam(&mut f, len)?);
        }
        trainer.adam_control = read_adam(&mut f, trainer.nets.control.param_len())?;
        trainer.iteration = iteration;
        Ok(trainer)
    }
}

const BUNDLE_MAGIC: &[u8; 4] = b"HJBB";
const BUNDLE_VERSION: u32 = 1;

fn expect_net(got: &str, want: &str) -> Result<(), TrainError> {
    if got != want {
        return Err(CheckpointError::Corrupt(format!(
            "expected net '{want}', found '{got}'"
        ))
        .into());
    }
    Ok(())
}

fn write_adam(w: &mut impl Write, a: &AdamState) -> io::Result<()> {
    write_u64(w, a.step_count)?;
    for &v in &a.m {
        write_f64(w, v)?;
    }
    for &v in &a.v {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_adam(r: &mut impl Read, len: usize) -> Result<AdamState, CheckpointError> {
    let mut a = AdamState::new(len);
    a.step_count = read_u64(r)?;
    for v in a.m.iter_mut() {
        *v = read_f64(r)?;
    }
    for v in a.v.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(a)
}
