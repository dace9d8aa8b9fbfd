//! Critic and actor losses with their gradients.
//!
//! Per trajectory the two temporal-difference residuals are
//!
//! ```text
//! TD2 = sum_n e^{-gamma t_n} f(X_n, u_n) h_n + e^{-gamma t_nbar} V(X_nbar) - V(X_0)
//! TD1 = TD2 - sum_n e^{-gamma t_n} G(X_n)^T sigma_n xi_n sqrt(h_n)
//! ```
//!
//! where `X_nbar` is the last inside state. Subtracting the discretized
//! stochastic integral removes the martingale part of `TD2`, so with exact
//! `(V, grad V)` the per-trajectory variance of `TD1` shrinks linearly in
//! the step size while `TD2`'s does not. The critic minimizes the mean of
//! `TD1^2` (variance-reduced) or `TD2^2` plus `eta` times a boundary
//! penalty; states, costs, steps, and noises enter as constants, so the
//! critic gradient flows only through `V` and `G`.
//!
//! The actor loss is the mean rollout cost
//! `sum_n e^{-gamma t_n} f h_n + e^{-gamma t_nbar} Vhat(X_nbar)` with the
//! value parameters frozen behind a stop-gradient; its gradient flows
//! through the control at every step, the state recursion, the terminal
//! value's input, and (optionally) the adaptive step size `h(x)`.
//!
//! Batches reduce over fixed-size chunks in index order: one tape per
//! chunk, networks bound once per tape, so results do not depend on any
//! parallel schedule.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::networks::{BindMode, NetworkSet, ResidualMlp};
use crate::problems::Problem;
use crate::rng::{RngStreams, StreamKind};
use crate::rollout::{
    discounted_running_cost, discounted_stochastic_integral, SchemeConfig, StepKind, Trajectory,
};

/// Critic flavour: which TD residual is squared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TdKind {
    /// Variance-reduced: `TD1` with the gradient network `G`.
    VrLstd,
    /// Plain least-squares TD: `TD2`, no gradient network.
    Lstd,
}

impl TdKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TdKind::VrLstd => "vr-lstd",
            TdKind::Lstd => "lstd",
        }
    }

    pub fn uses_grad_net(&self) -> bool {
        matches!(self, TdKind::VrLstd)
    }
}

/// Per-trajectory TD decomposition. `td2 = (running + terminal) - initial`
/// and `td1 = td2 - stoch` hold exactly by construction order.
#[derive(Clone, Copy, Debug)]
pub struct TdValue {
    pub td1: f64,
    pub td2: f64,
    pub running: f64,
    pub stoch: f64,
    pub terminal: f64,
    pub initial: f64,
}

/// Evaluates both TDs for one trajectory with plain (non-tape) callables.
pub fn compute_td(
    traj: &Trajectory,
    problem: &dyn Problem,
    value: &mut dyn FnMut(&[f64]) -> f64,
    grad: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
) -> TdValue {
    let running = discounted_running_cost(traj, problem);
    let factor = (-problem.gamma() * traj.terminal_time()).exp();
    let terminal = value(traj.last_state()) * factor;
    let initial = value(traj.state(0));
    let td2 = (running + terminal) - initial;
    let stoch = match grad {
        Some(g) => discounted_stochastic_integral(traj, g, problem),
        None => 0.0,
    };
    let td1 = td2 - stoch;
    TdValue {
        td1,
        td2,
        running,
        stoch,
        terminal,
        initial,
    }
}

/// Sample moments of the two TDs over a batch.
#[derive(Clone, Copy, Debug)]
pub struct TdStats {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub count: usize,
}

impl TdStats {
    /// Standard error of `mean1 - mean2` treating the batches as paired
    /// but conservatively ignoring their covariance.
    pub fn pooled_se(&self) -> f64 {
        ((self.var1 + self.var2) / self.count as f64).sqrt()
    }
}

pub fn td_statistics(
    trajs: &[Trajectory],
    problem: &dyn Problem,
    value: &mut dyn FnMut(&[f64]) -> f64,
    mut grad: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
) -> TdStats {
    assert!(trajs.len() > 1, "need at least two trajectories");
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut q1 = 0.0;
    let mut q2 = 0.0;
    for traj in trajs {
        let td = match grad.as_mut() {
            Some(g) => compute_td(traj, problem, value, Some(&mut **g)),
            None => compute_td(traj, problem, value, None),
        };
        s1 += td.td1;
        s2 += td.td2;
        q1 += td.td1 * td.td1;
        q2 += td.td2 * td.td2;
    }
    let n = trajs.len() as f64;
    let mean1 = s1 / n;
    let mean2 = s2 / n;
    TdStats {
        mean1,
        mean2,
        var1: (q1 - n * mean1 * mean1) / (n - 1.0),
        var2: (q2 - n * mean2 * mean2) / (n - 1.0),
        count: trajs.len(),
    }
}

/// Deterministic reduction granularity: a pure function of the batch size,
/// so gradients are independent of thread count or scheduling.
pub(crate) fn chunk_len(batch: usize) -> usize {
    ((batch + 63) / 64).max(1)
}

fn fold_add(t: &mut Tape, acc: &mut Option<NodeId>, x: NodeId) {
    *acc = Some(match *acc {
        Some(a) => t.add(a, x),
        None => x,
    });
}

/// Critic loss value and gradients.
#[derive(Clone, Debug)]
pub struct CriticOutput {
    /// `interior_loss + eta * boundary_loss`.
    pub loss: f64,
    /// Mean squared TD residual.
    pub interior_loss: f64,
    /// Mean squared boundary mismatch `(V - g)^2` (unweighted).
    pub boundary_loss: f64,
    pub value_grad: Vec<f64>,
    pub grad_grad: Option<Vec<f64>>,
}

/// Builds the critic loss over `trajs` plus the boundary penalty over
/// `boundary` (flat `n_b x d` sphere points) and differentiates it w.r.t.
/// the value network and, for [`TdKind::VrLstd`], the gradient network.
pub fn critic_loss(
    problem: &dyn Problem,
    value: &ResidualMlp,
    grad_net: Option<&ResidualMlp>,
    kind: TdKind,
    trajs: &[Trajectory],
    boundary: &[f64],
    eta: f64,
) -> Result<CriticOutput, AutodiffError> {
    assert!(!trajs.is_empty(), "critic loss needs a nonempty batch");
    let d = problem.dim();
    let gamma = problem.gamma();
    let use_g = kind.uses_grad_net();
    let gnet = if use_g {
        Some(grad_net.expect("vr-lstd critic needs a gradient network"))
    } else {
        None
    };

    let k = trajs.len();
    let mut interior_sum = 0.0;
    let mut vg_sum = vec![0.0; value.param_len()];
    let mut gg_sum = gnet.map(|g| vec![0.0; g.param_len()]);

    let mut sd = vec![0.0; d];
    let mut cvec = vec![0.0; d];

    for chunk in trajs.chunks(chunk_len(k)) {
        let mut t = Tape::new();
        let gv = t.add_group(value.param_len());
        let bv = value.bind(&mut t, BindMode::Param { group: gv });
        let bound_g = gnet.map(|g| {
            let gg = t.add_group(g.param_len());
            (gg, g.bind(&mut t, BindMode::Param { group: gg }))
        });

        let mut acc = None;
        for traj in chunk {
            let running = discounted_running_cost(traj, problem);
            let factor = (-gamma * traj.terminal_time()).exp();

            let x0 = t.constant(traj.state(0));
            let v0 = value.forward_tape(&mut t, &bv, x0);
            let xt = t.constant(traj.last_state());
            let vt = value.forward_tape(&mut t, &bv, xt);
            let term = t.scale(vt, factor);
            let rn = t.scalar(running);
            let s1 = t.add(rn, term);
            let td2 = t.sub(s1, v0);

            let td = if let (Some(g), Some((_, bg))) = (gnet, bound_g.as_ref()) {
                let mut stoch = None;
                for n in 0..traj.n_steps() {
                    let x = traj.state(n);
                    problem.sigma_diag(x, traj.control(n), &mut sd);
                    let xi = traj.noise(n);
                    for i in 0..d {
                        cvec[i] = sd[i] * xi[i];
                    }
                    let xn = t.constant(x);
                    let gn = g.forward_tape(&mut t, bg, xn);
                    let cn = t.constant(&cvec);
                    let dn = t.dot(gn, cn);
                    let w = (-gamma * traj.times[n]).exp() * traj.steps[n].sqrt();
                    let sn = t.scale(dn, w);
                    fold_add(&mut t, &mut stoch, sn);
                }
                match stoch {
                    Some(s) => t.sub(td2, s),
                    None => td2,
                }
            } else {
                td2
            };

            let sq = t.mul(td, td);
            fold_add(&mut t, &mut acc, sq);
        }

        let root = acc.expect("chunk is nonempty");
        t.backward(root)?;
        interior_sum += t.scalar_value(root);
        for (dst, src) in vg_sum.iter_mut().zip(t.group_grad(gv)) {
            *dst += src;
        }
        if let (Some(gs), Some((gg, _))) = (gg_sum.as_mut(), bound_g.as_ref()) {
            for (dst, src) in gs.iter_mut().zip(t.group_grad(*gg)) {
                *dst += src;
            }
        }
    }

    // Boundary penalty on the value network alone.
    let nb = boundary.len() / d.max(1);
    let mut boundary_sum = 0.0;
    let mut bnd_vg = vec![0.0; value.param_len()];
    if nb > 0 {
        assert_eq!(boundary.len(), nb * d, "ragged boundary batch");
        let idx: Vec<usize> = (0..nb).collect();
        for chunk in idx.chunks(chunk_len(nb)) {
            let mut t = Tape::new();
            let gv = t.add_group(value.param_len());
            let bv = value.bind(&mut t, BindMode::Param { group: gv });
            let mut acc = None;
            for &j in chunk {
                let x = &boundary[j * d..(j + 1) * d];
                let g = problem.boundary_cost(x);
                let xn = t.constant(x);
                let vb = value.forward_tape(&mut t, &bv, xn);
                let diff = t.add_const(vb, -g);
                let sq = t.mul(diff, diff);
                fold_add(&mut t, &mut acc, sq);
            }
            let root = acc.expect("chunk is nonempty");
            t.backward(root)?;
            boundary_sum += t.scalar_value(root);
            for (dst, src) in bnd_vg.iter_mut().zip(t.group_grad(gv)) {
                *dst += src;
            }
        }
    }

    let interior_loss = interior_sum / k as f64;
    let boundary_loss = if nb > 0 { boundary_sum / nb as f64 } else { 0.0 };
    let mut value_grad = vg_sum;
    for (i, v) in value_grad.iter_mut().enumerate() {
        *v = *v / k as f64
            + if nb > 0 {
                bnd_vg[i] * (eta / nb as f64)
            } else {
                0.0
            };
    }
    let grad_grad = gg_sum.map(|g| g.iter().map(|v| v / k as f64).collect());

    Ok(CriticOutput {
        loss: interior_loss + eta * boundary_loss,
        interior_loss,
        boundary_loss,
        value_grad,
        grad_grad,
    })
}

/// Actor loss value and gradient.
#[derive(Clone, Debug)]
pub struct ActorOutput {
    pub loss: f64,
    pub control_grad: Vec<f64>,
    pub truncation_rate: f64,
    pub exit_rate: f64,
    pub sigma_violations: usize,
}

/// Rolls out `batch` fresh trajectories on the tape (one chunk of
/// trajectories per tape) and differentiates the mean discounted cost with
/// a bootstrapped, stop-gradient terminal value. Initial states and noises
/// come from `streams` keyed by `(iteration, trajectory index)`, so the
/// loss is a pure function of `(problem, nets, iteration)`.
pub fn actor_loss(
    problem: &dyn Problem,
    nets: &NetworkSet,
    batch: usize,
    cfg: &SchemeConfig,
    streams: &RngStreams,
    iteration: u64,
    grad_through_h: bool,
) -> Result<ActorOutput, AutodiffError> {
    assert!(batch > 0, "actor loss needs a nonempty batch");
    let d = problem.dim();
    let gamma = problem.gamma();
    let domain = problem.domain();
    let radius = domain.radius;
    let sigma_tol = problem.sigma_bound() + 1e-9;

    let mut loss_sum = 0.0;
    let mut cg_sum = vec![0.0; nets.control.param_len()];
    let mut truncated = 0usize;
    let mut exited = 0usize;
    let mut sigma_violations = 0usize;

    let mut xi = vec![0.0; d];
    let indices: Vec<usize> = (0..batch).collect();

    for chunk in indices.chunks(chunk_len(batch)) {
        let mut t = Tape::new();
        let gc = t.add_group(nets.control.param_len());
        let bc = nets.control.bind(&mut t, BindMode::Param { group: gc });
        let gvh = t.add_group(nets.value.param_len());
        let bvh = nets.value.bind(&mut t, BindMode::StopGrad { group: gvh });

        let mut chunk_acc = None;
        for &kidx in chunk {
            let mut rng = streams.stream(StreamKind::ActorTrajectory, iteration, kidx as u64);
            let x0 = domain.sample_interior(d, &mut rng);

            let mut x_node = t.constant(&x0);
            let mut t_plain = 0.0;
            let mut t_node = if grad_through_h {
                Some(t.scalar(0.0))
            } else {
                None
            };
            let mut acc: Option<NodeId> = None;
            let mut n = 0usize;
            let mut saw_violation = false;

            while t_plain < cfg.t_horizon {
                if n >= cfg.step_cap {
                    truncated += 1;
                    break;
                }
                let dist = {
                    let xv = t.value(x_node);
                    let mut sq = 0.0;
                    for v in xv {
                        sq += v * v;
                    }
                    radius - sq.sqrt()
                };
                let (h, kind) = cfg.step_size(dist, t_plain, n);

                let raw = nets.control.forward_tape(&mut t, &bc, x_node);
                let u = nets.head.apply_tape(&mut t, raw);
                let b = problem.drift_tape(&mut t, x_node, u);
                let sdn = problem.sigma_diag_tape(&mut t, x_node, u);
                if !saw_violation {
                    for v in t.value(sdn) {
                        if v.abs() > sigma_tol {
                            sigma_violations += 1;
                            saw_violation = true;
                            break;
                        }
                    }
                }
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let xin = t.constant(&xi);

                // Step size as a tape node when its rule is differentiable
                // in the state (band) or in accumulated time (clamp).
                let h_node = if grad_through_h {
                    Some(match kind {
                        StepKind::Band => {
                            let sq = t.sq_norm(x_node);
                            let rr = t.sqrt(sq);
                            let ng = t.scale(rr, -1.0);
                            let dd = t.add_const(ng, radius);
                            let d2 = t.mul(dd, dd);
                            let denom = t.scalar(cfg.band_denom);
                            t.div(d2, denom)
                        }
                        StepKind::ClampedT => match t_node {
                            Some(tn) => {
                                let tc = t.scalar(cfg.t_horizon);
                                t.sub(tc, tn)
                            }
                            None => t.scalar(h),
                        },
                        StepKind::Plain | StepKind::Floor => t.scalar(h),
                    })
                } else {
                    None
                };
                debug_assert!(
                    h_node.map_or(true, |hn| t.scalar_value(hn) == h),
                    "tape step size diverged from the plain rule"
                );

                let (hb, nz) = match h_node {
                    Some(hn) => {
                        let hbc = t.broadcast(hn, d);
                        let hb = t.mul(b, hbc);
                        let shn = t.sqrt(hn);
                        let shb = t.broadcast(shn, d);
                        let sx = t.mul(sdn, xin);
                        (hb, t.mul(sx, shb))
                    }
                    None => {
                        let hb = t.scale(b, h);
                        let sx = t.mul(sdn, xin);
                        (hb, t.scale(sx, h.sqrt()))
                    }
                };
                let x1 = t.add(x_node, hb);
                let x2 = t.add(x1, nz);

                let left = {
                    let xv = t.value(x2);
                    let mut sq = 0.0;
                    for v in xv {
                        sq += v * v;
                    }
                    sq.sqrt() >= radius
                };
                if left {
                    exited += 1;
                    break;
                }

                let f = problem.running_cost_tape(&mut t, x_node, u);
                let term = match (h_node, t_node) {
                    (Some(hn), Some(tn)) => {
                        let mg = t.scale(tn, -gamma);
                        let disc = t.exp(mg);
                        let fd = t.mul(f, disc);
                        t.mul(fd, hn)
                    }
                    _ => {
                        let factor = (-gamma * t_plain).exp();
                        let fd = t.scale(f, factor);
                        t.scale(fd, h)
                    }
                };
                fold_add(&mut t, &mut acc, term);

                x_node = x2;
                t_plain += h;
                if let (Some(tn), Some(hn)) = (t_node, h_node) {
                    t_node = Some(t.add(tn, hn));
                }
                n += 1;
            }

            let vt = nets.value.forward_tape(&mut t, &bvh, x_node);
            let tv = match t_node {
                Some(tn) => {
                    let mg = t.scale(tn, -gamma);
                    let disc = t.exp(mg);
                    t.mul(vt, disc)
                }
                None => {
                    let factor = (-gamma * t_plain).exp();
                    t.scale(vt, factor)
                }
            };
            let item = match acc {
                Some(a) => t.add(a, tv),
                None => tv,
            };
            fold_add(&mut t, &mut chunk_acc, item);
        }

        let root = chunk_acc.expect("chunk is nonempty");
        t.backward(root)?;
        loss_sum += t.scalar_value(root);
        for (dst, src) in cg_sum.iter_mut().zip(t.group_grad(gc)) {
            *dst += src;
        }
        debug_assert!(
            t.group_grad(gvh).iter().all(|&v| v == 0.0),
            "stop-gradient leaked into the frozen value parameters"
        );
    }

    let kf = batch as f64;
    for v in cg_sum.iter_mut() {
        *v /= kf;
    }
    Ok(ActorOutput {
        loss: loss_sum / kf,
        control_grad: cg_sum,
        truncation_rate: truncated as f64 / kf,
        exit_rate: exited as f64 / kf,
        sigma_violations,
    })
}

/// Per-iteration scalars surfaced to logs and the training curve.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub critic_loss: f64,
    pub boundary_loss: f64,
    pub actor_loss: f64,
    pub grad_norm_value: f64,
    pub grad_norm_grad: f64,
    pub grad_norm_control: f64,
    pub truncation_rate: f64,
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in v {
        acc += x * x;
    }
    acc.sqrt()
}
