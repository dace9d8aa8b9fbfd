//! Linear-quadratic regulator on a ball.
//!
//! Dynamics `dX = beta u dt + sqrt(2) dW`, running cost
//! `p|x|^2 + q|u|^2 - 2kd`, boundary cost `k R^2`, discount `gamma`.
//! The constant shift `-2kd` makes `V*(x) = k|x|^2` the exact solution with
//! `u*(x) = -(k beta / q) x`, where `k` solves
//! `beta^2 k^2 / q + gamma k = p`.

use crate::autodiff::{NodeId, Tape};
use crate::networks::ControlHead;

use super::{BallDomain, Problem};

/// Positive root `k` of `beta^2 k^2 / q + gamma k = p`.
pub fn lqr_gain(p: f64, q: f64, beta: f64, gamma: f64) -> f64 {
    ((q * q * gamma * gamma + 4.0 * p * q * beta * beta).sqrt() - gamma * q) / (2.0 * beta * beta)
}

#[derive(Clone, Debug)]
pub struct Lqr {
    dim: usize,
    p: f64,
    q: f64,
    beta: f64,
    gamma: f64,
    domain: BallDomain,
    k: f64,
    sqrt2: f64,
    neg_shift: f64,
    g_value: f64,
    neg_kbq: f64,
}

pub fn make_lqr(d: usize, p: f64, q: f64, beta: f64, gamma: f64, radius: f64) -> Lqr {
    assert!(d > 0, "lqr needs a positive dimension");
    assert!(p > 0.0 && q > 0.0 && beta > 0.0, "lqr constants must be positive");
    assert!(gamma >= 0.0, "discount must be nonnegative");
    let k = lqr_gain(p, q, beta, gamma);
    Lqr {
        dim: d,
        p,
        q,
        beta,
        gamma,
        domain: BallDomain::new(radius),
        k,
        sqrt2: 2.0_f64.sqrt(),
        neg_shift: -(2.0 * k * d as f64),
        g_value: k * radius * radius,
        neg_kbq: -(k * beta / q),
    }
}

impl Lqr {
    pub fn gain(&self) -> f64 {
        self.k
    }
}

impl Problem for Lqr {
    fn name(&self) -> &'static str {
        "lqr"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn domain(&self) -> BallDomain {
        self.domain
    }

    fn sigma_bound(&self) -> f64 {
        self.sqrt2
    }

    fn control_head(&self) -> ControlHead {
        ControlHead::Unconstrained
    }

    fn drift(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, ui) in out.iter_mut().zip(u) {
            *o = ui * self.beta;
        }
    }

    fn sigma_diag(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(self.sqrt2);
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut sx = 0.0;
        for v in x {
            sx += v * v;
        }
        let mut su = 0.0;
        for v in u {
            su += v * v;
        }
        (sx * self.p + su * self.q) + self.neg_shift
    }

    fn boundary_cost(&self, _x: &[f64]) -> f64 {
        self.g_value
    }

    fn drift_tape(&self, t: &mut Tape, _x: NodeId, u: NodeId) -> NodeId {
        t.scale(u, self.beta)
    }

    fn sigma_diag_tape(&self, t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        let v = vec![self.sqrt2; self.dim];
        t.constant(&v)
    }

    fn running_cost_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let sx = t.sq_norm(x);
        let px = t.scale(sx, self.p);
        let su = t.sq_norm(u);
        let qu = t.scale(su, self.q);
        let s = t.add(px, qu);
        t.add_const(s, self.neg_shift)
    }

    fn boundary_cost_tape(&self, t: &mut Tape, _x: NodeId) -> NodeId {
        t.scalar(self.g_value)
    }

    fn exact_value(&self, x: &[f64]) -> Option<f64> {
        let mut sx = 0.0;
        for v in x {
            sx += v * v;
        }
        Some(self.k * sx)
    }

    fn exact_control(&self, x: &[f64], out: &mut [f64]) -> bool {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.neg_kbq * xi;
        }
        true
    }
}
