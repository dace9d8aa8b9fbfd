//! LQR variant with state- and control-dependent diffusion.
//!
//! `dX_i = beta u_i dt + sqrt(2) (1 + eps x_i u_i) dW_i`, running cost
//! `q|u|^2 + ftilde(x)` with
//!
//! `ftilde(x) = gamma k |x|^2 + sum_i k^2 (beta+2eps)^2 x_i^2 /
//!              (q + 2 k eps^2 x_i^2) - 2 k d`
//!
//! chosen so `V*(x) = k|x|^2` stays exact (`k` is the plain LQR gain with
//! `p = 1`) and `u*_i(x) = -(beta+2eps) x_i / (q/k + 2 eps^2 x_i^2)`.
//! At `eps = 0` this reduces to the plain LQR with `p = 1`.
//!
//! The diffusion is unbounded over an unconstrained control set, so the
//! step-size bound uses `sqrt(2) (1 + |eps| R u_max)` with a configurable
//! control magnitude `u_max` (default 3); simulation asserts observed
//! `|sigma|` against it.

use crate::autodiff::{NodeId, Tape};
use crate::networks::ControlHead;

use super::lqr::lqr_gain;
use super::{BallDomain, Problem};

pub const DEFAULT_CONTROL_BOUND: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct NonconstantLqr {
    dim: usize,
    q: f64,
    beta: f64,
    gamma: f64,
    eps: f64,
    domain: BallDomain,
    k: f64,
    sqrt2: f64,
    sigma_bound: f64,
    gamma_k: f64,
    rat_num: f64,
    rat_den: f64,
    neg_shift: f64,
    g_value: f64,
    bp2e: f64,
    qk: f64,
    two_eps2: f64,
    ones: Vec<f64>,
}

pub fn make_nonconstant_lqr(
    d: usize,
    q: f64,
    beta: f64,
    gamma: f64,
    radius: f64,
    eps: f64,
) -> NonconstantLqr {
    assert!(d > 0, "nclqr needs a positive dimension");
    assert!(q > 0.0 && beta > 0.0, "q and beta must be positive");
    assert!(gamma >= 0.0, "discount must be nonnegative");
    let k = lqr_gain(1.0, q, beta, gamma);
    let sqrt2 = 2.0_f64.sqrt();
    let bp2e = beta + 2.0 * eps;
    NonconstantLqr {
        dim: d,
        q,
        beta,
        gamma,
        eps,
        domain: BallDomain::new(radius),
        k,
        sqrt2,
        sigma_bound: sqrt2 * (1.0 + eps.abs() * radius * DEFAULT_CONTROL_BOUND),
        gamma_k: gamma * k,
        rat_num: k * k * bp2e * bp2e,
        rat_den: 2.0 * k * eps * eps,
        neg_shift: -(2.0 * k * d as f64),
        g_value: k * radius * radius,
        bp2e,
        qk: q / k,
        two_eps2: 2.0 * eps * eps,
        ones: vec![1.0; d],
    }
}

impl NonconstantLqr {
    pub fn gain(&self) -> f64 {
        self.k
    }

    /// Replaces the control-magnitude bound entering `sigma_bound`.
    pub fn with_control_bound(mut self, u_max: f64) -> Self {
        assert!(u_max > 0.0, "control bound must be positive");
        self.sigma_bound = self.sqrt2 * (1.0 + self.eps.abs() * self.domain.radius * u_max);
        self
    }
}

impl Problem for NonconstantLqr {
    fn name(&self) -> &'static str {
        "nclqr"
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
        self.sigma_bound
    }

    fn control_head(&self) -> ControlHead {
        ControlHead::Unconstrained
    }

    fn drift(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, ui) in out.iter_mut().zip(u) {
            *o = ui * self.beta;
        }
    }

    fn sigma_diag(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = ((x[i] * u[i]) * self.eps + 1.0) * self.sqrt2;
        }
    }

    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut su = 0.0;
        for v in u {
            su += v * v;
        }
        let qn = su * self.q;
        let mut sx = 0.0;
        for v in x {
            sx += v * v;
        }
        let gv = sx * self.gamma_k;
        let mut acc = 0.0;
        for xi in x {
            let xx = xi * xi;
            acc += (xx * self.rat_num) / (xx * self.rat_den + self.q);
        }
        ((qn + gv) + acc) + self.neg_shift
    }

    fn boundary_cost(&self, _x: &[f64]) -> f64 {
        self.g_value
    }

    fn drift_tape(&self, t: &mut Tape, _x: NodeId, u: NodeId) -> NodeId {
        t.scale(u, self.beta)
    }

    fn sigma_diag_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let m = t.mul(x, u);
        let me = t.scale(m, self.eps);
        let p1 = t.add_const(me, 1.0);
        t.scale(p1, self.sqrt2)
    }

    fn running_cost_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let su = t.sq_norm(u);
        let qn = t.scale(su, self.q);
        let sx = t.sq_norm(x);
        let gv = t.scale(sx, self.gamma_k);
        let xx = t.mul(x, x);
        let num = t.scale(xx, self.rat_num);
        let den0 = t.scale(xx, self.rat_den);
        let den = t.add_const(den0, self.q);
        let rat = t.div(num, den);
        let ones = t.constant(&self.ones);
        let rsum = t.dot(rat, ones);
        let s1 = t.add(qn, gv);
        let s2 = t.add(s1, rsum);
        t.add_const(s2, self.neg_shift)
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
            *o = -(self.bp2e * xi) / (self.qk + self.two_eps2 * (xi * xi));
        }
        true
    }
}
