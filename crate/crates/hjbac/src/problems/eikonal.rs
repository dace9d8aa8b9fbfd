//! Diffusive Eikonal equation with unit-ball controls.
//!
//! `eps Lap V + inf_{|u|<=1} c(x) u . grad V + 1 = 0` on `B_R`, encoded with
//! `sigma = sqrt(2 eps) I` so the generic generator reproduces `eps Lap V`.
//! With `eps = 1 / (2 d a2)` and
//! `c(x) = 3 (d+1) a3 / (2 d a2 (2 a2 - 3 a3 |x|))`
//! the exact solution is `V*(x) = a3 |x|^3 - a2 |x|^2` with minimizing
//! direction `u*(x) = x / |x|` (the inward-pointing gradient is steepest
//! along `-x`). Requires `2 a2 - 3 a3 R > 0` so `c` stays positive and
//! bounded on the ball. No discounting; `f` is identically 1, so the value
//! is (minus) an expected exit-time functional.

use crate::autodiff::{NodeId, Tape};
use crate::networks::ControlHead;

use super::{norm, BallDomain, Problem};

#[derive(Clone, Debug)]
pub struct Eikonal {
    dim: usize,
    a2: f64,
    a3: f64,
    domain: BallDomain,
    sqrt_2eps: f64,
    c_num: f64,
    c_fac: f64,
    two_a2: f64,
    neg_three_a3: f64,
    g_value: f64,
}

pub fn make_eikonal(d: usize, a2: f64, a3: f64, radius: f64) -> Eikonal {
    assert!(d > 0, "eikonal needs a positive dimension");
    assert!(a2 > 0.0 && a3 > 0.0, "a2 and a3 must be positive");
    assert!(
        2.0 * a2 - 3.0 * a3 * radius > 0.0,
        "eikonal requires 2 a2 - 3 a3 R > 0"
    );
    let eps = 1.0 / (2.0 * d as f64 * a2);
    Eikonal {
        dim: d,
        a2,
        a3,
        domain: BallDomain::new(radius),
        sqrt_2eps: (2.0 * eps).sqrt(),
        c_num: 3.0 * (d as f64 + 1.0) * a3,
        c_fac: 2.0 * d as f64 * a2,
        two_a2: 2.0 * a2,
        neg_three_a3: -(3.0 * a3),
        g_value: a3 * radius * radius * radius - a2 * radius * radius,
    }
}

impl Eikonal {
    pub fn eps(&self) -> f64 {
        0.5 * self.sqrt_2eps * self.sqrt_2eps
    }

    /// Drift magnitude `c(x)`.
    pub fn speed(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        self.c_num / ((r * self.neg_three_a3 + self.two_a2) * self.c_fac)
    }
}

impl Problem for Eikonal {
    fn name(&self) -> &'static str {
        "eikonal"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.dim
    }

    fn gamma(&self) -> f64 {
        0.0
    }

    fn domain(&self) -> BallDomain {
        self.domain
    }

    fn sigma_bound(&self) -> f64 {
        self.sqrt_2eps
    }

    fn control_head(&self) -> ControlHead {
        ControlHead::unit_ball()
    }

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let c = self.speed(x);
        for (o, ui) in out.iter_mut().zip(u) {
            *o = c * ui;
        }
    }

    fn sigma_diag(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(self.sqrt_2eps);
    }

    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn boundary_cost(&self, _x: &[f64]) -> f64 {
        self.g_value
    }

    fn drift_tape(&self, t: &mut Tape, x: NodeId, u: NodeId) -> NodeId {
        let sn = t.sq_norm(x);
        let r = t.sqrt(sn);
        let t1 = t.scale(r, self.neg_three_a3);
        let t2 = t.add_const(t1, self.two_a2);
        let den = t.scale(t2, self.c_fac);
        let num = t.scalar(self.c_num);
        let c = t.div(num, den);
        let cv = t.broadcast(c, self.dim);
        t.mul(cv, u)
    }

    fn sigma_diag_tape(&self, t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        let v = vec![self.sqrt_2eps; self.dim];
        t.constant(&v)
    }

    fn running_cost_tape(&self, t: &mut Tape, _x: NodeId, _u: NodeId) -> NodeId {
        t.scalar(1.0)
    }

    fn boundary_cost_tape(&self, t: &mut Tape, _x: NodeId) -> NodeId {
        t.scalar(self.g_value)
    }

    fn exact_value(&self, x: &[f64]) -> Option<f64> {
        let r = norm(x);
        Some(self.a3 * r * r * r - self.a2 * r * r)
    }

    fn exact_control(&self, x: &[f64], out: &mut [f64]) -> bool {
        let r = norm(x);
        if r == 0.0 {
            out.fill(0.0);
        } else {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = xi / r;
            }
        }
        true
    }
}
